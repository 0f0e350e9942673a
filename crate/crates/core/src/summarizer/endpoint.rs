//! Optional external text endpoint behind the grounding filter.
//!
//! The client posts the evidence bundle (JSON) with a fixed instruction
//! preamble over plain HTTP/1.1 and treats the response body as candidate
//! summary text. Whatever comes back is sentence-filtered against the
//! bundle; a wholly dropped or failed response falls back to the template
//! summary, so endpoint trouble can never fail a run.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use serde::Serialize;

use crate::summarizer::{ground_filter, render_summary, EvidenceBundle, SummaryTemplate};

/// Versioned instruction preamble shipped with the crate.
pub const INSTRUCTION_PREAMBLE: &str = include_str!("preamble.txt");

/// Environment variable consulted for the bearer token.
pub const AUTH_TOKEN_ENV: &str = "CYTOPHEN_LLM_TOKEN";

#[derive(Clone, Debug)]
pub struct EndpointConfig {
    /// Plain-http URL, e.g. `http://127.0.0.1:8040/summarize`.
    pub url: String,
    pub timeout: Duration,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), timeout: Duration::from_secs(10) }
    }
}

/// How the final text was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SummarySource {
    Endpoint,
    /// Endpoint plus template sentences (everything it sent was dropped).
    TemplateFallback,
}

#[derive(Clone, Debug)]
pub struct SummaryOutput {
    pub text: String,
    pub source: SummarySource,
    /// Present when the endpoint failed or its content was dropped.
    pub notice: Option<String>,
}

#[derive(Serialize)]
struct EndpointRequest<'a> {
    instruction: &'a str,
    evidence: &'a EvidenceBundle,
}

/// Summarize through the endpoint; any failure or fully-ungrounded response
/// degrades to [`render_summary`], never to an error.
pub fn llm_summarize(
    bundle: &EvidenceBundle,
    templates: &[SummaryTemplate],
    cfg: &EndpointConfig,
) -> SummaryOutput {
    let fallback = |notice: String| SummaryOutput {
        text: render_summary(bundle, templates),
        source: SummarySource::TemplateFallback,
        notice: Some(notice),
    };
    let body = serde_json::to_string(&EndpointRequest {
        instruction: INSTRUCTION_PREAMBLE,
        evidence: bundle,
    })
    .expect("request serializes");
    match post_text(&cfg.url, &body, cfg.timeout) {
        Err(err) => {
            eprintln!("summarizer endpoint unavailable ({err}); using template summary");
            fallback(format!("endpoint unavailable: {err}"))
        }
        Ok(response) => {
            let (kept, dropped) = ground_filter(&response, bundle);
            if kept.is_empty() {
                fallback(format!("endpoint response fully ungrounded ({dropped} sentences dropped)"))
            } else {
                SummaryOutput {
                    text: kept.join(" "),
                    source: SummarySource::Endpoint,
                    notice: (dropped > 0).then(|| format!("{dropped} ungrounded sentences dropped")),
                }
            }
        }
    }
}

/// Minimal HTTP/1.1 POST for `http://` URLs. The endpoint is expected to
/// answer 200 with the summary as a plain-text body.
fn post_text(url: &str, body: &str, timeout: Duration) -> Result<String, String> {
    let rest = url.strip_prefix("http://").ok_or_else(|| {
        format!("unsupported url {url:?}: only plain http endpoints are supported")
    })?;
    let (host_port, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, "/"),
    };
    let host = host_port.split(':').next().unwrap_or(host_port);
    let addr = if host_port.contains(':') { host_port.to_string() } else { format!("{host_port}:80") };

    let stream = TcpStream::connect(&addr).map_err(|e| format!("connect {addr}: {e}"))?;
    stream.set_read_timeout(Some(timeout)).map_err(|e| e.to_string())?;
    stream.set_write_timeout(Some(timeout)).map_err(|e| e.to_string())?;
    let mut stream = stream;

    let auth = std::env::var(AUTH_TOKEN_ENV).ok();
    let mut request = format!(
        "POST {path} HTTP/1.1\r\nHost: {host}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        body.len()
    );
    if let Some(token) = auth {
        request.push_str(&format!("Authorization: Bearer {token}\r\n"));
    }
    request.push_str("\r\n");
    request.push_str(body);
    stream.write_all(request.as_bytes()).map_err(|e| format!("write: {e}"))?;

    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).map_err(|e| format!("read: {e}"))?;
    let text = String::from_utf8_lossy(&raw);
    let mut parts = text.splitn(2, "\r\n\r\n");
    let head = parts.next().unwrap_or("");
    let body = parts.next().unwrap_or("").to_string();
    let status_line = head.lines().next().unwrap_or("");
    let status: u16 = status_line.split_whitespace().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    if status != 200 {
        return Err(format!("status {status_line:?}"));
    }
    Ok(body)
}
