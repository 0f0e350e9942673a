//! Post-hoc interpretability: converts evaluation evidence into short,
//! strictly grounded biological summaries.
//!
//! Every sentence that leaves this module passes the grounding filter: a
//! numeral or marker name may appear only if the evidence bundle contains
//! it. The optional external endpoint sits behind the same filter and can
//! only ever remove content, never invent it. The summarizer runs after
//! evaluation and has no path back into training or prediction.

pub mod endpoint;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::EvalReport;

pub const EVIDENCE_SCHEMA_VERSION: u32 = 1;

/// Effect size of one marker for one class against the rest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EffectSize {
    pub class_name: String,
    pub marker: String,
    /// Cohen's d, `(mu_class - mu_rest) / pooled std`; `None` when a group
    /// was too small or degenerate.
    pub cohens_d: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MisclassPair {
    pub true_class: String,
    pub predicted_class: String,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarkerQuality {
    pub marker: String,
    pub pearson_r: f64,
    pub rmse: f64,
    pub mae: f64,
    pub ccc: f64,
}

/// Everything the summarizer may talk about. Every numeric field is
/// traceable to its evaluation-report source through [`EvidenceBundle::provenance`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub schema_version: u32,
    pub n_cells: usize,
    /// Predicted-class composition, fractions summing to 1.
    pub cohort_fractions: Vec<(String, f64)>,
    pub accuracy: Option<f64>,
    pub mean_pearson_r: Option<f64>,
    pub marker_quality: Vec<MarkerQuality>,
    pub effect_sizes: Vec<EffectSize>,
    pub top_misclassifications: Vec<MisclassPair>,
    /// Mean over cells of the top-class probability.
    pub mean_confidence: Option<f64>,
    /// Field -> evaluation-report source path.
    pub provenance: BTreeMap<String, String>,
}

/// Per-record marker values grouped by predicted class, the raw material
/// for effect sizes.
#[derive(Clone, Debug, Default)]
pub struct MarkerSamples {
    /// Marker display names, length M.
    pub marker_names: Vec<String>,
    /// Row-major `[n, M]` marker values (predicted expression).
    pub values: Vec<f64>,
    /// Predicted class per row.
    pub classes: Vec<usize>,
    /// Top-class probability per row, when classification ran.
    pub confidences: Vec<f64>,
}

const CLASS_NAMES: [&str; 3] = ["Lymphocyte", "Granulocyte", "Monocyte"];

/// Cohen's d with the pooled (n-weighted) standard deviation.
pub fn cohens_d(group: &[f64], rest: &[f64]) -> Option<f64> {
    if group.len() < 2 || rest.len() < 2 {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    let (m1, m2) = (mean(group), mean(rest));
    let (v1, v2) = (var(group, m1), var(rest, m2));
    let pooled = (((group.len() - 1) as f64 * v1 + (rest.len() - 1) as f64 * v2)
        / (group.len() + rest.len() - 2) as f64)
        .sqrt();
    if pooled <= 0.0 || !pooled.is_finite() {
        eprintln!("warning: degenerate pooled std; effect size omitted");
        return None;
    }
    Some((m1 - m2) / pooled)
}

/// Assemble the evidence bundle from an evaluation report and the per-record
/// marker samples.
pub fn build_evidence(report: &EvalReport, samples: &MarkerSamples) -> EvidenceBundle {
    let mut provenance = BTreeMap::new();
    let n = report.n_samples;
    provenance.insert("n_cells".into(), "report.n_samples".into());

    // Predicted-class composition from confusion-matrix column sums.
    let mut pred_counts = [0usize; 3];
    for row in &report.classification.confusion {
        for (c, v) in row.iter().enumerate() {
            pred_counts[c] += v;
        }
    }
    let total: usize = pred_counts.iter().sum();
    let cohort_fractions: Vec<(String, f64)> = CLASS_NAMES
        .iter()
        .enumerate()
        .map(|(c, name)| (name.to_string(), pred_counts[c] as f64 / total.max(1) as f64))
        .collect();
    provenance.insert("cohort_fractions".into(), "report.classification.confusion column sums".into());

    let marker_quality: Vec<MarkerQuality> = report
        .markers
        .as_ref()
        .map(|m| {
            m.names
                .iter()
                .zip(m.rows.iter())
                .enumerate()
                .map(|(k, (_, row))| MarkerQuality {
                    marker: samples
                        .marker_names
                        .get(k)
                        .cloned()
                        .unwrap_or_else(|| format!("m{}", k + 1)),
                    pearson_r: row.pearson_r,
                    rmse: row.rmse,
                    mae: row.mae,
                    ccc: row.ccc,
                })
                .collect()
        })
        .unwrap_or_default();
    provenance.insert("marker_quality".into(), "report.markers.rows".into());

    // Effect sizes per marker per predicted class vs rest.
    let m_count = samples.marker_names.len();
    let mut effect_sizes = Vec::new();
    if !samples.values.is_empty() && m_count > 0 {
        for (c, class_name) in CLASS_NAMES.iter().enumerate() {
            for (k, marker) in samples.marker_names.iter().enumerate() {
                let group: Vec<f64> = samples
                    .classes
                    .iter()
                    .zip(samples.values.chunks(m_count))
                    .filter_map(|(&cls, row)| (cls == c).then(|| row[k]))
                    .collect();
                let rest: Vec<f64> = samples
                    .classes
                    .iter()
                    .zip(samples.values.chunks(m_count))
                    .filter_map(|(&cls, row)| (cls != c).then(|| row[k]))
                    .collect();
                effect_sizes.push(EffectSize {
                    class_name: class_name.to_string(),
                    marker: marker.clone(),
                    cohens_d: cohens_d(&group, &rest),
                });
            }
        }
    }
    provenance.insert("effect_sizes".into(), "predicted markers grouped by predicted class".into());

    // Off-diagonal confusion counts, descending.
    let mut pairs = Vec::new();
    for (t, row) in report.classification.confusion.iter().enumerate() {
        for (p, &count) in row.iter().enumerate() {
            if t != p && count > 0 {
                pairs.push(MisclassPair {
                    true_class: CLASS_NAMES[t].to_string(),
                    predicted_class: CLASS_NAMES[p].to_string(),
                    count,
                });
            }
        }
    }
    pairs.sort_by(|a, b| b.count.cmp(&a.count).then(a.true_class.cmp(&b.true_class)));
    provenance.insert("top_misclassifications".into(), "report.classification.confusion off-diagonals".into());

    let mean_confidence = (!samples.confidences.is_empty())
        .then(|| samples.confidences.iter().sum::<f64>() / samples.confidences.len() as f64);
    provenance.insert("mean_confidence".into(), "mean of per-cell top-class probabilities".into());
    provenance.insert("accuracy".into(), "report.classification.accuracy".into());
    provenance.insert("mean_pearson_r".into(), "report.mean_pearson_r".into());

    EvidenceBundle {
        schema_version: EVIDENCE_SCHEMA_VERSION,
        n_cells: n,
        cohort_fractions,
        accuracy: Some(report.classification.accuracy),
        mean_pearson_r: report.mean_pearson_r,
        marker_quality,
        effect_sizes,
        top_misclassifications: pairs,
        mean_confidence,
        provenance,
    }
}

impl EvidenceBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("evidence serializes")
    }

    /// Every numeral the bundle can ground, in the canonical forms the
    /// filter matches against (2-decimal rounding, plus the percent form for
    /// fractions).
    pub fn grounded_numerals(&self) -> Grounding {
        let mut g = Grounding::default();
        g.add_count(self.n_cells);
        for (_, f) in &self.cohort_fractions {
            g.add_fraction(*f);
        }
        if let Some(a) = self.accuracy {
            g.add_fraction(a);
        }
        if let Some(r) = self.mean_pearson_r {
            g.add_value(r);
        }
        for q in &self.marker_quality {
            g.add_value(q.pearson_r);
            g.add_value(q.rmse);
            g.add_value(q.mae);
            g.add_value(q.ccc);
        }
        for e in &self.effect_sizes {
            if let Some(d) = e.cohens_d {
                g.add_value(d);
            }
        }
        for p in &self.top_misclassifications {
            g.add_count(p.count);
        }
        if let Some(c) = self.mean_confidence {
            g.add_fraction(c);
        }
        g
    }

    pub fn marker_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.marker_quality.iter().map(|q| q.marker.clone()).collect();
        for e in &self.effect_sizes {
            if !names.contains(&e.marker) {
                names.push(e.marker.clone());
            }
        }
        names
    }
}

// ── grounding filter ────────────────────────────────────────────────────

/// Canonical numeral set plus known marker names.
#[derive(Clone, Debug, Default)]
pub struct Grounding {
    numerals: std::collections::BTreeSet<String>,
}

/// Canonical form: two-decimal rounding, trailing zeros trimmed.
pub fn canonical_numeral(v: f64) -> String {
    let s = format!("{:.2}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

impl Grounding {
    pub fn add_value(&mut self, v: f64) {
        self.numerals.insert(canonical_numeral(v));
        self.numerals.insert(canonical_numeral(v.abs()));
    }

    pub fn add_fraction(&mut self, f: f64) {
        self.add_value(f);
        // Percent form, rounded to the integer emitted by the templates.
        self.numerals.insert(format!("{}", (f * 100.0).round() as i64));
        self.numerals.insert(canonical_numeral(f * 100.0));
    }

    pub fn add_count(&mut self, n: usize) {
        self.numerals.insert(n.to_string());
    }

    pub fn contains(&self, numeral: &str) -> bool {
        self.numerals.contains(numeral)
    }
}

/// Extract numerals as canonical strings: optional sign, digits, optional
/// decimal part; values re-rounded to the bundle's emitted precision.
pub fn extract_numerals(text: &str) -> Vec<String> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        // Digits glued to a letter are identifier suffixes (CD45), not
        // numerals; the marker check handles those tokens.
        if c.is_ascii_digit() && i > 0 && (bytes[i - 1] as char).is_ascii_alphabetic() {
            while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_digit()
            || (c == '-'
                && i + 1 < bytes.len()
                && (bytes[i + 1] as char).is_ascii_digit()
                && (i == 0 || !(bytes[i - 1] as char).is_ascii_digit()))
        {
            let start = i;
            if c == '-' {
                i += 1;
            }
            while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] as char == '.' && (bytes[i + 1] as char).is_ascii_digit() {
                i += 1;
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
            }
            let token = &text[start..i];
            let value: f64 = token.parse().unwrap_or(f64::NAN);
            if value.is_finite() {
                out.push(canonical_numeral(value));
            }
        } else {
            i += 1;
        }
    }
    out
}

/// Marker-like tokens: CD-numbers and the HLA-DR compound.
fn extract_marker_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i + 1 < bytes.len() {
        if bytes[i] == b'C' && bytes[i + 1] == b'D' {
            let mut j = i + 2;
            while j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                j += 1;
            }
            if j > i + 2 {
                out.push(text[i..j].to_string());
                i = j;
                continue;
            }
        }
        if text[i..].starts_with("HLA-DR") {
            out.push("HLA-DR".to_string());
            i += 6;
            continue;
        }
        i += 1;
    }
    out
}

/// Split into sentences at `.`, `!`, `?` followed by whitespace or the end;
/// decimal points stay inside their numerals.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut start = 0;
    for i in 0..bytes.len() {
        let c = bytes[i] as char;
        let boundary = matches!(c, '.' | '!' | '?')
            && (i + 1 == bytes.len() || (bytes[i + 1] as char).is_whitespace());
        let hard_break = c == '\n';
        if boundary || hard_break {
            let end = if boundary { i + 1 } else { i };
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            start = i + 1;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Keep only sentences whose numerals and marker names all exist in the
/// bundle; returns survivors and the number dropped.
pub fn ground_filter(text: &str, bundle: &EvidenceBundle) -> (Vec<String>, usize) {
    let grounding = bundle.grounded_numerals();
    let known_markers = bundle.marker_names();
    let mut kept = Vec::new();
    let mut dropped = 0usize;
    for sentence in split_sentences(text) {
        let numerals_ok = extract_numerals(&sentence).iter().all(|n| grounding.contains(n));
        let markers_ok = extract_marker_tokens(&sentence)
            .iter()
            .all(|t| known_markers.iter().any(|m| m.contains(t.as_str())));
        if numerals_ok && markers_ok {
            kept.push(sentence);
        } else {
            dropped += 1;
        }
    }
    (kept, dropped)
}

// ── templates ───────────────────────────────────────────────────────────

/// One deterministic sentence generator with a firing condition.
pub struct SummaryTemplate {
    pub id: &'static str,
    pub priority: u8,
    pub render: fn(&EvidenceBundle) -> Option<String>,
}

fn pct(f: f64) -> String {
    format!("{}%", (f * 100.0).round() as i64)
}

fn num(v: f64) -> String {
    canonical_numeral(v)
}

const STRONG_D: f64 = 0.8;
const LINEAGE_R: f64 = 0.7;
const WEAK_R: f64 = 0.4;

fn top_class(b: &EvidenceBundle) -> Option<(&str, f64)> {
    b.cohort_fractions
        .iter()
        .max_by(|a, c| a.1.partial_cmp(&c.1).unwrap())
        .map(|(n, f)| (n.as_str(), *f))
}

fn enrichment_for(b: &EvidenceBundle, class_name: &str) -> Option<String> {
    let best = b
        .effect_sizes
        .iter()
        .filter(|e| e.class_name == class_name)
        .filter_map(|e| e.cohens_d.map(|d| (e, d)))
        .max_by(|a, c| a.1.partial_cmp(&c.1).unwrap())?;
    (best.1 >= STRONG_D).then(|| {
        format!(
            "Predicted {} cells show strong {} enrichment (Cohen's d = {}).",
            class_name,
            best.0.marker,
            num(best.1)
        )
    })
}

/// The shipped template inventory, in firing-priority order.
pub fn default_templates() -> Vec<SummaryTemplate> {
    vec![
        SummaryTemplate {
            id: "cohort_size",
            priority: 0,
            render: |b| Some(format!("The evaluated cohort contains {} cells.", b.n_cells)),
        },
        SummaryTemplate {
            id: "cohort_majority",
            priority: 1,
            render: |b| {
                let (name, f) = top_class(b)?;
                (f >= 0.4).then(|| {
                    format!("{} is the most common predicted class in the cohort ({}).", name, pct(f))
                })
            },
        },
        SummaryTemplate {
            id: "cohort_composition",
            priority: 2,
            render: |b| {
                if b.cohort_fractions.len() != 3 {
                    return None;
                }
                let parts: Vec<String> =
                    b.cohort_fractions.iter().map(|(n, f)| format!("{} {}", pct(*f), n)).collect();
                Some(format!("Predicted composition: {}.", parts.join(", ")))
            },
        },
        SummaryTemplate {
            id: "accuracy",
            priority: 3,
            render: |b| {
                b.accuracy
                    .map(|a| format!("Against reference labels, classification accuracy is {}.", pct(a)))
            },
        },
        SummaryTemplate {
            id: "confidence_high",
            priority: 4,
            render: |b| {
                let c = b.mean_confidence?;
                (c >= 0.85)
                    .then(|| format!("Predictions are confident (mean top-class probability {}).", num(c)))
            },
        },
        SummaryTemplate {
            id: "confidence_low",
            priority: 4,
            render: |b| {
                let c = b.mean_confidence?;
                (c < 0.6).then(|| {
                    format!("Predictions carry low confidence (mean top-class probability {}).", num(c))
                })
            },
        },
        SummaryTemplate {
            id: "enrichment_lymphocyte",
            priority: 5,
            render: |b| enrichment_for(b, "Lymphocyte"),
        },
        SummaryTemplate {
            id: "enrichment_granulocyte",
            priority: 5,
            render: |b| enrichment_for(b, "Granulocyte"),
        },
        SummaryTemplate {
            id: "enrichment_monocyte",
            priority: 5,
            render: |b| enrichment_for(b, "Monocyte"),
        },
        SummaryTemplate {
            id: "depletion",
            priority: 6,
            render: |b| {
                let worst = b
                    .effect_sizes
                    .iter()
                    .filter_map(|e| e.cohens_d.map(|d| (e, d)))
                    .min_by(|a, c| a.1.partial_cmp(&c.1).unwrap())?;
                (worst.1 <= -STRONG_D).then(|| {
                    format!(
                        "{} is markedly depleted in predicted {} cells (Cohen's d = {}).",
                        worst.0.marker,
                        worst.0.class_name,
                        num(worst.1)
                    )
                })
            },
        },
        SummaryTemplate {
            id: "misclass_hotspot",
            priority: 7,
            render: |b| {
                let top = b.top_misclassifications.first()?;
                Some(format!(
                    "The most frequent confusion is true {} predicted as {} ({} cells).",
                    top.true_class, top.predicted_class, top.count
                ))
            },
        },
        SummaryTemplate {
            id: "lineage_coupled_markers",
            priority: 8,
            render: |b| {
                let strong: Vec<String> = b
                    .marker_quality
                    .iter()
                    .filter(|q| q.pearson_r >= LINEAGE_R)
                    .map(|q| format!("{} (r = {})", q.marker, num(q.pearson_r)))
                    .collect();
                (!strong.is_empty()).then(|| {
                    format!(
                        "Morphology tracks {} closely, consistent with lineage-coupled expression.",
                        strong.join(" and ")
                    )
                })
            },
        },
        SummaryTemplate {
            id: "weakly_coupled_markers",
            priority: 9,
            render: |b| {
                let weak: Vec<String> = b
                    .marker_quality
                    .iter()
                    .filter(|q| q.pearson_r < WEAK_R)
                    .map(|q| format!("{} (r = {})", q.marker, num(q.pearson_r)))
                    .collect();
                (!weak.is_empty()).then(|| {
                    format!("Expression of {} is only weakly recoverable from morphology.", weak.join(" and "))
                })
            },
        },
        SummaryTemplate {
            id: "mid_coupled_markers",
            priority: 10,
            render: |b| {
                let mid: Vec<String> = b
                    .marker_quality
                    .iter()
                    .filter(|q| q.pearson_r >= WEAK_R && q.pearson_r < LINEAGE_R)
                    .map(|q| format!("{} (r = {})", q.marker, num(q.pearson_r)))
                    .collect();
                (!mid.is_empty())
                    .then(|| format!("{} shows moderate morphological coupling.", mid.join(" and ")))
            },
        },
        SummaryTemplate {
            id: "regression_quality",
            priority: 11,
            render: |b| {
                b.mean_pearson_r.map(|r| {
                    format!("Across markers, predicted expression correlates with measured levels at r = {}.", num(r))
                })
            },
        },
    ]
}

/// Deterministic template rendering: fire in (priority, id) order, then pass
/// the grounding filter. A bundle that fires nothing yields the minimal
/// cohort-size fallback.
pub fn render_summary(bundle: &EvidenceBundle, templates: &[SummaryTemplate]) -> String {
    let mut ordered: Vec<&SummaryTemplate> = templates.iter().collect();
    ordered.sort_by_key(|t| (t.priority, t.id));
    let mut sentences = Vec::new();
    for t in ordered {
        if let Some(s) = (t.render)(bundle) {
            sentences.push(s);
        }
    }
    let text = sentences.join(" ");
    let (kept, _) = ground_filter(&text, bundle);
    if kept.is_empty() {
        format!("The evaluated cohort contains {} cells.", bundle.n_cells)
    } else {
        kept.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle_with(granulocyte_fraction: f64, cd16_d: Option<f64>) -> EvidenceBundle {
        let rest = (1.0 - granulocyte_fraction) / 2.0;
        EvidenceBundle {
            schema_version: EVIDENCE_SCHEMA_VERSION,
            n_cells: 1418,
            cohort_fractions: vec![
                ("Lymphocyte".into(), rest),
                ("Granulocyte".into(), granulocyte_fraction),
                ("Monocyte".into(), rest),
            ],
            accuracy: Some(0.913),
            mean_pearson_r: Some(0.7263),
            marker_quality: vec![
                MarkerQuality { marker: "CD45".into(), pearson_r: 0.799, rmse: 0.67, mae: 0.43, ccc: 0.723 },
                MarkerQuality { marker: "CD16".into(), pearson_r: 0.819, rmse: 0.595, mae: 0.463, ccc: 0.781 },
                MarkerQuality {
                    marker: "CD123/HLA-DR/CD14".into(),
                    pearson_r: 0.339,
                    rmse: 0.945,
                    mae: 0.507,
                    ccc: 0.137,
                },
            ],
            effect_sizes: vec![EffectSize {
                class_name: "Granulocyte".into(),
                marker: "CD16".into(),
                cohens_d: cd16_d,
            }],
            top_misclassifications: vec![MisclassPair {
                true_class: "Monocyte".into(),
                predicted_class: "Lymphocyte".into(),
                count: 23,
            }],
            mean_confidence: Some(0.91),
            provenance: BTreeMap::new(),
        }
    }

    #[test]
    fn cohens_d_unit_example() {
        // means 1 and 0, both sample stds exactly 1: d = 1.
        let group = [0.0, 1.0, 2.0];
        let rest = [-1.0, 0.0, 1.0];
        let d = cohens_d(&group, &rest).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_means_do_not_fire_enrichment() {
        let bundle = bundle_with(0.52, Some(0.0));
        let text = render_summary(&bundle, &default_templates());
        assert!(!text.contains("strong CD16 enrichment"));
    }

    #[test]
    fn majority_sentence_contains_percentage_and_class() {
        let bundle = bundle_with(0.52, Some(4.69));
        let text = render_summary(&bundle, &default_templates());
        assert!(text.contains("52%"), "{text}");
        assert!(text.contains("Granulocyte"), "{text}");
        // every numeral grounded
        let grounding = bundle.grounded_numerals();
        for n in extract_numerals(&text) {
            assert!(grounding.contains(&n), "{n} not grounded in: {text}");
        }
    }

    #[test]
    fn large_effect_size_is_reported_only_when_present() {
        let with = render_summary(&bundle_with(0.52, Some(4.69)), &default_templates());
        assert!(with.contains("4.69"), "{with}");
        let without = render_summary(&bundle_with(0.52, None), &default_templates());
        assert!(!without.contains("4.69"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let bundle = bundle_with(0.47, Some(2.5));
        let a = render_summary(&bundle, &default_templates());
        let b = render_summary(&bundle, &default_templates());
        assert_eq!(a, b);
    }

    #[test]
    fn empty_bundle_falls_back_to_cohort_size() {
        let bundle = EvidenceBundle {
            schema_version: EVIDENCE_SCHEMA_VERSION,
            n_cells: 7,
            cohort_fractions: vec![],
            accuracy: None,
            mean_pearson_r: None,
            marker_quality: vec![],
            effect_sizes: vec![],
            top_misclassifications: vec![],
            mean_confidence: None,
            provenance: BTreeMap::new(),
        };
        let text = render_summary(&bundle, &default_templates());
        assert_eq!(text, "The evaluated cohort contains 7 cells.");
    }

    #[test]
    fn numeral_extraction_normalizes() {
        let numerals = extract_numerals("r = 0.730, d=-3.10, 52% of 1418 cells");
        assert_eq!(numerals, vec!["0.73", "-3.1", "52", "1418"]);
    }

    #[test]
    fn sentence_split_keeps_decimals_together() {
        let s = split_sentences("Accuracy is 91.3%. CCC is 0.72! Done? Yes.");
        assert_eq!(s.len(), 4);
        assert!(s[0].contains("91.3"));
    }

    #[test]
    fn filter_drops_unknown_marker_and_numeral() {
        let bundle = bundle_with(0.52, Some(4.69));
        let (kept, dropped) =
            ground_filter("CD99 elevated 3.7 times. Granulocyte fraction is 52%.", &bundle);
        assert_eq!(dropped, 1);
        assert_eq!(kept.len(), 1);
        assert!(kept[0].contains("52%"));
    }

    #[test]
    fn at_least_twelve_templates_ship() {
        assert!(default_templates().len() >= 12);
    }
}
