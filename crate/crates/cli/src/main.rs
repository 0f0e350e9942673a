//! cytophen command-line interface: dataset synthesis, training, evaluation,
//! ablations, gradient checking, grounded summaries, and figure-data export.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 runtime or
//! numerical error.

mod artifacts;
mod config;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use cytophen_core::data::container::{load_dataset, write_container};
use cytophen_core::data::synth::synthesize;
use cytophen_core::data::{Dataset, Split};
use cytophen_core::metrics::EvalReport;
use cytophen_core::model::{checkpoint, ModelState, Variant};
use cytophen_core::pipeline::{ablate, evaluate, gradgate, train, TrainConfig};
use cytophen_core::summarizer::endpoint::{llm_summarize, EndpointConfig};
use cytophen_core::summarizer::{
    build_evidence, default_templates, render_summary, EvidenceBundle, MarkerSamples,
};

use artifacts::ArtifactSink;
use config::FileConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<cytophen_core::PipelineError> for CliError {
    fn from(e: cytophen_core::PipelineError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<cytophen_core::DataError> for CliError {
    fn from(e: cytophen_core::DataError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "cytophen",
    about = "Hybrid CNN-ViT multi-task phenotyping from label-free DPC images",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed override (wins over the config file).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset container plus its oracle report.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the per-class training-record count.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a model on the configured dataset container.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Architecture variant override.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint stem or manifest path (expects zscore.json beside it).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to evaluate: train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train and evaluate every configured variant across shared seeds.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the finite-difference gradient gate.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Produce a grounded text summary from an evidence bundle.
    Summarize {
        #[command(flatten)]
        common: CommonArgs,
        /// Evidence JSON produced by `eval`.
        #[arg(long)]
        evidence: PathBuf,
        /// Optional plain-http endpoint (overrides the config).
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Export long-format CSVs for scatter/violin/ridge figures.
    ExportFigures {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message (including the offending flag);
            // map every parse failure to the usage exit code.
            let is_usage = e.use_stderr();
            let _ = e.print();
            std::process::exit(if is_usage { 1 } else { 0 });
        }
    };
    let code = match run(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}");
            1
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            2
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { common, n } => cmd_synth(common, n),
        Command::Train { common, variant } => cmd_train(common, variant),
        Command::Eval { common, checkpoint, split } => cmd_eval(common, checkpoint, split),
        Command::Ablate { common } => cmd_ablate(common),
        Command::Gradcheck { common } => cmd_gradcheck(common),
        Command::Summarize { common, evidence, endpoint } => cmd_summarize(common, evidence, endpoint),
        Command::ExportFigures { common, checkpoint, split } => cmd_export(common, checkpoint, split),
    }
}

fn parse_split(name: &str) -> Result<Split, CliError> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(CliError::Usage(format!("unknown split {other:?} (expected train, val, test)"))),
    }
}

fn guarded<T>(
    sink: ArtifactSink,
    work: impl FnOnce(&mut ArtifactSink) -> Result<T, CliError>,
) -> Result<T, CliError> {
    let mut sink = sink;
    match work(&mut sink) {
        Ok(value) => {
            sink.finalize()?;
            Ok(value)
        }
        Err(e) => {
            sink.cleanup();
            Err(e)
        }
    }
}

fn cmd_synth(common: CommonArgs, n: Option<usize>) -> Result<(), CliError> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let mut synth_cfg = cfg.synth.to_config();
    if let Some(seed) = common.seed {
        synth_cfg.seed = seed;
    }
    if let Some(n) = n {
        synth_cfg.n_train = n;
    }
    let sink = ArtifactSink::new(&common.out, "synth", Some(synth_cfg.seed))?;
    guarded(sink, |sink| {
        let t0 = Instant::now();
        let (dataset, oracle) = synthesize(&synth_cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
        let container_dir = sink.dir().join("dataset");
        write_container(&dataset, &container_dir)?;
        for file in ["manifest.json", "images.bin", "labels.csv"] {
            sink.register(container_dir.join(file));
        }
        sink.write("oracle.json", serde_json::to_string_pretty(&oracle).unwrap().as_bytes())?;
        sink.time("synthesize", t0.elapsed().as_secs_f64());
        println!(
            "synthesized {} records; oracle ceilings: accuracy {:.4}, mean r {:.4}",
            dataset.len(),
            oracle.ceiling_accuracy,
            oracle.ceiling_mean_r
        );
        Ok(())
    })
}

fn load_container(cfg: &FileConfig) -> Result<Dataset, CliError> {
    let path = Path::new(&cfg.data.container);
    Ok(load_dataset(path)?)
}

fn cmd_train(common: CommonArgs, variant: Option<String>) -> Result<(), CliError> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let mut train_cfg: TrainConfig = cfg.train_config()?;
    if let Some(seed) = common.seed {
        train_cfg.seed = seed;
    }
    if let Some(v) = &variant {
        train_cfg.model.variant =
            Variant::parse(v).ok_or_else(|| CliError::Usage(format!("unknown --variant {v:?}")))?;
    }
    let dataset = load_container(&cfg)?;
    let sink = ArtifactSink::new(&common.out, "train", Some(train_cfg.seed))?;
    guarded(sink, |sink| {
        let t0 = Instant::now();
        let outcome = train(&train_cfg, &dataset)?;
        let train_secs = t0.elapsed().as_secs_f64();

        for (stem, state) in
            [("checkpoint-best", &outcome.best_state), ("checkpoint-last", &outcome.last_state)]
        {
            let path = sink.dir().join(stem);
            checkpoint::save(state, &path)?;
            sink.register(path.with_extension("json"));
            sink.register(path.with_extension("bin"));
        }
        sink.write("zscore.json", serde_json::to_string_pretty(&outcome.zscore).unwrap().as_bytes())?;
        sink.write("trainlog.json", serde_json::to_string_pretty(&outcome.log).unwrap().as_bytes())?;
        sink.time("train", train_secs);
        for (i, s) in outcome.epoch_seconds.iter().enumerate() {
            sink.time(&format!("epoch_{i}"), *s);
        }
        if let Some(abort) = &outcome.abort {
            sink.write("abort.json", serde_json::to_string_pretty(abort).unwrap().as_bytes())?;
            return Err(CliError::Runtime(format!(
                "non-finite loss at step {} (epoch {}); first offending block: {}; last-good checkpoint kept",
                abort.step, abort.epoch, abort.block
            )));
        }
        let last = outcome.log.epochs.last();
        println!(
            "trained {} epochs; best epoch {} (val score {:.4}); last val accuracy {:?}",
            outcome.log.epochs.len(),
            outcome.log.best_epoch,
            outcome.log.best_score,
            last.and_then(|e| e.val_accuracy)
        );
        Ok(())
    })
}

fn load_checkpoint_pair(
    stem: &Path,
) -> Result<(ModelState<f32>, cytophen_core::data::ZScoreStats), CliError> {
    let state = checkpoint::load(stem)?;
    let cfg = *state.config();
    checkpoint::validate_against(&state, &cfg)?;
    let dir = stem.parent().unwrap_or(Path::new("."));
    let zscore_path = dir.join("zscore.json");
    let raw = std::fs::read_to_string(&zscore_path).map_err(|e| {
        CliError::Runtime(format!(
            "cannot read {} (expected beside the checkpoint): {e}",
            zscore_path.display()
        ))
    })?;
    let zscore = serde_json::from_str(&raw)
        .map_err(|e| CliError::Runtime(format!("bad zscore stats {}: {e}", zscore_path.display())))?;
    Ok((state, zscore))
}

/// Eval-mode marker samples for the evidence bundle: predicted classes,
/// predicted markers, and top-class confidences.
fn marker_samples(
    state: &mut ModelState<f32>,
    zscore: &cytophen_core::data::ZScoreStats,
    dataset: &Dataset,
    split: Split,
) -> Result<MarkerSamples, CliError> {
    use cytophen_core::data::{zscore_apply, MARKER_DISPLAY_NAMES};
    use cytophen_core::model::ModelCtx;
    use cytophen_core::rng::Rng;
    use cytophen_core::tensorcore::{Graph, Mode};

    let idx = dataset.indices_of(split);
    let mut records: Vec<_> = idx.iter().map(|&i| dataset.records[i].clone()).collect();
    zscore_apply(&mut records, zscore);
    let mut samples = MarkerSamples {
        marker_names: MARKER_DISPLAY_NAMES.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    for chunk in records.chunks(64) {
        let mut image = Vec::new();
        for r in chunk {
            image.extend_from_slice(&r.image);
        }
        let tensor = cytophen_core::Tensor::new(image, &[chunk.len(), 4, 28, 28])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let mut g = Graph::new();
        let x = g.leaf(tensor, false, "x");
        let mut ctx = ModelCtx::new(&mut g, state, Mode::Eval, Rng::seeded(0));
        let out = ctx.forward(x).map_err(|e| CliError::Runtime(e.to_string()))?;
        if let Some(p) = out.cls_probs {
            for row in g.value(p).data().chunks(3) {
                let (mut best, mut best_p) = (0usize, row[0]);
                for c in 1..3 {
                    if row[c] > best_p {
                        best = c;
                        best_p = row[c];
                    }
                }
                samples.classes.push(best);
                samples.confidences.push(best_p as f64);
            }
        }
        if let Some(r) = out.reg_values {
            samples.values.extend(g.value(r).data().iter().map(|&v| v as f64));
        }
    }
    Ok(samples)
}

fn write_eval_artifacts(
    sink: &mut ArtifactSink,
    report: &EvalReport,
    bundle: &EvidenceBundle,
) -> Result<(), CliError> {
    sink.write("report.json", report.to_json().as_bytes())?;
    sink.write("classification.csv", report.classification_csv().as_bytes())?;
    sink.write("confusion.csv", report.confusion_csv().as_bytes())?;
    if let Some(csv) = report.marker_csv() {
        sink.write("markers.csv", csv.as_bytes())?;
    }
    sink.write("roc.csv", report.roc_csv().as_bytes())?;
    sink.write("evidence.json", bundle.to_json().as_bytes())?;
    Ok(())
}

fn cmd_eval(common: CommonArgs, checkpoint_stem: PathBuf, split: String) -> Result<(), CliError> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let split = parse_split(&split)?;
    let dataset = load_container(&cfg)?;
    let (mut state, zscore) = load_checkpoint_pair(&checkpoint_stem)?;
    let sink = ArtifactSink::new(&common.out, "eval", common.seed)?;
    guarded(sink, |sink| {
        let t0 = Instant::now();
        let report = evaluate(&mut state, &zscore, &dataset, split)?;
        let samples = marker_samples(&mut state, &zscore, &dataset, split)?;
        let bundle = build_evidence(&report, &samples);
        write_eval_artifacts(sink, &report, &bundle)?;
        sink.time("evaluate", t0.elapsed().as_secs_f64());
        println!(
            "evaluated {} records: accuracy {:.4}, mean r {:?}",
            report.n_samples, report.classification.accuracy, report.mean_pearson_r
        );
        Ok(())
    })
}

fn cmd_ablate(common: CommonArgs) -> Result<(), CliError> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let mut base = cfg.train_config()?;
    if let Some(seed) = common.seed {
        base.seed = seed;
    }
    let variants = cfg.ablation_variants()?;
    let seeds = cfg.ablate.seeds.clone();
    if seeds.is_empty() {
        return Err(CliError::Usage("ablate.seeds must not be empty".into()));
    }
    let dataset = load_container(&cfg)?;
    let sink = ArtifactSink::new(&common.out, "ablate", common.seed)?;
    guarded(sink, |sink| {
        let t0 = Instant::now();
        let (table, reports) = ablate(&base, &dataset, &variants, &seeds)?;
        sink.write("ablation.csv", table.to_csv().as_bytes())?;
        sink.write("ablation.json", serde_json::to_string_pretty(&table).unwrap().as_bytes())?;
        for (variant, seed, report) in &reports {
            sink.write(&format!("runs/{}-seed{}.json", variant.name(), seed), report.to_json().as_bytes())?;
        }
        sink.time("ablate", t0.elapsed().as_secs_f64());
        println!("{}", table.to_csv());
        Ok(())
    })
}

fn cmd_gradcheck(common: CommonArgs) -> Result<(), CliError> {
    let sink = ArtifactSink::new(&common.out, "gradcheck", common.seed)?;
    guarded(sink, |sink| {
        let report = gradgate::run_gate();
        sink.write("gradcheck.json", report.to_json().as_bytes())?;
        sink.time("gradcheck", report.wall_seconds);
        for row in &report.rows {
            println!(
                "{} [{}]: max rel err {:.3e} (tolerance {:.0e}) {}",
                row.name,
                row.precision,
                row.max_rel_err,
                row.tolerance,
                if row.passed { "ok" } else { "FAIL" }
            );
        }
        if report.passed {
            println!("gradient gate passed in {:.1}s", report.wall_seconds);
            Ok(())
        } else {
            Err(CliError::Runtime("gradient gate failed".into()))
        }
    })
}

fn cmd_summarize(common: CommonArgs, evidence: PathBuf, endpoint: Option<String>) -> Result<(), CliError> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let raw = std::fs::read_to_string(&evidence)
        .map_err(|e| CliError::Usage(format!("cannot read evidence {}: {e}", evidence.display())))?;
    let bundle: EvidenceBundle = serde_json::from_str(&raw)
        .map_err(|e| CliError::Runtime(format!("bad evidence {}: {e}", evidence.display())))?;
    let endpoint_url =
        endpoint.or_else(|| (!cfg.summarize.endpoint.is_empty()).then(|| cfg.summarize.endpoint.clone()));
    let sink = ArtifactSink::new(&common.out, "summarize", common.seed)?;
    guarded(sink, |sink| {
        let templates = default_templates();
        let text = match endpoint_url {
            Some(url) => {
                let mut ep = EndpointConfig::new(url);
                ep.timeout = Duration::from_secs(cfg.summarize.timeout_secs);
                let out = llm_summarize(&bundle, &templates, &ep);
                if let Some(notice) = &out.notice {
                    eprintln!("note: {notice}");
                }
                out.text
            }
            None => render_summary(&bundle, &templates),
        };
        sink.write("summary.txt", text.as_bytes())?;
        println!("{text}");
        Ok(())
    })
}

fn cmd_export(common: CommonArgs, checkpoint_stem: PathBuf, split: String) -> Result<(), CliError> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let split = parse_split(&split)?;
    let dataset = load_container(&cfg)?;
    let (mut state, zscore) = load_checkpoint_pair(&checkpoint_stem)?;
    let sink = ArtifactSink::new(&common.out, "export-figures", common.seed)?;
    guarded(sink, |sink| {
        use cytophen_core::data::{zscore_apply, CLASS_NAMES, MARKER_DISPLAY_NAMES};
        let t0 = Instant::now();
        let report = evaluate(&mut state, &zscore, &dataset, split)?;
        let samples = marker_samples(&mut state, &zscore, &dataset, split)?;

        let idx = dataset.indices_of(split);
        let mut records: Vec<_> = idx.iter().map(|&i| dataset.records[i].clone()).collect();
        zscore_apply(&mut records, &zscore);

        // Predicted-vs-true scatter, long format (one row per cell/marker).
        let mut scatter = String::from("id,marker,true_value,predicted_value,true_class,predicted_class\n");
        // Distribution data for violin/ridge figures, long format.
        let mut dist = String::from("marker,class,kind,value\n");
        let m = samples.marker_names.len();
        for (i, r) in records.iter().enumerate() {
            let pred_class = samples.classes.get(i).copied().unwrap_or(0);
            for k in 0..m {
                let name = MARKER_DISPLAY_NAMES[k];
                let pred = samples.values.get(i * m + k).copied().unwrap_or(f64::NAN);
                scatter.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.id, name, r.markers[k], pred, CLASS_NAMES[r.cls], CLASS_NAMES[pred_class]
                ));
                dist.push_str(&format!("{},{},true,{}\n", name, CLASS_NAMES[r.cls], r.markers[k]));
                dist.push_str(&format!("{},{},predicted,{}\n", name, CLASS_NAMES[pred_class], pred));
            }
        }
        sink.write("scatter.csv", scatter.as_bytes())?;
        sink.write("distributions.csv", dist.as_bytes())?;
        sink.write("confusion.csv", report.confusion_csv().as_bytes())?;
        sink.write("roc.csv", report.roc_csv().as_bytes())?;
        if let Some(csv) = report.marker_csv() {
            sink.write("markers.csv", csv.as_bytes())?;
        }
        sink.time("export", t0.elapsed().as_secs_f64());
        println!("exported figure data for {} records", records.len());
        Ok(())
    })
}
