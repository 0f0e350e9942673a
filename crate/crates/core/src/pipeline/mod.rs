//! Training, evaluation, checkpointing, and the ablation harness.

pub mod gradgate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{augment, zscore_apply, zscore_fit, CellRecord, Dataset, Split, ZScoreStats, IMG_LEN};
use crate::error::PipelineError;
use crate::losses::{total_loss, LossInputs, LossWeights};
use crate::metrics::{
    classification_metrics, per_marker_report, roc_auc_ovr, EvalReport, MarkerReport, N_MARKERS,
};
use crate::model::{ModelConfig, ModelCtx, ModelState, Variant};
use crate::rng::{record_seed, Rng};
use crate::tensor::Tensor;
use crate::tensorcore::{Graph, Mode};

/// Training hyperparameters. Optimizer: adaptive moment estimation with
/// decoupled weight decay; learning rate follows a per-epoch cosine from
/// `lr_init` down to `lr_final`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub seed: u64,
    pub augment: bool,
    /// Per-epoch train-split metric passes evaluate at most this many
    /// records (deterministic prefix); 0 means the full split.
    pub train_metric_cap: usize,
    /// Derive per-class focal weights from inverse train-split frequencies
    /// (normalized to mean 1), overriding `loss.alpha`.
    pub alpha_auto: bool,
    pub loss: LossWeights,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr_init: 1e-3,
            lr_final: 1e-5,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            seed: 0,
            augment: true,
            train_metric_cap: 2048,
            alpha_auto: true,
            loss: LossWeights::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.epochs < 1 {
            return Err(PipelineError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(PipelineError::Config(
                "batch_size must be >= 2 (Pearson term needs across-batch variance)".into(),
            ));
        }
        self.model.validate().map_err(PipelineError::Tensor)?;
        self.loss.validate().map_err(PipelineError::Tensor)?;
        Ok(())
    }

    /// Cosine schedule value for one epoch (endpoints exact).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_init;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_final + 0.5 * (self.lr_init - self.lr_final) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// One epoch of the deterministic training log. Wall-clock lives in a
/// separate timing vector so log artifacts hash identically across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_cls: Option<f64>,
    pub loss_reg: Option<f64>,
    pub loss_aux: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub train_mean_r: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub val_mean_r: Option<f64>,
    pub fusion_weights: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub variant: String,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_score: f64,
}

/// Non-finite-loss abort diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AbortReport {
    pub step: usize,
    pub epoch: usize,
    pub block: String,
}

/// Everything a finished (or aborted) run produces.
pub struct TrainOutcome {
    pub log: TrainLog,
    /// Seconds per epoch, kept out of [`TrainLog`] deliberately.
    pub epoch_seconds: Vec<f64>,
    pub best_state: ModelState<f32>,
    pub last_state: ModelState<f32>,
    pub zscore: ZScoreStats,
    pub alpha_used: [f64; 3],
    pub abort: Option<AbortReport>,
}

// ── optimizer ───────────────────────────────────────────────────────────

/// Adaptive moment estimation with decoupled weight decay. Parameters that
/// received no gradient this step (detached loss terms) are left untouched,
/// including their weight decay.
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    clip_norm: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor<f32>, Tensor<f32>)>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr_init,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            clip_norm: cfg.clip_norm,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, state: &mut ModelState<f32>, grads: &BTreeMap<String, Tensor<f32>>) {
        self.step += 1;
        let mut sq_norm = 0.0f64;
        for g in grads.values() {
            for &v in g.data() {
                sq_norm += (v as f64) * (v as f64);
            }
        }
        let norm = sq_norm.sqrt();
        let scale = if self.clip_norm > 0.0 && norm > self.clip_norm {
            (self.clip_norm / norm) as f32
        } else {
            1.0
        };
        let bc1 = 1.0 - (self.beta1).powi(self.step as i32);
        let bc2 = 1.0 - (self.beta2).powi(self.step as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let lr = self.lr as f32;
        let wd = self.weight_decay as f32;
        let eps = self.eps as f32;
        for (path, grad) in grads {
            let Some(param) = state.param_mut(path) else { continue };
            let (m, v) = self
                .moments
                .entry(path.clone())
                .or_insert_with(|| (Tensor::zeros(grad.shape()), Tensor::zeros(grad.shape())));
            let md = m.data_mut();
            let vd = v.data_mut();
            let pd = param.data_mut();
            for i in 0..pd.len() {
                let g = grad.data()[i] * scale;
                md[i] = b1 * md[i] + (1.0 - b1) * g;
                vd[i] = b2 * vd[i] + (1.0 - b2) * g * g;
                let m_hat = md[i] / bc1 as f32;
                let v_hat = vd[i] / bc2 as f32;
                pd[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * pd[i]);
            }
        }
    }
}

// ── batching ────────────────────────────────────────────────────────────

fn batch_tensors(records: &[&CellRecord]) -> (Tensor<f32>, Vec<usize>, Tensor<f32>) {
    let b = records.len();
    let mut image = Vec::with_capacity(b * IMG_LEN);
    let mut labels = Vec::with_capacity(b);
    let mut targets = Vec::with_capacity(b * N_MARKERS);
    for r in records {
        image.extend_from_slice(&r.image);
        labels.push(r.cls);
        targets.extend_from_slice(&r.markers);
    }
    (
        Tensor::new(image, &[b, 4, 28, 28]).expect("batch image shape"),
        labels,
        Tensor::new(targets, &[b, N_MARKERS]).expect("batch target shape"),
    )
}

/// Inverse-class-frequency weights normalized to mean 1.
pub fn inverse_frequency_alpha(counts: &[usize; 3]) -> [f64; 3] {
    let raw: Vec<f64> = counts.iter().map(|&c| 1.0 / (c.max(1) as f64)).collect();
    let mean = raw.iter().sum::<f64>() / 3.0;
    [raw[0] / mean, raw[1] / mean, raw[2] / mean]
}

// ── training ────────────────────────────────────────────────────────────

pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    let train_idx = dataset.indices_of(Split::Train);
    let val_idx = dataset.indices_of(Split::Val);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(PipelineError::Config("dataset needs non-empty train and val splits".into()));
    }

    let zscore = zscore_fit(train_idx.iter().map(|&i| &dataset.records[i]))?;
    let mut records = dataset.records.clone();
    zscore_apply(&mut records, &zscore);

    let mut loss_weights = cfg.loss.clone();
    if cfg.alpha_auto {
        loss_weights.alpha = inverse_frequency_alpha(&dataset.class_counts(Split::Train));
    }

    let mut state = ModelState::<f32>::init(&cfg.model, cfg.seed).map_err(PipelineError::Tensor)?;
    let mut optimizer = AdamW::new(cfg);
    let root_rng = Rng::seeded(cfg.seed);
    let variant = cfg.model.variant;

    let mut log = TrainLog {
        seed: cfg.seed,
        variant: variant.name().to_string(),
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_score: f64::NEG_INFINITY,
    };
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);
    let mut best_state = state.clone();
    let mut last_good = state.clone();
    let mut abort = None;
    let mut global_step = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        let wall = std::time::Instant::now();
        let lr = cfg.lr_at_epoch(epoch);
        optimizer.set_lr(lr);

        let mut order = train_idx.clone();
        root_rng.fork("shuffle", epoch as u64).shuffle(&mut order);

        let aug_seed = root_rng.fork("augment", epoch as u64).seed();
        let mut term_sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut term_counts = (0usize, 0usize, 0usize, 0usize);
        let mut last_fusion = None;

        for batch_idx in order.chunks(cfg.batch_size) {
            if batch_idx.len() < 2 {
                continue;
            }
            let batch: Vec<CellRecord> = batch_idx
                .iter()
                .map(|&i| {
                    let r = &records[i];
                    if cfg.augment {
                        let mut rng = Rng::seeded(record_seed(aug_seed, &r.id));
                        augment(r, &mut rng)
                    } else {
                        r.clone()
                    }
                })
                .collect();
            let refs: Vec<&CellRecord> = batch.iter().collect();
            let (image, labels, targets) = batch_tensors(&refs);

            let mut g = Graph::new();
            let x = g.leaf(image, false, "batch");
            let step_rng = root_rng.fork("dropout", global_step as u64);
            let mut ctx = ModelCtx::new(&mut g, &mut state, Mode::Train, step_rng);
            let out = ctx.forward(x).map_err(PipelineError::Tensor)?;
            let target_node = g.constant(targets);
            let inputs = LossInputs {
                cls_probs: out.cls_probs,
                reg_values: out.reg_values,
                h_fused: out.h_fused,
                h_cls: out.h_cls,
                h_reg: out.h_reg,
            };
            let (loss, breakdown) = total_loss(&mut g, &inputs, &labels, Some(target_node), &loss_weights)
                .map_err(PipelineError::Tensor)?;

            if !breakdown.total.is_finite() {
                // Re-run with block checks to locate the first offender.
                let block = locate_non_finite(cfg, &last_good, &refs, global_step);
                abort = Some(AbortReport { step: global_step, epoch, block });
                state = last_good.clone();
                break 'epochs;
            }
            last_good = state.clone();

            g.backward(loss).map_err(PipelineError::Tensor)?;
            let mut grads: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
            for (path, id) in &out.param_nodes {
                if let Some(grad) = g.grad(*id) {
                    grads.insert(path.clone(), grad.clone());
                }
            }
            optimizer.step(&mut state, &grads);

            term_sums.0 += breakdown.total;
            term_counts.0 += 1;
            if let Some(v) = breakdown.cls {
                term_sums.1 += v;
                term_counts.1 += 1;
            }
            if let Some(v) = breakdown.reg {
                term_sums.2 += v;
                term_counts.2 += 1;
            }
            if let Some(v) = breakdown.aux {
                term_sums.3 += v;
                term_counts.3 += 1;
            }
            last_fusion = out.diagnostics.fusion_weights;
            global_step += 1;
        }

        let cap = if cfg.train_metric_cap == 0 { train_idx.len() } else { cfg.train_metric_cap };
        let train_subset: Vec<&CellRecord> =
            train_idx.iter().take(cap).map(|&i| &records[i]).collect();
        let (train_acc, train_r) = split_quick_metrics(&mut state, &train_subset)?;
        let val_records: Vec<&CellRecord> = val_idx.iter().map(|&i| &records[i]).collect();
        let (val_acc, val_r) = split_quick_metrics(&mut state, &val_records)?;

        let avg = |sum: f64, count: usize| if count > 0 { Some(sum / count as f64) } else { None };
        log.epochs.push(EpochLog {
            epoch,
            lr,
            loss_total: if term_counts.0 > 0 { term_sums.0 / term_counts.0 as f64 } else { 0.0 },
            loss_cls: avg(term_sums.1, term_counts.1),
            loss_reg: avg(term_sums.2, term_counts.2),
            loss_aux: avg(term_sums.3, term_counts.3),
            train_accuracy: train_acc,
            train_mean_r: train_r,
            val_accuracy: val_acc,
            val_mean_r: val_r,
            fusion_weights: last_fusion,
        });
        epoch_seconds.push(wall.elapsed().as_secs_f64());

        // Best checkpoint: mean of the available validation criteria.
        let score = match (val_acc, val_r) {
            (Some(a), Some(r)) => (a + r) / 2.0,
            (Some(a), None) => a,
            (None, Some(r)) => r,
            (None, None) => 0.0,
        };
        if score > log.best_score {
            log.best_score = score;
            log.best_epoch = epoch;
            best_state = state.clone();
        }
    }

    Ok(TrainOutcome {
        log,
        epoch_seconds,
        best_state,
        last_state: state,
        zscore,
        alpha_used: loss_weights.alpha,
        abort,
    })
}

/// Accuracy and mean per-marker Pearson r of one record set, eval mode.
fn split_quick_metrics(
    state: &mut ModelState<f32>,
    records: &[&CellRecord],
) -> Result<(Option<f64>, Option<f64>), PipelineError> {
    if records.is_empty() {
        return Ok((None, None));
    }
    let (pred_labels, _probs, pred_reg) = predict_records(state, records)?;
    let variant = state.config().variant;
    let acc = if variant.has_cls() {
        let truth: Vec<usize> = records.iter().map(|r| r.cls).collect();
        let correct = pred_labels.iter().zip(truth.iter()).filter(|(p, t)| p == t).count();
        Some(correct as f64 / records.len() as f64)
    } else {
        None
    };
    let mean_r = if variant.has_reg() && records.len() >= 2 {
        let pred: Vec<f64> = pred_reg.iter().map(|&v| v as f64).collect();
        let truth: Vec<f64> =
            records.iter().flat_map(|r| r.markers.iter().map(|&m| m as f64)).collect();
        let names: Vec<String> = (0..N_MARKERS).map(|k| format!("m{}", k + 1)).collect();
        let report = per_marker_report(&pred, &truth, &names)
            .map_err(|e| PipelineError::Config(format!("metrics: {e}")))?;
        Some(report.aggregate.pearson_r)
    } else {
        None
    };
    Ok((acc, mean_r))
}

const EVAL_BATCH: usize = 64;

/// Eval-mode predictions over records, deterministic batch order.
#[allow(clippy::type_complexity)]
fn predict_records(
    state: &mut ModelState<f32>,
    records: &[&CellRecord],
) -> Result<(Vec<usize>, Vec<f64>, Vec<f32>), PipelineError> {
    let variant = state.config().variant;
    let mut labels = Vec::with_capacity(records.len());
    let mut probs = Vec::with_capacity(records.len() * 3);
    let mut reg = Vec::with_capacity(records.len() * N_MARKERS);
    for chunk in records.chunks(EVAL_BATCH) {
        let (image, _, _) = batch_tensors(chunk);
        let mut g = Graph::new();
        let x = g.leaf(image, false, "eval");
        let mut ctx = ModelCtx::new(&mut g, state, Mode::Eval, Rng::seeded(0));
        let out = ctx.forward(x).map_err(PipelineError::Tensor)?;
        if variant.has_cls() {
            let p = g.value(out.cls_probs.expect("cls head"));
            for row in p.data().chunks(3) {
                let mut best = 0usize;
                for c in 1..3 {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                labels.push(best);
                probs.extend(row.iter().map(|&v| v as f64));
            }
        }
        if variant.has_reg() {
            reg.extend_from_slice(g.value(out.reg_values.expect("reg head")).data());
        }
    }
    Ok((labels, probs, reg))
}

/// Evaluate a trained state on one split, producing the full report.
pub fn evaluate(
    state: &mut ModelState<f32>,
    zscore: &ZScoreStats,
    dataset: &Dataset,
    split: Split,
) -> Result<EvalReport, PipelineError> {
    let idx = dataset.indices_of(split);
    if idx.is_empty() {
        return Err(PipelineError::Config(format!("split {split:?} is empty")));
    }
    let mut records: Vec<CellRecord> = idx.iter().map(|&i| dataset.records[i].clone()).collect();
    zscore_apply(&mut records, zscore);
    let refs: Vec<&CellRecord> = records.iter().collect();
    let variant = state.config().variant;
    let (pred_labels, probs, pred_reg) = predict_records(state, &refs)?;

    let truth: Vec<usize> = records.iter().map(|r| r.cls).collect();
    let classification = if variant.has_cls() {
        classification_metrics(&pred_labels, &truth)
            .map_err(|e| PipelineError::Config(format!("metrics: {e}")))?
    } else {
        // Regression-only ablations still report a confusion skeleton.
        classification_metrics(&vec![0; truth.len()], &truth)
            .map_err(|e| PipelineError::Config(format!("metrics: {e}")))?
    };
    let roc = if variant.has_cls() {
        roc_auc_ovr(&probs, &truth).map_err(|e| PipelineError::Config(format!("metrics: {e}")))?
    } else {
        Vec::new()
    };
    let markers: Option<MarkerReport> = if variant.has_reg() {
        let pred: Vec<f64> = pred_reg.iter().map(|&v| v as f64).collect();
        let target: Vec<f64> =
            records.iter().flat_map(|r| r.markers.iter().map(|&m| m as f64)).collect();
        let names: Vec<String> = (0..N_MARKERS).map(|k| format!("m{}", k + 1)).collect();
        Some(
            per_marker_report(&pred, &target, &names)
                .map_err(|e| PipelineError::Config(format!("metrics: {e}")))?,
        )
    } else {
        None
    };
    let mean_pearson_r = markers.as_ref().map(|m| m.aggregate.pearson_r);
    Ok(EvalReport {
        n_samples: records.len(),
        classification,
        markers,
        roc,
        mean_pearson_r,
    })
}

fn locate_non_finite(
    cfg: &TrainConfig,
    state: &ModelState<f32>,
    batch: &[&CellRecord],
    step: usize,
) -> String {
    let (image, _, _) = batch_tensors(batch);
    let mut probe = state.clone();
    let mut g = Graph::new();
    let x = g.leaf(image, false, "probe");
    let rng = Rng::seeded(cfg.seed).fork("dropout", step as u64);
    let mut ctx = ModelCtx::new(&mut g, &mut probe, Mode::Train, rng)
        .with_running_updates(false)
        .with_finite_checks(true);
    match ctx.forward(x) {
        Err(e) => e.to_string(),
        Ok(_) => "loss (activations finite; overflow in the objective)".to_string(),
    }
}

// ── ablation harness ────────────────────────────────────────────────────

pub const ABLATION_VARIANTS: [Variant; 5] =
    [Variant::Full, Variant::CnnOnly, Variant::VitOnly, Variant::ClsOnly, Variant::RegOnly];

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

/// One ablation table row: seed-aggregated metrics; cells stay empty for
/// heads the variant disables.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub accuracy: Option<MeanStd>,
    pub macro_f1: Option<MeanStd>,
    pub mean_pearson_r: Option<MeanStd>,
    pub rmse: Option<MeanStd>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let cell = |c: &Option<MeanStd>| match c {
            Some(ms) => format!("{:.4}±{:.4}", ms.mean, ms.std),
            None => "--".to_string(),
        };
        let mut out = String::from("variant,accuracy,macro_f1,pearson_r,rmse\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.variant,
                cell(&row.accuracy),
                cell(&row.macro_f1),
                cell(&row.mean_pearson_r),
                cell(&row.rmse),
            ));
        }
        out
    }

    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant.name())
    }
}

/// Train and evaluate every variant across shared seeds on a shared dataset.
/// Returns the table plus every per-run report for downstream artifacts.
#[allow(clippy::type_complexity)]
pub fn ablate(
    base: &TrainConfig,
    dataset: &Dataset,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<(AblationTable, Vec<(Variant, u64, EvalReport)>), PipelineError> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &variant in variants {
        let mut accs = Vec::new();
        let mut f1s = Vec::new();
        let mut rs = Vec::new();
        let mut rmses = Vec::new();
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.model.variant = variant;
            let mut outcome = train(&cfg, dataset)?;
            if let Some(abort) = &outcome.abort {
                return Err(PipelineError::NonFiniteLoss {
                    step: abort.step,
                    block: abort.block.clone(),
                });
            }
            let report = evaluate(&mut outcome.best_state, &outcome.zscore, dataset, Split::Test)?;
            if variant.has_cls() {
                accs.push(report.classification.accuracy);
                f1s.push(report.classification.macro_f1);
            }
            if let Some(m) = &report.markers {
                rs.push(m.aggregate.pearson_r);
                rmses.push(m.aggregate.rmse);
            }
            reports.push((variant, seed, report));
        }
        rows.push(AblationRow {
            variant: variant.name().to_string(),
            seeds: seeds.to_vec(),
            accuracy: (!accs.is_empty()).then(|| mean_std(&accs)),
            macro_f1: (!f1s.is_empty()).then(|| mean_std(&f1s)),
            mean_pearson_r: (!rs.is_empty()).then(|| mean_std(&rs)),
            rmse: (!rmses.is_empty()).then(|| mean_std(&rmses)),
        });
    }
    Ok((AblationTable { rows }, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_hits_endpoints() {
        let cfg = TrainConfig { epochs: 200, ..Default::default() };
        assert_eq!(cfg.lr_at_epoch(0), 1e-3);
        assert!((cfg.lr_at_epoch(199) - 1e-5).abs() < 1e-9);
        let single = TrainConfig { epochs: 1, ..Default::default() };
        assert_eq!(single.lr_at_epoch(0), 1e-3);
    }

    #[test]
    fn alpha_from_inverse_frequency() {
        let alpha = inverse_frequency_alpha(&[456, 736, 226]);
        let mean = (alpha[0] + alpha[1] + alpha[2]) / 3.0;
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(alpha[2] > alpha[0] && alpha[0] > alpha[1]);
    }

    #[test]
    fn adamw_zero_lr_keeps_parameters_bit_identical() {
        let cfg = TrainConfig::default();
        let mut state = ModelState::<f32>::init(&cfg.model, 5).unwrap();
        let reference = state.clone();
        let mut opt = AdamW::new(&cfg);
        opt.set_lr(0.0);
        let mut grads = BTreeMap::new();
        for (path, p) in reference.params() {
            grads.insert(path.clone(), Tensor::full(p.shape(), 0.3f32));
        }
        opt.step(&mut state, &grads);
        for (path, p) in reference.params() {
            let now = state.param(path).unwrap();
            assert!(
                p.data().iter().zip(now.data().iter()).all(|(a, b)| a.to_bits() == b.to_bits()),
                "{path} changed under lr=0"
            );
        }
    }

    #[test]
    fn adamw_skips_parameters_without_gradients() {
        let cfg = TrainConfig::default();
        let mut state = ModelState::<f32>::init(&cfg.model, 6).unwrap();
        let reference = state.clone();
        let mut opt = AdamW::new(&cfg);
        opt.set_lr(1e-3);
        let mut grads = BTreeMap::new();
        grads.insert("fuse.alpha".to_string(), Tensor::full(&[2], 0.5f32));
        opt.step(&mut state, &grads);
        for (path, p) in reference.params() {
            let now = state.param(path).unwrap();
            let same = p.data().iter().zip(now.data().iter()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert_eq!(same, path != "fuse.alpha", "{path}");
        }
    }
}
