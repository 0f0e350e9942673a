//! The weighted multi-task objective: focal classification loss, smooth-L1
//! regression with a Pearson alignment term, and a feature-consistency
//! auxiliary loss.
//!
//! All losses are built from graph operations so gradients flow through the
//! same reverse-mode path as the model.

use crate::error::TensorError;
use crate::tensor::{Element, Tensor};
use crate::tensorcore::{Graph, NodeId};

/// Weights and shape parameters of the total objective.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    pub lambda_aux: f64,
    /// Focal exponent; 0 reduces the classification term to cross-entropy.
    pub gamma: f64,
    /// Per-class weights, elementwise positive.
    pub alpha: [f64; 3],
    /// Weight of the Pearson alignment term inside the regression loss.
    pub beta: f64,
    /// Variance floor added under each standard deviation's square root.
    pub pearson_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_reg: 1.0,
            lambda_aux: 0.1,
            gamma: 2.0,
            alpha: [1.0, 1.0, 1.0],
            beta: 0.5,
            pearson_eps: 1e-8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.lambda_cls < 0.0 || self.lambda_reg < 0.0 || self.lambda_aux < 0.0 {
            return Err(TensorError::Input {
                op: "LossWeights".into(),
                detail: "lambda weights must be non-negative".into(),
            });
        }
        if self.gamma < 0.0 || self.beta < 0.0 {
            return Err(TensorError::Input {
                op: "LossWeights".into(),
                detail: "gamma and beta must be non-negative".into(),
            });
        }
        if self.alpha.iter().any(|&a| a <= 0.0) || self.pearson_eps <= 0.0 {
            return Err(TensorError::Input {
                op: "LossWeights".into(),
                detail: "alpha must be elementwise positive and pearson_eps > 0".into(),
            });
        }
        Ok(())
    }
}

/// Unweighted loss terms of one batch, for logging.
#[derive(Clone, Copy, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: Option<f64>,
    pub reg: Option<f64>,
    pub aux: Option<f64>,
    /// True when the batch was too small for the Pearson term.
    pub pearson_skipped: bool,
}

const PROB_FLOOR: f64 = 1e-7;

/// Focal loss over simplex rows: mean of `-alpha_y (1-p_y)^gamma ln(p_y)`
/// with `p_y` clamped to `[1e-7, 1-1e-7]`.
pub fn focal_loss<T: Element>(
    g: &mut Graph<T>,
    cls_probs: NodeId,
    labels: &[usize],
    alpha: &[f64; 3],
    gamma: f64,
) -> Result<NodeId, TensorError> {
    let shape = g.shape(cls_probs).to_vec();
    if shape.len() != 2 {
        return Err(TensorError::Shape {
            op: "focal_loss".into(),
            detail: format!("expected probabilities [B,C], got {shape:?}"),
        });
    }
    let (b, c) = (shape[0], shape[1]);
    if labels.len() != b {
        return Err(TensorError::Input {
            op: "focal_loss".into(),
            detail: format!("{} labels for batch of {b}", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(TensorError::Input {
            op: "focal_loss".into(),
            detail: format!("label {bad} out of range 0..{c}"),
        });
    }
    let mut onehot = vec![T::ZERO; b * c];
    let mut alpha_per = vec![T::ZERO; b];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l] = T::ONE;
        alpha_per[i] = T::from_f64(alpha[l]);
    }
    let onehot = g.constant(Tensor::new(onehot, &[b, c])?);
    let alpha_per = g.constant(Tensor::new(alpha_per, &[b, 1])?);

    let picked = g.mul(cls_probs, onehot)?;
    let p = g.sum_axes(picked, &[1])?; // [B,1]
    let p = g.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR);
    let neg_p = g.mul_scalar(p, -1.0);
    let one_minus = g.add_scalar(neg_p, 1.0);
    let focus = g.pow_scalar(one_minus, gamma);
    let lnp = g.ln(p);
    let neg_log = g.mul_scalar(lnp, -1.0);
    let per_sample = g.mul(focus, neg_log)?;
    let weighted = g.mul(alpha_per, per_sample)?;
    g.mean_all(weighted)
}

/// The `mean over markers of (1 - r_m)` alignment term, where `r_m` is the
/// across-batch Pearson correlation with `eps` under each standard
/// deviation's square root. `None` when the batch is too small (`B < 2`).
pub fn pearson_alignment_term<T: Element>(
    g: &mut Graph<T>,
    pred: NodeId,
    target: NodeId,
    eps: f64,
) -> Result<Option<NodeId>, TensorError> {
    let shape = g.shape(pred).to_vec();
    if shape.len() != 2 || g.shape(target) != shape.as_slice() {
        return Err(TensorError::Shape {
            op: "pearson_alignment".into(),
            detail: format!("pred {:?} and target {:?} must be equal [B,M]", shape, g.shape(target)),
        });
    }
    if shape[0] < 2 {
        return Ok(None);
    }
    let pm = g.mean_axes(pred, &[0])?;
    let tm = g.mean_axes(target, &[0])?;
    let pc = g.sub(pred, pm)?;
    let tc = g.sub(target, tm)?;
    let cov_e = g.mul(pc, tc)?;
    let cov = g.mean_axes(cov_e, &[0])?;
    let pv_e = g.mul(pc, pc)?;
    let pv = g.mean_axes(pv_e, &[0])?;
    let tv_e = g.mul(tc, tc)?;
    let tv = g.mean_axes(tv_e, &[0])?;
    // True variance floor (not an additive epsilon): keeps the term exactly
    // invariant under positive affine maps whenever the variance clears the
    // floor, while still protecting degenerate batches.
    let pv_floored = g.clamp(pv, eps, f64::INFINITY);
    let tv_floored = g.clamp(tv, eps, f64::INFINITY);
    let sp = g.sqrt(pv_floored);
    let st = g.sqrt(tv_floored);
    let denom = g.mul(sp, st)?;
    let r = g.div(cov, denom)?;
    let neg_r = g.mul_scalar(r, -1.0);
    let one_minus = g.add_scalar(neg_r, 1.0);
    Ok(Some(g.mean_all(one_minus)?))
}

/// Regression loss: smooth-L1 (mean over all elements, transition point 1)
/// plus `beta` times the Pearson alignment term. Returns the loss node and
/// whether the Pearson term was skipped for a too-small batch.
pub fn regression_loss<T: Element>(
    g: &mut Graph<T>,
    pred: NodeId,
    target: NodeId,
    beta: f64,
    pearson_eps: f64,
) -> Result<(NodeId, bool), TensorError> {
    if g.shape(pred) != g.shape(target) {
        return Err(TensorError::Shape {
            op: "regression_loss".into(),
            detail: format!("pred {:?} != target {:?}", g.shape(pred), g.shape(target)),
        });
    }
    let diff = g.sub(pred, target)?;
    let hub = g.huber(diff);
    let smooth = g.mean_all(hub)?;
    match pearson_alignment_term(g, pred, target, pearson_eps)? {
        Some(term) if beta > 0.0 => {
            let scaled = g.mul_scalar(term, beta);
            Ok((g.add(smooth, scaled)?, false))
        }
        Some(_) => Ok((smooth, false)),
        None => {
            eprintln!("warning: batch < 2, Pearson alignment term skipped (smooth-L1 only)");
            Ok((smooth, true))
        }
    }
}

/// Feature-consistency loss: mean over the present task pathways of the
/// mean squared distance to the fused representation.
pub fn aux_consistency_loss<T: Element>(
    g: &mut Graph<T>,
    h_fused: NodeId,
    h_cls: Option<NodeId>,
    h_reg: Option<NodeId>,
) -> Result<NodeId, TensorError> {
    let mut terms = Vec::new();
    for h in [h_cls, h_reg].into_iter().flatten() {
        if g.shape(h) != g.shape(h_fused) {
            return Err(TensorError::Shape {
                op: "aux_consistency_loss".into(),
                detail: format!("task features {:?} != fused {:?}", g.shape(h), g.shape(h_fused)),
            });
        }
        let d = g.sub(h_fused, h)?;
        let sq = g.mul(d, d)?;
        terms.push(g.mean_all(sq)?);
    }
    match terms.len() {
        0 => Ok(g.constant_scalar(0.0)),
        1 => Ok(terms[0]),
        n => {
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = g.add(acc, t)?;
            }
            Ok(g.mul_scalar(acc, 1.0 / n as f64))
        }
    }
}

/// Model outputs a loss can be computed from. Absent entries correspond to
/// disabled task heads in single-task ablations.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs {
    pub cls_probs: Option<NodeId>,
    pub reg_values: Option<NodeId>,
    pub h_fused: NodeId,
    pub h_cls: Option<NodeId>,
    pub h_reg: Option<NodeId>,
}

/// Weighted total objective. Terms with zero weight (or missing inputs) are
/// not built at all, so no gradient flows through them.
pub fn total_loss<T: Element>(
    g: &mut Graph<T>,
    inputs: &LossInputs,
    labels: &[usize],
    reg_targets: Option<NodeId>,
    weights: &LossWeights,
) -> Result<(NodeId, LossBreakdown), TensorError> {
    weights.validate()?;
    let mut breakdown = LossBreakdown::default();
    let mut total: Option<NodeId> = None;

    fn add_term<T: Element>(
        g: &mut Graph<T>,
        node: NodeId,
        lambda: f64,
        total: &mut Option<NodeId>,
    ) -> Result<(), TensorError> {
        let scaled = if lambda == 1.0 { node } else { g.mul_scalar(node, lambda) };
        *total = Some(match *total {
            Some(acc) => g.add(acc, scaled)?,
            None => scaled,
        });
        Ok(())
    }

    if weights.lambda_cls > 0.0 {
        if let Some(probs) = inputs.cls_probs {
            let cls = focal_loss(g, probs, labels, &weights.alpha, weights.gamma)?;
            breakdown.cls = Some(g.value(cls).item().to_f64());
            add_term(g, cls, weights.lambda_cls, &mut total)?;
        }
    }
    if weights.lambda_reg > 0.0 {
        if let (Some(pred), Some(target)) = (inputs.reg_values, reg_targets) {
            let (reg, skipped) = regression_loss(g, pred, target, weights.beta, weights.pearson_eps)?;
            breakdown.reg = Some(g.value(reg).item().to_f64());
            breakdown.pearson_skipped = skipped;
            add_term(g, reg, weights.lambda_reg, &mut total)?;
        }
    }
    if weights.lambda_aux > 0.0 && (inputs.h_cls.is_some() || inputs.h_reg.is_some()) {
        let aux = aux_consistency_loss(g, inputs.h_fused, inputs.h_cls, inputs.h_reg)?;
        breakdown.aux = Some(g.value(aux).item().to_f64());
        add_term(g, aux, weights.lambda_aux, &mut total)?;
    }
    let total = total.unwrap_or_else(|| g.constant_scalar(0.0));
    breakdown.total = g.value(total).item().to_f64();
    Ok((total, breakdown))
}
