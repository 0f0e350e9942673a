//! The gradient gate: finite-difference verification of every operation and
//! of the full model + total-loss composite, at double and single precision.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::losses::{focal_loss, regression_loss, total_loss, LossInputs, LossWeights};
use crate::model::{ModelConfig, ModelCtx, ModelState};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};
use crate::tensorcore::{analytic_grads, fd_compare, grad_check, Graph, Mode, NodeId, ProbeMode};

pub const TOL_F64: f64 = 1e-4;
pub const TOL_F32: f64 = 1e-2;
const EPS_F64: f64 = 1e-5;
const EPS_F32: f64 = 1e-3;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GateRow {
    pub name: String,
    pub precision: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GateReport {
    pub rows: Vec<GateRow>,
    pub passed: bool,
    pub wall_seconds: f64,
}

impl GateReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gate report serializes")
    }
}

fn randn<T: Element>(shape: &[usize], seed: u64, scale: f64) -> Tensor<T> {
    let mut rng = Rng::seeded(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.normal() * scale).collect();
    Tensor::from_f64_slice(&data, shape).unwrap()
}

struct Gate {
    rows: Vec<GateRow>,
}

impl Gate {
    fn check<T: Element>(
        &mut self,
        name: &str,
        precision: &str,
        params: &[Tensor<T>],
        f: &impl Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId, TensorError>,
        eps: f64,
        tol: f64,
        mode: ProbeMode,
    ) {
        let (err, passed) = match grad_check(params, f, eps, mode) {
            Ok(report) => (report.max_rel_err, report.max_rel_err < tol),
            Err(e) => {
                eprintln!("gradient gate: {name} ({precision}) failed to evaluate: {e}");
                (f64::INFINITY, false)
            }
        };
        self.rows.push(GateRow {
            name: name.to_string(),
            precision: precision.to_string(),
            max_rel_err: err,
            tolerance: tol,
            passed,
        });
    }
}

macro_rules! op_cases {
    ($gate:expr, $t:ty, $precision:expr, $eps:expr, $tol:expr) => {{
        let gate: &mut Gate = $gate;
        let mode = ProbeMode::RandomCoords { count: 32, seed: 1009 };
        gate.check::<$t>(
            "conv2d",
            $precision,
            &[randn(&[2, 3, 8, 8], 1, 1.0), randn(&[4, 3, 3, 3], 2, 0.3), randn(&[4], 3, 0.1)],
            &|g, ids| {
                let y = g.conv2d(ids[0], ids[1], ids[2], 2, 1)?;
                let sq = g.mul(y, y)?;
                g.mean_all(sq)
            },
            $eps,
            $tol,
            mode.clone(),
        );
        gate.check::<$t>(
            "conv1d_rows",
            $precision,
            &[randn(&[3, 4], 4, 1.0), randn(&[3], 5, 0.5), randn(&[1], 6, 0.1)],
            &|g, ids| {
                let y = g.conv1d_rows(ids[0], ids[1], ids[2])?;
                let s = g.sigmoid(y);
                g.mean_all(s)
            },
            $eps,
            $tol,
            ProbeMode::Exhaustive,
        );
        gate.check::<$t>(
            "linear",
            $precision,
            &[randn(&[3, 16], 7, 1.0), randn(&[8, 16], 8, 0.25), randn(&[8], 9, 0.1)],
            &|g, ids| {
                let y = g.linear(ids[0], ids[1], ids[2])?;
                let sq = g.mul(y, y)?;
                g.mean_all(sq)
            },
            $eps,
            $tol,
            mode.clone(),
        );
        gate.check::<$t>(
            "layer_norm",
            $precision,
            &[randn(&[4, 12], 10, 2.0), randn(&[12], 11, 0.5), randn(&[12], 12, 0.5)],
            &|g, ids| {
                let y = g.layer_norm(ids[0], ids[1], ids[2], 1e-5)?;
                let sq = g.mul(y, y)?;
                g.mean_all(sq)
            },
            $eps,
            $tol,
            ProbeMode::Exhaustive,
        );
        gate.check::<$t>(
            "batch_norm_train",
            $precision,
            &[randn(&[3, 2, 4, 4], 13, 1.5), randn(&[2], 14, 0.5), randn(&[2], 15, 0.5)],
            &|g, ids| {
                let (y, _) = g.batch_norm2d(ids[0], ids[1], ids[2], 1e-5, Mode::Train, None)?;
                let sq = g.mul(y, y)?;
                g.mean_all(sq)
            },
            $eps,
            $tol,
            mode.clone(),
        );
        gate.check::<$t>(
            "batch_norm_eval",
            $precision,
            &[randn(&[3, 2, 4, 4], 16, 1.5), randn(&[2], 17, 0.5), randn(&[2], 18, 0.5)],
            &|g, ids| {
                let rm = [<$t>::from_f64(0.1), <$t>::from_f64(-0.2)];
                let rv = [<$t>::from_f64(1.3), <$t>::from_f64(0.8)];
                let (y, _) = g.batch_norm2d(ids[0], ids[1], ids[2], 1e-5, Mode::Eval, Some((&rm, &rv)))?;
                let sq = g.mul(y, y)?;
                g.mean_all(sq)
            },
            $eps,
            $tol,
            mode.clone(),
        );
        gate.check::<$t>(
            "softmax",
            $precision,
            &[randn(&[3, 5], 19, 2.0)],
            &|g, ids| {
                let s = g.softmax(ids[0], 1)?;
                let sq = g.mul(s, s)?;
                g.mean_all(sq)
            },
            $eps,
            $tol,
            ProbeMode::Exhaustive,
        );
        gate.check::<$t>(
            "gelu",
            $precision,
            &[randn(&[40], 20, 1.5)],
            &|g, ids| {
                let y = g.gelu(ids[0]);
                let sq = g.mul(y, y)?;
                g.mean_all(sq)
            },
            $eps,
            $tol,
            ProbeMode::Exhaustive,
        );
        gate.check::<$t>(
            "sigmoid",
            $precision,
            &[randn(&[40], 21, 2.0)],
            &|g, ids| {
                let y = g.sigmoid(ids[0]);
                let sq = g.mul(y, y)?;
                g.mean_all(sq)
            },
            $eps,
            $tol,
            ProbeMode::Exhaustive,
        );
        gate.check::<$t>(
            "attention",
            $precision,
            &[randn(&[1, 2, 5, 4], 22, 0.8), randn(&[1, 2, 5, 4], 23, 0.8), randn(&[1, 2, 5, 4], 24, 0.8)],
            &|g, ids| {
                let y = g.attention(ids[0], ids[1], ids[2])?;
                let sq = g.mul(y, y)?;
                g.mean_all(sq)
            },
            $eps,
            $tol,
            mode.clone(),
        );
        gate.check::<$t>(
            "elementwise_binary",
            $precision,
            &[randn(&[3, 4], 25, 1.0), randn(&[4], 26, 1.0)],
            &|g, ids| {
                let s = g.add(ids[0], ids[1])?;
                let p = g.mul(s, ids[0])?;
                let d = g.sub(p, ids[1])?;
                let sig = g.sigmoid(ids[1]);
                let denom = g.add_scalar(sig, 1.0);
                let q = g.div(d, denom)?;
                let sq = g.mul(q, q)?;
                g.mean_all(sq)
            },
            $eps,
            $tol,
            ProbeMode::Exhaustive,
        );
        gate.check::<$t>(
            "scalar_chain",
            $precision,
            &[randn::<$t>(&[30], 27, 0.5).map(|v| v.abs() + <$t>::from_f64(0.5))],
            &|g, ids| {
                let p = g.pow_scalar(ids[0], 2.5);
                let l = g.ln(p);
                let sc = g.add_scalar(l, 3.0);
                let r = g.sqrt(sc);
                let h = g.huber(r);
                let c = g.clamp(h, -10.0, 10.0);
                let m = g.mul_scalar(c, 1.7);
                g.mean_all(m)
            },
            $eps,
            $tol,
            ProbeMode::Exhaustive,
        );
        gate.check::<$t>(
            "shape_plumbing",
            $precision,
            &[randn(&[2, 3, 4], 28, 1.0), randn(&[2, 5, 4], 29, 1.0)],
            &|g, ids| {
                let c = g.concat(&[ids[0], ids[1]], 1)?;
                let t = g.transpose_last2(c)?;
                let p = g.permute(t, &[1, 0, 2])?;
                let r = g.reshape(p, &[4, 16])?;
                let n = g.narrow(r, 1, 2, 10)?;
                let sq = g.mul(n, n)?;
                g.mean_all(sq)
            },
            $eps,
            $tol,
            ProbeMode::Exhaustive,
        );
        gate.check::<$t>(
            "reductions_expand",
            $precision,
            &[randn(&[3, 4], 30, 1.0)],
            &|g, ids| {
                let m = g.mean_axes(ids[0], &[0])?;
                let e = g.expand(m, &[3, 4])?;
                let d = g.sub(ids[0], e)?;
                let sq = g.mul(d, d)?;
                let s = g.sum_axes(sq, &[1])?;
                g.mean_all(s)
            },
            $eps,
            $tol,
            ProbeMode::Exhaustive,
        );
        gate.check::<$t>(
            "dropout_train",
            $precision,
            &[randn(&[50], 31, 1.0)],
            &|g, ids| {
                let mut rng = Rng::seeded(777);
                let d = g.dropout(ids[0], 0.4, Mode::Train, &mut rng)?;
                let sq = g.mul(d, d)?;
                g.mean_all(sq)
            },
            $eps,
            $tol,
            ProbeMode::Exhaustive,
        );
        gate.check::<$t>(
            "focal_loss",
            $precision,
            &[randn(&[4, 3], 32, 1.0)],
            &|g, ids| {
                let probs = g.softmax(ids[0], 1)?;
                focal_loss(g, probs, &[0, 1, 2, 0], &[1.2, 0.9, 1.1], 2.0)
            },
            $eps,
            $tol,
            ProbeMode::Exhaustive,
        );
        gate.check::<$t>(
            "regression_loss",
            $precision,
            &[randn(&[4, 4], 33, 1.0)],
            &|g, ids| {
                let target = g.constant(randn::<$t>(&[4, 4], 34, 1.0));
                let (loss, _) = regression_loss(g, ids[0], target, 0.5, 1e-8)?;
                Ok(loss)
            },
            $eps,
            $tol,
            ProbeMode::Exhaustive,
        );
    }};
}

/// Gradcheck of the full model plus total loss with joint directional probes
/// over all parameters.
fn full_model_row<T: Element>(precision: &str, eps: f64, tol: f64) -> GateRow {
    let cfg = ModelConfig::default();
    let state = ModelState::<T>::init(&cfg, 404).unwrap();
    let batch = 2usize;
    let image = randn::<T>(&[batch, 4, 28, 28], 41, 1.0);
    let labels = vec![0usize, 2];
    let targets = randn::<T>(&[batch, 4], 42, 1.0);
    let paths = state.param_paths();
    let params: Vec<Tensor<T>> = paths.iter().map(|p| state.param(p).unwrap().clone()).collect();

    let f = move |g: &mut Graph<T>, ids: &[NodeId]| -> Result<NodeId, TensorError> {
        let overrides: BTreeMap<String, NodeId> =
            paths.iter().cloned().zip(ids.iter().copied()).collect();
        let mut st = ModelState::<T>::init(&cfg, 404).unwrap();
        let x = g.leaf(image.clone(), false, "x");
        let mut ctx = ModelCtx::new(g, &mut st, Mode::Train, Rng::seeded(505))
            .with_running_updates(false)
            .with_overrides(&overrides);
        let out = ctx.forward(x)?;
        let target_node = ctx.g.constant(targets.clone());
        let inputs = LossInputs {
            cls_probs: out.cls_probs,
            reg_values: out.reg_values,
            h_fused: out.h_fused,
            h_cls: out.h_cls,
            h_reg: out.h_reg,
        };
        let (loss, _) = total_loss(ctx.g, &inputs, &labels, Some(target_node), &LossWeights::default())?;
        Ok(loss)
    };
    let result = analytic_grads(&params, &f)
        .and_then(|analytic| fd_compare(&params, &f, &analytic, eps, ProbeMode::Directions { count: 16, seed: 99 }));
    let (err, passed) = match result {
        Ok(report) => (report.max_rel_err, report.max_rel_err < tol),
        Err(e) => {
            eprintln!("gradient gate: full model ({precision}) failed to evaluate: {e}");
            (f64::INFINITY, false)
        }
    };
    GateRow {
        name: "full_model_total_loss".into(),
        precision: precision.into(),
        max_rel_err: err,
        tolerance: tol,
        passed,
    }
}

/// Run the whole gate: every operation at double and single precision, then
/// the end-to-end composite.
pub fn run_gate() -> GateReport {
    let start = Instant::now();
    let mut gate = Gate { rows: Vec::new() };
    op_cases!(&mut gate, f64, "f64", EPS_F64, TOL_F64);
    op_cases!(&mut gate, f32, "f32", EPS_F32, TOL_F32);
    gate.rows.push(full_model_row::<f64>("f64", EPS_F64, TOL_F64));
    gate.rows.push(full_model_row::<f32>("f32", EPS_F32, TOL_F32));
    let passed = gate.rows.iter().all(|r| r.passed);
    GateReport { rows: gate.rows, passed, wall_seconds: start.elapsed().as_secs_f64() }
}
