//! Central finite-difference verification of reverse-mode gradients.
//!
//! The checker is the independent oracle for every differentiable operation:
//! it re-evaluates the checked function through forward passes only, so it
//! shares no code path with `Graph::backward`.

use crate::error::TensorError;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};
use crate::tensorcore::graph::{Graph, NodeId};

/// How probe points are chosen.
#[derive(Clone, Debug)]
pub enum ProbeMode {
    /// Every coordinate of every parameter. Only sensible for small tensors.
    Exhaustive,
    /// `count` random coordinates per parameter block.
    RandomCoords { count: usize, seed: u64 },
    /// `count` random unit directions spanning all parameters jointly; each
    /// probe compares a directional derivative. Keeps large composites cheap.
    Directions { count: usize, seed: u64 },
}

/// One probe comparison.
#[derive(Clone, Debug)]
pub struct ProbeResult {
    /// Parameter block index, or `None` for joint directional probes.
    pub param: Option<usize>,
    pub analytic: f64,
    pub finite_diff: f64,
    pub rel_err: f64,
}

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes: Vec<ProbeResult>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Relative error against the finite-difference reference with a unit floor:
/// `|ad - fd| / max(|fd|, 1)`. The floor turns the comparison into an
/// absolute one for near-zero derivatives, where FD noise dominates.
pub fn relative_error(analytic: f64, finite_diff: f64) -> f64 {
    (analytic - finite_diff).abs() / finite_diff.abs().max(1.0)
}

/// A scalar-valued differentiable function of a parameter list.
///
/// The closure must be deterministic: any internal randomness (dropout masks)
/// has to be reseeded identically on every call.
pub trait ScalarFn<T: Element>: Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId, TensorError> {}
impl<T: Element, F: Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId, TensorError>> ScalarFn<T> for F {}

/// Check reverse-mode gradients of `f` at `params` against central finite
/// differences with step `eps`, returning the max relative error seen.
pub fn grad_check<T: Element>(
    params: &[Tensor<T>],
    f: &impl ScalarFn<T>,
    eps: f64,
    mode: ProbeMode,
) -> Result<GradCheckReport, TensorError> {
    let analytic = analytic_grads(params, f)?;
    fd_compare(params, f, &analytic, eps, mode)
}

/// Reverse-mode gradients of `f` with respect to each parameter block.
pub fn analytic_grads<T: Element>(
    params: &[Tensor<T>],
    f: &impl ScalarFn<T>,
) -> Result<Vec<Tensor<T>>, TensorError> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone(), true, "param")).collect();
    let root = f(&mut g, &ids)?;
    if g.value(root).numel() != 1 {
        return Err(TensorError::Input {
            op: "grad_check".into(),
            detail: format!("function must be scalar-valued, got shape {:?}", g.shape(root)),
        });
    }
    g.backward(root)?;
    Ok(ids
        .iter()
        .zip(params.iter())
        .map(|(&id, p)| g.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect())
}

/// Compare externally supplied gradients against finite differences of `f`.
pub fn fd_compare<T: Element>(
    params: &[Tensor<T>],
    f: &impl ScalarFn<T>,
    analytic: &[Tensor<T>],
    eps: f64,
    mode: ProbeMode,
) -> Result<GradCheckReport, TensorError> {
    let mut probes = Vec::new();
    match mode {
        ProbeMode::Exhaustive => {
            for (pi, p) in params.iter().enumerate() {
                for ci in 0..p.numel() {
                    probes.push(coord_probe(params, f, analytic, eps, pi, ci)?);
                }
            }
        }
        ProbeMode::RandomCoords { count, seed } => {
            let mut rng = Rng::seeded(seed);
            for (pi, p) in params.iter().enumerate() {
                let n = p.numel();
                if n == 0 {
                    continue;
                }
                let picks = count.min(n);
                for _ in 0..picks {
                    let ci = rng.below(n);
                    probes.push(coord_probe(params, f, analytic, eps, pi, ci)?);
                }
            }
        }
        ProbeMode::Directions { count, seed } => {
            let mut rng = Rng::seeded(seed);
            let total: usize = params.iter().map(|p| p.numel()).sum();
            for _ in 0..count {
                let mut dir: Vec<f64> = (0..total).map(|_| rng.normal()).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                for v in &mut dir {
                    *v /= norm;
                }
                probes.push(direction_probe(params, f, analytic, eps, &dir)?);
            }
        }
    }
    let max_rel_err = probes.iter().map(|p| p.rel_err).fold(0.0f64, f64::max);
    Ok(GradCheckReport { max_rel_err, probes })
}

fn eval_scalar<T: Element>(params: &[Tensor<T>], f: &impl ScalarFn<T>) -> Result<f64, TensorError> {
    let mut g = Graph::new();
    // Probe evaluations are forward-only; leaves carry no gradient demand.
    let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone(), false, "param")).collect();
    let root = f(&mut g, &ids)?;
    let v = g.value(root).item().to_f64();
    if !v.is_finite() {
        return Err(TensorError::NonFinite { block: "grad_check probe".into() });
    }
    Ok(v)
}

fn coord_probe<T: Element>(
    params: &[Tensor<T>],
    f: &impl ScalarFn<T>,
    analytic: &[Tensor<T>],
    eps: f64,
    pi: usize,
    ci: usize,
) -> Result<ProbeResult, TensorError> {
    let mut perturbed: Vec<Tensor<T>> = params.to_vec();
    let base = params[pi].data()[ci].to_f64();

    perturbed[pi].data_mut()[ci] = T::from_f64(base + eps);
    let plus = eval_scalar(&perturbed, f)?;
    perturbed[pi].data_mut()[ci] = T::from_f64(base - eps);
    let minus = eval_scalar(&perturbed, f)?;

    let fd = (plus - minus) / (2.0 * eps);
    let ad = analytic[pi].data()[ci].to_f64();
    Ok(ProbeResult { param: Some(pi), analytic: ad, finite_diff: fd, rel_err: relative_error(ad, fd) })
}

fn direction_probe<T: Element>(
    params: &[Tensor<T>],
    f: &impl ScalarFn<T>,
    analytic: &[Tensor<T>],
    eps: f64,
    dir: &[f64],
) -> Result<ProbeResult, TensorError> {
    let shifted = |sign: f64| -> Vec<Tensor<T>> {
        let mut out = params.to_vec();
        let mut k = 0usize;
        for p in &mut out {
            for v in p.data_mut() {
                *v = T::from_f64(v.to_f64() + sign * eps * dir[k]);
                k += 1;
            }
        }
        out
    };
    let plus = eval_scalar(&shifted(1.0), f)?;
    let minus = eval_scalar(&shifted(-1.0), f)?;
    let fd = (plus - minus) / (2.0 * eps);

    let mut ad = 0.0f64;
    let mut k = 0usize;
    for a in analytic {
        for v in a.data() {
            ad += v.to_f64() * dir[k];
            k += 1;
        }
    }
    Ok(ProbeResult { param: None, analytic: ad, finite_diff: fd, rel_err: relative_error(ad, fd) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_function_matches() {
        // f(x) = x^2 at x = 3: gradient 6 both ways.
        let params = vec![Tensor::<f64>::scalar(3.0)];
        let f = |g: &mut Graph<f64>, ids: &[NodeId]| -> Result<NodeId, TensorError> {
            let sq = g.mul(ids[0], ids[0])?;
            g.sum_all(sq)
        };
        let report = grad_check(&params, &f, 1e-5, ProbeMode::Exhaustive).unwrap();
        let p = &report.probes[0];
        assert!((p.analytic - 6.0).abs() < 1e-9);
        assert!((p.finite_diff - 6.0).abs() < 1e-6);
        assert!(report.max_rel_err < 1e-9, "{}", report.max_rel_err);
    }

    #[test]
    fn corrupted_gradient_reports_unit_error() {
        let params = vec![Tensor::<f64>::scalar(3.0)];
        let f = |g: &mut Graph<f64>, ids: &[NodeId]| -> Result<NodeId, TensorError> {
            let sq = g.mul(ids[0], ids[0])?;
            g.sum_all(sq)
        };
        let mut analytic = analytic_grads(&params, &f).unwrap();
        for v in analytic[0].data_mut() {
            *v *= 2.0;
        }
        let report = fd_compare(&params, &f, &analytic, 1e-5, ProbeMode::Exhaustive).unwrap();
        assert!((report.max_rel_err - 1.0).abs() < 1e-4, "{}", report.max_rel_err);
        assert!(!report.passes(1e-4));
    }

    #[test]
    fn directional_probe_agrees_with_coordinates() {
        let params = vec![Tensor::<f64>::from_f64_slice(&[0.4, -1.2, 0.7], &[3]).unwrap()];
        let f = |g: &mut Graph<f64>, ids: &[NodeId]| -> Result<NodeId, TensorError> {
            let e = g.gelu(ids[0]);
            let sq = g.mul(e, e)?;
            g.sum_all(sq)
        };
        let coords = grad_check(&params, &f, 1e-5, ProbeMode::Exhaustive).unwrap();
        let dirs = grad_check(&params, &f, 1e-5, ProbeMode::Directions { count: 8, seed: 5 }).unwrap();
        assert!(coords.max_rel_err < 1e-7);
        assert!(dirs.max_rel_err < 1e-7);
    }

    #[test]
    fn non_finite_probe_is_a_numerical_error() {
        let params = vec![Tensor::<f64>::scalar(0.0)];
        // ln(x) at 0 +/- eps probes a negative argument: NaN.
        let f = |g: &mut Graph<f64>, ids: &[NodeId]| -> Result<NodeId, TensorError> {
            let l = g.ln(ids[0]);
            g.sum_all(l)
        };
        let err = grad_check(&params, &f, 1e-5, ProbeMode::Exhaustive).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { .. }));
    }
}
