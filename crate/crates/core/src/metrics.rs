//! Evaluation metrics: classification scores, confusion matrix, per-marker
//! regression metrics, and one-vs-rest ROC/AUC.
//!
//! Everything here is a pure function of plain slices; population (1/N)
//! moments are used throughout, which matters for CCC at small N.

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;

pub const N_CLASSES: usize = 3;
pub const N_MARKERS: usize = 4;

pub const CLASS_NAMES: [&str; N_CLASSES] = ["Lymphocyte", "Granulocyte", "Monocyte"];

/// Precision/recall/F1 for one class.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Classification summary over one evaluated split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub per_class: [ClassScores; N_CLASSES],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Rows = true class, columns = predicted class.
    pub confusion: [[usize; N_CLASSES]; N_CLASSES],
    pub n_samples: usize,
    /// Classes whose precision hit the 0/0 convention (reported as 0).
    #[serde(default)]
    pub zero_division_classes: Vec<usize>,
}

/// Per-marker regression agreement metrics.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub pearson_r: f64,
    pub rmse: f64,
    pub mae: f64,
    pub ccc: f64,
    /// Set when a zero-variance input forced r and ccc to 0.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// One-vs-rest ROC curve for a single class.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RocCurve {
    pub class_index: usize,
    pub auc: f64,
    pub points: Vec<RocPoint>,
    /// Set when the class had no positives or no negatives (AUC undefined,
    /// reported as 0.5).
    pub degenerate: bool,
}

/// Per-marker table plus unweighted aggregate row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarkerReport {
    pub names: Vec<String>,
    pub rows: Vec<RegressionMetrics>,
    pub aggregate: RegressionMetrics,
}

/// Full evaluation evidence for one split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub classification: ClassificationMetrics,
    /// Absent for classification-only ablations.
    pub markers: Option<MarkerReport>,
    pub roc: Vec<RocCurve>,
    /// Mean over markers of per-marker Pearson r.
    pub mean_pearson_r: Option<f64>,
}

/// Accuracy, per-class precision/recall/F1 (0/0 reported as 0), macro
/// averages, and the confusion matrix with rows indexed by true class.
pub fn classification_metrics(
    pred_labels: &[usize],
    true_labels: &[usize],
) -> Result<ClassificationMetrics, MetricsError> {
    if pred_labels.is_empty() {
        return Err(MetricsError::EmptyInput("classification_metrics".into()));
    }
    if pred_labels.len() != true_labels.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} predictions vs {} labels",
            pred_labels.len(),
            true_labels.len()
        )));
    }
    let mut confusion = [[0usize; N_CLASSES]; N_CLASSES];
    for (&p, &t) in pred_labels.iter().zip(true_labels.iter()) {
        if p >= N_CLASSES {
            return Err(MetricsError::LabelRange { label: p, classes: N_CLASSES });
        }
        if t >= N_CLASSES {
            return Err(MetricsError::LabelRange { label: t, classes: N_CLASSES });
        }
        confusion[t][p] += 1;
    }
    let n = pred_labels.len();
    let correct: usize = (0..N_CLASSES).map(|c| confusion[c][c]).sum();
    let mut per_class = [ClassScores::default(); N_CLASSES];
    let mut zero_division_classes = Vec::new();
    for c in 0..N_CLASSES {
        let tp = confusion[c][c];
        let fp: usize = (0..N_CLASSES).filter(|&t| t != c).map(|t| confusion[t][c]).sum();
        let fn_: usize = (0..N_CLASSES).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
        let support = tp + fn_;
        let precision = if tp + fp == 0 {
            zero_division_classes.push(c);
            eprintln!("warning: class {c} has no predictions; precision 0/0 reported as 0");
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        per_class[c] = ClassScores { precision, recall, f1, support };
    }
    let macro_precision = per_class.iter().map(|c| c.precision).sum::<f64>() / N_CLASSES as f64;
    let macro_recall = per_class.iter().map(|c| c.recall).sum::<f64>() / N_CLASSES as f64;
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / N_CLASSES as f64;
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / n as f64,
        per_class,
        macro_precision,
        macro_recall,
        macro_f1,
        confusion,
        n_samples: n,
        zero_division_classes,
    })
}

/// Pearson r, RMSE, MAE, and concordance correlation for one marker.
pub fn regression_metrics(pred: &[f64], target: &[f64]) -> Result<RegressionMetrics, MetricsError> {
    if pred.len() != target.len() {
        return Err(MetricsError::LengthMismatch(format!("{} vs {}", pred.len(), target.len())));
    }
    if pred.len() < 2 {
        return Err(MetricsError::EmptyInput("regression_metrics needs N >= 2".into()));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vt = 0.0;
    let mut se = 0.0;
    let mut ae = 0.0;
    for (&p, &t) in pred.iter().zip(target.iter()) {
        let dp = p - mp;
        let dt = t - mt;
        cov += dp * dt;
        vp += dp * dp;
        vt += dt * dt;
        let e = p - t;
        se += e * e;
        ae += e.abs();
    }
    cov /= n;
    vp /= n;
    vt /= n;
    let rmse = (se / n).sqrt();
    let mae = ae / n;
    if vp == 0.0 || vt == 0.0 {
        return Ok(RegressionMetrics { pearson_r: 0.0, rmse, mae, ccc: 0.0, degenerate: true });
    }
    let pearson_r = cov / (vp.sqrt() * vt.sqrt());
    let ccc = 2.0 * cov / (vp + vt + (mp - mt) * (mp - mt));
    Ok(RegressionMetrics { pearson_r, rmse, mae, ccc, degenerate: false })
}

/// One-vs-rest ROC and AUC per class from probability scores `[N, 3]`
/// (row-major). AUC uses the Mann-Whitney rank statistic with ties counted
/// half; ROC points come from a threshold sweep over the distinct scores.
pub fn roc_auc_ovr(cls_probs: &[f64], true_labels: &[usize]) -> Result<Vec<RocCurve>, MetricsError> {
    let n = true_labels.len();
    if n == 0 {
        return Err(MetricsError::EmptyInput("roc_auc_ovr".into()));
    }
    if cls_probs.len() != n * N_CLASSES {
        return Err(MetricsError::LengthMismatch(format!(
            "{} scores for {} samples x {} classes",
            cls_probs.len(),
            n,
            N_CLASSES
        )));
    }
    let mut curves = Vec::with_capacity(N_CLASSES);
    for c in 0..N_CLASSES {
        let scores: Vec<f64> = (0..n).map(|i| cls_probs[i * N_CLASSES + c]).collect();
        let positives: Vec<bool> = true_labels.iter().map(|&t| t == c).collect();
        curves.push(roc_curve_binary(&scores, &positives, c));
    }
    Ok(curves)
}

/// Binary ROC/AUC used by the one-vs-rest sweep.
fn roc_curve_binary(scores: &[f64], positives: &[bool], class_index: usize) -> RocCurve {
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return RocCurve { class_index, auc: 0.5, points: vec![], degenerate: true };
    }

    // AUC by rank statistic with average ranks for ties.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the average rank
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if positives[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;

    // Threshold sweep over distinct scores, descending.
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| b.partial_cmp(a).unwrap());
    distinct.dedup();
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    for &thr in &distinct {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (&s, &p) in scores.iter().zip(positives.iter()) {
            if s >= thr {
                if p {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        points.push(RocPoint { fpr: fp as f64 / n_neg as f64, tpr: tp as f64 / n_pos as f64, threshold: thr });
    }
    RocCurve { class_index, auc, points, degenerate: false }
}

/// Trapezoid area under the swept ROC points; the independent oracle route
/// for the rank-statistic AUC.
pub fn auc_by_threshold_enumeration(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let curve = roc_curve_binary(scores, positives, 0);
    if curve.degenerate {
        return None;
    }
    let mut area = 0.0;
    for pair in curve.points.windows(2) {
        area += (pair[1].fpr - pair[0].fpr) * (pair[1].tpr + pair[0].tpr) / 2.0;
    }
    Some(area)
}

/// One regression row per marker plus the unweighted mean row.
pub fn per_marker_report(
    pred: &[f64],
    target: &[f64],
    names: &[String],
) -> Result<MarkerReport, MetricsError> {
    let m = names.len();
    if m == 0 || pred.len() != target.len() || pred.len() % m != 0 {
        return Err(MetricsError::LengthMismatch(format!(
            "pred {} target {} for {} markers",
            pred.len(),
            target.len(),
            m
        )));
    }
    let n = pred.len() / m;
    let mut rows = Vec::with_capacity(m);
    for k in 0..m {
        let p: Vec<f64> = (0..n).map(|i| pred[i * m + k]).collect();
        let t: Vec<f64> = (0..n).map(|i| target[i * m + k]).collect();
        rows.push(regression_metrics(&p, &t)?);
    }
    let mf = m as f64;
    let aggregate = RegressionMetrics {
        pearson_r: rows.iter().map(|r| r.pearson_r).sum::<f64>() / mf,
        rmse: rows.iter().map(|r| r.rmse).sum::<f64>() / mf,
        mae: rows.iter().map(|r| r.mae).sum::<f64>() / mf,
        ccc: rows.iter().map(|r| r.ccc).sum::<f64>() / mf,
        degenerate: rows.iter().any(|r| r.degenerate),
    };
    Ok(MarkerReport { names: names.to_vec(), rows, aggregate })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("EvalReport serializes")
    }

    /// Confusion matrix as CSV, rows = true class.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true_class");
        for name in CLASS_NAMES {
            out.push_str(&format!(",pred_{name}"));
        }
        out.push('\n');
        for (t, row) in self.classification.confusion.iter().enumerate() {
            out.push_str(CLASS_NAMES[t]);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Per-marker metric table as CSV, one row per marker plus the mean row.
    pub fn marker_csv(&self) -> Option<String> {
        let markers = self.markers.as_ref()?;
        let mut out = String::from("marker,rmse,mae,pearson_r,ccc\n");
        for (name, row) in markers.names.iter().zip(markers.rows.iter()) {
            out.push_str(&format!(
                "{name},{:.6},{:.6},{:.6},{:.6}\n",
                row.rmse, row.mae, row.pearson_r, row.ccc
            ));
        }
        let a = &markers.aggregate;
        out.push_str(&format!("mean,{:.6},{:.6},{:.6},{:.6}\n", a.rmse, a.mae, a.pearson_r, a.ccc));
        Some(out)
    }

    /// ROC points as CSV: class, fpr, tpr, threshold.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("class,fpr,tpr,threshold\n");
        for curve in &self.roc {
            for p in &curve.points {
                out.push_str(&format!(
                    "{},{:.6},{:.6},{}\n",
                    CLASS_NAMES[curve.class_index], p.fpr, p.tpr, p.threshold
                ));
            }
        }
        out
    }

    /// Classification table as CSV: per class plus macro row.
    pub fn classification_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for (name, c) in CLASS_NAMES.iter().zip(self.classification.per_class.iter()) {
            out.push_str(&format!("{name},{:.6},{:.6},{:.6},{}\n", c.precision, c.recall, c.f1, c.support));
        }
        out.push_str(&format!(
            "macro,{:.6},{:.6},{:.6},{}\n",
            self.classification.macro_precision,
            self.classification.macro_recall,
            self.classification.macro_f1,
            self.classification.n_samples
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 1, 0, 2];
        let m = classification_metrics(&labels, &labels).unwrap();
        assert_eq!(m.accuracy, 1.0);
        for c in m.per_class {
            assert_eq!(c.f1, 1.0);
        }
        for (t, row) in m.confusion.iter().enumerate() {
            for (p, &v) in row.iter().enumerate() {
                assert_eq!(v == 0, t != p);
            }
        }
    }

    #[test]
    fn hand_counted_small_case() {
        // labels [0,0,1], preds [0,1,1]: acc 2/3; class0 P=1 R=0.5 F1=2/3;
        // class1 P=0.5 R=1 F1=2/3.
        let m = classification_metrics(&[0, 1, 1], &[0, 0, 1]).unwrap();
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.per_class[0].precision - 1.0).abs() < 1e-12);
        assert!((m.per_class[0].recall - 0.5).abs() < 1e-12);
        assert!((m.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.per_class[1].precision - 0.5).abs() < 1e-12);
        assert!((m.per_class[1].recall - 1.0).abs() < 1e-12);
        assert!((m.per_class[1].f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn f1_from_precision_one_recall_three_quarters() {
        // 4 monocytes, 3 recovered, on misses predicted as lymphocyte; no
        // false monocyte calls: P = 1.0, R = 0.75, F1 = 0.857.
        let true_labels = [2, 2, 2, 2, 0, 0];
        let pred_labels = [2, 2, 2, 0, 0, 0];
        let m = classification_metrics(&pred_labels, &true_labels).unwrap();
        let mono = m.per_class[2];
        assert_eq!(mono.precision, 1.0);
        assert_eq!(mono.recall, 0.75);
        assert!((mono.f1 - 0.857).abs() < 5e-4, "{}", mono.f1);
    }

    #[test]
    fn zero_division_precision_is_zero_with_flag() {
        // Nothing predicted as class 2.
        let m = classification_metrics(&[0, 0, 1], &[0, 2, 1]).unwrap();
        assert_eq!(m.per_class[2].precision, 0.0);
        assert_eq!(m.zero_division_classes, vec![2]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(classification_metrics(&[], &[]).is_err());
    }

    #[test]
    fn regression_identity_and_scaling() {
        let t = [1.0, 2.0, 3.0];
        let m = regression_metrics(&t, &t).unwrap();
        assert!((m.pearson_r - 1.0).abs() < 1e-12);
        assert!((m.ccc - 1.0).abs() < 1e-12);
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.mae, 0.0);

        // pred = 2*target: r = 1, ccc = 4/11, rmse = sqrt(14/3).
        let p = [2.0, 4.0, 6.0];
        let m = regression_metrics(&p, &t).unwrap();
        assert!((m.pearson_r - 1.0).abs() < 1e-12);
        assert!((m.ccc - 4.0 / 11.0).abs() < 1e-12);
        assert!((m.rmse - (14.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((m.mae - 2.0).abs() < 1e-12);

        let neg: Vec<f64> = t.iter().map(|x| -x).collect();
        let m = regression_metrics(&neg, &t).unwrap();
        assert!((m.pearson_r + 1.0).abs() < 1e-12);
        assert!(m.ccc < 0.0);
    }

    #[test]
    fn zero_variance_flags_degenerate() {
        let m = regression_metrics(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.pearson_r, 0.0);
        assert_eq!(m.ccc, 0.0);
        assert!(m.rmse > 0.0);
    }

    #[test]
    fn ccc_is_attenuated_pearson() {
        let mut rng = Rng::seeded(3);
        for _ in 0..200 {
            let n = 2 + rng.below(20);
            let p: Vec<f64> = (0..n).map(|_| rng.normal() * 2.0 + 0.3).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let m = regression_metrics(&p, &t).unwrap();
            if !m.degenerate {
                assert!(m.ccc.abs() <= m.pearson_r.abs() + 1e-12);
                assert!(m.pearson_r.abs() <= 1.0 + 1e-12);
                assert!(m.rmse + 1e-12 >= m.mae);
            }
        }
    }

    #[test]
    fn auc_hand_cases() {
        // Perfectly separated.
        let scores = [0.9, 0.8, 0.2, 0.1];
        let pos = [true, true, false, false];
        let c = roc_curve_binary(&scores, &pos, 0);
        assert_eq!(c.auc, 1.0);

        // All ties.
        let c = roc_curve_binary(&[0.5, 0.5, 0.5, 0.5], &pos, 0);
        assert_eq!(c.auc, 0.5);

        // pos {0.9, 0.4}, neg {0.5, 0.1}: 3 of 4 favorable pairs.
        let c = roc_curve_binary(&[0.9, 0.4, 0.5, 0.1], &[true, true, false, false], 0);
        assert_eq!(c.auc, 0.75);
    }

    #[test]
    fn auc_degenerate_single_class() {
        let c = roc_curve_binary(&[0.3, 0.5], &[true, true], 0);
        assert!(c.degenerate);
        let curves = roc_auc_ovr(&[0.8, 0.1, 0.1, 0.7, 0.2, 0.1], &[0, 0]).unwrap();
        assert!(curves[0].degenerate && curves[1].degenerate && curves[2].degenerate);
    }

    #[test]
    fn auc_rank_statistic_equals_threshold_enumeration() {
        let grid = [0.2, 0.5, 0.8];
        // Exhaustive over all score/label assignments of length <= 4.
        for n in 1..=4usize {
            let combos = 3usize.pow(n as u32);
            let labelings = 1usize << n;
            for s in 0..combos {
                let mut scores = Vec::with_capacity(n);
                let mut rem = s;
                for _ in 0..n {
                    scores.push(grid[rem % 3]);
                    rem /= 3;
                }
                for l in 0..labelings {
                    let pos: Vec<bool> = (0..n).map(|i| (l >> i) & 1 == 1).collect();
                    let n_pos = pos.iter().filter(|&&p| p).count();
                    if n_pos == 0 || n_pos == n {
                        continue;
                    }
                    let rank = roc_curve_binary(&scores, &pos, 0).auc;
                    let sweep = auc_by_threshold_enumeration(&scores, &pos).unwrap();
                    assert!((rank - sweep).abs() < 1e-12, "scores {scores:?} pos {pos:?}");
                }
            }
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = Rng::seeded(8);
        for _ in 0..50 {
            let n = 4 + rng.below(10);
            let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let pos: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
            let n_pos = pos.iter().filter(|&&p| p).count();
            if n_pos == 0 || n_pos == n {
                continue;
            }
            let base = roc_curve_binary(&scores, &pos, 0).auc;
            let mapped: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() + 1.0).collect();
            let t = roc_curve_binary(&mapped, &pos, 0).auc;
            assert!((base - t).abs() < 1e-12);
        }
    }

    #[test]
    fn marker_report_aggregates_mean() {
        // Two markers with r = 1 and r = 0 aggregate to 0.5.
        // Marker 0: pred == target. Marker 1: orthogonal pattern with zero
        // correlation.
        let n = 4;
        let target = [1.0, 1.0, 2.0, -1.0, 3.0, 1.0, 4.0, -1.0];
        let pred = [1.0, 1.0, 2.0, 1.0, 3.0, -1.0, 4.0, -1.0];
        let names = vec!["m1".to_string(), "m2".to_string()];
        let report = per_marker_report(&pred, &target, &names).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!((report.rows[0].pearson_r - 1.0).abs() < 1e-12);
        assert!(report.rows[1].pearson_r.abs() < 1e-12);
        assert!((report.aggregate.pearson_r - 0.5).abs() < 1e-12);
        let mean_r = report.rows.iter().map(|r| r.pearson_r).sum::<f64>() / 2.0;
        assert!((report.aggregate.pearson_r - mean_r).abs() < 1e-12);
        let _ = n;
    }

    #[test]
    fn metrics_invariant_under_sample_permutation() {
        let mut rng = Rng::seeded(13);
        let n = 20;
        let preds: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let trues: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let base = classification_metrics(&preds, &trues).unwrap();
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        let p2: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
        let t2: Vec<usize> = idx.iter().map(|&i| trues[i]).collect();
        let perm = classification_metrics(&p2, &t2).unwrap();
        assert_eq!(base.confusion, perm.confusion);
        assert_eq!(base.accuracy, perm.accuracy);
    }
}
