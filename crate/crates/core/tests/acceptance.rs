//! Acceptance suite. Each test is one criterion; the test name is the
//! pass/fail line, and details print under `--nocapture`. Budgets and
//! tolerances are pinned in the constants below.

use std::time::Instant;

use cytophen_core::data::container::{load_dataset, write_container};
use cytophen_core::data::synth::{synthesize, SynthConfig};
use cytophen_core::data::{Dataset, Split};
use cytophen_core::losses::{focal_loss, pearson_alignment_term, total_loss, LossInputs, LossWeights};
use cytophen_core::metrics::{
    auc_by_threshold_enumeration, classification_metrics, regression_metrics, roc_auc_ovr,
};
use cytophen_core::model::{checkpoint, ModelConfig, ModelCtx, ModelState, Variant};
use cytophen_core::pipeline::{evaluate, gradgate, train, TrainConfig};
use cytophen_core::rng::Rng;
use cytophen_core::summarizer::endpoint::{llm_summarize, EndpointConfig};
use cytophen_core::summarizer::{
    build_evidence, default_templates, extract_numerals, ground_filter, render_summary, MarkerSamples,
};
use cytophen_core::tensor::Tensor;
use cytophen_core::tensorcore::{Graph, Mode};

const BUDGET_GRADIENT_GATE_S: f64 = 120.0;
const BUDGET_METRIC_ORACLE_S: f64 = 30.0;
const BUDGET_OVERFIT_S: f64 = 300.0;
const BUDGET_BENCHMARK_S: f64 = 2700.0;

fn line(criterion: &str, passed: bool, detail: &str) {
    println!("[{}] {criterion}: {detail}", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "{criterion}: {detail}");
}

// ── criterion 1 ─────────────────────────────────────────────────────────

#[test]
fn criterion_1_gradient_gate() {
    let report = gradgate::run_gate();
    for row in &report.rows {
        println!(
            "  {} [{}]: {:.3e} (tol {:.0e}) {}",
            row.name,
            row.precision,
            row.max_rel_err,
            row.tolerance,
            if row.passed { "ok" } else { "FAIL" }
        );
    }
    let in_budget = report.wall_seconds < BUDGET_GRADIENT_GATE_S;
    line(
        "criterion 1 gradient gate",
        report.passed && in_budget,
        &format!("all ops + full model at f64<1e-4 / f32<1e-2 in {:.1}s", report.wall_seconds),
    );
}

// ── criterion 2 ─────────────────────────────────────────────────────────

#[test]
fn criterion_2_shape_and_normalization() {
    let mut state = ModelState::<f32>::init(&ModelConfig::default(), 2).unwrap();
    let mut rng = Rng::seeded(3);
    let data: Vec<f64> = (0..7 * 4 * 28 * 28).map(|_| rng.normal()).collect();
    let image = Tensor::<f32>::from_f64_slice(&data, &[7, 4, 28, 28]).unwrap();

    let mut g = Graph::new();
    let x = g.leaf(image, false, "x");
    let mut ctx = ModelCtx::new(&mut g, &mut state, Mode::Eval, Rng::seeded(4));
    let weighted = ctx.eca_weight(x).unwrap();
    let cnn = ctx.cnn_branch(weighted).unwrap();
    let vit = ctx.vit_branch(weighted).unwrap();
    let ok_tokens = g.shape(cnn) == [7, 196, 192] && g.shape(vit) == [7, 50, 128];

    let mut g2 = Graph::new();
    let data2: Vec<f64> = (0..7 * 4 * 28 * 28).map(|_| rng.normal()).collect();
    let x2 = g2.leaf(Tensor::<f32>::from_f64_slice(&data2, &[7, 4, 28, 28]).unwrap(), false, "x");
    let mut ctx2 = ModelCtx::new(&mut g2, &mut state, Mode::Eval, Rng::seeded(5));
    let out = ctx2.forward(x2).unwrap();
    let cls = g2.value(out.cls_probs.unwrap());
    let reg = g2.value(out.reg_values.unwrap());
    let ok_heads = cls.shape() == [7, 3] && reg.shape() == [7, 4];
    let ok_simplex = cls
        .data()
        .chunks(3)
        .all(|row| (row.iter().sum::<f32>() - 1.0).abs() < 1e-6 && row.iter().all(|&p| p >= 0.0));

    line(
        "criterion 2 shape/normalization",
        ok_tokens && ok_heads && ok_simplex,
        "tokens [7,196,192]/[7,50,128], heads [7,3] on the simplex and [7,4]",
    );
}

// ── criterion 3 ─────────────────────────────────────────────────────────

#[test]
fn criterion_3_loss_algebra() {
    let mut rng = Rng::seeded(7);
    let mut gamma0_ok = true;
    let mut bound_ok = true;
    for _ in 0..100 {
        let b = 2 + rng.below(6);
        let mut g = Graph::<f64>::new();
        let logits: Vec<f64> = (0..b * 3).map(|_| rng.normal() * 2.0).collect();
        let raw = g.leaf(Tensor::from_f64_slice(&logits, &[b, 3]).unwrap(), false, "l");
        let probs = g.softmax(raw, 1).unwrap();
        let labels: Vec<usize> = (0..b).map(|_| rng.below(3)).collect();

        let focal0 = focal_loss(&mut g, probs, &labels, &[1.0; 3], 0.0).unwrap();
        // Independent cross-entropy route.
        let mut ce = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let row = &g.value(probs).data()[i * 3..(i + 1) * 3];
            ce += -(row[l].clamp(1e-7, 1.0 - 1e-7)).ln();
        }
        ce /= b as f64;
        if (g.value(focal0).item() - ce).abs() >= 1e-9 {
            gamma0_ok = false;
        }

        // focal <= CE elementwise for gamma 2: batch of one per sample.
        for (i, &l) in labels.iter().enumerate() {
            let mut gi = Graph::<f64>::new();
            let row = g.value(probs).data()[i * 3..(i + 1) * 3].to_vec();
            let p = gi.leaf(Tensor::from_f64_slice(&row, &[1, 3]).unwrap(), false, "p");
            let f2 = focal_loss(&mut gi, p, &[l], &[1.0; 3], 2.0).unwrap();
            let p0 = gi.leaf(Tensor::from_f64_slice(&row, &[1, 3]).unwrap(), false, "p");
            let f0 = focal_loss(&mut gi, p0, &[l], &[1.0; 3], 0.0).unwrap();
            if gi.value(f2).item() > gi.value(f0).item() + 1e-12 {
                bound_ok = false;
            }
        }
    }

    // Pearson term invariance under positive per-marker affine maps.
    let mut pearson_ok = true;
    for trial in 0..20 {
        let mut rng = Rng::seeded(100 + trial);
        let t: Vec<f64> = (0..32).map(|_| rng.normal()).collect();
        let p: Vec<f64> = (0..32).map(|_| rng.normal()).collect();
        let a: Vec<f64> = (0..4).map(|_| rng.uniform() * 3.0 + 0.1).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.normal() * 2.0).collect();
        let term = |pred: &[f64]| -> f64 {
            let mut g = Graph::<f64>::new();
            let pn = g.leaf(Tensor::from_f64_slice(pred, &[8, 4]).unwrap(), false, "p");
            let tn = g.constant(Tensor::from_f64_slice(&t, &[8, 4]).unwrap());
            let node = pearson_alignment_term(&mut g, pn, tn, 1e-8).unwrap().unwrap();
            g.value(node).item()
        };
        let mapped: Vec<f64> = p.iter().enumerate().map(|(i, &x)| a[i % 4] * x + b[i % 4]).collect();
        if (term(&mapped) - term(&p)).abs() >= 1e-9 {
            pearson_ok = false;
        }
    }

    // total equals its breakdown within 1e-9 on a fixed seeded batch.
    let mut g = Graph::<f64>::new();
    let mut rng = Rng::seeded(55);
    let logits: Vec<f64> = (0..4 * 3).map(|_| rng.normal()).collect();
    let raw = g.leaf(Tensor::from_f64_slice(&logits, &[4, 3]).unwrap(), false, "l");
    let probs = g.softmax(raw, 1).unwrap();
    let pred: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
    let predn = g.leaf(Tensor::from_f64_slice(&pred, &[4, 4]).unwrap(), false, "r");
    let tgt: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
    let tgtn = g.constant(Tensor::from_f64_slice(&tgt, &[4, 4]).unwrap());
    let feats: Vec<Vec<f64>> = (0..3).map(|_| (0..12).map(|_| rng.normal()).collect()).collect();
    let fused = g.leaf(Tensor::from_f64_slice(&feats[0], &[4, 3]).unwrap(), false, "f");
    let hc = g.leaf(Tensor::from_f64_slice(&feats[1], &[4, 3]).unwrap(), false, "hc");
    let hr = g.leaf(Tensor::from_f64_slice(&feats[2], &[4, 3]).unwrap(), false, "hr");
    let weights = LossWeights { lambda_cls: 1.0, lambda_reg: 1.0, lambda_aux: 0.1, ..Default::default() };
    let inputs = LossInputs {
        cls_probs: Some(probs),
        reg_values: Some(predn),
        h_fused: fused,
        h_cls: Some(hc),
        h_reg: Some(hr),
    };
    let (node, bd) = total_loss(&mut g, &inputs, &[0, 1, 2, 1], Some(tgtn), &weights).unwrap();
    let hand = bd.cls.unwrap() + bd.reg.unwrap() + 0.1 * bd.aux.unwrap();
    let total_ok = (g.value(node).item() - hand).abs() < 1e-9;

    line(
        "criterion 3 loss algebra",
        gamma0_ok && bound_ok && pearson_ok && total_ok,
        &format!("gamma0==CE {gamma0_ok}, focal<=CE {bound_ok}, pearson affine-invariant {pearson_ok}, total==breakdown {total_ok}"),
    );
}

// ── criterion 4 ─────────────────────────────────────────────────────────

#[test]
fn criterion_4_metric_oracles() {
    let start = Instant::now();

    // AUC: rank statistic vs exhaustive threshold enumeration, exact.
    let grid = [0.2, 0.5, 0.8];
    let mut auc_ok = true;
    // Exhaustive over every grid of length <= 4, sampled grids for 5..=8.
    for n in 1..=4usize {
        for s in 0..3usize.pow(n as u32) {
            let mut scores = Vec::with_capacity(n);
            let mut rem = s;
            for _ in 0..n {
                scores.push(grid[rem % 3]);
                rem /= 3;
            }
            for l in 0..(1usize << n) {
                let pos: Vec<bool> = (0..n).map(|i| (l >> i) & 1 == 1).collect();
                let n_pos = pos.iter().filter(|&&p| p).count();
                if n_pos == 0 || n_pos == n {
                    continue;
                }
                auc_ok &= auc_pair_matches(&scores, &pos);
            }
        }
    }
    let mut rng = Rng::seeded(11);
    for _ in 0..5000 {
        let n = 5 + rng.below(4);
        let scores: Vec<f64> = (0..n).map(|_| grid[rng.below(3)]).collect();
        let pos: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
        let n_pos = pos.iter().filter(|&&p| p).count();
        if n_pos == 0 || n_pos == n {
            continue;
        }
        auc_ok &= auc_pair_matches(&scores, &pos);
    }

    // CCC/r/RMSE/MAE closed forms.
    let m = regression_metrics(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
    let ccc_ok = (m.ccc - 4.0 / 11.0).abs() < 1e-12
        && (m.pearson_r - 1.0).abs() < 1e-12
        && (m.rmse - (14.0f64 / 3.0).sqrt()).abs() < 1e-12
        && (m.mae - 2.0).abs() < 1e-12;

    // Monocyte row: precision 1.0, recall 0.75 -> F1 0.857.
    let cm = classification_metrics(&[2, 2, 2, 0, 0, 0], &[2, 2, 2, 2, 0, 0]).unwrap();
    let mono = cm.per_class[2];
    let f1_ok = mono.precision == 1.0 && mono.recall == 0.75 && (mono.f1 - 0.857).abs() < 5e-4;

    let elapsed = start.elapsed().as_secs_f64();
    line(
        "criterion 4 metric oracles",
        auc_ok && ccc_ok && f1_ok && elapsed < BUDGET_METRIC_ORACLE_S,
        &format!("auc exact {auc_ok}, ccc/rmse closed-form {ccc_ok}, F1 0.857 {f1_ok}, {elapsed:.1}s"),
    );
}

fn auc_pair_matches(scores: &[f64], positives: &[bool]) -> bool {
    let n = positives.len();
    let probs: Vec<f64> = scores
        .iter()
        .flat_map(|&s| [1.0 - s, s, 0.0])
        .collect();
    let labels: Vec<usize> = positives.iter().map(|&p| if p { 1 } else { 0 }).collect();
    let curves = roc_auc_ovr(&probs, &labels).unwrap();
    let rank_auc = curves[1].auc;
    let sweep = auc_by_threshold_enumeration(scores, positives).unwrap();
    let _ = n;
    (rank_auc - sweep).abs() < 1e-12
}

// ── criterion 5 ─────────────────────────────────────────────────────────

#[test]
fn criterion_5_overfit_sanity() {
    let start = Instant::now();
    // 66 training records (22 per class), kappa = 1.
    let synth_cfg = SynthConfig { n_train: 22, n_val: 8, n_test: 8, seed: 99, ..Default::default() };
    let (dataset, _) = synthesize(&synth_cfg).unwrap();
    // 300 optimizer steps: 66/16 -> 5 steps per epoch x 60 epochs.
    // Capacity check: regularization (dropout/augmentation) off.
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 16,
        lr_final: 2e-4,
        seed: 7,
        augment: false,
        train_metric_cap: 0,
        model: ModelConfig { head_dropout: 0.0, refine_dropout: 0.0, ..ModelConfig::default() },
        ..Default::default()
    };
    let mut out = train(&cfg, &dataset).unwrap();
    assert!(out.abort.is_none());
    let report = evaluate(&mut out.last_state, &out.zscore, &dataset, Split::Train).unwrap();
    let acc = report.classification.accuracy;
    let rs: Vec<f64> = report.markers.as_ref().unwrap().rows.iter().map(|r| r.pearson_r).collect();
    let r_ok = rs.iter().all(|&r| r >= 0.99);

    // TrainLog consistency: the final logged train accuracy equals the
    // evaluated train-split accuracy exactly.
    let logged = out.log.epochs.last().unwrap().train_accuracy.unwrap();
    let consistent = logged == acc;

    let elapsed = start.elapsed().as_secs_f64();
    line(
        "criterion 5 overfit sanity",
        acc == 1.0 && r_ok && consistent && elapsed < BUDGET_OVERFIT_S,
        &format!("train acc {acc:.4}, per-marker r {rs:?}, log==evaluate {consistent}, {elapsed:.0}s"),
    );
}

// ── criterion 6 ─────────────────────────────────────────────────────────

// Benchmark configuration: 5k train / 1k test at kappa = 1, three seeds.
// One epoch at batch 32 keeps the three-variant, three-seed sweep inside the
// 45-minute budget; augmentation stays off because random translations
// dephase the synthetic texture carriers (the quantity being regressed),
// and the regression term carries double weight to balance convergence
// speed between the two heads within the single epoch.
const BENCH_SEEDS: [u64; 3] = [11, 23, 37];
const BENCH_TEXTURE_GAIN: f64 = 0.1;
const BENCH_BATCH: usize = 32;
const BENCH_EPOCHS: usize = 1;
const BENCH_LAMBDA_REG: f64 = 2.0;

fn bench_dataset() -> (Dataset, cytophen_core::data::synth::OracleReport) {
    let synth_cfg = SynthConfig {
        n_train: 1667,
        n_val: 200,
        n_test: 334,
        texture_gain: BENCH_TEXTURE_GAIN,
        seed: 1000,
        ..Default::default()
    };
    synthesize(&synth_cfg).unwrap()
}

fn bench_config(variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: BENCH_EPOCHS,
        batch_size: BENCH_BATCH,
        lr_final: 3e-4,
        seed,
        augment: false,
        train_metric_cap: 512,
        loss: LossWeights { lambda_reg: BENCH_LAMBDA_REG, ..Default::default() },
        model: ModelConfig::with_variant(variant),
        ..Default::default()
    }
}

#[test]
fn criterion_6_synthetic_benchmark_and_ablation_ordering() {
    let start = Instant::now();
    let (dataset, oracle) = bench_dataset();
    println!(
        "  oracle ceilings: accuracy {:.4} (se {:.4}), mean r {:.4}",
        oracle.ceiling_accuracy, oracle.ceiling_accuracy_se, oracle.ceiling_mean_r
    );
    let mean_r_se =
        oracle.ceiling_marker_r_se.iter().map(|s| s.abs()).sum::<f64>() / oracle.ceiling_marker_r_se.len() as f64;

    let mut results: Vec<(Variant, f64, f64)> = Vec::new(); // seed-mean acc, mean r
    let mut ceiling_ok = true;
    for variant in [Variant::Full, Variant::CnnOnly, Variant::VitOnly] {
        let mut accs = Vec::new();
        let mut rs = Vec::new();
        for &seed in &BENCH_SEEDS {
            let cfg = bench_config(variant, seed);
            let mut out = train(&cfg, &dataset).unwrap();
            assert!(out.abort.is_none());
            let report = evaluate(&mut out.best_state, &out.zscore, &dataset, Split::Test).unwrap();
            let acc = report.classification.accuracy;
            let r = report.mean_pearson_r.unwrap();
            println!("  {} seed {seed}: acc {acc:.4}, mean r {r:.4}", variant.name());
            ceiling_ok &= acc <= oracle.ceiling_accuracy + 2.0 * oracle.ceiling_accuracy_se;
            ceiling_ok &= r <= oracle.ceiling_mean_r + 2.0 * mean_r_se;
            accs.push(acc);
            rs.push(r);
        }
        let acc_mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let r_mean = rs.iter().sum::<f64>() / rs.len() as f64;
        results.push((variant, acc_mean, r_mean));
    }
    let full = results[0];
    let cnn = results[1];
    let vit = results[2];
    let full_good = full.1 >= 0.90 && full.2 >= 0.85 * oracle.ceiling_mean_r;
    let ordering = full.1 >= cnn.1 && full.1 >= vit.1 && full.2 >= cnn.2 && full.2 >= vit.2;
    let elapsed = start.elapsed().as_secs_f64();
    line(
        "criterion 6 synthetic benchmark + ablation ordering",
        full_good && ordering && ceiling_ok && elapsed < BUDGET_BENCHMARK_S,
        &format!(
            "full acc {:.4} / r {:.4} (thresholds 0.90 / {:.4}), full>=cnn_only>=... {ordering}, within ceiling {ceiling_ok}, {elapsed:.0}s",
            full.1,
            full.2,
            0.85 * oracle.ceiling_mean_r
        ),
    );
}

// ── criterion 7 ─────────────────────────────────────────────────────────

#[test]
fn criterion_7_determinism_and_persistence() {
    // Identical seed => identical TrainLog.
    let synth_cfg = SynthConfig { n_train: 8, n_val: 3, n_test: 4, seed: 12, ..Default::default() };
    let (dataset, _) = synthesize(&synth_cfg).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 8, seed: 5, train_metric_cap: 0, ..Default::default() };
    let out_a = train(&cfg, &dataset).unwrap();
    let out_b = train(&cfg, &dataset).unwrap();
    let logs_equal = out_a.log == out_b.log;
    let params_equal = out_a
        .last_state
        .params()
        .zip(out_b.last_state.params())
        .all(|((pa, ta), (pb, tb))| {
            pa == pb && ta.data().iter().zip(tb.data().iter()).all(|(x, y)| x.to_bits() == y.to_bits())
        });

    // Checkpoint round trip bit-exact.
    let dir = std::env::temp_dir().join(format!("cytophen-acc7-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let stem = dir.join("model");
    checkpoint::save(&out_a.last_state, &stem).unwrap();
    let loaded = checkpoint::load(&stem).unwrap();
    let ckpt_equal = out_a
        .last_state
        .params()
        .zip(loaded.params())
        .all(|((pa, ta), (pb, tb))| {
            pa == pb && ta.data().iter().zip(tb.data().iter()).all(|(x, y)| x.to_bits() == y.to_bits())
        });

    // Container round trip bit-exact.
    let cdir = dir.join("container");
    write_container(&dataset, &cdir).unwrap();
    let reloaded = load_dataset(&cdir).unwrap();
    let container_equal = dataset.len() == reloaded.len()
        && dataset.splits == reloaded.splits
        && dataset.records.iter().zip(reloaded.records.iter()).all(|(a, b)| {
            a.id == b.id
                && a.cls == b.cls
                && a.image.iter().zip(b.image.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
                && a.markers.iter().zip(b.markers.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    std::fs::remove_dir_all(&dir).unwrap();

    line(
        "criterion 7 determinism and persistence",
        logs_equal && params_equal && ckpt_equal && container_equal,
        &format!("trainlog {logs_equal}, params {params_equal}, checkpoint {ckpt_equal}, container {container_equal}"),
    );
}

// ── criterion 8 ─────────────────────────────────────────────────────────

#[test]
fn criterion_8_summarizer_grounding() {
    // Build a real evidence bundle from a small evaluated model.
    let synth_cfg = SynthConfig { n_train: 10, n_val: 4, n_test: 30, seed: 21, ..Default::default() };
    let (dataset, _) = synthesize(&synth_cfg).unwrap();
    let cfg = TrainConfig { epochs: 1, batch_size: 8, seed: 9, ..Default::default() };
    let mut out = train(&cfg, &dataset).unwrap();
    let report = evaluate(&mut out.best_state, &out.zscore, &dataset, Split::Test).unwrap();
    let samples = MarkerSamples {
        marker_names: vec!["CD45".into(), "CD16".into(), "CD3/CD19/CD56".into(), "CD123/HLA-DR/CD14".into()],
        values: (0..report.n_samples * 4).map(|i| (i % 17) as f64 * 0.1 - 0.8).collect(),
        classes: (0..report.n_samples).map(|i| i % 3).collect(),
        confidences: (0..report.n_samples).map(|i| 0.5 + (i % 5) as f64 * 0.1).collect(),
    };
    let bundle = build_evidence(&report, &samples);
    let grounding = bundle.grounded_numerals();

    // Fuzz 1000 mock responses with injected ungrounded numerals.
    let mut rng = Rng::seeded(31);
    let mut fuzz_ok = true;
    let fragments = [
        "The cohort shows",
        "elevated",
        "expression of",
        "CD99",
        "CD45",
        "Granulocyte cells",
        "with Cohen's d =",
        "at r =",
        "apparently",
        "cells",
    ];
    for _ in 0..1000 {
        let mut text = String::new();
        let sentences = 1 + rng.below(4);
        for _ in 0..sentences {
            let words = 2 + rng.below(5);
            for _ in 0..words {
                text.push_str(fragments[rng.below(fragments.len())]);
                text.push(' ');
            }
            // Inject a random numeral, mostly ungrounded.
            text.push_str(&format!("{:.2}", rng.normal() * 40.0));
            text.push_str(". ");
        }
        let (kept, _) = ground_filter(&text, &bundle);
        for sentence in &kept {
            for numeral in extract_numerals(sentence) {
                if !grounding.contains(&numeral) {
                    fuzz_ok = false;
                }
            }
        }
    }

    // Endpoint-down fallback equals template output byte-for-byte.
    let templates = default_templates();
    let direct = render_summary(&bundle, &templates);
    let down = llm_summarize(
        &bundle,
        &templates,
        &EndpointConfig {
            url: "http://127.0.0.1:9".into(),
            timeout: std::time::Duration::from_millis(200),
        },
    );
    let fallback_ok = down.text == direct;

    // The template output itself is fully grounded.
    let direct_ok = extract_numerals(&direct).iter().all(|n| grounding.contains(n));

    line(
        "criterion 8 summarizer grounding",
        fuzz_ok && fallback_ok && direct_ok,
        &format!("1000-response fuzz {fuzz_ok}, endpoint-down fallback byte-equal {fallback_ok}, template output grounded {direct_ok}"),
    );
}

// ── criterion 9 (optional, non-gating) ──────────────────────────────────

/// BSCCM reproduction: runs only when a converted container is supplied via
/// `CYTOPHEN_BSCCM_DIR`; excluded from CI by the ignore marker. Targets
/// accuracy >= 0.88 and mean r >= 0.70 with the default 200-epoch recipe.
#[test]
#[ignore = "requires the converted BSCCM container and an overnight run"]
fn criterion_9_bsccm_reproduction_optional() {
    let Some(dir) = std::env::var_os("CYTOPHEN_BSCCM_DIR") else {
        println!("[SKIP] criterion 9: CYTOPHEN_BSCCM_DIR not set");
        return;
    };
    let dataset = load_dataset(std::path::Path::new(&dir)).unwrap();
    let cfg = TrainConfig::default();
    let mut out = train(&cfg, &dataset).unwrap();
    let report = evaluate(&mut out.best_state, &out.zscore, &dataset, Split::Test).unwrap();
    let acc = report.classification.accuracy;
    let r = report.mean_pearson_r.unwrap_or(0.0);
    line(
        "criterion 9 bsccm reproduction (non-gating)",
        acc >= 0.88 && r >= 0.70,
        &format!("accuracy {acc:.4} (target 0.88), mean r {r:.4} (target 0.70)"),
    );
}
