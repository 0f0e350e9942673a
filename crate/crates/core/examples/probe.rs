use std::time::Instant;
use cytophen_core::data::synth::{synthesize, SynthConfig};
use cytophen_core::data::Split;
use cytophen_core::losses::LossWeights;
use cytophen_core::model::{ModelConfig, Variant};
use cytophen_core::pipeline::{evaluate, train, TrainConfig};

fn main() {
    let synth_cfg = SynthConfig {
        n_train: 1667, n_val: 200, n_test: 334,
        texture_gain: 0.1,
        seed: 1000,
        ..Default::default()
    };
    let (dataset, _) = synthesize(&synth_cfg).unwrap();
    for seed in [11u64, 23, 37] {
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 32,
            lr_final: 3e-4,
            seed,
            augment: false,
            train_metric_cap: 512,
            loss: LossWeights { lambda_reg: 1.5, ..Default::default() },
            model: ModelConfig::with_variant(Variant::Full),
            ..Default::default()
        };
        let t1 = Instant::now();
        let mut out = train(&cfg, &dataset).unwrap();
        let report = evaluate(&mut out.best_state, &out.zscore, &dataset, Split::Test).unwrap();
        println!("LREG15 full seed {seed}: acc {:.4} mean_r {:.4} ({:.0}s)",
            report.classification.accuracy, report.mean_pearson_r.unwrap(), t1.elapsed().as_secs_f64());
    }
}
