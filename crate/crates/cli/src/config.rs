//! TOML-backed run configuration. Every field has a default; unknown keys
//! are a hard error so typos cannot silently fall back to defaults.

use std::path::Path;

use serde::Deserialize;

use cytophen_core::data::synth::SynthConfig;
use cytophen_core::losses::LossWeights;
use cytophen_core::model::{ModelConfig, Variant};
use cytophen_core::pipeline::TrainConfig;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub data: DataSection,
    pub synth: SynthSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub ablate: AblateSection,
    pub summarize: SummarizeSection,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset container directory (or its manifest.json).
    pub container: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { container: "dataset".into() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub kappa: f64,
    pub noise_sigma: f64,
    pub texture_gain: f64,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            n_train: d.n_train,
            n_val: d.n_val,
            n_test: d.n_test,
            kappa: d.kappa,
            noise_sigma: d.noise_sigma,
            texture_gain: d.texture_gain,
            seed: d.seed,
        }
    }
}

impl SynthSection {
    pub fn to_config(&self) -> SynthConfig {
        SynthConfig {
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            kappa: self.kappa,
            noise_sigma: self.noise_sigma,
            texture_gain: self.texture_gain,
            seed: self.seed,
            ..SynthConfig::default()
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: String,
    pub head_dropout: f64,
    pub refine_dropout: f64,
    pub norm_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            variant: "full".into(),
            head_dropout: d.head_dropout,
            refine_dropout: d.refine_dropout,
            norm_eps: d.norm_eps,
            bn_momentum: d.bn_momentum,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self) -> Result<ModelConfig, CliError> {
        let variant = Variant::parse(&self.variant).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown model.variant {:?} (expected full, cnn_only, vit_only, cls_only, reg_only, no_gating)",
                self.variant
            ))
        })?;
        Ok(ModelConfig {
            variant,
            head_dropout: self.head_dropout,
            refine_dropout: self.refine_dropout,
            norm_eps: self.norm_eps,
            bn_momentum: self.bn_momentum,
            ..ModelConfig::default()
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    pub lambda_aux: f64,
    pub gamma: f64,
    pub alpha: [f64; 3],
    pub beta: f64,
    pub pearson_eps: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossWeights::default();
        Self {
            lambda_cls: d.lambda_cls,
            lambda_reg: d.lambda_reg,
            lambda_aux: d.lambda_aux,
            gamma: d.gamma,
            alpha: d.alpha,
            beta: d.beta,
            pearson_eps: d.pearson_eps,
        }
    }
}

impl LossSection {
    pub fn to_weights(&self) -> LossWeights {
        LossWeights {
            lambda_cls: self.lambda_cls,
            lambda_reg: self.lambda_reg,
            lambda_aux: self.lambda_aux,
            gamma: self.gamma,
            alpha: self.alpha,
            beta: self.beta,
            pearson_eps: self.pearson_eps,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub augment: bool,
    pub train_metric_cap: usize,
    pub alpha_auto: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr_init: d.lr_init,
            lr_final: d.lr_final,
            weight_decay: d.weight_decay,
            beta1: d.beta1,
            beta2: d.beta2,
            adam_eps: d.adam_eps,
            clip_norm: d.clip_norm,
            seed: d.seed,
            augment: d.augment,
            train_metric_cap: d.train_metric_cap,
            alpha_auto: d.alpha_auto,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub seeds: Vec<u64>,
    pub variants: Vec<String>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            variants: vec![
                "full".into(),
                "cnn_only".into(),
                "vit_only".into(),
                "cls_only".into(),
                "reg_only".into(),
            ],
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizeSection {
    /// Optional plain-http endpoint; empty string disables it.
    pub endpoint: String,
    pub timeout_secs: u64,
}

impl Default for SummarizeSection {
    fn default() -> Self {
        Self { endpoint: String::new(), timeout_secs: 10 }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&raw).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        Ok(TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr_init: self.train.lr_init,
            lr_final: self.train.lr_final,
            weight_decay: self.train.weight_decay,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            adam_eps: self.train.adam_eps,
            clip_norm: self.train.clip_norm,
            seed: self.train.seed,
            augment: self.train.augment,
            train_metric_cap: self.train.train_metric_cap,
            alpha_auto: self.train.alpha_auto,
            loss: self.loss.to_weights(),
            model: self.model.to_config()?,
        })
    }

    pub fn ablation_variants(&self) -> Result<Vec<Variant>, CliError> {
        self.ablate
            .variants
            .iter()
            .map(|v| {
                Variant::parse(v)
                    .ok_or_else(|| CliError::Usage(format!("unknown ablate variant {v:?}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty() {
        let cfg: FileConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.train.lr_init, 1e-3);
        assert_eq!(cfg.model.variant, "full");
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let err = toml::from_str::<FileConfig>("[train]\nepochz = 5\n").unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
        let err = toml::from_str::<FileConfig>("[nonsense]\nx = 1\n").unwrap_err();
        assert!(err.to_string().contains("nonsense"), "{err}");
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let cfg: FileConfig = toml::from_str("[train]\nepochs = 3\n[model]\nvariant = \"cnn_only\"\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 32);
        let tc = cfg.train_config().unwrap();
        assert_eq!(tc.model.variant, Variant::CnnOnly);
    }
}
