//! The hybrid CNN-ViT multi-task network: channel attention over the four
//! DPC illumination channels, two encoder branches, learnable softmax
//! fusion, task-specific refinement, cross-task gating, and two prediction
//! heads.

pub mod checkpoint;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};
use crate::tensorcore::{Graph, Mode, NodeId};

/// Architectural ablation variants, all constructible from the same config.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    CnnOnly,
    VitOnly,
    ClsOnly,
    RegOnly,
    NoGating,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::CnnOnly => "cnn_only",
            Variant::VitOnly => "vit_only",
            Variant::ClsOnly => "cls_only",
            Variant::RegOnly => "reg_only",
            Variant::NoGating => "no_gating",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Variant::Full),
            "cnn_only" => Some(Variant::CnnOnly),
            "vit_only" => Some(Variant::VitOnly),
            "cls_only" => Some(Variant::ClsOnly),
            "reg_only" => Some(Variant::RegOnly),
            "no_gating" => Some(Variant::NoGating),
            _ => None,
        }
    }

    pub fn has_cnn(&self) -> bool {
        !matches!(self, Variant::VitOnly)
    }

    pub fn has_vit(&self) -> bool {
        !matches!(self, Variant::CnnOnly)
    }

    pub fn has_cls(&self) -> bool {
        !matches!(self, Variant::RegOnly)
    }

    pub fn has_reg(&self) -> bool {
        !matches!(self, Variant::ClsOnly)
    }

    /// Gating needs both task pathways and is disabled for `NoGating`.
    pub fn has_gate(&self) -> bool {
        self.has_cls() && self.has_reg() && !matches!(self, Variant::NoGating)
    }
}

/// Hyperparameters of the architecture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub image_hw: usize,
    pub cnn_stem_out: usize,
    pub cnn_token_dim: usize,
    pub cnn_tokens: usize,
    pub vit_patch: usize,
    pub vit_dim: usize,
    pub vit_blocks: usize,
    pub vit_heads: usize,
    pub fused_dim: usize,
    pub n_classes: usize,
    pub n_markers: usize,
    pub head_dropout: f64,
    pub refine_dropout: f64,
    pub variant: Variant,
    /// Epsilon for layer norm and batch norm denominators.
    pub norm_eps: f64,
    /// Momentum of batch-norm running statistics.
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 4,
            image_hw: 28,
            cnn_stem_out: 64,
            cnn_token_dim: 192,
            cnn_tokens: 196,
            vit_patch: 4,
            vit_dim: 128,
            vit_blocks: 2,
            vit_heads: 4,
            fused_dim: 256,
            n_classes: 3,
            n_markers: 4,
            head_dropout: 0.4,
            refine_dropout: 0.2,
            variant: Variant::Full,
            norm_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let half = self.image_hw / 2;
        if self.cnn_tokens != half * half {
            return Err(TensorError::Input {
                op: "ModelConfig".into(),
                detail: format!("cnn_tokens {} != (image_hw/2)^2 = {}", self.cnn_tokens, half * half),
            });
        }
        if self.image_hw % self.vit_patch != 0 {
            return Err(TensorError::Input {
                op: "ModelConfig".into(),
                detail: format!("image_hw {} not divisible by vit_patch {}", self.image_hw, self.vit_patch),
            });
        }
        if self.vit_dim % self.vit_heads != 0 {
            return Err(TensorError::Input {
                op: "ModelConfig".into(),
                detail: format!("vit_dim {} not divisible by vit_heads {}", self.vit_dim, self.vit_heads),
            });
        }
        Ok(())
    }

    pub fn vit_patches(&self) -> usize {
        let side = self.image_hw / self.vit_patch;
        side * side
    }

    pub fn vit_seq_len(&self) -> usize {
        self.vit_patches() + 1
    }
}

/// Learnable parameters and batch-norm running buffers, keyed by
/// hierarchical block path. Map order is the canonical parameter order.
#[derive(Clone, Debug)]
pub struct ModelState<T: Element> {
    cfg: ModelConfig,
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> ModelState<T> {
    /// Deterministic initialization: fan-in-scaled normals for convolutions
    /// and linear maps, 0.02-std normals for patch/positional/CLS embeddings,
    /// unit gains, zero shifts and biases, fusion logits at (0, 0).
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, TensorError> {
        cfg.validate()?;
        let mut rng = Rng::seeded(seed).fork("model-init", 0);
        let mut state = Self { cfg: *cfg, params: BTreeMap::new(), buffers: BTreeMap::new() };
        let v = cfg.variant;

        // ECA channel attention: kernel 3 over the channel axis.
        state.normal(&mut rng, "eca.conv.weight", &[3], 1.0 / 3.0f64.sqrt());
        state.params.insert("eca.conv.bias".into(), Tensor::zeros(&[1]));

        if v.has_cnn() {
            let c = cfg.cnn_stem_out;
            state.conv(&mut rng, "cnn.stem.conv", c, cfg.in_channels, 3);
            state.bn("cnn.stem.bn", c);
            // Inception-residual split 24 + 24 + (16 -> 16) at 64 channels.
            for i in 0..2 {
                let p = format!("cnn.block{i}");
                state.conv(&mut rng, &format!("{p}.b1.conv"), 24, c, 1);
                state.bn(&format!("{p}.b1.bn"), 24);
                state.conv(&mut rng, &format!("{p}.b2.conv"), 24, c, 3);
                state.bn(&format!("{p}.b2.bn"), 24);
                state.conv(&mut rng, &format!("{p}.b3a.conv"), 16, c, 3);
                state.bn(&format!("{p}.b3a.bn"), 16);
                state.conv(&mut rng, &format!("{p}.b3b.conv"), 16, 16, 3);
                state.bn(&format!("{p}.b3b.bn"), 16);
            }
            state.conv(&mut rng, "cnn.reduce.conv", cfg.cnn_token_dim, c, 3);
            state.bn("cnn.reduce.bn", cfg.cnn_token_dim);
        }

        if v.has_vit() {
            let d = cfg.vit_dim;
            state.normal(
                &mut rng,
                "vit.patch.conv.weight",
                &[d, cfg.in_channels, cfg.vit_patch, cfg.vit_patch],
                0.02,
            );
            state.params.insert("vit.patch.conv.bias".into(), Tensor::zeros(&[d]));
            state.normal(&mut rng, "vit.cls", &[1, 1, d], 0.02);
            state.normal(&mut rng, "vit.pos", &[1, cfg.vit_seq_len(), d], 0.02);
            for i in 0..cfg.vit_blocks {
                let p = format!("vit.block{i}");
                state.ln(&format!("{p}.ln1"), d);
                state.linear(&mut rng, &format!("{p}.attn.qkv"), 3 * d, d);
                state.linear(&mut rng, &format!("{p}.attn.proj"), d, d);
                state.ln(&format!("{p}.ln2"), d);
                state.linear(&mut rng, &format!("{p}.mlp.fc1"), 4 * d, d);
                state.linear(&mut rng, &format!("{p}.mlp.fc2"), d, 4 * d);
            }
        }

        let f = cfg.fused_dim;
        if v.has_cnn() {
            state.linear(&mut rng, "fuse.cnn_proj", f, cfg.cnn_token_dim);
        }
        if v.has_vit() {
            state.linear(&mut rng, "fuse.vit_proj", f, cfg.vit_dim);
        }
        if v.has_cnn() && v.has_vit() {
            state.params.insert("fuse.alpha".into(), Tensor::zeros(&[2]));
        }
        state.ln("fuse.ln", f);

        for task in ["cls", "reg"] {
            let active = if task == "cls" { v.has_cls() } else { v.has_reg() };
            if !active {
                continue;
            }
            let p = format!("refine.{task}");
            state.linear(&mut rng, &format!("{p}.fc1"), f, f);
            state.ln(&format!("{p}.ln"), f);
            state.linear(&mut rng, &format!("{p}.fc2"), f, f);
            if v.has_gate() {
                let gp = format!("gate.{task}");
                state.linear(&mut rng, &format!("{gp}.gate"), f, 2 * f);
                state.linear(&mut rng, &format!("{gp}.mix"), f, 2 * f);
                state.ln(&format!("{gp}.ln"), f);
            }
            let hp = format!("head.{task}");
            state.linear(&mut rng, &format!("{hp}.fc1"), f / 2, f);
            state.ln(&format!("{hp}.ln1"), f / 2);
            state.linear(&mut rng, &format!("{hp}.fc2"), f / 4, f / 2);
            state.ln(&format!("{hp}.ln2"), f / 4);
            let out_dim = if task == "cls" { cfg.n_classes } else { cfg.n_markers };
            state.linear(&mut rng, &format!("{hp}.out"), out_dim, f / 4);
        }
        Ok(state)
    }

    fn normal(&mut self, rng: &mut Rng, path: &str, shape: &[usize], std: f64) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.normal() * std).collect();
        self.params.insert(path.into(), Tensor::from_f64_slice(&data, shape).expect("init shape"));
    }

    fn conv(&mut self, rng: &mut Rng, path: &str, co: usize, ci: usize, k: usize) {
        self.normal(rng, &format!("{path}.weight"), &[co, ci, k, k], 1.0 / ((ci * k * k) as f64).sqrt());
        self.params.insert(format!("{path}.bias"), Tensor::zeros(&[co]));
    }

    fn linear(&mut self, rng: &mut Rng, path: &str, dout: usize, din: usize) {
        self.normal(rng, &format!("{path}.weight"), &[dout, din], 1.0 / (din as f64).sqrt());
        self.params.insert(format!("{path}.bias"), Tensor::zeros(&[dout]));
    }

    fn bn(&mut self, path: &str, c: usize) {
        self.params.insert(format!("{path}.gain"), Tensor::full(&[c], T::ONE));
        self.params.insert(format!("{path}.shift"), Tensor::zeros(&[c]));
        self.buffers.insert(format!("{path}.running_mean"), Tensor::zeros(&[c]));
        self.buffers.insert(format!("{path}.running_var"), Tensor::full(&[c], T::ONE));
    }

    fn ln(&mut self, path: &str, d: usize) {
        self.params.insert(format!("{path}.gain"), Tensor::full(&[d], T::ONE));
        self.params.insert(format!("{path}.shift"), Tensor::zeros(&[d]));
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param(&self, path: &str) -> Option<&Tensor<T>> {
        self.params.get(path)
    }

    pub fn param_mut(&mut self, path: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(path)
    }

    pub fn buffer(&self, path: &str) -> Option<&Tensor<T>> {
        self.buffers.get(path)
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.buffers.iter()
    }

    pub fn param_paths(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    /// Total learnable parameter count.
    pub fn param_count(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Element>(&self) -> ModelState<U> {
        ModelState {
            cfg: self.cfg,
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    fn update_running(&mut self, path: &str, batch: &[T], momentum: f64) {
        let buf = self.buffers.get_mut(path).expect("running buffer exists");
        let m = T::from_f64(momentum);
        let keep = T::from_f64(1.0 - momentum);
        for (r, &b) in buf.data_mut().iter_mut().zip(batch.iter()) {
            *r = keep * *r + m * b;
        }
    }

    pub(crate) fn from_parts(
        cfg: ModelConfig,
        params: BTreeMap<String, Tensor<T>>,
        buffers: BTreeMap<String, Tensor<T>>,
    ) -> Self {
        Self { cfg, params, buffers }
    }
}

/// Diagnostics of one forward pass.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Softmax fusion weights (cnn, vit) when both branches are active.
    pub fusion_weights: Option<(f64, f64)>,
    pub gate_mean_cls: Option<f64>,
    pub gate_mean_reg: Option<f64>,
}

/// Graph handles produced by a forward pass. Heads that an ablation disables
/// are `None`.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub cls_probs: Option<NodeId>,
    pub reg_values: Option<NodeId>,
    pub h_fused: NodeId,
    pub h_cls: Option<NodeId>,
    pub h_reg: Option<NodeId>,
    pub gated_cls: Option<NodeId>,
    pub gated_reg: Option<NodeId>,
    /// Pre-norm gate mixtures, exposed for the convexity property.
    pub gate_pre_norm_cls: Option<NodeId>,
    pub gate_pre_norm_reg: Option<NodeId>,
    pub diagnostics: Diagnostics,
    /// Parameter path -> bound leaf node, in binding order.
    pub param_nodes: Vec<(String, NodeId)>,
}

/// Value-level predictions extracted from a forward pass.
#[derive(Clone, Debug)]
pub struct Predictions<T: Element> {
    pub cls_probs: Option<Tensor<T>>,
    pub reg_values: Option<Tensor<T>>,
    pub diagnostics: Diagnostics,
}

impl ForwardOutput {
    pub fn predictions<T: Element>(&self, g: &Graph<T>) -> Predictions<T> {
        Predictions {
            cls_probs: self.cls_probs.map(|id| g.value(id).clone()),
            reg_values: self.reg_values.map(|id| g.value(id).clone()),
            diagnostics: self.diagnostics,
        }
    }
}

/// One forward construction over a graph. Binds parameters as leaves on
/// first use; an override map redirects bindings for gradient checking.
pub struct ModelCtx<'a, T: Element> {
    pub g: &'a mut Graph<T>,
    state: &'a mut ModelState<T>,
    mode: Mode,
    rng: Rng,
    /// Write back batch-norm running statistics (train mode only).
    update_running: bool,
    /// Abort with a named block on non-finite activations.
    finite_checks: bool,
    overrides: Option<&'a BTreeMap<String, NodeId>>,
    bound: Vec<(String, NodeId)>,
}

impl<'a, T: Element> ModelCtx<'a, T> {
    pub fn new(
        g: &'a mut Graph<T>,
        state: &'a mut ModelState<T>,
        mode: Mode,
        rng: Rng,
    ) -> Self {
        Self {
            g,
            state,
            mode,
            rng,
            update_running: mode == Mode::Train,
            finite_checks: false,
            overrides: None,
            bound: Vec::new(),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.finite_checks = on;
        self
    }

    pub fn with_running_updates(mut self, on: bool) -> Self {
        self.update_running = on;
        self
    }

    pub fn with_overrides(mut self, overrides: &'a BTreeMap<String, NodeId>) -> Self {
        self.overrides = Some(overrides);
        self
    }

    fn cfg(&self) -> ModelConfig {
        *self.state.config()
    }

    fn param(&mut self, path: &str) -> Result<NodeId, TensorError> {
        if let Some((_, id)) = self.bound.iter().find(|(p, _)| p == path) {
            return Ok(*id);
        }
        let id = if let Some(over) = self.overrides {
            *over.get(path).ok_or_else(|| TensorError::Input {
                op: "ModelCtx".into(),
                detail: format!("missing override for parameter {path}"),
            })?
        } else {
            let tensor = self
                .state
                .param(path)
                .ok_or_else(|| TensorError::Input {
                    op: "ModelCtx".into(),
                    detail: format!("unknown parameter path {path}"),
                })?
                .clone();
            self.g.leaf(tensor, self.mode == Mode::Train, path)
        };
        self.bound.push((path.to_string(), id));
        Ok(id)
    }

    fn check_finite(&self, block: &str, id: NodeId) -> Result<(), TensorError> {
        if self.finite_checks && !self.g.value(id).all_finite() {
            return Err(TensorError::NonFinite { block: block.to_string() });
        }
        Ok(())
    }

    pub fn conv_bn_gelu(
        &mut self,
        x: NodeId,
        conv_path: &str,
        bn_path: &str,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, TensorError> {
        let w = self.param(&format!("{conv_path}.weight"))?;
        let b = self.param(&format!("{conv_path}.bias"))?;
        let y = self.g.conv2d(x, w, b, stride, padding)?;
        let y = self.batch_norm(y, bn_path)?;
        Ok(self.g.gelu(y))
    }

    fn batch_norm(&mut self, x: NodeId, path: &str) -> Result<NodeId, TensorError> {
        let gain = self.param(&format!("{path}.gain"))?;
        let shift = self.param(&format!("{path}.shift"))?;
        let eps = self.cfg().norm_eps;
        let momentum = self.cfg().bn_momentum;
        let (id, stats) = if self.mode == Mode::Train {
            self.g.batch_norm2d(x, gain, shift, eps, Mode::Train, None)?
        } else {
            let mean = self
                .state
                .buffer(&format!("{path}.running_mean"))
                .expect("running mean")
                .data()
                .to_vec();
            let var = self
                .state
                .buffer(&format!("{path}.running_var"))
                .expect("running var")
                .data()
                .to_vec();
            self.g.batch_norm2d(x, gain, shift, eps, Mode::Eval, Some((&mean, &var)))?
        };
        if let Some(stats) = stats {
            if self.update_running {
                self.state.update_running(&format!("{path}.running_mean"), &stats.mean, momentum);
                self.state.update_running(&format!("{path}.running_var"), &stats.var, momentum);
            }
        }
        Ok(id)
    }

    fn layer_norm(&mut self, x: NodeId, path: &str) -> Result<NodeId, TensorError> {
        let gain = self.param(&format!("{path}.gain"))?;
        let shift = self.param(&format!("{path}.shift"))?;
        let eps = self.cfg().norm_eps;
        self.g.layer_norm(x, gain, shift, eps)
    }

    fn linear(&mut self, x: NodeId, path: &str) -> Result<NodeId, TensorError> {
        let w = self.param(&format!("{path}.weight"))?;
        let b = self.param(&format!("{path}.bias"))?;
        self.g.linear(x, w, b)
    }

    // ── blocks ──────────────────────────────────────────────────────────

    /// Channel attention: pooled per-channel descriptor, 1-D convolution
    /// over the channel axis, sigmoid gate broadcast onto the input.
    pub fn eca_weight(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let cfg = self.cfg();
        let shape = self.g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != cfg.in_channels {
            return Err(TensorError::Shape {
                op: "eca_weight".into(),
                detail: format!("expected [B,{},H,W], got {shape:?} (channel axis 1)", cfg.in_channels),
            });
        }
        let b = shape[0];
        let pooled = self.g.mean_axes(x, &[2, 3])?;
        let pooled = self.g.reshape(pooled, &[b, cfg.in_channels])?;
        let w = self.param("eca.conv.weight")?;
        let bias = self.param("eca.conv.bias")?;
        let att = self.g.conv1d_rows(pooled, w, bias)?;
        let gate = self.g.sigmoid(att);
        let gate = self.g.reshape(gate, &[b, cfg.in_channels, 1, 1])?;
        let out = self.g.mul(x, gate)?;
        self.check_finite("eca", out)?;
        Ok(out)
    }

    /// One inception-residual module: 1x1, 3x3, and cascaded 3x3 branches
    /// concatenated back to the input width, added to the identity skip.
    pub fn inception_block(&mut self, x: NodeId, path: &str) -> Result<NodeId, TensorError> {
        let b1 = self.conv_bn_gelu(x, &format!("{path}.b1.conv"), &format!("{path}.b1.bn"), 1, 0)?;
        let b2 = self.conv_bn_gelu(x, &format!("{path}.b2.conv"), &format!("{path}.b2.bn"), 1, 1)?;
        let b3 = self.conv_bn_gelu(x, &format!("{path}.b3a.conv"), &format!("{path}.b3a.bn"), 1, 1)?;
        let b3 = self.conv_bn_gelu(b3, &format!("{path}.b3b.conv"), &format!("{path}.b3b.bn"), 1, 1)?;
        let cat = self.g.concat(&[b1, b2, b3], 1)?;
        self.g.add(x, cat)
    }

    /// CNN branch: stem, two inception-residual modules, strided reduction,
    /// then the 14x14 grid flattened to `[B, 196, 192]` tokens.
    pub fn cnn_branch(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let cfg = self.cfg();
        let mut h = self.conv_bn_gelu(x, "cnn.stem.conv", "cnn.stem.bn", 1, 1)?;
        for i in 0..2 {
            h = self.inception_block(h, &format!("cnn.block{i}"))?;
        }
        let h = self.conv_bn_gelu(h, "cnn.reduce.conv", "cnn.reduce.bn", 2, 1)?;
        let shape = self.g.shape(h).to_vec();
        let b = shape[0];
        let grid = shape[2] * shape[3];
        let h = self.g.reshape(h, &[b, cfg.cnn_token_dim, grid])?;
        let tokens = self.g.transpose_last2(h)?;
        self.check_finite("cnn_branch", tokens)?;
        Ok(tokens)
    }

    /// ViT branch: 4x4 patch embedding, CLS token, learnable positions, two
    /// pre-norm transformer blocks; yields `[B, 50, 128]`.
    pub fn vit_branch(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let cfg = self.cfg();
        let b = self.g.shape(x)[0];
        let d = cfg.vit_dim;
        let pw = self.param("vit.patch.conv.weight")?;
        let pb = self.param("vit.patch.conv.bias")?;
        let patches = self.g.conv2d(x, pw, pb, cfg.vit_patch, 0)?;
        let patches = self.g.reshape(patches, &[b, d, cfg.vit_patches()])?;
        let patches = self.g.transpose_last2(patches)?; // [B, P, D]
        let cls = self.param("vit.cls")?;
        let cls = self.g.expand(cls, &[b, 1, d])?;
        let tokens = self.g.concat(&[cls, patches], 1)?;
        let pos = self.param("vit.pos")?;
        let mut h = self.g.add(tokens, pos)?;

        let seq = cfg.vit_seq_len();
        let heads = cfg.vit_heads;
        let dh = d / heads;
        for i in 0..cfg.vit_blocks {
            let p = format!("vit.block{i}");
            let n1 = self.layer_norm(h, &format!("{p}.ln1"))?;
            let qkv = self.linear(n1, &format!("{p}.attn.qkv"))?;
            let mut split = Vec::with_capacity(3);
            for part in 0..3 {
                let s = self.g.narrow(qkv, 2, part * d, d)?;
                let s = self.g.reshape(s, &[b, seq, heads, dh])?;
                split.push(self.g.permute(s, &[0, 2, 1, 3])?);
            }
            let att = self.g.attention(split[0], split[1], split[2])?;
            let att = self.g.permute(att, &[0, 2, 1, 3])?;
            let att = self.g.reshape(att, &[b, seq, d])?;
            let att = self.linear(att, &format!("{p}.attn.proj"))?;
            h = self.g.add(h, att)?;

            let n2 = self.layer_norm(h, &format!("{p}.ln2"))?;
            let m = self.linear(n2, &format!("{p}.mlp.fc1"))?;
            let m = self.g.gelu(m);
            let m = self.linear(m, &format!("{p}.mlp.fc2"))?;
            h = self.g.add(h, m)?;
        }
        self.check_finite("vit_branch", h)?;
        Ok(h)
    }

    /// Learnable softmax fusion of the pooled CNN tokens and the ViT CLS
    /// embedding into `[B, 256]`. Single-branch variants skip the weighting
    /// and normalize the sole projection.
    pub fn fuse(
        &mut self,
        f_cnn: Option<NodeId>,
        f_vit: Option<NodeId>,
    ) -> Result<(NodeId, Option<(f64, f64)>), TensorError> {
        let cfg = self.cfg();
        let h_cnn = match f_cnn {
            Some(t) => {
                let pooled = self.g.mean_axes(t, &[1])?;
                let b = self.g.shape(pooled)[0];
                let pooled = self.g.reshape(pooled, &[b, cfg.cnn_token_dim])?;
                Some(self.linear(pooled, "fuse.cnn_proj")?)
            }
            None => None,
        };
        let h_vit = match f_vit {
            Some(t) => {
                let cls = self.g.narrow(t, 1, 0, 1)?;
                let b = self.g.shape(cls)[0];
                let cls = self.g.reshape(cls, &[b, cfg.vit_dim])?;
                Some(self.linear(cls, "fuse.vit_proj")?)
            }
            None => None,
        };
        let (mixed, weights) = match (h_cnn, h_vit) {
            (Some(c), Some(v)) => {
                let alpha = self.param("fuse.alpha")?;
                let w = self.g.softmax(alpha, 0)?;
                let w_cnn = self.g.narrow(w, 0, 0, 1)?;
                let w_vit = self.g.narrow(w, 0, 1, 1)?;
                let ct = self.g.mul(c, w_cnn)?;
                let vt = self.g.mul(v, w_vit)?;
                let sum = self.g.add(ct, vt)?;
                let wv = self.g.value(w).to_f64_vec();
                (sum, Some((wv[0], wv[1])))
            }
            (Some(c), None) => (c, None),
            (None, Some(v)) => (v, None),
            (None, None) => {
                return Err(TensorError::Input { op: "fuse".into(), detail: "no branch outputs".into() })
            }
        };
        let fused = self.layer_norm(mixed, "fuse.ln")?;
        self.check_finite("fuse", fused)?;
        Ok((fused, weights))
    }

    /// Task refinement: residual two-layer MLP per task with dropout inside
    /// the residual branch.
    pub fn refine_task(&mut self, h_fused: NodeId, task: &str) -> Result<NodeId, TensorError> {
        let p = format!("refine.{task}");
        let dropout = self.cfg().refine_dropout;
        let z = self.linear(h_fused, &format!("{p}.fc1"))?;
        let z = self.layer_norm(z, &format!("{p}.ln"))?;
        let z = self.g.gelu(z);
        let z = self.linear(z, &format!("{p}.fc2"))?;
        let mode = self.mode;
        let mut rng = self.rng.clone();
        let z = self.g.dropout(z, dropout, mode, &mut rng)?;
        self.rng = rng;
        self.g.add(h_fused, z)
    }

    /// Cross-task gating; returns the normalized features plus the pre-norm
    /// mixtures and mean gate activations.
    #[allow(clippy::type_complexity)]
    pub fn gate_tasks(
        &mut self,
        h_cls: NodeId,
        h_reg: NodeId,
    ) -> Result<((NodeId, NodeId), (NodeId, NodeId), (f64, f64)), TensorError> {
        let c = self.g.concat(&[h_cls, h_reg], 1)?;
        let mut gated = Vec::with_capacity(2);
        let mut pre_norms = Vec::with_capacity(2);
        let mut means = Vec::with_capacity(2);
        for (task, h) in [("cls", h_cls), ("reg", h_reg)] {
            let p = format!("gate.{task}");
            let gate_lin = self.linear(c, &format!("{p}.gate"))?;
            let gate = self.g.sigmoid(gate_lin);
            let mix = self.linear(c, &format!("{p}.mix"))?;
            let keep = self.g.mul(h, gate)?;
            let neg_gate = self.g.mul_scalar(gate, -1.0);
            let inv = self.g.add_scalar(neg_gate, 1.0);
            let swap = self.g.mul(mix, inv)?;
            let pre = self.g.add(keep, swap)?;
            let out = self.layer_norm(pre, &format!("{p}.ln"))?;
            let gv = self.g.value(gate);
            let mean = gv.data().iter().map(|&v| v.to_f64()).sum::<f64>() / gv.numel() as f64;
            gated.push(out);
            pre_norms.push(pre);
            means.push(mean);
        }
        Ok(((gated[0], gated[1]), (pre_norms[0], pre_norms[1]), (means[0], means[1])))
    }

    fn head(&mut self, h: NodeId, task: &str) -> Result<NodeId, TensorError> {
        let p = format!("head.{task}");
        let dropout = self.cfg().head_dropout;
        let mode = self.mode;
        let z = self.linear(h, &format!("{p}.fc1"))?;
        let z = self.layer_norm(z, &format!("{p}.ln1"))?;
        let z = self.g.gelu(z);
        let mut rng = self.rng.clone();
        let z = self.g.dropout(z, dropout, mode, &mut rng)?;
        let z = self.linear(z, &format!("{p}.fc2"))?;
        let z = self.layer_norm(z, &format!("{p}.ln2"))?;
        let z = self.g.gelu(z);
        let z = self.g.dropout(z, dropout, mode, &mut rng)?;
        self.rng = rng;
        self.linear(z, &format!("{p}.out"))
    }

    /// Three-layer funnel ending in softmax class probabilities.
    pub fn classification_head(&mut self, h: NodeId) -> Result<NodeId, TensorError> {
        let logits = self.head(h, "cls")?;
        self.g.softmax(logits, 1)
    }

    /// Mirror of the classification head with an unbounded linear output.
    pub fn regression_head(&mut self, h: NodeId) -> Result<NodeId, TensorError> {
        self.head(h, "reg")
    }

    /// Full composition for the configured variant.
    pub fn forward(&mut self, x: NodeId) -> Result<ForwardOutput, TensorError> {
        let cfg = self.cfg();
        let shape = self.g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != cfg.in_channels || shape[2] != cfg.image_hw || shape[3] != cfg.image_hw {
            return Err(TensorError::Shape {
                op: "forward".into(),
                detail: format!(
                    "expected [B,{},{},{}], got {shape:?}",
                    cfg.in_channels, cfg.image_hw, cfg.image_hw
                ),
            });
        }
        let v = cfg.variant;
        let weighted = self.eca_weight(x)?;
        let f_cnn = if v.has_cnn() { Some(self.cnn_branch(weighted)?) } else { None };
        let f_vit = if v.has_vit() { Some(self.vit_branch(weighted)?) } else { None };
        let (h_fused, fusion_weights) = self.fuse(f_cnn, f_vit)?;

        let h_cls = if v.has_cls() { Some(self.refine_task(h_fused, "cls")?) } else { None };
        let h_reg = if v.has_reg() { Some(self.refine_task(h_fused, "reg")?) } else { None };
        if let Some(h) = h_cls {
            self.check_finite("refine.cls", h)?;
        }
        if let Some(h) = h_reg {
            self.check_finite("refine.reg", h)?;
        }

        let mut diagnostics = Diagnostics { fusion_weights, ..Default::default() };
        let (gated_cls, gated_reg, pre_cls, pre_reg) = if v.has_gate() {
            let ((gc, gr), (pc, pr), (mc, mr)) = self.gate_tasks(h_cls.unwrap(), h_reg.unwrap())?;
            self.check_finite("gate", gc)?;
            diagnostics.gate_mean_cls = Some(mc);
            diagnostics.gate_mean_reg = Some(mr);
            (Some(gc), Some(gr), Some(pc), Some(pr))
        } else {
            (h_cls, h_reg, None, None)
        };

        let cls_probs = match gated_cls {
            Some(h) if v.has_cls() => {
                let p = self.classification_head(h)?;
                self.check_finite("head.cls", p)?;
                Some(p)
            }
            _ => None,
        };
        let reg_values = match gated_reg {
            Some(h) if v.has_reg() => {
                let r = self.regression_head(h)?;
                self.check_finite("head.reg", r)?;
                Some(r)
            }
            _ => None,
        };

        Ok(ForwardOutput {
            cls_probs,
            reg_values,
            h_fused,
            h_cls,
            h_reg,
            gated_cls,
            gated_reg,
            gate_pre_norm_cls: pre_cls,
            gate_pre_norm_reg: pre_reg,
            diagnostics,
            param_nodes: std::mem::take(&mut self.bound),
        })
    }
}
