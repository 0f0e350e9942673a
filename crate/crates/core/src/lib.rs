//! Hybrid CNN-ViT multi-task phenotyping from label-free DPC images.
//!
//! The crate provides:
//! - [`tensorcore`]: a reverse-mode differentiation engine with a
//!   finite-difference gradient gate;
//! - [`model`]: the dual-branch encoder with channel attention, learnable
//!   fusion, task refinement, cross-task gating, and two prediction heads;
//! - [`losses`]: the weighted multi-task objective (focal classification,
//!   smooth-L1 + correlation-aligned regression, feature consistency);
//! - [`data`]: dataset containers, normalization, augmentation, and a
//!   synthetic generator with an analytic performance ceiling;
//! - [`metrics`]: classification/regression metrics, confusion matrices,
//!   and one-vs-rest ROC/AUC;
//! - [`pipeline`]: deterministic training, evaluation, checkpointing, and
//!   the ablation harness;
//! - [`summarizer`]: grounded template summaries with an optional external
//!   endpoint behind the same grounding filter.

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod summarizer;
pub mod tensor;
pub mod tensorcore;

pub use error::{DataError, MetricsError, PipelineError, TensorError};
pub use rng::Rng;
pub use tensor::{Element, Tensor};
