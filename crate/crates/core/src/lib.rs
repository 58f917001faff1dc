//! Protein-conditioned masked diffusion over SMILES tokens.
//!
//! The crate is split along the pipeline:
//!
//! * [`chemkit`]: SMILES lexing, parsing, valence checks, canonical strings,
//!   Morgan fingerprints and simple descriptors.
//! * [`numcore`]: a small dense tensor library with a reverse-mode tape.
//! * [`schedule`]: noise schedules, loss weights and the curriculum transform.
//! * [`diffusion`]: masking corruption, the weighted masked loss, the
//!   unmasking sampler and the training step.
//! * [`decoder`]: the transformer denoiser.
//! * [`folding`]: coarse-stride pair processing and protein conditioning.
//! * [`metrics`]: generation, screening and affinity metrics.
//!
//! Data-parallel inner loops go through [`exec::Exec`], which uses rayon when
//! the `parallel` feature is enabled and runs sequentially otherwise.

pub mod alloc;
pub mod chemkit;
pub mod decoder;
pub mod diffusion;
pub mod exec;
pub mod folding;
pub mod metrics;
pub mod numcore;
pub mod schedule;

pub use numcore::{Real, Tensor};
