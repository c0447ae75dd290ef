//! Label posterior modelled as diffusion over k-logit simplex points.

pub mod denoiser;
pub mod distill;
pub mod inference;
pub mod schedule;
pub mod simplex;

pub use denoiser::{Denoiser, DenoiserNet, DenoiserShape};
pub use distill::{
    distill_train, reinforce_candidate, Conditioning, DiffusionModel, DistillConfig, DistillOutcome, RoundStats,
    ValidationData,
};
pub use inference::{infer_reverse, infer_reverse_batch, timestep_grid};
pub use schedule::DiffusionSchedule;
pub use simplex::{forward_sample, project_argmax, to_k_logit};
