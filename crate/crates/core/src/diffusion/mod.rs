//! Conditional denoising diffusion over 3-channel region masks.
//!
//! The network predicts the clean target directly (not the noise), in a
//! `[-1, 1]` state space obtained from the binary target by `2x - 1`. It is
//! conditioned on the MRI contrasts and the baseline prediction, both as
//! extra input channels and through a separate conditioning encoder whose
//! multi-scale features are added into the denoiser's encoder.

mod conditioning;
mod denoiser;
mod sampler;
mod schedule;

pub use conditioning::{build_conditioning, mask_condition, ConditioningOptions, ConditioningVariant, MASK_BACKGROUND};
pub use denoiser::{
    build_denoiser, denoise_step, prepare_cases, train_diffusion, DenoiseOutput, DenoiserConfig, DenoiserModel,
    DiffusionCase, DiffusionTrainConfig, FeatureInjection, NoiseMode, TargetMode,
};
pub use sampler::{ddim_timesteps, sample, sample_with_condition};
pub use schedule::{make_schedule, q_sample, NoiseSchedule, ScheduleConfig};
