//! Closed-form diffusion denoisers on finite datasets, guidance rules, Euler
//! sampling of the probability-flow ODE, sliding-window guidance and sample
//! statistics.

pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod guidance;
pub mod linalg;
pub mod metrics;
pub mod ppm;
pub mod rng;
pub mod sampler;
pub mod swg;

pub use dataset::{ClassId, Dataset};
pub use denoiser::{
    error_denoiser, noise_predictor, optimal_denoiser, posterior_weights, Conditioning, Denoiser,
    DenoiserKind, DenoiserSpec, NoiseLevelPair,
};
pub use error::{Error, Result};
pub use guidance::{
    guided_predict, guided_target, interpolate_rules, optimal_weight, DenoiserHandle, GuidanceRule,
    GuidanceTerm, GuidanceWeight, IntervalOrigin, StepInterval,
};
pub use metrics::{
    endpoint_error, endpoint_error_stats, rms_contrast, saturation, stepwise_predictor_error,
    EndpointMode, EndpointStats, ImageStats, RgbImage, TrajectoryReport,
};
pub use sampler::{
    euler_sample, euler_sample_with, sample_ensemble, ClassPolicy, NoiseSchedule, SamplerOptions,
    ScheduleKind, Trajectory, TrajectoryRecord,
};
pub use swg::{
    crop_restricted_denoiser, is_coherent, mswg_rule, plan_windows, plan_windows_rect,
    swg_negative, window_votes, GridShape, OverlapField, Rect, SlidingWindowDenoiser,
    WindowDenoiser, WindowPlan,
};
