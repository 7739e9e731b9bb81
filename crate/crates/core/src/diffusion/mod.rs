//! Noise schedule, text encoding, the denoising backbone and the guided sampler.

pub mod denoiser;
pub mod sampler;
pub mod schedule;
pub mod text;

pub use denoiser::{text_batch, Denoiser, DenoiserCore, X0Model};
pub use sampler::{gaussian, guided_x0, sample_cfg, sample_single_step};
pub use schedule::{make_schedule, NoiseSchedule};
pub use text::{HashTextEncoder, TextEmbedding, TextEncoder, TEXT_DIM};
