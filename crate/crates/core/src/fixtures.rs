//! Small configurations and in-memory datasets for tests, the selftest and quick runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DataConfig, ModelConfig, RunConfig};
use crate::data::{prepare, Prepared};
use crate::error::Result;
use crate::synth::{generate_motion, make_record, MotionKind, MotionRecipe, SequenceRecord};

/// Millisecond-scale model on a 16 x 16 mat.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data = DataConfig {
        sequences: 8,
        min_frames: 40,
        max_frames: 48,
        mat_height: 16,
        mat_width: 16,
        meters_per_pixel: 0.16,
        footprint_sigma_px: 0.7,
        ..DataConfig::default()
    };
    cfg.model = ModelConfig {
        latent_dim: 16,
        layers: 2,
        heads: 2,
        ff_dim: 32,
        text_dim: 16,
        max_len: 64,
        diffusion_steps: 20,
        grid_channels: 4,
        shift_dim: 256,
        shift_channels: 3,
        shift_pool: 2,
        traj_channels: 4,
        traj_hidden: 16,
        traj_pool: 1,
    };
    cfg.training.batch_size = 4;
    cfg.training.traj_batch_size = 4;
    cfg.training.log_every = 0;
    cfg.sampling.batch_size = 4;
    cfg.eval.evaluator_dim = 16;
    cfg.eval.evaluator_batch_size = 8;
    cfg
}

/// Records generated directly from recipes, cycling through `kinds`.
pub fn records(cfg: &DataConfig, kinds: &[MotionKind], n: usize, seed: u64) -> Result<Vec<SequenceRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let kind = kinds[i % kinds.len()];
            let s = seed.wrapping_mul(1000).wrapping_add(i as u64);
            let r = MotionRecipe::random_in(kind, s, cfg.min_frames, cfg.max_frames);
            let m = generate_motion(&r)?;
            Ok(make_record(format!("{i:05}_{kind}"), &r, &m.pose, m.captions, cfg, &mut rng)?.0)
        })
        .collect()
}

pub fn prepared(cfg: &DataConfig, kinds: &[MotionKind], n: usize, seed: u64) -> Result<Vec<Prepared>> {
    records(cfg, kinds, n, seed)?.iter().map(prepare).collect()
}
