//! Synthetic motion/pressure/caption world used in place of captured data.

mod body;
pub mod dataset;
pub mod generate;
pub mod render;

pub use dataset::{augment_record, build_dataset, generate_dataset, make_record, place_on_mat, split_sizes, Dataset, DatasetSummary};
pub use generate::{generate_motion, root_displacement, GeneratedMotion, MotionKind, MotionRecipe, CAPTION_LEVELS, MAX_FRAMES, MIN_FRAMES};
pub use render::{render_pressure, support_weights, RenderOutput, RenderParams, GRAVITY};

use crate::motion::{JointSequence, PoseSequence};
use crate::pressure::{Calibration, PressureSequence};

/// One (text, pressure, motion) triple as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub name: String,
    pub kind: Option<MotionKind>,
    pub pose: PoseSequence<f32>,
    pub joints: JointSequence<f32>,
    pub pressure: PressureSequence<f32>,
    pub calib: Calibration,
    /// Most detailed first.
    pub captions: [String; CAPTION_LEVELS],
    pub mass_kg: f64,
    pub height_m: f64,
}

impl SequenceRecord {
    pub fn frames(&self) -> usize {
        self.pose.frames()
    }
}
