//! Procedural motions for the six activity kinds, with templated captions.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::body::{ankle_for_toe, forward_kinematics, heel_raise_pitch, solve_leg, BodyFrame, FootTarget};
use crate::error::{Error, Result};
use crate::motion::rotation::{apply, rot_x, rot_y, rot_z, Mat3, Vec3};
use crate::motion::skeleton::{self as sk, Skeleton, JOINT_COUNT};
use crate::motion::{encode_motion, recover_global_joints, JointSequence, PoseSequence, FPS};

pub const MIN_FRAMES: usize = 40;
pub const MAX_FRAMES: usize = 160;
pub const CAPTION_LEVELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Stand,
    Sway,
    Walk,
    Turn,
    Jump,
    Squat,
}

impl MotionKind {
    pub const ALL: [MotionKind; 6] = [Self::Stand, Self::Sway, Self::Walk, Self::Turn, Self::Jump, Self::Squat];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stand => "stand",
            Self::Sway => "sway",
            Self::Walk => "walk",
            Self::Turn => "turn",
            Self::Jump => "jump",
            Self::Squat => "squat",
        }
    }
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown motion kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionRecipe {
    pub kind: MotionKind,
    pub frames: usize,
    pub seed: u64,
    pub mass_kg: f64,
    pub scale: f64,
}

impl MotionRecipe {
    pub fn new(kind: MotionKind, frames: usize, seed: u64) -> Self {
        Self {
            kind,
            frames,
            seed,
            mass_kg: 65.0,
            scale: 1.0,
        }
    }

    /// Draws kind-independent subject parameters and a duration from `seed`.
    pub fn random(kind: MotionKind, seed: u64) -> Self {
        Self::random_in(kind, seed, MIN_FRAMES, MAX_FRAMES)
    }

    /// Like `random` with the duration drawn from `min_frames..=max_frames`.
    pub fn random_in(kind: MotionKind, seed: u64, min_frames: usize, max_frames: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        Self {
            kind,
            frames: rng.gen_range(min_frames..=max_frames.max(min_frames)),
            seed,
            mass_kg: rng.gen_range(45.0..100.0),
            scale: rng.gen_range(0.92..1.08),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_FRAMES..=MAX_FRAMES).contains(&self.frames) {
            return Err(Error::OutOfRange(format!("duration {} frames outside {MIN_FRAMES}..={MAX_FRAMES}", self.frames)));
        }
        if !(self.mass_kg > 0.0) || !(self.scale > 0.0) {
            return Err(Error::Invalid("mass and scale must be positive".into()));
        }
        Ok(())
    }

    pub fn subject_height(&self) -> f64 {
        1.70 * self.scale
    }
}

/// Output of `generate_motion`.
#[derive(Debug, Clone)]
pub struct GeneratedMotion {
    pub pose: PoseSequence<f64>,
    /// Joints recovered from `pose`.
    pub joints: JointSequence<f64>,
    /// Global joint orientations the pose was encoded from.
    pub rotations: Vec<[Mat3<f64>; JOINT_COUNT]>,
    pub captions: [String; CAPTION_LEVELS],
    /// Commanded root ground speed per frame, m/s (zero for in-place kinds).
    pub commanded_speed: Vec<f64>,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn lerp3(a: Vec3<f64>, b: Vec3<f64>, s: f64) -> Vec3<f64> {
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s]
}

/// Lateral stance offset of a foot in the body frame.
fn lateral(yaw: f64, side: f64) -> Vec3<f64> {
    apply(&rot_y(yaw), &[side, 0.0, 0.0])
}

/// Planar pose of the pelvis over time.
trait PelvisPath {
    fn ground(&self, t: f64) -> (Vec3<f64>, f64);
}

struct StepPlan {
    /// Per foot: (lift time, land time, lift target, land target, yaw at lift, yaw at land).
    swings: [Vec<(f64, f64, Vec3<f64>, Vec3<f64>, f64, f64)>; 2],
    start: [(Vec3<f64>, f64); 2],
    swing_height: f64,
}

impl StepPlan {
    /// Alternating steps: each foot lands where the pelvis will be at the middle of its next stance.
    fn plan(path: &dyn PelvisPath, duration: f64, first_lift: f64, step_period: f64, width: f64, ankle_h: f64, swing_height: f64) -> Self {
        let swing = 0.8 * step_period;
        let stance = 2.0 * step_period - swing;
        let (p0, y0) = path.ground(0.0);
        let mut start = [(p0, y0); 2];
        let sides = [width, -width];
        for (f, side) in sides.iter().enumerate() {
            let off = lateral(y0, *side);
            start[f] = ([p0[0] + off[0], ankle_h, p0[2] + off[2]], y0);
        }
        let mut swings: [Vec<_>; 2] = [Vec::new(), Vec::new()];
        let mut current = start;
        let mut k = 0usize;
        loop {
            let foot = k % 2;
            let lift = first_lift + k as f64 * step_period;
            if lift + swing > duration {
                break;
            }
            let land = lift + swing;
            let (pm, ym) = path.ground(land + 0.5 * stance);
            let off = lateral(ym, sides[foot]);
            let target = [pm[0] + off[0], ankle_h, pm[2] + off[2]];
            let (from, from_yaw) = current[foot];
            let moved = ((target[0] - from[0]).powi(2) + (target[2] - from[2]).powi(2)).sqrt();
            if moved > 0.01 || (ym - from_yaw).abs() > 0.05 {
                swings[foot].push((lift, land, from, target, from_yaw, ym));
                current[foot] = (target, ym);
            }
            k += 1;
        }
        Self { swings, start, swing_height }
    }

    /// Ankle target and foot yaw of `foot` at time `t`.
    fn foot(&self, foot: usize, t: f64) -> (Vec3<f64>, f64) {
        let (mut pos, mut yaw) = self.start[foot];
        for &(lift, land, from, to, y_from, y_to) in &self.swings[foot] {
            if t >= land {
                pos = to;
                yaw = y_to;
            } else if t > lift {
                let phase = (t - lift) / (land - lift);
                let s = (1.0 - (PI * phase).cos()) / 2.0;
                let mut p = lerp3(from, to, s);
                p[1] += self.swing_height * (PI * phase).sin().sqrt();
                return (p, y_from + (y_to - y_from) * s);
            } else {
                break;
            }
        }
        (pos, yaw)
    }
}

struct Straight {
    origin_yaw: f64,
    speed: f64,
    ramp_in: (f64, f64),
    ramp_out: (f64, f64),
}

impl Straight {
    fn speed_at(&self, t: f64) -> f64 {
        let up = smoothstep((t - self.ramp_in.0) / (self.ramp_in.1 - self.ramp_in.0));
        let down = 1.0 - smoothstep((t - self.ramp_out.0) / (self.ramp_out.1 - self.ramp_out.0));
        self.speed * up * down
    }

    /// Distance covered by time `t`, integrated on a fine fixed grid.
    fn distance(&self, t: f64) -> f64 {
        let steps = ((t / 1e-3).ceil() as usize).max(1);
        let h = t / steps as f64;
        (0..steps).map(|i| 0.5 * (self.speed_at(i as f64 * h) + self.speed_at((i + 1) as f64 * h)) * h).sum()
    }
}

impl PelvisPath for Straight {
    fn ground(&self, t: f64) -> (Vec3<f64>, f64) {
        let d = self.distance(t);
        let dir = apply(&rot_y(self.origin_yaw), &[0.0, 0.0, 1.0]);
        ([dir[0] * d, 0.0, dir[2] * d], self.origin_yaw)
    }
}

struct InPlaceTurn {
    yaw0: f64,
    delta: f64,
    window: (f64, f64),
}

impl PelvisPath for InPlaceTurn {
    fn ground(&self, t: f64) -> (Vec3<f64>, f64) {
        let s = smoothstep((t - self.window.0) / (self.window.1 - self.window.0));
        ([0.0, 0.0, 0.0], self.yaw0 + self.delta * s)
    }
}

fn set_arms(frame: &mut BodyFrame, swing_left: f64, swing_right: f64, spread: f64) {
    frame.local[sk::L_SHOULDER] = rot_z(spread);
    frame.local[sk::R_SHOULDER] = rot_z(-spread);
    frame.local[sk::L_ELBOW] = rot_x(swing_left);
    frame.local[sk::R_ELBOW] = rot_x(swing_right);
}

fn word_speed(v: f64) -> &'static str {
    if v < 0.45 {
        "slowly"
    } else if v < 0.75 {
        "at a relaxed pace"
    } else {
        "briskly"
    }
}

fn turn_side(delta: f64) -> &'static str {
    if delta > 0.0 {
        "left"
    } else {
        "right"
    }
}

/// Generates a deterministic motion for the recipe.
pub fn generate_motion(recipe: &MotionRecipe) -> Result<GeneratedMotion> {
    recipe.validate()?;
    let skel = Skeleton::<f64>::scaled(recipe.scale);
    let s = recipe.scale;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let n = recipe.frames;
    let dt = 1.0 / FPS as f64;
    let duration = (n - 1) as f64 * dt;
    let secs = n as f64 * dt;
    let yaw0: f64 = rng.gen_range(-PI..PI);
    let ankle_h = -skel.rest_offset(sk::L_FOOT)[1];
    let stand_y = skel.standing_pelvis_height() - 0.01 * s;
    let width = skel.rest_offset(sk::L_HIP)[0];
    let arm_phase: f64 = rng.gen_range(0.0..2.0 * PI);

    let mut frames: Vec<BodyFrame> = Vec::with_capacity(n);
    let mut commanded = vec![0.0; n];
    let captions: [String; CAPTION_LEVELS];

    match recipe.kind {
        MotionKind::Stand => {
            let breath = rng.gen_range(0.02..0.06);
            let lean = rng.gen_range(-0.05..0.05);
            for f in 0..n {
                let t = f as f64 * dt;
                let mut fr = BodyFrame::new([0.0, stand_y, 0.0], yaw0);
                fr.local[sk::SPINE1] = rot_x(lean);
                let a = breath * (2.0 * PI * 0.3 * t + arm_phase).sin();
                set_arms(&mut fr, a, -a, 0.12);
                for (left, side) in [(true, width), (false, -width)] {
                    let off = lateral(yaw0, side);
                    let target = FootTarget { ankle: [off[0], ankle_h, off[2]], yaw: yaw0, pitch: 0.0 };
                    solve_leg(&skel, &mut fr, left, target);
                }
                frames.push(fr);
            }
            captions = [
                format!("A person stands still on both feet for about {secs:.1} seconds with arms relaxed at the sides, barely moving."),
                format!("A person stands still for about {secs:.0} seconds."),
                "A person stands still with arms at the sides.".into(),
                "A person stands in place.".into(),
                "The person is standing.".into(),
            ];
        }
        MotionKind::Sway => {
            let amp = rng.gen_range(0.04..0.08) * s;
            let period = rng.gen_range(1.8..3.0);
            let raise = rng.gen_range(0.02..0.04) * s;
            let stance = width * 1.4;
            let phase0: f64 = rng.gen_range(0.0..2.0 * PI);
            for f in 0..n {
                let t = f as f64 * dt;
                // Fade in from a centered stance so frame 0 starts at the origin.
                let sway = smoothstep(t / 0.6) * (2.0 * PI * t / period + phase0).sin();
                let shift = lateral(yaw0, amp * sway);
                let mut fr = BodyFrame::new([shift[0], stand_y - 0.01 * s, shift[2]], yaw0);
                fr.local[sk::SPINE1] = rot_z(-0.15 * sway);
                set_arms(&mut fr, 0.05 * sway, -0.05 * sway, 0.12 + 0.1 * sway.abs());
                for (left, side) in [(true, stance), (false, -stance)] {
                    let off = lateral(yaw0, side);
                    let toe_local = apply(&rot_y(yaw0), &skel.rest_offset(sk::L_FOOT));
                    let toe = [off[0] + toe_local[0], 0.0, off[2] + toe_local[2]];
                    // The foot on the side away from the pelvis shift unloads and lifts its heel.
                    let unload = if left { (-sway).max(0.0) } else { sway.max(0.0) };
                    let pitch = heel_raise_pitch(&skel, raise * unload);
                    let ankle = ankle_for_toe(&skel, toe, yaw0, pitch);
                    solve_leg(&skel, &mut fr, left, FootTarget { ankle, yaw: yaw0, pitch });
                }
                frames.push(fr);
            }
            captions = [
                format!("A person stands with feet apart and sways side to side, shifting weight between the legs about every {period:.1} seconds."),
                "A person sways side to side, shifting weight from one leg to the other.".into(),
                "A person shifts weight from side to side.".into(),
                "A person sways in place.".into(),
                "The person is swaying.".into(),
            ];
        }
        MotionKind::Walk => {
            let budget = rng.gen_range(1.1..1.8);
            let ramp_in = (0.15, 0.65);
            let ramp_out = (duration - 0.6, duration - 0.1);
            let cruise_time = (ramp_out.0 + ramp_out.1) / 2.0 - (ramp_in.0 + ramp_in.1) / 2.0;
            let speed = (budget / cruise_time).clamp(0.2, 1.0);
            let path = Straight { origin_yaw: yaw0, speed, ramp_in, ramp_out };
            let step_period = 1.0 / (1.6 + 0.6 * speed);
            let plan = StepPlan::plan(&path, duration, 0.1, step_period, width, ankle_h, 0.15 * s);
            let drop = 0.02 * s + 0.06 * speed * s;
            for (f, c) in commanded.iter_mut().enumerate() {
                *c = path.speed_at(f as f64 * dt);
            }
            for f in 0..n {
                let t = f as f64 * dt;
                let (p, yaw) = path.ground(t);
                let moving = path.speed_at(t) / speed;
                let bob = 0.01 * s * moving * (2.0 * PI * t / step_period).cos();
                let mut fr = BodyFrame::new([p[0], stand_y - drop * moving + bob, p[2]], yaw);
                let swing = 0.35 * moving * (PI * t / step_period).sin();
                set_arms(&mut fr, swing, -swing, 0.1);
                fr.local[sk::SPINE1] = rot_x(0.05 * moving);
                for foot in 0..2 {
                    let (ankle, fyaw) = plan.foot(foot, t);
                    solve_leg(&skel, &mut fr, foot == 0, FootTarget { ankle, yaw: fyaw, pitch: 0.0 });
                }
                frames.push(fr);
            }
            let dist = path.distance(duration);
            let pace = word_speed(speed);
            captions = [
                format!("A person walks forward {pace} in a straight line for about {secs:.1} seconds, covering roughly {dist:.1} meters while swinging both arms."),
                format!("A person walks forward {pace} for about {secs:.0} seconds."),
                format!("A person walks forward {pace}."),
                "A person walks forward.".into(),
                "The person is walking.".into(),
            ];
        }
        MotionKind::Turn => {
            let mag = rng.gen_range(PI / 2.0..PI);
            let delta = if rng.gen_bool(0.5) { mag } else { -mag };
            let path = InPlaceTurn { yaw0, delta, window: (0.3, (duration - 0.4).max(0.8)) };
            let step_period = rng.gen_range(0.5..0.7);
            let plan = StepPlan::plan(&path, duration, 0.2, step_period, width, ankle_h, 0.12 * s);
            for f in 0..n {
                let t = f as f64 * dt;
                let (p, yaw) = path.ground(t);
                let mut fr = BodyFrame::new([p[0], stand_y - 0.01 * s, p[2]], yaw);
                set_arms(&mut fr, 0.05, 0.05, 0.15);
                for foot in 0..2 {
                    let (ankle, fyaw) = plan.foot(foot, t);
                    solve_leg(&skel, &mut fr, foot == 0, FootTarget { ankle, yaw: fyaw, pitch: 0.0 });
                }
                frames.push(fr);
            }
            let deg = delta.abs().to_degrees();
            let side = turn_side(delta);
            captions = [
                format!("A person turns in place to the {side} by about {deg:.0} degrees with small steps, then stands still."),
                format!("A person turns around to the {side} by about {deg:.0} degrees."),
                format!("A person turns to the {side} in place."),
                "A person turns around.".into(),
                "The person is turning.".into(),
            ];
        }
        MotionKind::Jump => {
            let flight = rng.gen_range(0.28..0.4);
            let crouch = rng.gen_range(0.08..0.14) * s;
            let hop = if rng.gen_bool(0.5) { rng.gen_range(0.1..0.3) } else { 0.0 };
            let cycle = 0.35 + 0.15 + flight + 0.3 + 0.3;
            let jumps = (((duration - 0.3) / cycle).floor() as usize).clamp(1, 3);
            let g = 9.81;
            let v0 = g * flight / 2.0;
            let dir = apply(&rot_y(yaw0), &[0.0, 0.0, 1.0]);
            // (pelvis drop below standing, forward progress, foot lift) at time t.
            let state = |t: f64| -> (f64, f64, f64) {
                let mut done = 0.0;
                let mut tt = t - 0.3;
                for _ in 0..jumps {
                    if tt < 0.0 {
                        return (0.0, done, 0.0);
                    }
                    if tt < 0.35 {
                        return (crouch * smoothstep(tt / 0.35), done, 0.0);
                    }
                    tt -= 0.35;
                    if tt < 0.15 {
                        return (crouch * (1.0 - smoothstep(tt / 0.15)), done, 0.0);
                    }
                    tt -= 0.15;
                    if tt < flight {
                        let rise = v0 * tt - 0.5 * g * tt * tt;
                        return (-rise, done + hop * tt / flight, rise);
                    }
                    tt -= flight;
                    done += hop;
                    if tt < 0.3 {
                        let k = (PI * tt / 0.3).sin();
                        return (crouch * k, done, 0.0);
                    }
                    tt -= 0.3;
                    if tt < 0.3 {
                        return (0.0, done, 0.0);
                    }
                    tt -= 0.3;
                }
                (0.0, done, 0.0)
            };
            for f in 0..n {
                let t = f as f64 * dt;
                let (dropy, fwd, lift) = state(t);
                let base = [dir[0] * fwd, 0.0, dir[2] * fwd];
                let mut fr = BodyFrame::new([base[0], stand_y - dropy, base[2]], yaw0);
                let arm = -1.2 * (dropy.max(0.0) / crouch.max(1e-6)).min(1.0) + 0.4 * smoothstep(lift / 0.1);
                set_arms(&mut fr, arm, arm, 0.15);
                fr.local[sk::SPINE1] = rot_x(0.6 * dropy.max(0.0));
                for (left, side) in [(true, width), (false, -width)] {
                    let off = lateral(yaw0, side);
                    let ankle = [base[0] + off[0], ankle_h + lift, base[2] + off[2]];
                    solve_leg(&skel, &mut fr, left, FootTarget { ankle, yaw: yaw0, pitch: 0.0 });
                }
                frames.push(fr);
            }
            let times = if jumps == 1 { "once".to_string() } else { format!("{jumps} times") };
            let how = if hop > 0.0 { "forward" } else { "straight up" };
            captions = [
                format!("A person bends the knees and jumps {how} {times} with both feet, swinging the arms, then lands softly."),
                format!("A person jumps {how} {times} with both feet."),
                format!("A person jumps {how}."),
                "A person jumps.".into(),
                "The person is jumping.".into(),
            ];
        }
        MotionKind::Squat => {
            let depth = rng.gen_range(0.15..0.33) * s;
            let reps = rng.gen_range(1..=3).min(((duration - 0.4) / 1.2).floor().max(1.0) as usize);
            let period = (duration - 0.4) / reps as f64;
            let stance = width * 1.3;
            for f in 0..n {
                let t = f as f64 * dt;
                let tt = (t - 0.2).clamp(0.0, period * reps as f64);
                let k = (1.0 - (2.0 * PI * tt / period).cos()) / 2.0;
                let mut fr = BodyFrame::new([0.0, stand_y - depth * k, 0.0], yaw0);
                fr.local[sk::SPINE1] = rot_x(0.9 * depth * k / s);
                set_arms(&mut fr, -1.3 * k, -1.3 * k, 0.1);
                for (left, side) in [(true, stance), (false, -stance)] {
                    let off = lateral(yaw0, side);
                    let target = FootTarget { ankle: [off[0], ankle_h, off[2]], yaw: yaw0, pitch: 0.0 };
                    solve_leg(&skel, &mut fr, left, target);
                }
                frames.push(fr);
            }
            let times = if reps == 1 { "once".to_string() } else { format!("{reps} times") };
            captions = [
                format!("A person squats down {times}, bending the knees deeply with arms stretched forward, and stands back up."),
                format!("A person does a squat {times} with arms forward."),
                "A person squats down and stands up.".into(),
                "A person squats.".into(),
                "The person is squatting.".into(),
            ];
        }
    }

    let mut positions = Array3::zeros((n, JOINT_COUNT, 3));
    let mut rotations = Vec::with_capacity(n);
    for (f, fr) in frames.iter().enumerate() {
        let (p, r) = forward_kinematics(&skel, fr);
        for j in 0..JOINT_COUNT {
            for k in 0..3 {
                positions[[f, j, k]] = p[j][k];
            }
        }
        rotations.push(r);
    }
    let fk_joints = JointSequence::new(positions)?;
    let pose = encode_motion(&fk_joints, &rotations, &skel)?;
    let joints = recover_global_joints(&pose, &skel)?;
    Ok(GeneratedMotion {
        pose,
        joints,
        rotations,
        captions,
        commanded_speed: commanded,
    })
}

/// Root displacement from frame 0 to the last frame, meters.
pub fn root_displacement(joints: &JointSequence<f64>) -> f64 {
    let a = joints.get(0, 0);
    let b = joints.get(joints.frames() - 1, 0);
    ((b[0] - a[0]).powi(2) + (b[2] - a[2]).powi(2)).sqrt()
}
