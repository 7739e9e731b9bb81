//! Pressure forward model: Gaussian footprints under contacting foot joints.

use ndarray::{Array3, ArrayView2, ArrayViewMut2, Axis};

use crate::error::{Error, Result};
use crate::motion::skeleton::CONTACT_JOINTS;
use crate::motion::JointSequence;
use crate::pressure::{Calibration, PressureSequence};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    pub sigma_px: f64,
    /// Temperature of the height softmax that splits the load between feet, meters.
    pub support_temperature: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            sigma_px: 2.0,
            support_temperature: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub pressure: PressureSequence<f64>,
    /// Footprints that were partly or fully cut by the mat border.
    pub clipped: usize,
}

/// Load share of each contact joint for one frame; zero for joints not in contact.
pub fn support_weights(heights: [f64; 4], contact: [bool; 4], temperature: f64) -> [f64; 4] {
    let lowest = (0..4)
        .filter(|&k| contact[k])
        .map(|k| heights[k])
        .fold(f64::INFINITY, f64::min);
    let mut w = [0.0; 4];
    if !lowest.is_finite() {
        return w;
    }
    let mut total = 0.0;
    for k in 0..4 {
        if contact[k] {
            w[k] = (-(heights[k] - lowest) / temperature).exp();
            total += w[k];
        }
    }
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Deposits a unit-mass footprint centered at pixel `(cx, cz)`. Returns true if any of it fell off the mat.
fn splat(map: &mut ArrayViewMut2<'_, f64>, cx: f64, cz: f64, mass: f64, sigma: f64) -> bool {
    let (h, w) = map.dim();
    let radius = (4.0 * sigma).ceil() as i64;
    let (ci, cj) = (cz.round() as i64, cx.round() as i64);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut kernel = Vec::with_capacity(((2 * radius + 1) * (2 * radius + 1)) as usize);
    let mut total = 0.0;
    for i in ci - radius..=ci + radius {
        for j in cj - radius..=cj + radius {
            let d2 = (i as f64 - cz).powi(2) + (j as f64 - cx).powi(2);
            let g = (-d2 * inv).exp();
            total += g;
            kernel.push((i, j, g));
        }
    }
    let mut clipped = false;
    for (i, j, g) in kernel {
        if i < 0 || j < 0 || i >= h as i64 || j >= w as i64 {
            clipped = true;
            continue;
        }
        map[[i as usize, j as usize]] += mass * g / total;
    }
    clipped
}

/// Renders one pressure map per frame from joint positions and the N×4 contact table.
pub fn render_pressure(
    joints: &JointSequence<f64>,
    contacts: ArrayView2<'_, f64>,
    mass_kg: f64,
    calib: &Calibration,
    height: usize,
    width: usize,
    params: &RenderParams,
) -> Result<RenderOutput> {
    let n = joints.frames();
    if contacts.dim() != (n, 4) {
        return Err(Error::Shape(format!("contacts {:?}, expected ({n}, 4)", contacts.dim())));
    }
    if !(mass_kg > 0.0) || height == 0 || width == 0 {
        return Err(Error::Invalid("mass and mat size must be positive".into()));
    }
    calib.validate()?;
    let force = mass_kg * GRAVITY;
    let mut maps = Array3::zeros((n, height, width));
    let mut clipped = 0;
    for f in 0..n {
        let mut heights = [0.0; 4];
        let mut on = [false; 4];
        for (k, &j) in CONTACT_JOINTS.iter().enumerate() {
            heights[k] = joints.get(f, j)[1];
            on[k] = contacts[[f, k]] > 0.5;
        }
        let w = support_weights(heights, on, params.support_temperature);
        let mut map = maps.index_axis_mut(Axis(0), f);
        for (k, &j) in CONTACT_JOINTS.iter().enumerate() {
            if w[k] == 0.0 {
                continue;
            }
            let p = joints.get(f, j);
            let (cx, cz) = calib.world_to_pixel(p[0], p[2]);
            if splat(&mut map, cx, cz, force * w[k], params.sigma_px) {
                clipped += 1;
            }
        }
    }
    if clipped > 0 {
        log::warn!("{clipped} footprints clipped at the mat border");
    }
    Ok(RenderOutput {
        pressure: PressureSequence::new(maps)?,
        clipped,
    })
}
