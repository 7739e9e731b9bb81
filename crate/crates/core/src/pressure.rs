//! Pressure maps, mat calibration, center of pressure and pressure-side encodings.

use ndarray::{Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::FPS;
use crate::scalar::Real;

/// `N x H x W` non-negative ground pressure maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureSequence<R: Real> {
    maps: Array3<R>,
}

impl<R: Real> PressureSequence<R> {
    pub fn new(maps: Array3<R>) -> Result<Self> {
        let (_, h, w) = maps.dim();
        if h == 0 || w == 0 {
            return Err(Error::Shape(format!("pressure map size {h}x{w}")));
        }
        if let Some(v) = maps.iter().find(|v| !v.is_finite() || **v < R::zero()) {
            return Err(Error::Invalid(format!("pressure entries must be finite and >= 0, found {v}")));
        }
        Ok(Self { maps })
    }

    pub fn frames(&self) -> usize {
        self.maps.dim().0
    }

    pub fn height(&self) -> usize {
        self.maps.dim().1
    }

    pub fn width(&self) -> usize {
        self.maps.dim().2
    }

    pub fn fps(&self) -> u32 {
        FPS
    }

    pub fn maps(&self) -> &Array3<R> {
        &self.maps
    }

    pub fn into_inner(self) -> Array3<R> {
        self.maps
    }

    pub fn frame(&self, n: usize) -> ArrayView2<'_, R> {
        self.maps.index_axis(Axis(0), n)
    }

    pub fn total_force(&self, n: usize) -> R {
        self.frame(n).iter().copied().sum()
    }

    pub fn scaled(&self, k: R) -> Self {
        Self {
            maps: self.maps.mapv(|v| v * k),
        }
    }

    pub fn cast<S: Real>(&self) -> PressureSequence<S> {
        PressureSequence {
            maps: self.maps.mapv(|v| S::lit(v.as_f64())),
        }
    }
}

/// Maps pixel coordinates to the motion frame: `world = pixel * scale + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Meters per pixel along (x, z).
    pub scale: [f64; 2],
    /// Motion-frame position of pixel (0, 0), meters.
    pub offset: [f64; 2],
}

impl Calibration {
    pub fn new(scale: [f64; 2], offset: [f64; 2]) -> Result<Self> {
        let c = Self { scale, offset };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale.iter().all(|s| *s > 0.0 && s.is_finite()) && self.offset.iter().all(|o| o.is_finite()) {
            Ok(())
        } else {
            Err(Error::Invalid(format!("bad calibration {self:?}")))
        }
    }

    /// Inverse of `cop_to_world` on the ground plane: (column, row) in pixels.
    pub fn world_to_pixel(&self, x: f64, z: f64) -> (f64, f64) {
        ((x - self.offset[0]) / self.scale[0], (z - self.offset[1]) / self.scale[1])
    }
}

/// Pressure-weighted mean pixel position `(x, z) = (column, row)`.
///
/// Returns `None` when the map carries no pressure (a no-contact frame).
pub fn pixel_cop<R: Real>(map: ArrayView2<'_, R>) -> Option<(R, R)> {
    let mut total = R::zero();
    let mut sx = R::zero();
    let mut sz = R::zero();
    for ((i, j), &p) in map.indexed_iter() {
        total = total + p;
        sx = sx + p * R::lit(j as f64);
        sz = sz + p * R::lit(i as f64);
    }
    if total > R::zero() {
        Some((sx / total, sz / total))
    } else {
        None
    }
}

pub fn cop_to_world<R: Real>(cop_px: (R, R), calib: &Calibration) -> [R; 3] {
    [
        cop_px.0 * R::lit(calib.scale[0]) + R::lit(calib.offset[0]),
        R::zero(),
        cop_px.1 * R::lit(calib.scale[1]) + R::lit(calib.offset[1]),
    ]
}

/// Frame-to-frame pressure change; the first frame has no predecessor and maps to zero.
pub fn temporal_diff<R: Real>(p: &PressureSequence<R>) -> Array3<R> {
    let maps = p.maps();
    let mut out = Array3::zeros(maps.dim());
    for n in 1..p.frames() {
        let cur = maps.index_axis(Axis(0), n);
        let prev = maps.index_axis(Axis(0), n - 1);
        let mut dst = out.index_axis_mut(Axis(0), n);
        ndarray::Zip::from(&mut dst).and(&cur).and(&prev).for_each(|d, &c, &q| *d = c - q);
    }
    out
}

/// Fixed sinusoidal codes over the mat grid, stored channel-first (`d_e x H x W`).
///
/// The first half of the channels encodes the column, the second half the row.
/// Within a half, channel `2k` is `sin((k+1) pi u)` and `2k+1` is `cos((k+1) pi u)`
/// for the coordinate normalized to `u` in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GridEncoding<R: Real> {
    codes: Array3<R>,
}

impl<R: Real> GridEncoding<R> {
    pub fn channels(&self) -> usize {
        self.codes.dim().0
    }

    pub fn height(&self) -> usize {
        self.codes.dim().1
    }

    pub fn width(&self) -> usize {
        self.codes.dim().2
    }

    pub fn codes(&self) -> &Array3<R> {
        &self.codes
    }

    /// Value at row `i`, column `j`, channel `c`.
    pub fn value(&self, i: usize, j: usize, c: usize) -> R {
        self.codes[[c, i, j]]
    }
}

pub fn grid_positional_encoding<R: Real>(height: usize, width: usize, channels: usize) -> Result<GridEncoding<R>> {
    if channels < 2 || channels % 2 != 0 {
        return Err(Error::Invalid(format!("grid encoding width must be even and >= 2, got {channels}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!("grid size {height}x{width}")));
    }
    let half = channels / 2;
    let norm = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    let code = |c: usize, u: f64| {
        let freq = (c / 2 + 1) as f64 * std::f64::consts::PI;
        if c % 2 == 0 {
            (freq * u).sin()
        } else {
            (freq * u).cos()
        }
    };
    let codes = Array3::from_shape_fn((channels, height, width), |(c, i, j)| {
        let v = if c < half { code(c, norm(j, width)) } else { code(c - half, norm(i, height)) };
        R::lit(v)
    });
    Ok(GridEncoding { codes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_pixel_cop() {
        let mut m = Array2::<f64>::zeros((6, 8));
        m[[3, 5]] = 2.5;
        assert_eq!(pixel_cop(m.view()), Some((5.0, 3.0)));
    }

    #[test]
    fn uniform_map_cop_is_center() {
        let m = Array2::<f64>::ones((4, 6));
        assert_eq!(pixel_cop(m.view()), Some((2.5, 1.5)));
    }

    #[test]
    fn two_point_cop() {
        let mut m = Array2::<f64>::zeros((3, 5));
        m[[0, 0]] = 1.0;
        m[[0, 4]] = 3.0;
        assert_eq!(pixel_cop(m.view()), Some((3.0, 0.0)));
    }

    #[test]
    fn empty_map_has_no_cop() {
        assert_eq!(pixel_cop(Array2::<f64>::zeros((3, 3)).view()), None);
    }

    #[test]
    fn calibration_examples() {
        let zero = Calibration::new([0.01, 0.01], [0.0, 0.0]).unwrap();
        assert_eq!(cop_to_world((0.0, 0.0), &zero), [0.0, 0.0, 0.0]);
        let c = Calibration::new([0.01, 0.01], [-1.0, -1.5]).unwrap();
        let w = cop_to_world((50.0f64, 100.0), &c);
        assert!((w[0] + 0.5).abs() < 1e-12 && w[1] == 0.0 && (w[2] + 0.5).abs() < 1e-12);
        let s = Calibration::new([2.0, 3.0], [0.0, 0.0]).unwrap();
        assert_eq!(cop_to_world((1.0, 1.0), &s), [2.0, 0.0, 3.0]);
        assert!(Calibration::new([0.0, 1.0], [0.0, 0.0]).is_err());
    }

    #[test]
    fn temporal_diff_cases() {
        let p = PressureSequence::new(Array3::<f64>::from_elem((4, 3, 3), 2.0)).unwrap();
        assert!(temporal_diff(&p).iter().all(|&v| v == 0.0));
        let one = PressureSequence::new(Array3::<f64>::from_elem((1, 2, 2), 1.0)).unwrap();
        assert_eq!(temporal_diff(&one), Array3::<f64>::zeros((1, 2, 2)));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let maps = Array3::from_shape_fn((5, 4, 3), |_| rng.gen_range(0.0f64..2.0));
        let p = PressureSequence::new(maps.clone()).unwrap();
        let d = temporal_diff(&p);
        for n in 0..5 {
            for i in 0..4 {
                for j in 0..3 {
                    let want = if n == 0 { 0.0 } else { maps[[n, i, j]] - maps[[n - 1, i, j]] };
                    assert_eq!(d[[n, i, j]], want);
                }
            }
        }
        // Cumulative sum from frame 0 reconstructs the sequence.
        let mut acc = maps.index_axis(Axis(0), 0).to_owned();
        for n in 1..5 {
            acc = acc + d.index_axis(Axis(0), n);
            for (a, b) in acc.iter().zip(maps.index_axis(Axis(0), n).iter()) {
                assert!((a - b).abs() < 1e-12f64);
            }
        }
    }

    #[test]
    fn negative_pressure_is_rejected() {
        let mut m = Array3::<f64>::zeros((1, 2, 2));
        m[[0, 1, 1]] = -0.1;
        assert!(PressureSequence::new(m).is_err());
    }

    #[test]
    fn grid_encoding_properties() {
        let a = grid_positional_encoding::<f64>(16, 24, 32).unwrap();
        let b = grid_positional_encoding::<f64>(16, 24, 32).unwrap();
        assert_eq!(a, b);
        assert!(a.codes().iter().all(|v| (-1.0..=1.0).contains(v)));
        for i in 0..16 {
            assert_eq!(a.value(i, 0, 0), 0.0);
        }
        assert!(grid_positional_encoding::<f64>(4, 4, 3).is_err());
        assert!(grid_positional_encoding::<f64>(4, 4, 0).is_err());
    }

    proptest! {
        #[test]
        fn cop_is_scale_invariant_and_inside_support(
            vals in proptest::collection::vec(0.0f64..5.0, 20),
            k in 0.1f64..50.0,
        ) {
            let m = Array2::from_shape_vec((4, 5), vals).unwrap();
            if let Some((x, z)) = pixel_cop(m.view()) {
                let (xs, zs) = pixel_cop(m.mapv(|v| v * k).view()).unwrap();
                prop_assert!((x - xs).abs() < 1e-9 && (z - zs).abs() < 1e-9);
                let pos: Vec<(usize, usize)> = m.indexed_iter().filter(|(_, v)| **v > 0.0).map(|(ij, _)| ij).collect();
                let (imin, imax) = (pos.iter().map(|p| p.0).min().unwrap(), pos.iter().map(|p| p.0).max().unwrap());
                let (jmin, jmax) = (pos.iter().map(|p| p.1).min().unwrap(), pos.iter().map(|p| p.1).max().unwrap());
                prop_assert!(x >= jmin as f64 - 1e-9 && x <= jmax as f64 + 1e-9);
                prop_assert!(z >= imin as f64 - 1e-9 && z <= imax as f64 + 1e-9);
            }
        }
    }
}
