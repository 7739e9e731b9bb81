//! 3x3 rotation helpers and the continuous 6D rotation codec.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major 3x3 matrix, `m[row][col]`.
pub type Mat3<R> = [[R; 3]; 3];
pub type Vec3<R> = [R; 3];

/// First two columns of a rotation matrix, stored column after column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation6D<R>(pub [R; 6]);

pub fn identity<R: Real>() -> Mat3<R> {
    let (o, z) = (R::one(), R::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn matmul<R: Real>(a: &Mat3<R>, b: &Mat3<R>) -> Mat3<R> {
    let mut out = [[R::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose<R: Real>(a: &Mat3<R>) -> Mat3<R> {
    let mut out = *a;
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[j][i];
        }
    }
    out
}

pub fn apply<R: Real>(a: &Mat3<R>, v: &Vec3<R>) -> Vec3<R> {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn rot_x<R: Real>(a: R) -> Mat3<R> {
    let (s, c) = a.sin_cos();
    let (o, z) = (R::one(), R::zero());
    [[o, z, z], [z, c, -s], [z, s, c]]
}

/// Rotation about the vertical axis; maps +Z towards +X for positive angles.
pub fn rot_y<R: Real>(a: R) -> Mat3<R> {
    let (s, c) = a.sin_cos();
    let (o, z) = (R::one(), R::zero());
    [[c, z, s], [z, o, z], [-s, z, c]]
}

pub fn rot_z<R: Real>(a: R) -> Mat3<R> {
    let (s, c) = a.sin_cos();
    let (o, z) = (R::one(), R::zero());
    [[c, -s, z], [s, c, z], [z, z, o]]
}

/// Rodrigues formula.
pub fn from_axis_angle<R: Real>(axis: Vec3<R>, angle: R) -> Mat3<R> {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if n == R::zero() {
        return identity();
    }
    let [x, y, z] = axis.map(|v| v / n);
    let (s, c) = angle.sin_cos();
    let t = R::one() - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Heading angle of a rotation: the yaw that best explains where its +Z axis points.
pub fn yaw_of<R: Real>(m: &Mat3<R>) -> R {
    m[0][2].atan2(m[2][2])
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle<R: Real>(a: R) -> R {
    let pi = R::lit(std::f64::consts::PI);
    let two_pi = pi + pi;
    let mut w = a % two_pi;
    if w > pi {
        w = w - two_pi;
    } else if w <= -pi {
        w = w + two_pi;
    }
    w
}

pub fn determinant<R: Real>(m: &Mat3<R>) -> R {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

impl<R: Real> Rotation6D<R> {
    pub fn identity() -> Self {
        Self::encode(&identity())
    }

    /// Takes the first two columns.
    pub fn encode(m: &Mat3<R>) -> Self {
        Self([m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]])
    }

    /// Gram-Schmidt on the two stored columns, cross product for the third.
    pub fn decode(&self) -> Result<Mat3<R>> {
        let d = &self.0;
        let a1 = [d[0], d[1], d[2]];
        let a2 = [d[3], d[4], d[5]];
        let eps = R::lit(1e-12);
        let n1 = norm(&a1);
        let n2 = norm(&a2);
        if !(n1 > eps) || !(n2 > eps) {
            return Err(Error::DegenerateRotation);
        }
        let b1 = a1.map(|v| v / n1);
        let proj = dot(&b1, &a2);
        let u2 = [a2[0] - proj * b1[0], a2[1] - proj * b1[1], a2[2] - proj * b1[2]];
        let nu = norm(&u2);
        // Relative test so that scaled inputs behave the same as unit ones.
        if !(nu > R::lit(1e-9) * n2) {
            return Err(Error::DegenerateRotation);
        }
        let b2 = u2.map(|v| v / nu);
        let b3 = cross(&b1, &b2);
        Ok([[b1[0], b2[0], b3[0]], [b1[1], b2[1], b3[1]], [b1[2], b2[2], b3[2]]])
    }
}

pub fn dot<R: Real>(a: &Vec3<R>, b: &Vec3<R>) -> R {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross<R: Real>(a: &Vec3<R>, b: &Vec3<R>) -> Vec3<R> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm<R: Real>(a: &Vec3<R>) -> R {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &Mat3<f64>, b: &Mat3<f64>, tol: f64) -> bool {
        (0..3).all(|i| (0..3).all(|j| (a[i][j] - b[i][j]).abs() < tol))
    }

    #[test]
    fn identity_encodes_to_unit_columns() {
        assert_eq!(Rotation6D::<f64>::identity().0, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn quarter_turn_round_trips() {
        let r = rot_z(std::f64::consts::FRAC_PI_2);
        let back = Rotation6D::encode(&r).decode().unwrap();
        assert!(close(&r, &back, 1e-6));
    }

    #[test]
    fn matches_hand_gram_schmidt() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let axis: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let r = from_axis_angle(axis, rng.gen_range(-3.0..3.0));
            // Perturb the stored columns so Gram-Schmidt has work to do.
            let mut six: [f64; 6] = Rotation6D::encode(&r).0;
            for v in six.iter_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
            let got = Rotation6D(six).decode().unwrap();

            // Oracle: textbook classical Gram-Schmidt written out component-wise.
            let (ax, ay, az) = (six[0], six[1], six[2]);
            let (bx, by, bz) = (six[3], six[4], six[5]);
            let l = (ax * ax + ay * ay + az * az).sqrt();
            let (e1x, e1y, e1z) = (ax / l, ay / l, az / l);
            let p = e1x * bx + e1y * by + e1z * bz;
            let (ux, uy, uz) = (bx - p * e1x, by - p * e1y, bz - p * e1z);
            let lu = (ux * ux + uy * uy + uz * uz).sqrt();
            let (e2x, e2y, e2z) = (ux / lu, uy / lu, uz / lu);
            let e3 = (e1y * e2z - e1z * e2y, e1z * e2x - e1x * e2z, e1x * e2y - e1y * e2x);
            let want = [[e1x, e2x, e3.0], [e1y, e2y, e3.1], [e1z, e2z, e3.2]];
            assert!(close(&got, &want, 1e-9));
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(Rotation6D([0.0f64; 6]).decode().is_err());
        assert!(Rotation6D([1.0f64, 0.0, 0.0, 2.0, 0.0, 0.0]).decode().is_err());
    }

    #[test]
    fn yaw_recovers_heading() {
        for a in [-3.0f64, -1.0, 0.0, 0.5, 3.1] {
            assert!((yaw_of(&rot_y(a)) - a).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn decode_is_orthonormal_and_idempotent(six in proptest::array::uniform6(-2.0f64..2.0)) {
            if let Ok(m) = Rotation6D(six).decode() {
                prop_assert!((determinant(&m) - 1.0).abs() < 1e-6);
                let mtm = matmul(&transpose(&m), &m);
                prop_assert!(close(&mtm, &identity(), 1e-6));
                let again = Rotation6D::encode(&m).decode().unwrap();
                prop_assert!(close(&again, &m, 1e-9));
            }
        }
    }
}
