use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::jacobian::det3;
use super::{warp, DisplacementField};
use crate::autodiff::Dims;
use crate::error::{Error, Result};
use crate::volume::Volume;

type Mat3 = [[f64; 3]; 3];

const CENTER: f64 = 0.5;
/// Smallest admissible worst-case determinant for drawn scales.
const MIN_DET: f64 = 1e-6;

fn matmul(a: Mat3, b: Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn matvec(a: Mat3, v: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| (0..3).map(|k| a[i][k] * v[k]).sum())
}

fn inverse(m: Mat3) -> Option<Mat3> {
    let det = det3(m);
    if det.abs() < 1e-300 {
        return None;
    }
    let c = |i: usize, j: usize| {
        let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
        let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
        m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
    };
    // adjugate is the transposed cofactor matrix
    Some(std::array::from_fn(|i| std::array::from_fn(|j| c(j, i) / det)))
}

fn rotation(angles: [f64; 3]) -> Mat3 {
    let [ax, ay, az] = angles;
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    matmul(rz, matmul(ry, rx))
}

/// `x -> F A (x - c) + c + t` on normalized coordinates, with `c` the domain
/// centre and `F` the diagonal flip matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub linear: Mat3,
    pub translation: [f64; 3],
    pub flips: [bool; 3],
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            linear: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            flips: [false; 3],
        }
    }

    pub fn flip(axis: usize) -> Self {
        let mut t = AffineTransform::identity();
        t.flips[axis] = true;
        t
    }

    pub fn new(linear: Mat3, translation: [f64; 3], flips: [bool; 3]) -> Result<Self> {
        if det3(linear).abs() < MIN_DET || linear.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "affine linear part is singular (det {})",
                det3(linear)
            )));
        }
        Ok(AffineTransform {
            linear,
            translation,
            flips,
        })
    }

    /// `F A`.
    pub fn matrix(&self) -> Mat3 {
        let mut m = self.linear;
        for (row, &f) in m.iter_mut().zip(&self.flips) {
            if f {
                row.iter_mut().for_each(|v| *v = -*v);
            }
        }
        m
    }

    pub fn det(&self) -> f64 {
        det3(self.matrix())
    }

    pub fn is_identity(&self) -> bool {
        *self == AffineTransform::identity()
    }

    pub fn apply_point(&self, x: [f64; 3]) -> [f64; 3] {
        let y = matvec(self.matrix(), x.map(|v| v - CENTER));
        std::array::from_fn(|a| y[a] + CENTER + self.translation[a])
    }

    pub fn inverse_point(&self, y: [f64; 3]) -> [f64; 3] {
        let inv = inverse(self.matrix()).expect("linear part validated at construction");
        let x = matvec(inv, std::array::from_fn(|a| y[a] - CENTER - self.translation[a]));
        x.map(|v| v + CENTER)
    }

    /// Pull-back field: `u(y) = T^-1(y) - y`, so warping by it applies `T`.
    pub fn inverse_field(&self, dims: Dims) -> Result<DisplacementField> {
        DisplacementField::from_fn(dims, |y| {
            let x = self.inverse_point(y);
            std::array::from_fn(|a| x[a] - y[a])
        })
    }
}

/// Draws rotations (degrees), per-axis log-scales and translations uniformly
/// within `±bound`, and a flip per axis with probability `flip_prob`.
pub fn random_affine(
    seed: u64,
    max_rotation_deg: f64,
    max_scale_dev: f64,
    max_translation: f64,
    flip_prob: f64,
) -> Result<AffineTransform> {
    for (name, b) in [
        ("max_rotation_deg", max_rotation_deg),
        ("max_scale_dev", max_scale_dev),
        ("max_translation", max_translation),
    ] {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::invalid(format!("{name} must be a finite non-negative bound, got {b}")));
        }
    }
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::invalid(format!("flip_prob must lie in [0, 1], got {flip_prob}")));
    }
    let worst = (-3.0 * max_scale_dev).exp();
    if worst < MIN_DET {
        return Err(Error::invalid(format!(
            "max_scale_dev {max_scale_dev} admits determinants down to {worst:e}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |b: f64| rng.random_range(-1.0..=1.0) * b;
    let angles = [0; 3].map(|_| draw(max_rotation_deg.to_radians()));
    let log_scales = [0; 3].map(|_| draw(max_scale_dev));
    let translation = [0; 3].map(|_| draw(max_translation));
    let flips = [0; 3].map(|_| rng.random_bool(flip_prob));

    let mut linear = rotation(angles);
    for row in linear.iter_mut() {
        for (v, s) in row.iter_mut().zip(log_scales) {
            *v *= s.exp();
        }
    }
    AffineTransform::new(linear, translation, flips)
}

/// `out(y) = v(T^-1(y))`.
pub fn apply_affine(v: &Volume, t: &AffineTransform) -> Result<Volume> {
    warp(v, &t.inverse_field(v.dims())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_bounds_give_identity() {
        let t = random_affine(7, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert!(t.is_identity(), "{t:?}");
    }

    #[test]
    fn inverse_point_undoes_apply() {
        let t = random_affine(3, 20.0, 0.2, 0.1, 0.5).unwrap();
        let x = [0.2, 0.7, 0.4];
        let y = t.inverse_point(t.apply_point(x));
        for a in 0..3 {
            assert!((x[a] - y[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_scale_bound_is_rejected() {
        assert!(random_affine(1, 0.0, 10.0, 0.0, 0.0).is_err());
        assert!(random_affine(1, -1.0, 0.0, 0.0, 0.0).is_err());
    }
}
