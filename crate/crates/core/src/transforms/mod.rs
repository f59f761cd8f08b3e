//! Displacement fields on the unit cube and the operations that act on them.
//!
//! A field stores `u` at grid points `i / (n - 1)` per axis and defines the map
//! `phi(x) = x + u(x)`, with `u` interpolated trilinearly (coordinates clamped
//! to `[0, 1]`). Since displacements are in normalized units, fields on
//! different grids compose without rescaling.
//!
//! Each operation comes in two forms: a plain function over values, and a
//! `tape_*` function that records the same computation for differentiation.

mod affine;
mod jacobian;

use crate::autodiff::{kernels, Dims, Tape, Tensor3, Var};
use crate::error::{Error, Result};
use crate::volume::Volume;

pub use affine::{apply_affine, random_affine, AffineTransform};
pub use jacobian::{jacobian_det_map, percent_neg_jac, percent_neg_jac_on};

/// Normalized coordinates of every grid point, as a 3-channel tensor.
pub fn identity_grid(dims: Dims) -> Tensor3 {
    let step = |n: usize| if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    let s = [step(dims.nx), step(dims.ny), step(dims.nz)];
    Tensor3::from_fn(dims, 3, |x, y, z, c| [x, y, z][c] as f64 * s[c])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    u: Tensor3,
}

impl DisplacementField {
    pub fn new(u: Tensor3) -> Result<Self> {
        if u.channels() != 3 {
            return Err(Error::dims("displacement field", "3 channels", u.shape_string()));
        }
        Ok(DisplacementField { u })
    }

    pub fn identity(dims: Dims) -> Self {
        DisplacementField {
            u: Tensor3::zeros(dims, 3),
        }
    }

    pub fn constant(dims: Dims, t: [f64; 3]) -> Result<Self> {
        DisplacementField::new(Tensor3::new(
            dims,
            3,
            (0..3).flat_map(|c| std::iter::repeat_n(t[c], dims.voxels())).collect(),
        )?)
    }

    /// Field whose displacement at normalized grid point `p` is `f(p)`.
    pub fn from_fn(dims: Dims, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Self> {
        let grid = identity_grid(dims);
        let n = dims.voxels();
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            let p = [grid.data()[i], grid.data()[n + i], grid.data()[2 * n + i]];
            let d = f(p);
            for c in 0..3 {
                data[c * n + i] = d[c];
            }
        }
        DisplacementField::new(Tensor3::new(dims, 3, data)?)
    }

    pub fn dims(&self) -> Dims {
        self.u.dims()
    }

    pub fn u(&self) -> &Tensor3 {
        &self.u
    }

    pub fn into_u(self) -> Tensor3 {
        self.u
    }

    pub fn is_identity(&self) -> bool {
        self.u.data().iter().all(|&v| v == 0.0)
    }

    /// `u(p)` by trilinear interpolation, `p` clamped to the unit cube.
    pub fn displacement_at(&self, p: [f64; 3]) -> [f64; 3] {
        let coords = Tensor3::from_raw(Dims::SCALAR, 3, p.to_vec());
        let d = kernels::trilinear_forward(&self.u, &coords);
        [d[0], d[1], d[2]]
    }

    /// `phi(p) = p + u(p)`.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let d = self.displacement_at(p);
        [p[0] + d[0], p[1] + d[1], p[2] + d[2]]
    }
}

/// `u_out = u2 + u1(id + u2)` on `u2`'s grid.
pub fn tape_compose(tape: &mut Tape, u1: Var, u2: Var) -> Result<Var> {
    let id = tape.constant(identity_grid(tape.dims(u2)));
    let coords = tape.add(id, u2)?;
    let sampled = tape.trilinear_sample(u1, coords)?;
    tape.add(u2, sampled)
}

/// Field `u` evaluated at the grid points of `dims`; a no-op when dims already match.
pub fn tape_resample(tape: &mut Tape, u: Var, dims: Dims) -> Result<Var> {
    if tape.dims(u) == dims {
        return Ok(u);
    }
    let id = tape.constant(identity_grid(dims));
    tape.trilinear_sample(u, id)
}

/// `image(id + u)` on the image grid, resampling `u` to it first if needed.
pub fn tape_warp(tape: &mut Tape, image: Var, u: Var) -> Result<Var> {
    let dims = tape.dims(image);
    let u = tape_resample(tape, u, dims)?;
    let id = tape.constant(identity_grid(dims));
    let coords = tape.add(id, u)?;
    tape.trilinear_sample(image, coords)
}

/// Map composition `phi1 ∘ phi2`, returned on `phi2`'s grid.
pub fn compose(phi1: &DisplacementField, phi2: &DisplacementField) -> Result<DisplacementField> {
    let mut tape = Tape::new();
    let a = tape.constant(phi1.u.clone());
    let b = tape.constant(phi2.u.clone());
    let out = tape_compose(&mut tape, a, b)?;
    DisplacementField::new(tape.value(out).clone())
}

/// `v ∘ phi` by trilinear sampling with edge clamp.
pub fn warp(v: &Volume, phi: &DisplacementField) -> Result<Volume> {
    let mut tape = Tape::new();
    let img = tape.constant(v.grid().clone());
    let u = tape.constant(phi.u.clone());
    let out = tape_warp(&mut tape, img, u)?;
    v.with_grid(tape.value(out).clone())
}

/// Trilinear resampling of `u` onto `dims`; values need no rescaling.
pub fn resample_field_to(phi: &DisplacementField, dims: Dims) -> Result<DisplacementField> {
    if !dims.is_positive() {
        return Err(Error::invalid(format!("target dims must be positive, got {dims}")));
    }
    if phi.dims() == dims {
        return Ok(phi.clone());
    }
    DisplacementField::new(Tensor3::new(
        dims,
        3,
        kernels::trilinear_forward(&phi.u, &identity_grid(dims)),
    )?)
}

/// Nearest-neighbour pull of integer labels through `phi`.
pub fn warp_labels_nearest(
    labels: &crate::volume::LabelVolume,
    phi: &DisplacementField,
) -> Result<crate::volume::LabelVolume> {
    let d = labels.dims;
    let phi = resample_field_to(phi, d)?;
    let grid = identity_grid(d);
    let n = d.voxels();
    let dims = d.as_array();
    let (g, u) = (grid.data(), phi.u.data());
    let out = (0..n)
        .map(|i| {
            let idx: [usize; 3] = std::array::from_fn(|a| {
                let q = (g[a * n + i] + u[a * n + i]).clamp(0.0, 1.0);
                (q * (dims[a] - 1) as f64).round() as usize
            });
            labels.get(idx[0], idx[1], idx[2])
        })
        .collect();
    crate::volume::LabelVolume::new(labels.geometry(), out)
}
