use super::{resample_field_to, DisplacementField};
use crate::autodiff::{kernels, Dims, Tensor3};
use crate::error::{Error, Result};

pub(crate) fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Per-voxel `det(I + du/dx)` with central differences (one-sided at faces).
pub fn jacobian_det_map(phi: &DisplacementField) -> Result<Tensor3> {
    let d = phi.dims();
    if d.min_extent() < 3 {
        return Err(Error::dims("jacobian_det_map", "grid of at least 3^3", d));
    }
    let g = kernels::spatial_gradient(phi.u());
    let n = d.voxels();
    let dets = (0..n)
        .map(|i| {
            let m: [[f64; 3]; 3] = std::array::from_fn(|c| {
                std::array::from_fn(|a| g[(3 * c + a) * n + i] + if a == c { 1.0 } else { 0.0 })
            });
            det3(m)
        })
        .collect();
    Tensor3::new(d, 1, dets)
}

/// Percentage of voxels whose Jacobian determinant is negative.
pub fn percent_neg_jac(phi: &DisplacementField) -> Result<f64> {
    let det = jacobian_det_map(phi)?;
    let neg = det.data().iter().filter(|&&v| v < 0.0).count();
    Ok(100.0 * neg as f64 / det.len() as f64)
}

/// As [`percent_neg_jac`], after resampling the field onto `dims`.
pub fn percent_neg_jac_on(phi: &DisplacementField, dims: Dims) -> Result<f64> {
    percent_neg_jac(&resample_field_to(phi, dims)?)
}
