use super::Volume;
use crate::autodiff::{kernels, Dims, Tensor3};
use crate::error::{Error, Result};
use crate::transforms::identity_grid;

/// Hounsfield window mapped onto [0, 1].
pub const CT_CLIP_RANGE: (f64, f64) = (-1000.0, 1000.0);
/// Upper clip for MR-family intensities, as a fraction.
pub const MR_PERCENTILE: f64 = 0.99;

/// Linear interpolation between order statistics at zero-based rank `q * (n - 1)`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::DegenerateInput("percentile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("percentile fraction {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = rank - lo as f64;
    Ok(sorted[lo] + t * (sorted[hi] - sorted[lo]))
}

/// Intensity normalization to [0, 1] by modality.
///
/// CT and CBCT are clipped to [`CT_CLIP_RANGE`] and mapped linearly. MR-family
/// scans are clipped at their [`MR_PERCENTILE`] intensity (and at 0 below)
/// and divided by it. Synthetic volumes are clipped to [0, 1]. A volume that is
/// already marked normalized is returned unchanged.
pub fn preprocess(v: &Volume) -> Result<Volume> {
    if v.normalized {
        return Ok(v.clone());
    }
    let mut out = if v.modality.is_ct() {
        let (lo, hi) = CT_CLIP_RANGE;
        v.map(|x| (x.clamp(lo, hi) - lo) / (hi - lo))?
    } else if v.modality.is_mr() {
        let p = percentile(v.data(), MR_PERCENTILE)?;
        if p.is_nan() || p <= 0.0 {
            return Err(Error::DegenerateInput(format!(
                "{} volume has a non-positive {}th percentile ({p})",
                v.modality,
                MR_PERCENTILE * 100.0
            )));
        }
        v.map(|x| x.clamp(0.0, p) / p)?
    } else {
        v.map(|x| x.clamp(0.0, 1.0))?
    };
    out.normalized = true;
    Ok(out)
}

/// `1 - v` on a [0, 1]-normalized CT or CBCT scan. Applying it twice restores
/// the original flag state.
pub fn invert_ct(v: &Volume) -> Result<Volume> {
    if !v.modality.is_ct() {
        return Err(Error::invalid(format!(
            "intensity inversion applies to CT/CBCT only, got {}",
            v.modality
        )));
    }
    if let Some(x) = v.data().iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid(format!(
            "inversion needs [0, 1]-normalized intensities, found {x}"
        )));
    }
    let mut out = v.map(|x| 1.0 - x)?;
    out.inverted = !v.inverted;
    Ok(out)
}

/// Trilinear resample onto `dims` spanning the same physical extent (corner voxels
/// stay aligned), with spacing rescaled to match.
pub fn resize_trilinear(v: &Volume, dims: Dims) -> Result<Volume> {
    if !dims.is_positive() {
        return Err(Error::invalid(format!("target dims must be positive, got {dims}")));
    }
    let old = v.dims().as_array();
    let new = dims.as_array();
    let spacing: [f64; 3] = std::array::from_fn(|a| {
        if old[a] > 1 && new[a] > 1 {
            v.spacing[a] * (old[a] - 1) as f64 / (new[a] - 1) as f64
        } else {
            v.spacing[a]
        }
    });
    let data = kernels::trilinear_forward(v.grid(), &identity_grid(dims));
    let mut out = Volume::new(Tensor3::new(dims, 1, data)?, spacing, v.origin, v.modality.clone())?;
    out.inverted = v.inverted;
    out.normalized = v.normalized;
    Ok(out)
}
