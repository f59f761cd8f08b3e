//! Volumes, labels and landmarks, their file formats, and intensity preprocessing.

mod landmarks;
pub mod nifti;
mod preprocess;
pub mod raw;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Dims, Tensor3};
use crate::error::{Error, Result};

pub use landmarks::{read_landmarks_csv, write_landmarks_csv};
pub use nifti::{read_nifti, write_nifti};
pub use preprocess::{
    invert_ct, percentile, preprocess, resize_trilinear, CT_CLIP_RANGE, MR_PERCENTILE,
};

/// Acquisition type of a scan.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Ct,
    Cbct,
    T1w,
    T1ce,
    T2w,
    T2,
    Flair,
    Dess,
    Fa,
    Md,
    DixonFat,
    DixonWater,
    /// Synthetic appearance, e.g. `SYNTH-phantom`.
    Synth(String),
}

impl Modality {
    pub fn is_ct(&self) -> bool {
        matches!(self, Modality::Ct | Modality::Cbct)
    }

    pub fn is_mr(&self) -> bool {
        !self.is_ct() && !matches!(self, Modality::Synth(_))
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Modality::Ct => "CT",
            Modality::Cbct => "CBCT",
            Modality::T1w => "T1w",
            Modality::T1ce => "T1ce",
            Modality::T2w => "T2w",
            Modality::T2 => "T2",
            Modality::Flair => "FLAIR",
            Modality::Dess => "DESS",
            Modality::Fa => "FA",
            Modality::Md => "MD",
            Modality::DixonFat => "DIXON-F",
            Modality::DixonWater => "DIXON-W",
            Modality::Synth(name) => return write!(f, "SYNTH-{name}"),
        };
        f.write_str(s)
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "CT" => Modality::Ct,
            "CBCT" => Modality::Cbct,
            "T1w" => Modality::T1w,
            "T1ce" => Modality::T1ce,
            "T2w" => Modality::T2w,
            "T2" => Modality::T2,
            "FLAIR" => Modality::Flair,
            "DESS" => Modality::Dess,
            "FA" => Modality::Fa,
            "MD" => Modality::Md,
            "DIXON-F" => Modality::DixonFat,
            "DIXON-W" => Modality::DixonWater,
            other => match other.strip_prefix("SYNTH-") {
                Some(name) if !name.is_empty() => Modality::Synth(name.to_string()),
                _ => return Err(Error::invalid(format!("unknown modality `{other}`"))),
            },
        })
    }
}

impl Serialize for Modality {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Modality {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Physical placement of a voxel grid. Voxel `i` sits at `origin + i * spacing`
/// (mm); normalized coordinates map voxel `0` to 0 and voxel `n - 1` to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: Dims, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if !dims.is_positive() {
            return Err(Error::invalid(format!("grid dims must be positive, got {dims}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing:?}")));
        }
        Ok(Geometry {
            dims,
            spacing,
            origin,
        })
    }

    /// 1 mm isotropic grid at the origin.
    pub fn unit(dims: Dims) -> Self {
        Geometry {
            dims,
            spacing: [1.0; 3],
            origin: [0.0; 3],
        }
    }

    fn extent(&self, axis: usize) -> f64 {
        (self.dims.as_array()[axis] - 1) as f64 * self.spacing[axis]
    }

    pub fn to_normalized(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| {
            let e = self.extent(a);
            if e == 0.0 {
                0.0
            } else {
                (p[a] - self.origin[a]) / e
            }
        })
    }

    pub fn to_physical(&self, q: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + q[a] * self.extent(a))
    }

    /// Whether `p` (mm) lies within the span of the voxel centers.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        const SLACK: f64 = 1e-9;
        (0..3).all(|a| {
            let lo = self.origin[a];
            let hi = lo + self.extent(a);
            p[a] >= lo - SLACK && p[a] <= hi + SLACK
        })
    }

    /// Length of one voxel step in normalized units, per axis.
    pub fn voxel_step(&self) -> [f64; 3] {
        self.dims
            .as_array()
            .map(|n| if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 })
    }
}

/// Scalar image with physical metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: Tensor3,
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub modality: Modality,
    /// Set once a CT has been intensity-inverted (`1 - v`).
    pub inverted: bool,
    /// Set by [`preprocess`]; intensities are then in [0, 1].
    pub normalized: bool,
}

impl Volume {
    pub fn new(
        grid: Tensor3,
        spacing: [f64; 3],
        origin: [f64; 3],
        modality: Modality,
    ) -> Result<Self> {
        if grid.channels() != 1 {
            return Err(Error::invalid(format!(
                "volumes are single-channel, got {} channels",
                grid.channels()
            )));
        }
        Geometry::new(grid.dims(), spacing, origin)?;
        Ok(Volume {
            grid,
            spacing,
            origin,
            modality,
            inverted: false,
            normalized: false,
        })
    }

    /// Unit-spaced volume at the origin.
    pub fn from_grid(grid: Tensor3, modality: Modality) -> Result<Self> {
        Volume::new(grid, [1.0; 3], [0.0; 3], modality)
    }

    pub fn grid(&self) -> &Tensor3 {
        &self.grid
    }

    pub fn into_grid(self) -> Tensor3 {
        self.grid
    }

    pub fn dims(&self) -> Dims {
        self.grid.dims()
    }

    pub fn data(&self) -> &[f64] {
        self.grid.data()
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            dims: self.dims(),
            spacing: self.spacing,
            origin: self.origin,
        }
    }

    /// Same metadata, new voxel values (must keep the dims).
    pub fn with_grid(&self, grid: Tensor3) -> Result<Volume> {
        if grid.dims() != self.dims() || grid.channels() != 1 {
            return Err(Error::dims("with_grid", self.dims(), grid.shape_string()));
        }
        Ok(Volume {
            grid,
            ..self.clone()
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Volume> {
        let data: Vec<f64> = self.data().iter().map(|&v| f(v)).collect();
        self.with_grid(Tensor3::new(self.dims(), 1, data)?)
    }

    pub fn modality_label(&self) -> String {
        if self.inverted {
            format!("1-{}", self.modality)
        } else {
            self.modality.to_string()
        }
    }
}

/// Integer label map; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub dims: Dims,
    pub labels: Vec<u32>,
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl LabelVolume {
    pub fn new(geometry: Geometry, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != geometry.dims.voxels() {
            return Err(Error::dims("label volume", geometry.dims, labels.len()));
        }
        Ok(LabelVolume {
            dims: geometry.dims,
            labels,
            spacing: geometry.spacing,
            origin: geometry.origin,
        })
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
        }
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.labels[self.dims.index(x, y, z)]
    }

    /// Sorted distinct label ids, background included when present.
    pub fn label_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.labels.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Landmark points in physical millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<[f64; 3]>,
    pub frame: String,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 3]>, frame: impl Into<String>) -> Self {
        LandmarkSet {
            points,
            frame: frame.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks every point against the annotated grid's extent.
    pub fn validate_within(&self, geometry: &Geometry) -> Result<()> {
        match self.points.iter().position(|p| !geometry.contains(*p)) {
            Some(i) => Err(Error::invalid(format!(
                "landmark {i} {:?} lies outside the volume extent",
                self.points[i]
            ))),
            None => Ok(()),
        }
    }
}
