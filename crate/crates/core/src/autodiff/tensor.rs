use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial extent of a voxel grid, x fastest in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const SCALAR: Dims = Dims { nx: 1, ny: 1, nz: 1 };

    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Dims { nx: n, ny: n, nz: n }
    }

    pub const fn voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn from_array(a: [usize; 3]) -> Self {
        Dims::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    /// Even extents halve; odd extents round up (the last window is partial).
    pub fn pooled(&self) -> Dims {
        Dims::new(self.nx.div_ceil(2), self.ny.div_ceil(2), self.nz.div_ceil(2))
    }

    pub fn min_extent(&self) -> usize {
        self.nx.min(self.ny).min(self.nz)
    }

    pub fn is_positive(&self) -> bool {
        self.nx > 0 && self.ny > 0 && self.nz > 0
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Dense multi-channel 3D grid of `f64`, laid out channel-planar with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: Dims,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    /// Checked constructor: rejects empty extents, length mismatches and non-finite data.
    pub fn new(dims: Dims, channels: usize, data: Vec<f64>) -> Result<Self> {
        if !dims.is_positive() || channels == 0 {
            return Err(Error::invalid(format!(
                "tensor extents must be positive, got {dims} x {channels}"
            )));
        }
        if data.len() != dims.voxels() * channels {
            return Err(Error::dims(
                "tensor",
                format!("{dims} x {channels} = {}", dims.voxels() * channels),
                format!("data length {}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Tensor3 {
            dims,
            channels,
            data,
        })
    }

    pub(crate) fn from_raw(dims: Dims, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.voxels() * channels);
        Tensor3 {
            dims,
            channels,
            data,
        }
    }

    pub fn zeros(dims: Dims, channels: usize) -> Self {
        Tensor3::from_raw(dims, channels, vec![0.0; dims.voxels() * channels])
    }

    pub fn filled(dims: Dims, channels: usize, value: f64) -> Self {
        Tensor3::from_raw(dims, channels, vec![value; dims.voxels() * channels])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor3::from_raw(Dims::SCALAR, 1, vec![value])
    }

    /// Builds a tensor by evaluating `f(x, y, z, c)` at every element.
    pub fn from_fn(
        dims: Dims,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(dims.voxels() * channels);
        for c in 0..channels {
            for z in 0..dims.nz {
                for y in 0..dims.ny {
                    for x in 0..dims.nx {
                        data.push(f(x, y, z, c));
                    }
                }
            }
        }
        Tensor3::from_raw(dims, channels, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.dims == Dims::SCALAR && self.channels == 1
    }

    /// Value of a 1x1x1 single-channel tensor (first element otherwise).
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    #[inline]
    pub fn offset(&self, x: usize, y: usize, z: usize, c: usize) -> usize {
        c * self.dims.voxels() + self.dims.index(x, y, z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, c: usize) -> f64 {
        self.data[self.offset(x, y, z, c)]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.dims.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3::from_raw(self.dims, self.channels, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.dims == other.dims && self.channels == other.channels
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{} x {}ch", self.dims, self.channels)
    }
}
