//! Minimal single-file NIfTI-1 (`.nii`) reader and writer.
//!
//! Only the fields needed for dense scalar volumes are interpreted: `dim`,
//! `datatype`, `bitpix`, `pixdim`, `vox_offset`, `scl_slope`/`scl_inter`,
//! `magic`, plus `qoffset_*` as the grid origin and `descrip` for the
//! modality tag. Orientation matrices are not applied (identity assumed).

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use super::{Geometry, LabelVolume, Modality, Volume};
use crate::autodiff::{Dims, Tensor3};
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
pub const MAGIC: &[u8; 4] = b"n+1\0";

pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

const DESCRIP_PREFIX: &str = "mmreg modality=";

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QOFFSET_X: usize = 268;
    pub const MAGIC: usize = 344;
}

/// Decoded header fields plus the voxel data, before any interpretation.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiImage {
    pub dims: Dims,
    pub datatype: i16,
    pub pixdim: [f64; 3],
    pub origin: [f64; 3],
    pub descrip: String,
    /// Scaled voxel values in x-fastest order.
    pub data: Vec<f64>,
    /// The raw data section exactly as stored (native byte order of the file).
    pub raw: Vec<u8>,
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn i16(self, b: &[u8]) -> i16 {
        match self {
            Endian::Little => LittleEndian::read_i16(b),
            Endian::Big => BigEndian::read_i16(b),
        }
    }
    fn f32(self, b: &[u8]) -> f32 {
        match self {
            Endian::Little => LittleEndian::read_f32(b),
            Endian::Big => BigEndian::read_f32(b),
        }
    }
}

pub fn parse(bytes: &[u8]) -> Result<NiftiImage> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_SIZE}-byte header",
            bytes.len()
        )));
    }
    let endian = match (
        LittleEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]),
        BigEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]),
    ) {
        (348, _) => Endian::Little,
        (_, 348) => Endian::Big,
        (v, _) => return Err(Error::Format(format!("sizeof_hdr is {v}, expected 348"))),
    };
    let magic = &bytes[offsets::MAGIC..offsets::MAGIC + 4];
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "magic {:?} is not the single-file \"n+1\\0\"",
            String::from_utf8_lossy(magic)
        )));
    }

    let dim: Vec<i16> = (0..8)
        .map(|i| endian.i16(&bytes[offsets::DIM + 2 * i..]))
        .collect();
    let ndim = dim[0];
    if !(3..=7).contains(&ndim) {
        return Err(Error::Format(format!("dim[0] = {ndim}, need a 3D volume")));
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(Error::Format(format!("non-positive spatial dims {:?}", &dim[1..4])));
    }
    if dim[4..=ndim as usize].iter().any(|&d| d > 1) {
        return Err(Error::Format(format!(
            "only single-volume 3D images are supported, dim = {dim:?}"
        )));
    }
    let dims = Dims::new(dim[1] as usize, dim[2] as usize, dim[3] as usize);

    let datatype = endian.i16(&bytes[offsets::DATATYPE..]);
    let bytes_per = match datatype {
        DT_FLOAT32 => 4,
        DT_INT16 => 2,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let bitpix = endian.i16(&bytes[offsets::BITPIX..]);
    if bitpix as usize != 8 * bytes_per {
        return Err(Error::Format(format!(
            "bitpix {bitpix} inconsistent with datatype {datatype}"
        )));
    }

    let pixdim: [f64; 3] =
        std::array::from_fn(|i| endian.f32(&bytes[offsets::PIXDIM + 4 * (i + 1)..]) as f64);
    let origin: [f64; 3] =
        std::array::from_fn(|i| endian.f32(&bytes[offsets::QOFFSET_X + 4 * i..]) as f64);
    let vox_offset = endian.f32(&bytes[offsets::VOX_OFFSET..]);
    if vox_offset.is_nan() || vox_offset < VOX_OFFSET as f32 || vox_offset.fract() != 0.0 {
        return Err(Error::Format(format!("invalid vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let len = dims.voxels() * bytes_per;
    if bytes.len() < start + len {
        return Err(Error::Format(format!(
            "data section truncated: need {len} bytes at offset {start}, file has {}",
            bytes.len()
        )));
    }
    let raw = bytes[start..start + len].to_vec();

    let slope = endian.f32(&bytes[offsets::SCL_SLOPE..]) as f64;
    let inter = endian.f32(&bytes[offsets::SCL_INTER..]) as f64;
    let scaled = slope != 0.0 && !(slope == 1.0 && inter == 0.0);

    let mut data: Vec<f64> = match datatype {
        DT_FLOAT32 => raw.chunks_exact(4).map(|c| endian.f32(c) as f64).collect(),
        _ => raw.chunks_exact(2).map(|c| endian.i16(c) as f64).collect(),
    };
    if scaled {
        data.iter_mut().for_each(|v| *v = *v * slope + inter);
    }

    let descrip_bytes = &bytes[offsets::DESCRIP..offsets::DESCRIP + 80];
    let end = descrip_bytes.iter().position(|&b| b == 0).unwrap_or(80);
    let descrip = String::from_utf8_lossy(&descrip_bytes[..end]).into_owned();

    Ok(NiftiImage {
        dims,
        datatype,
        pixdim,
        origin,
        descrip,
        data,
        raw,
    })
}

/// Serializes a little-endian float32 single-file image.
pub fn encode_f32(dims: Dims, spacing: [f64; 3], origin: [f64; 3], descrip: &str, data: &[f32]) -> Vec<u8> {
    let mut buf = vec![0u8; VOX_OFFSET + 4 * data.len()];
    LittleEndian::write_i32(&mut buf[offsets::SIZEOF_HDR..], HEADER_SIZE as i32);
    let dim = [3, dims.nx as i16, dims.ny as i16, dims.nz as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut buf[offsets::DIM + 2 * i..], *d);
    }
    LittleEndian::write_i16(&mut buf[offsets::DATATYPE..], DT_FLOAT32);
    LittleEndian::write_i16(&mut buf[offsets::BITPIX..], 32);
    let pixdim = [1.0, spacing[0], spacing[1], spacing[2], 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut buf[offsets::PIXDIM + 4 * i..], *p as f32);
    }
    LittleEndian::write_f32(&mut buf[offsets::VOX_OFFSET..], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut buf[offsets::SCL_SLOPE..], 0.0);
    LittleEndian::write_f32(&mut buf[offsets::SCL_INTER..], 0.0);
    // NIFTI_UNITS_MM
    buf[offsets::XYZT_UNITS] = 2;
    let d = descrip.as_bytes();
    let n = d.len().min(79);
    buf[offsets::DESCRIP..offsets::DESCRIP + n].copy_from_slice(&d[..n]);
    for (i, o) in origin.iter().enumerate() {
        LittleEndian::write_f32(&mut buf[offsets::QOFFSET_X + 4 * i..], *o as f32);
    }
    buf[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(MAGIC);
    for (chunk, v) in buf[VOX_OFFSET..].chunks_exact_mut(4).zip(data) {
        LittleEndian::write_f32(chunk, *v);
    }
    buf
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let img = parse(&fs::read(path)?)?;
    let modality = img
        .descrip
        .strip_prefix(DESCRIP_PREFIX)
        .and_then(|m| m.split_whitespace().next())
        .map(str::parse)
        .transpose()?
        .unwrap_or_else(|| Modality::Synth("unknown".into()));
    let flags: Vec<&str> = img.descrip.split_whitespace().skip(2).collect();
    let grid = Tensor3::new(img.dims, 1, img.data)?;
    let mut v = Volume::new(grid, img.pixdim, img.origin, modality)?;
    v.inverted = flags.contains(&"inverted");
    v.normalized = flags.contains(&"normalized");
    Ok(v)
}

pub fn write_nifti(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<f32> = volume.data().iter().map(|&v| v as f32).collect();
    let mut descrip = format!("{DESCRIP_PREFIX}{}", volume.modality);
    if volume.inverted {
        descrip.push_str(" inverted");
    }
    if volume.normalized {
        descrip.push_str(" normalized");
    }
    let bytes = encode_f32(volume.dims(), volume.spacing, volume.origin, &descrip, &data);
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads an integer label map (int16 or integral float32 data).
pub fn read_nifti_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let img = parse(&fs::read(path)?)?;
    let labels = img
        .data
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u32)
            } else {
                Err(Error::Format(format!("label value {v} is not a non-negative integer")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    LabelVolume::new(Geometry::new(img.dims, img.pixdim, img.origin)?, labels)
}
