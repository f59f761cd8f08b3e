//! Raw little-endian grid plus a plain-text `key = value` sidecar.
//!
//! ```text
//! dims = 32 32 32
//! channels = 3
//! spacing = 1 1 1
//! origin = 0 0 0
//! modality = field
//! inverted = false
//! normalized = false
//! dtype = float32
//! data = phi_ab.raw
//! ```
//!
//! Elements are stored channel-planar with x fastest. `data` is resolved
//! relative to the sidecar's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};

use super::{Geometry, LabelVolume, Volume};
use crate::autodiff::{Dims, Tensor3};
use crate::error::{Error, Result};
use crate::transforms::DisplacementField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawDtype {
    Float32,
    Uint16,
}

impl RawDtype {
    fn name(self) -> &'static str {
        match self {
            RawDtype::Float32 => "float32",
            RawDtype::Uint16 => "uint16",
        }
    }
}

/// Sidecar contents.
#[derive(Debug, Clone, PartialEq)]
pub struct RawHeader {
    pub dims: Dims,
    pub channels: usize,
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub kind: String,
    pub inverted: bool,
    pub normalized: bool,
    pub dtype: RawDtype,
    pub data_file: String,
}

impl RawHeader {
    fn render(&self) -> String {
        let [nx, ny, nz] = self.dims.as_array();
        let [sx, sy, sz] = self.spacing;
        let [ox, oy, oz] = self.origin;
        format!(
            "dims = {nx} {ny} {nz}\nchannels = {}\nspacing = {sx} {sy} {sz}\norigin = {ox} {oy} {oz}\n\
             modality = {}\ninverted = {}\nnormalized = {}\ndtype = {}\ndata = {}\n",
            self.channels,
            self.kind,
            self.inverted,
            self.normalized,
            self.dtype.name(),
            self.data_file
        )
    }

    fn parse(text: &str) -> Result<RawHeader> {
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("sidecar line {}: expected `key = value`", n + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("sidecar missing `{k}`")))
        };
        let triple = |k: &str| -> Result<[f64; 3]> {
            let v: Vec<f64> = get(k)?
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("sidecar `{k}`: {e}")))?;
            v.try_into()
                .map_err(|_| Error::Format(format!("sidecar `{k}` needs three values")))
        };
        let dims: Vec<usize> = get("dims")?
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("sidecar `dims`: {e}")))?;
        let dims: [usize; 3] = dims
            .try_into()
            .map_err(|_| Error::Format("sidecar `dims` needs three values".into()))?;
        let dtype = match get("dtype")? {
            "float32" => RawDtype::Float32,
            "uint16" => RawDtype::Uint16,
            other => return Err(Error::Format(format!("unsupported raw dtype `{other}`"))),
        };
        Ok(RawHeader {
            dims: Dims::from_array(dims),
            channels: get("channels")?
                .parse()
                .map_err(|e| Error::Format(format!("sidecar `channels`: {e}")))?,
            spacing: triple("spacing")?,
            origin: triple("origin")?,
            kind: get("modality")?.to_string(),
            inverted: kv.get("inverted").is_some_and(|v| v == "true"),
            normalized: kv.get("normalized").is_some_and(|v| v == "true"),
            dtype,
            data_file: get("data")?.to_string(),
        })
    }
}

fn data_path(sidecar: &Path, header: &RawHeader) -> PathBuf {
    sidecar
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.data_file)
}

fn default_data_name(sidecar: &Path) -> String {
    let stem = sidecar
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    format!("{stem}.raw")
}

pub fn write_raw(sidecar: impl AsRef<Path>, header: &RawHeader, values: &[f64]) -> Result<()> {
    let sidecar = sidecar.as_ref();
    if values.len() != header.dims.voxels() * header.channels {
        return Err(Error::dims("write_raw", header.dims, values.len()));
    }
    let bytes = match header.dtype {
        RawDtype::Float32 => {
            let mut b = vec![0u8; 4 * values.len()];
            for (c, v) in b.chunks_exact_mut(4).zip(values) {
                LittleEndian::write_f32(c, *v as f32);
            }
            b
        }
        RawDtype::Uint16 => {
            let mut b = vec![0u8; 2 * values.len()];
            for (c, v) in b.chunks_exact_mut(2).zip(values) {
                LittleEndian::write_u16(c, *v as u16);
            }
            b
        }
    };
    fs::write(data_path(sidecar, header), bytes)?;
    fs::write(sidecar, header.render())?;
    Ok(())
}

pub fn read_raw(sidecar: impl AsRef<Path>) -> Result<(RawHeader, Vec<f64>)> {
    let sidecar = sidecar.as_ref();
    let header = RawHeader::parse(&fs::read_to_string(sidecar)?)?;
    let bytes = fs::read(data_path(sidecar, &header))?;
    let n = header.dims.voxels() * header.channels;
    let width = match header.dtype {
        RawDtype::Float32 => 4,
        RawDtype::Uint16 => 2,
    };
    if bytes.len() != n * width {
        return Err(Error::Format(format!(
            "raw data has {} bytes, sidecar describes {}",
            bytes.len(),
            n * width
        )));
    }
    let values = match header.dtype {
        RawDtype::Float32 => bytes
            .chunks_exact(4)
            .map(|c| LittleEndian::read_f32(c) as f64)
            .collect(),
        RawDtype::Uint16 => bytes
            .chunks_exact(2)
            .map(|c| LittleEndian::read_u16(c) as f64)
            .collect(),
    };
    Ok((header, values))
}

pub fn write_volume_raw(volume: &Volume, sidecar: impl AsRef<Path>) -> Result<()> {
    let sidecar = sidecar.as_ref();
    let header = RawHeader {
        dims: volume.dims(),
        channels: 1,
        spacing: volume.spacing,
        origin: volume.origin,
        kind: volume.modality.to_string(),
        inverted: volume.inverted,
        normalized: volume.normalized,
        dtype: RawDtype::Float32,
        data_file: default_data_name(sidecar),
    };
    write_raw(sidecar, &header, volume.data())
}

pub fn read_volume_raw(sidecar: impl AsRef<Path>) -> Result<Volume> {
    let (h, values) = read_raw(sidecar)?;
    if h.channels != 1 {
        return Err(Error::Format(format!("volume sidecar has {} channels", h.channels)));
    }
    let mut v = Volume::new(Tensor3::new(h.dims, 1, values)?, h.spacing, h.origin, h.kind.parse()?)?;
    v.inverted = h.inverted;
    v.normalized = h.normalized;
    Ok(v)
}

pub fn write_field(field: &DisplacementField, sidecar: impl AsRef<Path>) -> Result<()> {
    let sidecar = sidecar.as_ref();
    let header = RawHeader {
        dims: field.dims(),
        channels: 3,
        spacing: [1.0; 3],
        origin: [0.0; 3],
        kind: "field".into(),
        inverted: false,
        normalized: false,
        dtype: RawDtype::Float32,
        data_file: default_data_name(sidecar),
    };
    write_raw(sidecar, &header, field.u().data())
}

pub fn read_field(sidecar: impl AsRef<Path>) -> Result<DisplacementField> {
    let (h, values) = read_raw(sidecar)?;
    if h.channels != 3 || h.kind != "field" {
        return Err(Error::Format(format!(
            "expected a 3-channel field sidecar, got {} channel(s) of `{}`",
            h.channels, h.kind
        )));
    }
    DisplacementField::new(Tensor3::new(h.dims, 3, values)?)
}

pub fn write_labels(labels: &LabelVolume, sidecar: impl AsRef<Path>) -> Result<()> {
    let sidecar = sidecar.as_ref();
    if let Some(&l) = labels.labels.iter().find(|&&l| l > u16::MAX as u32) {
        return Err(Error::invalid(format!("label {l} does not fit the uint16 raw format")));
    }
    let header = RawHeader {
        dims: labels.dims,
        channels: 1,
        spacing: labels.spacing,
        origin: labels.origin,
        kind: "labels".into(),
        inverted: false,
        normalized: false,
        dtype: RawDtype::Uint16,
        data_file: default_data_name(sidecar),
    };
    let values: Vec<f64> = labels.labels.iter().map(|&l| l as f64).collect();
    write_raw(sidecar, &header, &values)
}

pub fn read_labels(sidecar: impl AsRef<Path>) -> Result<LabelVolume> {
    let (h, values) = read_raw(sidecar)?;
    if h.channels != 1 || h.dtype != RawDtype::Uint16 {
        return Err(Error::Format("label sidecar must be single-channel uint16".into()));
    }
    LabelVolume::new(
        Geometry::new(h.dims, h.spacing, h.origin)?,
        values.into_iter().map(|v| v as u32).collect(),
    )
}
