//! Phantoms with known structure and known deformation.
//!
//! A phantom is a dark background with non-overlapping soft-edged ellipsoids,
//! each with its own label and intensity, overlaid with a fine smooth texture so
//! that windowed statistics are informative everywhere. Deformations are sums of
//! Gaussian bumps whose amplitude bound keeps the map fold-free.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dims, Tensor3};
use crate::error::{Error, Result};
use crate::transforms::{warp_labels_nearest, DisplacementField};
use crate::volume::{
    raw, read_landmarks_csv, write_landmarks_csv, Geometry, LabelVolume, LandmarkSet, Modality,
    Volume,
};

/// Smallest phantom extent per axis.
pub const MIN_PHANTOM_DIM: usize = 16;
/// Most structures that fit the intensity ladder at 0.1 spacing.
pub const MAX_STRUCTURES: usize = 8;

const BACKGROUND_MEAN: f64 = 0.15;
const TEXTURE_AMPLITUDE: f64 = 0.2;
const TEXTURE_PERIOD: f64 = 10.0;
const TEXTURE_WAVES: usize = 3;
const LEVEL_LO: f64 = 0.25;
const LEVEL_HI: f64 = 0.95;
const PLACEMENT_TRIES: usize = 200;
const PLACEMENT_RESTARTS: usize = 100;
/// Landmarks on the axis extrema sit this fraction of a radius from the centre.
const EXTREMUM_INSET: f64 = 0.75;

/// Intensity map `[0, 1] -> [0, 1]` standing in for a change of modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModalityRemap {
    Identity,
    Invert,
    Gamma { gamma: f64 },
    /// Logistic curve rescaled so 0 and 1 are fixed points.
    Sigmoid { center: f64, slope: f64 },
    /// Piecewise-linear through `(x, y)` knots; `x` runs from 0 to 1.
    Piecewise { knots: Vec<(f64, f64)> },
}

impl ModalityRemap {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModalityRemap::Identity | ModalityRemap::Invert => Ok(()),
            ModalityRemap::Gamma { gamma } if *gamma > 0.0 && gamma.is_finite() => Ok(()),
            ModalityRemap::Sigmoid { center, slope }
                if (0.0..=1.0).contains(center) && *slope > 0.0 && slope.is_finite() =>
            {
                Ok(())
            }
            ModalityRemap::Piecewise { knots } => {
                let ok = knots.len() >= 2
                    && knots.first().map(|k| k.0) == Some(0.0)
                    && knots.last().map(|k| k.0) == Some(1.0)
                    && knots.windows(2).all(|w| w[0].0 < w[1].0)
                    && knots.iter().all(|k| (0.0..=1.0).contains(&k.1));
                if ok {
                    Ok(())
                } else {
                    Err(Error::invalid(
                        "piecewise knots need increasing x from 0 to 1 and y in [0, 1]",
                    ))
                }
            }
            other => Err(Error::invalid(format!("invalid remap parameters {other:?}"))),
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        match self {
            ModalityRemap::Identity => v,
            ModalityRemap::Invert => 1.0 - v,
            ModalityRemap::Gamma { gamma } => v.powf(*gamma),
            ModalityRemap::Sigmoid { center, slope } => {
                let s = |x: f64| 1.0 / (1.0 + (-slope * (x - center)).exp());
                let (lo, hi) = (s(0.0), s(1.0));
                ((s(v) - lo) / (hi - lo)).clamp(0.0, 1.0)
            }
            ModalityRemap::Piecewise { knots } => {
                let i = knots
                    .windows(2)
                    .position(|w| v <= w[1].0)
                    .unwrap_or(knots.len() - 2);
                let ((x0, y0), (x1, y1)) = (knots[i], knots[i + 1]);
                y0 + (v - x0) / (x1 - x0) * (y1 - y0)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModalityRemap::Identity => "identity",
            ModalityRemap::Invert => "invert",
            ModalityRemap::Gamma { .. } => "gamma",
            ModalityRemap::Sigmoid { .. } => "sigmoid",
            ModalityRemap::Piecewise { .. } => "piecewise",
        }
    }

    pub fn remap(&self, v: &Volume) -> Result<Volume> {
        self.validate()?;
        let mut out = v.map(|x| self.apply(x))?;
        out.modality = Modality::Synth(self.name().to_string());
        out.normalized = true;
        Ok(out)
    }
}

/// An ellipsoid in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Structure {
    pub label: u32,
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub intensity: f64,
}

impl Structure {
    /// Ellipsoidal radius of `p`; 1 on the surface.
    pub fn rho(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub base: Volume,
    pub labels: LabelVolume,
    pub landmarks: LandmarkSet,
    pub structures: Vec<Structure>,
    pub ground_truth_field: Option<DisplacementField>,
    texture: Texture,
}

impl Phantom {
    /// Grid volume with voxel `x` set to the intensity at `map(x)`, clamped to the domain.
    fn sample(&self, map: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Volume> {
        let dims = self.base.dims();
        let n = dims.as_array().map(|n| (n - 1) as f64);
        let mut data = Vec::with_capacity(dims.voxels());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let q = map([x as f64 / n[0], y as f64 / n[1], z as f64 / n[2]]);
                    data.push(self.intensity_at(q.map(|c| c.clamp(0.0, 1.0))));
                }
            }
        }
        let mut v = Volume::from_grid(Tensor3::new(dims, 1, data)?, Modality::Synth("phantom".into()))?;
        v.normalized = true;
        Ok(v)
    }

    /// Continuous intensity at normalized point `p`; `base` samples it on the grid.
    pub fn intensity_at(&self, p: [f64; 3]) -> f64 {
        let n = self.base.dims().as_array().map(|n| (n - 1) as f64);
        let mut v = BACKGROUND_MEAN;
        for s in &self.structures {
            let rho = s.rho(p);
            // signed distance to the surface, roughly in voxels
            let r_vox = (0..3).map(|a| s.radii[a] * n[a]).fold(f64::INFINITY, f64::min);
            let w = 0.5 * (1.0 + ((1.0 - rho) * r_vox / 0.75).tanh());
            v = (1.0 - w) * v + w * s.intensity;
        }
        (v + self.texture.at(p)).clamp(0.0, 1.0)
    }
}

/// Sum of plane waves with random directions and phases, period about
/// [`TEXTURE_PERIOD`] voxels, peak amplitude [`TEXTURE_AMPLITUDE`].
#[derive(Debug, Clone)]
struct Texture {
    waves: Vec<([f64; 3], f64)>,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng, n: [f64; 3]) -> Self {
        let waves = (0..TEXTURE_WAVES)
            .map(|_| {
                let z: f64 = rng.random_range(-1.0..1.0);
                let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let r = (1.0 - z * z).sqrt();
                let dir = [r * t.cos(), r * t.sin(), z];
                let period = TEXTURE_PERIOD * rng.random_range(0.8..1.25);
                // wave vector in cycles per normalized unit
                let k: [f64; 3] = std::array::from_fn(|a| dir[a] * n[a] / period);
                (k, rng.random::<f64>())
            })
            .collect();
        Texture { waves }
    }

    fn at(&self, p: [f64; 3]) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|(k, phase)| {
                let arg = k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phase;
                (std::f64::consts::TAU * arg).cos()
            })
            .sum();
        TEXTURE_AMPLITUDE * s / TEXTURE_WAVES as f64
    }
}

pub fn make_phantom(seed: u64, dims: Dims, n_structures: usize) -> Result<Phantom> {
    if dims.min_extent() < MIN_PHANTOM_DIM {
        return Err(Error::invalid(format!(
            "phantom dims must be at least {MIN_PHANTOM_DIM} per axis, got {dims}"
        )));
    }
    if !(1..=MAX_STRUCTURES).contains(&n_structures) {
        return Err(Error::invalid(format!(
            "n_structures must lie in 1..={MAX_STRUCTURES}, got {n_structures}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.as_array().map(|n| (n - 1) as f64);
    let texture = Texture::new(&mut rng, n);

    let mut levels: Vec<f64> = (0..n_structures)
        .map(|k| {
            if n_structures == 1 {
                0.5 * (LEVEL_LO + LEVEL_HI)
            } else {
                LEVEL_LO + (LEVEL_HI - LEVEL_LO) * k as f64 / (n_structures - 1) as f64
            }
        })
        .collect();
    // Fisher-Yates so intensity order is unrelated to placement order
    for i in (1..levels.len()).rev() {
        levels.swap(i, rng.random_range(0..=i));
    }

    // more than four structures do not fit at full size
    let scale = (4.0 / n_structures as f64).sqrt().min(1.0);
    let mut structures: Vec<Structure> = Vec::with_capacity(n_structures);
    let mut tries = 0;
    let mut restarts = 0;
    while structures.len() < n_structures {
        if tries == PLACEMENT_TRIES {
            // A crowded early layout can leave no room; start over.
            restarts += 1;
            if restarts == PLACEMENT_RESTARTS {
                return Err(Error::invalid(format!(
                    "could not place {n_structures} non-overlapping structures after \
                     {PLACEMENT_RESTARTS} layouts of {PLACEMENT_TRIES} tries"
                )));
            }
            structures.clear();
            tries = 0;
        }
        tries += 1;
        let radii: [f64; 3] = std::array::from_fn(|_| scale * rng.random_range(0.1..0.2));
        let center: [f64; 3] =
            std::array::from_fn(|a| rng.random_range(0.12 + radii[a]..0.88 - radii[a]));
        let r_max = radii.iter().copied().fold(0.0, f64::max);
        let clear = structures.iter().all(|s| {
            let d: f64 = (0..3).map(|a| (s.center[a] - center[a]).powi(2)).sum::<f64>().sqrt();
            let other = s.radii.iter().copied().fold(0.0, f64::max);
            d > r_max + other + 0.04
        });
        if clear {
            structures.push(Structure {
                label: structures.len() as u32 + 1,
                center,
                radii,
                intensity: levels[structures.len()],
            });
        }
    }

    let mut labels = Vec::with_capacity(dims.voxels());
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let p = [x as f64 / n[0], y as f64 / n[1], z as f64 / n[2]];
                let inside = structures.iter().rev().find(|s| s.rho(p) <= 1.0);
                labels.push(inside.map_or(0, |s| s.label));
            }
        }
    }

    let geometry = Geometry::unit(dims);
    let labels = LabelVolume::new(geometry, labels)?;

    let mut points = Vec::new();
    for s in &structures {
        points.push(geometry.to_physical(s.center));
        for a in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut q = s.center;
                q[a] += sign * EXTREMUM_INSET * s.radii[a];
                points.push(geometry.to_physical(q));
            }
        }
    }

    let mut phantom = Phantom {
        base: Volume::from_grid(Tensor3::zeros(dims, 1), Modality::Synth("phantom".into()))?,
        labels,
        landmarks: LandmarkSet::new(points, "phantom"),
        structures,
        ground_truth_field: None,
        texture,
    };
    phantom.base = phantom.sample(|p| p)?;
    Ok(phantom)
}

/// Largest bump amplitude (voxels) for which `n_bumps` bumps of width
/// `0.2 * (min(dims) - 1)` keep `|grad d| < 0.9`, hence a positive Jacobian.
///
/// A bump `a * exp(-|x - c|^2 / (2 s^2))` has gradient norm at most
/// `|a| / (s * sqrt(e))`.
pub fn amplitude_max(dims: Dims, n_bumps: usize) -> f64 {
    let sigma = bump_sigma(dims);
    0.9 * sigma * std::f64::consts::E.sqrt() / n_bumps.max(1) as f64
}

fn bump_sigma(dims: Dims) -> f64 {
    0.2 * (dims.min_extent() - 1) as f64
}

pub fn make_deformation(seed: u64, dims: Dims, amplitude: f64, n_bumps: usize) -> Result<DisplacementField> {
    if dims.min_extent() < 3 {
        return Err(Error::invalid(format!("deformation grid {dims} is too small")));
    }
    let bound = amplitude_max(dims, n_bumps);
    if amplitude.is_nan() || amplitude < 0.0 || amplitude > bound {
        return Err(Error::invalid(format!(
            "amplitude {amplitude} voxels exceeds the fold-free bound {bound:.4} for {n_bumps} bump(s) on {dims}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.as_array().map(|n| (n - 1) as f64);
    let sigma = bump_sigma(dims);
    let bumps: Vec<([f64; 3], [f64; 3])> = (0..n_bumps)
        .map(|_| {
            let c: [f64; 3] = std::array::from_fn(|a| rng.random_range(0.3..0.7) * n[a]);
            // uniform direction on the sphere
            let z: f64 = rng.random_range(-1.0..1.0);
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            let dir = [r * t.cos(), r * t.sin(), z];
            (c, dir.map(|d| d * amplitude))
        })
        .collect();
    DisplacementField::from_fn(dims, |p| {
        let x: [f64; 3] = std::array::from_fn(|a| p[a] * n[a]);
        let mut d = [0.0; 3];
        for (c, amp) in &bumps {
            let r2: f64 = (0..3).map(|a| (x[a] - c[a]).powi(2)).sum();
            let g = (-r2 / (2.0 * sigma * sigma)).exp();
            for a in 0..3 {
                d[a] += amp[a] * g;
            }
        }
        std::array::from_fn(|a| if n[a] > 0.0 { d[a] / n[a] } else { 0.0 })
    })
}

/// Fixed-point solve of `q + u(q) = p` for `q`, i.e. `phi^-1(p)`.
pub fn invert_point(phi: &DisplacementField, p: [f64; 3], iterations: usize) -> [f64; 3] {
    let mut q = p;
    for _ in 0..iterations {
        let u = phi.displacement_at(q);
        q = std::array::from_fn(|a| p[a] - u[a]);
    }
    q
}

/// Gridded inverse by fixed-point iteration `v = -u(id + v)`.
pub fn invert_field(phi: &DisplacementField, iterations: usize) -> Result<DisplacementField> {
    let grid = crate::transforms::identity_grid(phi.dims());
    let n = phi.dims().voxels();
    let mut v = vec![0.0; 3 * n];
    for i in 0..n {
        let p = [grid.data()[i], grid.data()[n + i], grid.data()[2 * n + i]];
        let q = invert_point(phi, p, iterations);
        for a in 0..3 {
            v[a * n + i] = q[a] - p[a];
        }
    }
    DisplacementField::new(Tensor3::new(phi.dims(), 3, v)?)
}

pub const INVERSION_ITERATIONS: usize = 50;

/// Ground truth accompanying a rendered pair.
#[derive(Debug, Clone)]
pub struct TruthBundle {
    /// `B = remap_b(base ∘ field)`, so the A-to-B map is `field` itself.
    pub field: DisplacementField,
    pub source_labels: LabelVolume,
    pub target_labels: LabelVolume,
    pub source_landmarks: LandmarkSet,
    pub target_landmarks: LandmarkSet,
}

impl TruthBundle {
    pub const FIELD: &'static str = "truth_field.meta";
    pub const SOURCE_LABELS: &'static str = "source_labels.meta";
    pub const TARGET_LABELS: &'static str = "target_labels.meta";
    pub const SOURCE_LANDMARKS: &'static str = "source_landmarks.csv";
    pub const TARGET_LANDMARKS: &'static str = "target_landmarks.csv";

    /// Writes the five files named by the associated constants into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        raw::write_field(&self.field, dir.join(Self::FIELD))?;
        raw::write_labels(&self.source_labels, dir.join(Self::SOURCE_LABELS))?;
        raw::write_labels(&self.target_labels, dir.join(Self::TARGET_LABELS))?;
        write_landmarks_csv(&self.source_landmarks, dir.join(Self::SOURCE_LANDMARKS))?;
        write_landmarks_csv(&self.target_landmarks, dir.join(Self::TARGET_LANDMARKS))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<TruthBundle> {
        let dir = dir.as_ref();
        Ok(TruthBundle {
            field: raw::read_field(dir.join(Self::FIELD))?,
            source_labels: raw::read_labels(dir.join(Self::SOURCE_LABELS))?,
            target_labels: raw::read_labels(dir.join(Self::TARGET_LABELS))?,
            source_landmarks: read_landmarks_csv(dir.join(Self::SOURCE_LANDMARKS), "source")?,
            target_landmarks: read_landmarks_csv(dir.join(Self::TARGET_LANDMARKS), "target")?,
        })
    }
}

pub fn render_pair(
    phantom: &Phantom,
    remap_a: &ModalityRemap,
    remap_b: &ModalityRemap,
    deformation: &DisplacementField,
) -> Result<(Volume, Volume, TruthBundle)> {
    let a = remap_a.remap(&phantom.base)?;
    if deformation.dims() != phantom.base.dims() {
        return Err(Error::dims("render_pair", phantom.base.dims(), deformation.dims()));
    }
    // the continuous phantom is warped, so B carries no resampling blur
    let warped = phantom.sample(|p| deformation.apply(p))?;
    let b = remap_b.remap(&warped)?;
    let geometry = phantom.base.geometry();
    let target_points = phantom
        .landmarks
        .points
        .iter()
        .map(|&x| {
            let q = invert_point(deformation, geometry.to_normalized(x), INVERSION_ITERATIONS);
            geometry.to_physical(q)
        })
        .collect();
    let truth = TruthBundle {
        field: deformation.clone(),
        source_labels: phantom.labels.clone(),
        target_labels: warp_labels_nearest(&phantom.labels, deformation)?,
        source_landmarks: phantom.landmarks.clone(),
        target_landmarks: LandmarkSet::new(target_points, "target"),
    };
    Ok((a, b, truth))
}
