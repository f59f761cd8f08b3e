//! Fixtures and brute-force reference implementations shared by the
//! integration tests and the acceptance harness. Nothing here calls into the
//! crate's kernels; each oracle recomputes its quantity from the definition.
#![allow(dead_code)]

use mmreg::autodiff::{Dims, Tensor3};
use mmreg::synthetic::{make_deformation, make_phantom, render_pair, ModalityRemap, TruthBundle};
use mmreg::transforms::DisplacementField;
use mmreg::volume::{Modality, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(seed: u64, dims: Dims, channels: usize, lo: f64, hi: f64) -> Tensor3 {
    let mut r = rng(seed);
    let data = (0..dims.voxels() * channels).map(|_| r.random_range(lo..hi)).collect();
    Tensor3::new(dims, channels, data).unwrap()
}

pub fn vol(grid: Tensor3) -> Volume {
    let mut v = Volume::from_grid(grid, Modality::Synth("test".into())).unwrap();
    v.normalized = true;
    v
}

pub fn random_volume(seed: u64, dims: Dims) -> Volume {
    vol(random_tensor(seed, dims, 1, 0.0, 1.0))
}

/// Low-frequency random volume in [0, 1].
pub fn smooth_volume(seed: u64, dims: Dims) -> Volume {
    let mut r = rng(seed);
    let waves: Vec<([f64; 3], f64)> = (0..4)
        .map(|_| {
            let k = [0; 3].map(|_| r.random_range(2.0..6.0));
            (k, r.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let n = dims.as_array().map(|n| (n.max(2) - 1) as f64);
    vol(Tensor3::from_fn(dims, 1, |x, y, z, _| {
        let p = [x as f64 / n[0], y as f64 / n[1], z as f64 / n[2]];
        let s: f64 = waves
            .iter()
            .map(|(k, ph)| (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).sin())
            .sum();
        0.5 + 0.12 * s
    }))
}

/// Displacement whose every component is `±[0.1, 0.4]` voxel, so sampling
/// points stay clear of grid lines and trilinear kinks.
pub fn off_grid_displacement(seed: u64, dims: Dims) -> Tensor3 {
    let mut r = rng(seed);
    let n = dims.as_array();
    let mut data = Vec::with_capacity(3 * dims.voxels());
    for n_axis in n {
        let step = 1.0 / (n_axis - 1) as f64;
        for _ in 0..dims.voxels() {
            let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
            data.push(sign * r.random_range(0.1..0.4) * step);
        }
    }
    Tensor3::new(dims, 3, data).unwrap()
}

pub fn smooth_field(dims: Dims, seed: u64, amp: f64) -> DisplacementField {
    let mut r = rng(seed);
    let c: Vec<[f64; 4]> = (0..3)
        .map(|_| [0; 4].map(|_| r.random_range(1.0..4.0)))
        .collect();
    DisplacementField::from_fn(dims, |p| {
        std::array::from_fn(|a| {
            let k = c[a];
            amp * (k[0] * p[0] + k[1] * p[1] + k[3]).sin() * (k[2] * p[2] + 0.5 * k[3]).cos()
        })
    })
    .unwrap()
}

/// Linear index of `(x, y, z)` with x fastest.
pub fn idx(d: Dims, x: usize, y: usize, z: usize) -> usize {
    x + d.nx * (y + d.ny * z)
}

/// Trilinear value of channel `c` at normalized point `p`, coordinates clamped to [0, 1].
pub fn trilinear(t: &Tensor3, c: usize, p: [f64; 3]) -> f64 {
    let d = t.dims();
    let n = d.as_array();
    let mut lo = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        if n[a] == 1 {
            continue;
        }
        let q = p[a].clamp(0.0, 1.0) * (n[a] - 1) as f64;
        let i = (q.floor() as usize).min(n[a] - 2);
        lo[a] = i;
        frac[a] = q - i as f64;
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut at = [0usize; 3];
        for a in 0..3 {
            let hi = (corner >> a) & 1 == 1;
            if n[a] == 1 {
                if hi {
                    w = 0.0;
                }
                continue;
            }
            at[a] = lo[a] + hi as usize;
            w *= if hi { frac[a] } else { 1.0 - frac[a] };
        }
        if w != 0.0 {
            acc += w * t.get(at[0], at[1], at[2], c);
        }
    }
    acc
}

pub fn grid_point(d: Dims, x: usize, y: usize, z: usize) -> [f64; 3] {
    let n = d.as_array().map(|n| (n.max(2) - 1) as f64);
    [x as f64 / n[0], y as f64 / n[1], z as f64 / n[2]]
}

pub fn displacement(u: &Tensor3, p: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|c| trilinear(u, c, p))
}

/// `u2(x) + u1(x + u2(x))` evaluated point by point on `u2`'s grid.
pub fn brute_compose(u1: &Tensor3, u2: &Tensor3) -> Vec<[f64; 3]> {
    let d = u2.dims();
    let mut out = Vec::new();
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let p = grid_point(d, x, y, z);
                let v2: [f64; 3] = std::array::from_fn(|c| u2.get(x, y, z, c));
                let q = [p[0] + v2[0], p[1] + v2[1], p[2] + v2[2]];
                let v1 = displacement(u1, q);
                out.push([v2[0] + v1[0], v2[1] + v1[1], v2[2] + v1[2]]);
            }
        }
    }
    out
}

/// Derivative of `f` along `axis` at integer position `i` of `n`, per
/// normalized unit; one-sided at either face.
fn fd(f: impl Fn(usize) -> f64, i: usize, n: usize) -> f64 {
    let h = 1.0 / (n - 1) as f64;
    if i == 0 {
        (f(1) - f(0)) / h
    } else if i == n - 1 {
        (f(n - 1) - f(n - 2)) / h
    } else {
        (f(i + 1) - f(i - 1)) / (2.0 * h)
    }
}

/// `d u_c / d x_a` at voxel `(x, y, z)` of a field given as per-voxel vectors.
pub fn field_derivative(vals: &[[f64; 3]], d: Dims, x: usize, y: usize, z: usize, c: usize, a: usize) -> f64 {
    match a {
        0 => fd(|i| vals[idx(d, i, y, z)][c], x, d.nx),
        1 => fd(|i| vals[idx(d, x, i, z)][c], y, d.ny),
        _ => fd(|i| vals[idx(d, x, y, i)][c], z, d.nz),
    }
}

pub fn field_vectors(u: &Tensor3) -> Vec<[f64; 3]> {
    let n = u.dims().voxels();
    (0..n)
        .map(|i| std::array::from_fn(|c| u.data()[c * n + i]))
        .collect()
}

/// Voxels whose Jacobian `I + du/dx` has a negative determinant.
pub fn brute_negative_jacobians(u: &Tensor3) -> usize {
    let d = u.dims();
    let vals = field_vectors(u);
    let mut count = 0;
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let j: [[f64; 3]; 3] = std::array::from_fn(|c| {
                    std::array::from_fn(|a| {
                        field_derivative(&vals, d, x, y, z, c, a) + (a == c) as u8 as f64
                    })
                });
                let det = j[0][0] * j[1][1] * j[2][2]
                    + j[0][1] * j[1][2] * j[2][0]
                    + j[0][2] * j[1][0] * j[2][1]
                    - j[0][2] * j[1][1] * j[2][0]
                    - j[0][0] * j[1][2] * j[2][1]
                    - j[0][1] * j[1][0] * j[2][2];
                if det < 0.0 {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Mean over interior voxels of `|grad(u_ab ∘ u_ba)|_F^2`.
pub fn brute_gradicon(u_ab: &Tensor3, u_ba: &Tensor3) -> f64 {
    let d = u_ba.dims();
    let composed = brute_compose(u_ab, u_ba);
    let (mut sum, mut count) = (0.0, 0usize);
    for z in 1..d.nz - 1 {
        for y in 1..d.ny - 1 {
            for x in 1..d.nx - 1 {
                for c in 0..3 {
                    for a in 0..3 {
                        sum += field_derivative(&composed, d, x, y, z, c, a).powi(2);
                    }
                }
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// In-bounds neighbourhood of radius `r` around `(x, y, z)`.
fn window(d: Dims, x: usize, y: usize, z: usize, r: usize) -> Vec<usize> {
    let range = |i: usize, n: usize| i.saturating_sub(r)..=(i + r).min(n - 1);
    let mut out = Vec::new();
    for zz in range(z, d.nz) {
        for yy in range(y, d.ny) {
            for xx in range(x, d.nx) {
                out.push(idx(d, xx, yy, zz));
            }
        }
    }
    out
}

/// Windowed Pearson correlation with `eps` added to both variances.
pub fn brute_lncc(a: &[f64], b: &[f64], d: Dims, r: usize, eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(d.voxels());
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let w = window(d, x, y, z, r);
                let n = w.len() as f64;
                let ma = w.iter().map(|&i| a[i]).sum::<f64>() / n;
                let mb = w.iter().map(|&i| b[i]).sum::<f64>() / n;
                let cov = w.iter().map(|&i| (a[i] - ma) * (b[i] - mb)).sum::<f64>() / n;
                let va = w.iter().map(|&i| (a[i] - ma).powi(2)).sum::<f64>() / n;
                let vb = w.iter().map(|&i| (b[i] - mb).powi(2)).sum::<f64>() / n;
                out.push(cov / ((va + eps) * (vb + eps)).sqrt());
            }
        }
    }
    out
}

/// Self-similarity context: for each pair of 6-neighbours at distance
/// sqrt(2), the patch mean of squared differences between the image shifted
/// by either neighbour (shifts clamp at the faces), then `exp(-ssd / V)` with
/// `V` the per-voxel mean ssd floored at `eps`. Output is `[channel][voxel]`.
pub fn brute_mind(a: &[f64], d: Dims, patch: usize, eps: f64) -> Vec<Vec<f64>> {
    let six: [[isize; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
    let mut pairs = Vec::new();
    for i in 0..6 {
        for j in i + 1..6 {
            let dist2: isize = (0..3).map(|k| (six[i][k] - six[j][k]).pow(2)).sum();
            if dist2 == 2 {
                pairs.push((i, j));
            }
        }
    }
    assert_eq!(pairs.len(), 12);
    let n = d.as_array();
    let at = |p: [usize; 3], o: [isize; 3]| {
        let q: [usize; 3] =
            std::array::from_fn(|k| (p[k] as isize + o[k]).clamp(0, n[k] as isize - 1) as usize);
        a[idx(d, q[0], q[1], q[2])]
    };
    let mut ssd = vec![vec![0.0; d.voxels()]; 12];
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let w = window(d, x, y, z, patch);
                for (k, &(i, j)) in pairs.iter().enumerate() {
                    let s: f64 = w
                        .iter()
                        .map(|&v| {
                            let p = [v % d.nx, (v / d.nx) % d.ny, v / (d.nx * d.ny)];
                            (at(p, six[i]) - at(p, six[j])).powi(2)
                        })
                        .sum();
                    ssd[k][idx(d, x, y, z)] = s / w.len() as f64;
                }
            }
        }
    }
    let mut out = vec![vec![0.0; d.voxels()]; 12];
    for v in 0..d.voxels() {
        let mean = (0..12).map(|k| ssd[k][v]).sum::<f64>() / 12.0;
        let var = mean.max(eps);
        for k in 0..12 {
            out[k][v] = (-ssd[k][v] / var).exp();
        }
    }
    out
}

/// Percentile by sorting and interpolating at zero-based rank `q (n - 1)`.
pub fn sorted_percentile(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let r = q * (s.len() - 1) as f64;
    let lo = r.floor() as usize;
    let hi = r.ceil() as usize;
    s[lo] + (r - lo as f64) * (s[hi] - s[lo])
}

/// Phantom at 32^3 with four structures and a 3-voxel, two-bump deformation.
pub struct PhantomCase {
    pub a: Volume,
    pub b: Volume,
    pub truth: TruthBundle,
}

pub const PHANTOM_DIM: usize = 32;

pub fn phantom_case(remap_b: ModalityRemap) -> PhantomCase {
    let dims = Dims::cube(PHANTOM_DIM);
    let phantom = make_phantom(1, dims, 4).unwrap();
    let psi = make_deformation(2, dims, 3.0, 2).unwrap();
    let (a, b, truth) = render_pair(&phantom, &ModalityRemap::Identity, &remap_b, &psi).unwrap();
    PhantomCase { a, b, truth }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

use mmreg::sampling::{DatasetManifest, Pairing, Patient, Region, Scan};

/// `patients` patients scanned with every modality; intra-patient datasets
/// get two sessions each.
pub fn manifest(
    name: &str,
    region: Region,
    pairing: Pairing,
    modalities: &[&str],
    randomization: bool,
    weights: (f64, f64),
    patients: usize,
) -> DatasetManifest {
    let sessions = if pairing == Pairing::IntraPatient { 2 } else { 1 };
    DatasetManifest {
        name: name.into(),
        region,
        pairing,
        patients: (0..patients)
            .map(|p| Patient {
                id: format!("{name}-{p}"),
                scans: (0..sessions)
                    .flat_map(|s| {
                        modalities.iter().map(move |m| Scan {
                            modality: m.to_string(),
                            path: format!("{name}/{p}/{s}/{m}.nii"),
                            session: s,
                        })
                    })
                    .collect(),
                atlas: pairing == Pairing::Atlas && p == 0,
            })
            .collect(),
        label_randomization: randomization,
        training_weight: weights.0,
        finetuning_weight: weights.1,
    }
}

/// The eight training datasets with their modalities, flags and percentages.
pub fn training_mix() -> Vec<DatasetManifest> {
    use Pairing::{InterPatient as Inter, IntraPatient as Intra};
    vec![
        manifest("COPDGene", Region::Lung, Intra, &["CT"], false, (2.12, 8.33), 4),
        manifest("OAI", Region::Knee, Inter, &["DESS", "T2"], false, (6.38, 12.5), 4),
        manifest("HCP", Region::Brain, Inter, &["T1w", "T2w"], true, (6.38, 8.33), 4),
        manifest("L2R-Abdomen", Region::Abdomen, Inter, &["CT"], true, (6.38, 6.25), 4),
        manifest("BratsReg", Region::Brain, Intra, &["T1w", "T1ce", "T2w", "FLAIR"], true, (21.27, 8.33), 4),
        manifest("ABCD", Region::Brain, Inter, &["FA", "MD"], true, (6.38, 0.0), 4),
        manifest("L2R-AbdomenMRCT", Region::Abdomen, Inter, &["CT", "T1w"], false, (12.76, 6.25), 4),
        manifest("UK Biobank", Region::NeckToKnee, Inter, &["DixonFat", "DixonWater"], true, (38.29, 27.08), 4),
    ]
}
