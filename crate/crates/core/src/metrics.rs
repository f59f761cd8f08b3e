//! Registration quality: label overlap, landmark error and folding.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::RegistrationResult;
use crate::transforms::{percent_neg_jac, warp_labels_nearest, DisplacementField};
use crate::volume::{Geometry, LabelVolume, LandmarkSet};

/// Dice in percent per foreground label, and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceScores {
    pub per_label: BTreeMap<u32, f64>,
    pub mean: f64,
}

/// Overlap of every label > 0 present in either volume.
pub fn dice(warped: &LabelVolume, target: &LabelVolume) -> Result<DiceScores> {
    if warped.dims != target.dims {
        return Err(Error::dims("dice", warped.dims, target.dims));
    }
    // label -> (|A|, |B|, |A and B|)
    let mut counts: BTreeMap<u32, [usize; 3]> = BTreeMap::new();
    for (&a, &b) in warped.labels.iter().zip(&target.labels) {
        if a != 0 {
            counts.entry(a).or_default()[0] += 1;
        }
        if b != 0 {
            counts.entry(b).or_default()[1] += 1;
        }
        if a != 0 && a == b {
            counts.entry(a).or_default()[2] += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::DegenerateInput("dice: neither volume has a foreground label".into()));
    }
    let per_label: BTreeMap<u32, f64> = counts
        .into_iter()
        .map(|(l, [a, b, ab])| (l, 200.0 * ab as f64 / (a + b) as f64))
        .collect();
    let mean = per_label.values().sum::<f64>() / per_label.len() as f64;
    Ok(DiceScores { per_label, mean })
}

/// Which landmark set is pushed through the map.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtreDirection {
    /// `mean |x_src - phi(x_tgt)|`: `phi` is the A-to-B map, which pulls target
    /// points back into source space.
    #[default]
    TargetToSource,
    /// `mean |x_tgt - phi(x_src)|`, for use with the B-to-A map.
    SourceToTarget,
}

/// Mean landmark distance in mm after mapping. `geometry` converts between
/// millimetres and the map's normalized coordinates.
pub fn mtre(
    src: &LandmarkSet,
    tgt: &LandmarkSet,
    phi: &DisplacementField,
    geometry: &Geometry,
    direction: MtreDirection,
) -> Result<f64> {
    if src.len() != tgt.len() {
        return Err(Error::invalid(format!(
            "mtre needs index-matched landmarks, got {} source and {} target",
            src.len(),
            tgt.len()
        )));
    }
    if src.is_empty() {
        return Err(Error::invalid("mtre needs at least one landmark"));
    }
    src.validate_within(geometry)?;
    tgt.validate_within(geometry)?;
    let (moved, fixed) = match direction {
        MtreDirection::TargetToSource => (tgt, src),
        MtreDirection::SourceToTarget => (src, tgt),
    };
    let total: f64 = moved
        .points
        .iter()
        .zip(&fixed.points)
        .map(|(&m, f)| {
            let q = geometry.to_physical(phi.apply(geometry.to_normalized(m)));
            (0..3).map(|a| (q[a] - f[a]).powi(2)).sum::<f64>().sqrt()
        })
        .sum();
    Ok(total / src.len() as f64)
}

/// Ground truth a result is scored against.
#[derive(Debug, Clone, Default)]
pub struct Truth {
    /// Source and target label maps.
    pub labels: Option<(LabelVolume, LabelVolume)>,
    /// Source and target landmarks, index-matched.
    pub landmarks: Option<(LandmarkSet, LandmarkSet)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub source: String,
    pub target: String,
    pub dice: Option<DiceScores>,
    pub mtre_mm: Option<f64>,
    /// Landmark error of the identity map, for reference.
    pub mtre_identity_mm: Option<f64>,
    pub percent_neg_jac: f64,
    pub config_hash: String,
}

/// Hex SHA-256 of the JSON form of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

/// Scores `phi_ab` of `result`: source labels are warped onto the target
/// grid, target landmarks are mapped into source space.
pub fn evaluate_pair(
    result: &RegistrationResult,
    truth: &Truth,
    geometry: &Geometry,
    ids: (&str, &str),
) -> Result<MetricsReport> {
    evaluate_field(&result.phi_ab, &config_hash(&result.config)?, truth, geometry, ids)
}

/// [`evaluate_pair`] for a stored A-to-B map.
pub fn evaluate_field(
    phi: &DisplacementField,
    config_hash: &str,
    truth: &Truth,
    geometry: &Geometry,
    ids: (&str, &str),
) -> Result<MetricsReport> {
    if truth.labels.is_none() && truth.landmarks.is_none() {
        return Err(Error::invalid("evaluation needs labels or landmarks"));
    }
    let dice = match &truth.labels {
        Some((src, tgt)) => Some(dice(&warp_labels_nearest(src, phi)?, tgt)?),
        None => None,
    };
    let (mtre_mm, mtre_identity_mm) = match &truth.landmarks {
        Some((src, tgt)) => {
            let dir = MtreDirection::TargetToSource;
            let id = DisplacementField::identity(phi.dims());
            (
                Some(mtre(src, tgt, phi, geometry, dir)?),
                Some(mtre(src, tgt, &id, geometry, dir)?),
            )
        }
        None => (None, None),
    };
    Ok(MetricsReport {
        source: ids.0.to_string(),
        target: ids.1.to_string(),
        dice,
        mtre_mm,
        mtre_identity_mm,
        percent_neg_jac: percent_neg_jac(phi)?,
        config_hash: config_hash.to_string(),
    })
}

impl MetricsReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<MetricsReport> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// One row per report; absent metrics are empty cells.
pub fn write_reports_csv(reports: &[MetricsReport], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "source",
        "target",
        "dice_mean",
        "mtre_mm",
        "mtre_identity_mm",
        "percent_neg_jac",
        "config_hash",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        w.write_record([
            r.source.clone(),
            r.target.clone(),
            opt(r.dice.as_ref().map(|d| d.mean)),
            opt(r.mtre_mm),
            opt(r.mtre_identity_mm),
            r.percent_neg_jac.to_string(),
            r.config_hash.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
