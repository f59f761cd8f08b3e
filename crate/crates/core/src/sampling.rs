//! Dataset manifests and the choice of input and loss pairs.
//!
//! A plan names the two scans fed to the map predictor and the two scans the
//! similarity is measured on. Loss scans always come from the same session
//! (co-registered acquisition) as the corresponding input scan:
//!
//! - `B`: loss scans are the input scans.
//! - `F`: one modality shared by both sessions is drawn and used on both sides.
//! - `R`: each side draws its loss modality independently.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    Lung,
    Knee,
    Brain,
    Abdomen,
    Pancreas,
    NeckToKnee,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Two sessions of one patient.
    IntraPatient,
    /// Two different patients.
    InterPatient,
    /// Every non-atlas patient against the atlas entry.
    Atlas,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scan {
    pub modality: String,
    pub path: String,
    /// Scans sharing a session are co-registered.
    #[serde(default)]
    pub session: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patient {
    pub id: String,
    pub scans: Vec<Scan>,
    #[serde(default)]
    pub atlas: bool,
}

impl Patient {
    /// Session id -> scans, in session order.
    fn sessions(&self) -> BTreeMap<u32, Vec<&Scan>> {
        let mut out: BTreeMap<u32, Vec<&Scan>> = BTreeMap::new();
        for s in &self.scans {
            out.entry(s.session).or_default().push(s);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub region: Region,
    pub pairing: Pairing,
    pub patients: Vec<Patient>,
    /// Off means strategy B for this dataset whatever is requested.
    pub label_randomization: bool,
    /// Percent of the training set.
    #[serde(default)]
    pub training_weight: f64,
    /// Percent of the finetuning set.
    #[serde(default)]
    pub finetuning_weight: f64,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::DatasetConfig(format!("{}: {msg}", self.name)));
        if self.patients.is_empty() {
            return bad("no patients".into());
        }
        if let Some(p) = self.patients.iter().find(|p| p.scans.is_empty()) {
            return bad(format!("patient {} has no scans", p.id));
        }
        for (what, w) in [("training", self.training_weight), ("finetuning", self.finetuning_weight)] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{what} weight must be non-negative, got {w}"));
            }
        }
        match self.pairing {
            Pairing::InterPatient if self.patients.len() < 2 => {
                bad("inter-patient pairing needs at least two patients".into())
            }
            Pairing::IntraPatient if !self.patients.iter().any(|p| p.sessions().len() >= 2) => {
                bad("intra-patient pairing needs a patient with two sessions".into())
            }
            Pairing::Atlas => {
                let atlases = self.patients.iter().filter(|p| p.atlas).count();
                if atlases != 1 || self.patients.len() < 2 {
                    bad(format!(
                        "atlas pairing needs exactly one atlas and one other patient, found {atlases} atlas entries"
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn modalities(&self) -> BTreeSet<&str> {
        self.patients
            .iter()
            .flat_map(|p| p.scans.iter().map(|s| s.modality.as_str()))
            .collect()
    }
}

/// Accepts a JSON array of manifests or a single manifest object.
pub fn load_manifests(path: impl AsRef<Path>) -> Result<Vec<DatasetManifest>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<DatasetManifest>),
        One(DatasetManifest),
    }
    let text = std::fs::read_to_string(path)?;
    let ms = match serde_json::from_str(&text)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(m) => vec![m],
    };
    check_manifests(&ms)?;
    Ok(ms)
}

fn check_manifests(ms: &[DatasetManifest]) -> Result<()> {
    if ms.is_empty() {
        return Err(Error::DatasetConfig("no datasets given".into()));
    }
    let mut names = BTreeSet::new();
    for m in ms {
        m.validate()?;
        if !names.insert(m.name.as_str()) {
            return Err(Error::DatasetConfig(format!("dataset name {} is repeated", m.name)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplingStrategy {
    B,
    F,
    R,
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingStrategy::B => "B",
            SamplingStrategy::F => "F",
            SamplingStrategy::R => "R",
        })
    }
}

impl std::str::FromStr for SamplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "B" | "b" => Ok(SamplingStrategy::B),
            "F" | "f" => Ok(SamplingStrategy::F),
            "R" | "r" => Ok(SamplingStrategy::R),
            _ => Err(Error::invalid(format!("unknown strategy {s:?}; expected B, F or R"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPlan {
    pub dataset: String,
    /// Strategy actually applied: B when the dataset has randomization off.
    pub strategy: SamplingStrategy,
    pub patient_a: String,
    pub patient_b: String,
    pub session_a: u32,
    pub session_b: u32,
    pub input_a: String,
    pub input_b: String,
    pub loss_a: String,
    pub loss_b: String,
    /// Scans available in each side's session.
    pub choices_a: usize,
    pub choices_b: usize,
    pub draw_index: u64,
}

struct Side<'a> {
    patient: &'a Patient,
    session: u32,
    scans: Vec<&'a Scan>,
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

fn side<'a>(rng: &mut ChaCha8Rng, p: &'a Patient) -> Side<'a> {
    let sessions: Vec<(u32, Vec<&Scan>)> = p.sessions().into_iter().collect();
    let (session, scans) = pick(rng, &sessions).clone();
    Side {
        patient: p,
        session,
        scans,
    }
}

fn sides<'a>(rng: &mut ChaCha8Rng, m: &'a DatasetManifest) -> (Side<'a>, Side<'a>) {
    match m.pairing {
        Pairing::InterPatient => {
            let n = m.patients.len();
            let i = rng.random_range(0..n);
            let j = (i + rng.random_range(1..n)) % n;
            (side(rng, &m.patients[i]), side(rng, &m.patients[j]))
        }
        Pairing::IntraPatient => {
            let eligible: Vec<&Patient> =
                m.patients.iter().filter(|p| p.sessions().len() >= 2).collect();
            let p = *pick(rng, &eligible);
            let sessions: Vec<(u32, Vec<&Scan>)> = p.sessions().into_iter().collect();
            let n = sessions.len();
            let i = rng.random_range(0..n);
            let j = (i + rng.random_range(1..n)) % n;
            let mk = |k: usize| Side {
                patient: p,
                session: sessions[k].0,
                scans: sessions[k].1.clone(),
            };
            (mk(i), mk(j))
        }
        Pairing::Atlas => {
            let atlas = m.patients.iter().find(|p| p.atlas).expect("validated");
            let others: Vec<&Patient> = m.patients.iter().filter(|p| !p.atlas).collect();
            let p = *pick(rng, &others);
            (side(rng, p), side(rng, atlas))
        }
    }
}

fn draw(
    rng: &mut ChaCha8Rng,
    m: &DatasetManifest,
    strategy: SamplingStrategy,
    index: u64,
) -> Result<PairPlan> {
    let strategy = if m.label_randomization {
        strategy
    } else {
        SamplingStrategy::B
    };
    let (a, b) = sides(rng, m);
    let input_a = pick(rng, &a.scans).modality.clone();
    let input_b = pick(rng, &b.scans).modality.clone();
    let (loss_a, loss_b) = match strategy {
        SamplingStrategy::B => (input_a.clone(), input_b.clone()),
        SamplingStrategy::F => {
            let ma: BTreeSet<&str> = a.scans.iter().map(|s| s.modality.as_str()).collect();
            let shared: Vec<&str> = b
                .scans
                .iter()
                .map(|s| s.modality.as_str())
                .collect::<BTreeSet<_>>()
                .intersection(&ma)
                .copied()
                .collect();
            if shared.is_empty() {
                return Err(Error::DatasetConfig(format!(
                    "{}: patients {} and {} share no modality, strategy F cannot pick a loss modality",
                    m.name, a.patient.id, b.patient.id
                )));
            }
            let s = pick(rng, &shared).to_string();
            (s.clone(), s)
        }
        SamplingStrategy::R => (
            pick(rng, &a.scans).modality.clone(),
            pick(rng, &b.scans).modality.clone(),
        ),
    };
    Ok(PairPlan {
        dataset: m.name.clone(),
        strategy,
        patient_a: a.patient.id.clone(),
        patient_b: b.patient.id.clone(),
        session_a: a.session,
        session_b: b.session,
        input_a,
        input_b,
        loss_a,
        loss_b,
        choices_a: a.scans.len(),
        choices_b: b.scans.len(),
        draw_index: index,
    })
}

/// `n_pairs` plans, each from a uniformly chosen dataset.
pub fn build_plan(
    manifests: &[DatasetManifest],
    strategy: SamplingStrategy,
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<PairPlan>> {
    check_manifests(manifests)?;
    if n_pairs == 0 {
        return Err(Error::invalid("n_pairs must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_pairs as u64)
        .map(|i| {
            let m = pick(&mut rng, manifests);
            draw(&mut rng, m, strategy, i)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Training,
    Finetuning,
}

/// Derived dataset weights summing to 1.
///
/// Training: proportional to `k (k + 1) / 2`, the number of unordered modality
/// pairs (repeats allowed) a dataset with `k` modalities offers, so every
/// modality combination of every region is seen equally often.
/// Finetuning: each region gets the same share, split equally among its datasets.
pub fn dataset_weights(manifests: &[DatasetManifest], mode: WeightMode) -> Result<BTreeMap<String, f64>> {
    check_manifests(manifests)?;
    let raw: Vec<f64> = match mode {
        WeightMode::Training => manifests
            .iter()
            .map(|m| {
                let k = m.modalities().len() as f64;
                k * (k + 1.0) / 2.0
            })
            .collect(),
        WeightMode::Finetuning => {
            let mut per_region: BTreeMap<Region, usize> = BTreeMap::new();
            for m in manifests {
                *per_region.entry(m.region).or_default() += 1;
            }
            let regions = per_region.len() as f64;
            manifests
                .iter()
                .map(|m| 1.0 / (regions * per_region[&m.region] as f64))
                .collect()
        }
    };
    Ok(normalize(manifests, &raw))
}

/// The percentages stored in the manifests, normalized to sum to 1.
pub fn configured_weights(
    manifests: &[DatasetManifest],
    mode: WeightMode,
) -> Result<BTreeMap<String, f64>> {
    check_manifests(manifests)?;
    let raw: Vec<f64> = manifests
        .iter()
        .map(|m| match mode {
            WeightMode::Training => m.training_weight,
            WeightMode::Finetuning => m.finetuning_weight,
        })
        .collect();
    if raw.iter().sum::<f64>() <= 0.0 {
        return Err(Error::DatasetConfig(format!("every {mode:?} weight is zero")));
    }
    Ok(normalize(manifests, &raw))
}

fn normalize(manifests: &[DatasetManifest], raw: &[f64]) -> BTreeMap<String, f64> {
    let total: f64 = raw.iter().sum();
    manifests
        .iter()
        .zip(raw)
        .map(|(m, w)| (m.name.clone(), w / total))
        .collect()
}

/// Candidate pairs drawn per dataset before weighting.
pub const POOL_CAP: usize = 4000;
pub const PAIRS_PER_EPOCH: usize = 4000;

/// Draws a capped candidate pool per dataset, then `pairs_per_epoch` plans by
/// weighted sampling with replacement: a dataset by weight, a pool entry uniformly.
pub fn epoch_plan(
    manifests: &[DatasetManifest],
    weights: &BTreeMap<String, f64>,
    strategy: SamplingStrategy,
    pairs_per_epoch: usize,
    seed: u64,
) -> Result<Vec<PairPlan>> {
    check_manifests(manifests)?;
    let w: Vec<f64> = manifests
        .iter()
        .map(|m| {
            weights.get(&m.name).copied().ok_or_else(|| {
                Error::DatasetConfig(format!("no weight given for dataset {}", m.name))
            })
        })
        .collect::<Result<_>>()?;
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-6 || w.iter().any(|&x| x.is_nan() || x < 0.0) {
        return Err(Error::DatasetConfig(format!(
            "weights must be non-negative and sum to 1, got sum {total}"
        )));
    }
    if weights.len() != manifests.len() {
        return Err(Error::DatasetConfig("weights name a dataset that is not loaded".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<PairPlan>> = Vec::with_capacity(manifests.len());
    for (m, &wi) in manifests.iter().zip(&w) {
        let pool = if wi > 0.0 {
            (0..POOL_CAP as u64)
                .map(|i| draw(&mut rng, m, strategy, i))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        pools.push(pool);
    }
    let datasets = WeightedIndex::new(&w)
        .map_err(|e| Error::DatasetConfig(format!("bad dataset weights: {e}")))?;
    Ok((0..pairs_per_epoch as u64)
        .map(|i| {
            let pool = &pools[datasets.sample(&mut rng)];
            let mut p = pick(&mut rng, pool).clone();
            p.draw_index = i;
            p
        })
        .collect())
}

pub fn write_plans_csv(plans: &[PairPlan], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in plans {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plans_csv(path: impl AsRef<Path>) -> Result<Vec<PairPlan>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|p| p.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardReport {
    pub verdict: Verdict,
    pub plans: usize,
    /// Fraction of plan sides whose loss scan differs from the input scan.
    pub observed: f64,
    pub expected: f64,
    pub detail: String,
}

pub const GUARD_MIN_PLANS: usize = 1000;
pub const GUARD_TOLERANCE: f64 = 0.03;

/// Checks that loss scans are decoupled from input scans as `strategy` requires.
///
/// A side whose session offers `k` scans has its loss scan differ from the
/// input scan with probability `1 - 1/k` under both F and R, and never under B.
/// Loss pairs that copy the input pairs under F or R fail.
pub fn erratum_guard(plans: &[PairPlan], strategy: SamplingStrategy) -> GuardReport {
    let n = plans.len();
    let report = |verdict, observed, expected, detail: String| GuardReport {
        verdict,
        plans: n,
        observed,
        expected,
        detail,
    };
    if n < GUARD_MIN_PLANS {
        return report(
            Verdict::Inconclusive,
            f64::NAN,
            f64::NAN,
            format!("{n} plans; at least {GUARD_MIN_PLANS} are needed"),
        );
    }
    let mut differ = 0usize;
    let mut expected = 0.0;
    for p in plans {
        differ += (p.loss_a != p.input_a) as usize + (p.loss_b != p.input_b) as usize;
        if p.strategy != SamplingStrategy::B {
            expected += 2.0 - 1.0 / p.choices_a as f64 - 1.0 / p.choices_b as f64;
        }
    }
    let sides = 2.0 * n as f64;
    let observed = differ as f64 / sides;
    let expected = expected / sides;

    if strategy == SamplingStrategy::B {
        return if differ == 0 {
            report(Verdict::Pass, observed, 0.0, "loss pairs equal input pairs".into())
        } else {
            report(
                Verdict::Fail,
                observed,
                0.0,
                format!("{differ} sides use a loss scan other than the input under B"),
            )
        };
    }
    if strategy == SamplingStrategy::F {
        if let Some(p) = plans
            .iter()
            .find(|p| p.strategy == SamplingStrategy::F && p.loss_a != p.loss_b)
        {
            return report(
                Verdict::Fail,
                observed,
                expected,
                format!("plan {} has loss modalities {} and {}", p.draw_index, p.loss_a, p.loss_b),
            );
        }
    }
    if expected == 0.0 {
        return report(
            Verdict::Inconclusive,
            observed,
            expected,
            "no plan offers more than one modality".into(),
        );
    }
    if (observed - expected).abs() <= GUARD_TOLERANCE {
        report(
            Verdict::Pass,
            observed,
            expected,
            format!("loss scan differs from input on {:.1}% of sides", 100.0 * observed),
        )
    } else {
        report(
            Verdict::Fail,
            observed,
            expected,
            format!(
                "loss scan differs from input on {:.1}% of sides, expected {:.1}%; \
                 loss pairs look aliased to input pairs",
                100.0 * observed,
                100.0 * expected
            ),
        )
    }
}
