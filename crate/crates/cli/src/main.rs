//! `mmreg`: register, synthesize, evaluate, plan and preprocess.
//!
//! Exit codes: 0 success, 2 configuration error, 3 input/output or format
//! error, 4 numerical abort.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmreg::autodiff::Dims;
use mmreg::metrics::{self, MetricsReport, MtreDirection, Truth};
use mmreg::pipeline::{instance_optimize, instance_optimize_warm, RegistrationConfig};
use mmreg::sampling::{self, GuardReport};
use mmreg::similarity::SimilarityKind;
use mmreg::synthetic::{self, TruthBundle};
use mmreg::transforms::{percent_neg_jac, DisplacementField};
use mmreg::volume::{self, raw, Geometry, Modality, Volume};
use serde::Serialize;

use config::{RunConfig, WeightSource};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Numerical(String),
}

impl From<mmreg::Error> for CliError {
    fn from(e: mmreg::Error) -> Self {
        use mmreg::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) | E::DatasetConfig(_) => CliError::Config(msg),
            E::NumericalAbort { .. } | E::NonFinite { .. } | E::Domain { .. } => {
                CliError::Numerical(msg)
            }
            _ => CliError::Io(msg),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Numerical(m) => m,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "mmreg", version, about = "Multimodal deformable 3D registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Instance-optimize a map between two volumes, in both directions.
    Register {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Truth bundle directory from `synth`; adds metrics to the report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Start from this A-to-B field instead of the identity.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// Overrides `optimizer.steps`.
        #[arg(long)]
        steps: Option<usize>,
        /// Overrides `loss.similarity.kind` (LNCC, LNCC2, MIND_SSC, MSE).
        #[arg(long, value_parser = parse_similarity)]
        similarity: Option<SimilarityKind>,
    },
    /// Write a phantom pair and its truth bundle.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a registration result against a truth bundle.
    Evaluate {
        /// Directory holding `phi_ab.meta` (and optionally `phi_ba.meta`, `config.json`).
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Draw input/loss pair plans from dataset manifests and check them.
    Plan {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<sampling::SamplingStrategy>,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Clip and normalize intensities by modality.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Modality when the file does not record one (CT, T1w, ...).
        #[arg(long)]
        modality: Option<Modality>,
        /// Also replace a normalized CT `x` by `1 - x`.
        #[arg(long)]
        invert_ct: bool,
        /// Resample to `NX,NY,NZ` after normalizing.
        #[arg(long, value_parser = parse_dims)]
        resize: Option<Dims>,
    },
}

fn parse_similarity(s: &str) -> Result<SimilarityKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown similarity {s:?}; expected LNCC, LNCC2, MIND_SSC or MSE"))
}

fn parse_dims(s: &str) -> Result<Dims, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("bad dims {s:?}: {e}"))?;
    match v.as_slice() {
        [x, y, z] if *x > 0 && *y > 0 && *z > 0 => Ok(Dims::new(*x, *y, *z)),
        _ => Err(format!("dims must be three positive integers, got {s:?}")),
    }
}

fn extension(path: &Path) -> &str {
    path.extension().and_then(|e| e.to_str()).unwrap_or("")
}

fn read_volume(path: &Path) -> CliResult<Volume> {
    let v = match extension(path) {
        "nii" => volume::read_nifti(path),
        "meta" => raw::read_volume_raw(path),
        other => {
            return Err(CliError::Io(format!(
                "{}: unsupported volume extension {other:?}; use .nii or .meta",
                path.display()
            )))
        }
    };
    v.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_volume(v: &Volume, path: &Path) -> CliResult {
    match extension(path) {
        "nii" => volume::write_nifti(v, path)?,
        "meta" => raw::write_volume_raw(v, path)?,
        other => {
            return Err(CliError::Io(format!(
                "{}: unsupported volume extension {other:?}; use .nii or .meta",
                path.display()
            )))
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn file_id(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[derive(Serialize)]
struct RegisterReport {
    source: String,
    target: String,
    config: RegistrationConfig,
    config_hash: String,
    initial_loss: f64,
    final_loss: f64,
    final_terms: mmreg::icon::LossTerms,
    percent_neg_jac: f64,
    warnings: Vec<String>,
    metrics: Option<MetricsReport>,
}

fn truth_of(bundle: &TruthBundle) -> Truth {
    Truth {
        labels: Some((bundle.source_labels.clone(), bundle.target_labels.clone())),
        landmarks: Some((bundle.source_landmarks.clone(), bundle.target_landmarks.clone())),
    }
}

fn load_truth(dir: &Path) -> CliResult<TruthBundle> {
    TruthBundle::load(dir).map_err(|e| CliError::Io(format!("truth bundle {}: {e}", dir.display())))
}

#[allow(clippy::too_many_arguments)]
fn cmd_register(
    source: &Path,
    target: &Path,
    config: Option<&Path>,
    out_dir: &Path,
    truth: Option<&Path>,
    warm: Option<&Path>,
    steps: Option<usize>,
    similarity: Option<SimilarityKind>,
) -> CliResult {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = steps {
        cfg.optimizer.steps = s;
    }
    if let Some(k) = similarity {
        cfg.loss.similarity.kind = k;
    }
    let a = volume::preprocess(&read_volume(source)?)?;
    let b = volume::preprocess(&read_volume(target)?)?;
    let truth = truth.map(load_truth).transpose()?;
    create_dir(out_dir)?;

    eprintln!(
        "registering {} -> {} ({} steps, {:?})",
        source.display(),
        target.display(),
        cfg.optimizer.steps,
        cfg.loss.similarity.kind
    );
    let result = match warm {
        None => instance_optimize(&a, &b, &cfg.loss, &cfg.optimizer)?,
        Some(p) => {
            let phi = raw::read_field(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            instance_optimize_warm(&a, &b, &phi, None, &cfg.loss, &cfg.optimizer)?
        }
    };
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    result.save(out_dir)?;
    write_json(&result.config, &out_dir.join("config.json"))?;

    let (src_id, tgt_id) = (file_id(source), file_id(target));
    let hash = metrics::config_hash(&result.config)?;
    let metrics = match &truth {
        Some(t) => Some(metrics::evaluate_pair(&result, &truth_of(t), &a.geometry(), (&src_id, &tgt_id))?),
        None => None,
    };
    let report = RegisterReport {
        source: src_id,
        target: tgt_id,
        config: result.config.clone(),
        config_hash: hash,
        initial_loss: result.initial_loss(),
        final_loss: result.final_loss(),
        final_terms: result.final_terms,
        percent_neg_jac: percent_neg_jac(&result.phi_ab)?,
        warnings: result.warnings.clone(),
        metrics,
    };
    write_json(&report, &out_dir.join("report.json"))?;
    eprintln!(
        "loss {:.4e} -> {:.4e}, %|J|<0 = {:.3}",
        report.initial_loss, report.final_loss, report.percent_neg_jac
    );
    if let Some(m) = &report.metrics {
        if let (Some(e), Some(e0)) = (m.mtre_mm, m.mtre_identity_mm) {
            eprintln!("mTRE {e:.3} mm (identity {e0:.3} mm)");
        }
    }
    Ok(())
}

fn cmd_synth(out_dir: &Path, config: Option<&Path>) -> CliResult {
    let cfg = RunConfig::load(config)?.synth;
    let dims = Dims::new(cfg.dims[0], cfg.dims[1], cfg.dims[2]);
    let phantom = synthetic::make_phantom(cfg.seed, dims, cfg.structures)?;
    let deformation = synthetic::make_deformation(cfg.deformation_seed, dims, cfg.amplitude, cfg.bumps)?;
    let (a, b, truth) = synthetic::render_pair(&phantom, &cfg.remap_a, &cfg.remap_b, &deformation)?;
    create_dir(out_dir)?;
    write_volume(&a, &out_dir.join("source.nii"))?;
    write_volume(&b, &out_dir.join("target.nii"))?;
    truth.save(out_dir.join("truth"))?;
    write_json(&cfg, &out_dir.join("synth.json"))?;
    eprintln!("wrote phantom pair {dims} to {}", out_dir.display());
    Ok(())
}

fn cmd_evaluate(
    result: &Path,
    truth: &Path,
    out: &Path,
    csv: Option<&Path>,
    config: Option<&Path>,
) -> CliResult {
    let cfg = RunConfig::load(config)?.evaluate;
    let read_field = |name: &str| {
        let p = result.join(name);
        raw::read_field(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    };
    let phi_ab = read_field("phi_ab.meta")?;
    let hash = match std::fs::read_to_string(result.join("config.json")) {
        Ok(text) => {
            let c: RegistrationConfig = serde_json::from_str(&text)
                .map_err(|e| CliError::Io(format!("{}: {e}", result.join("config.json").display())))?;
            metrics::config_hash(&c)?
        }
        Err(_) => String::new(),
    };
    let bundle = load_truth(truth)?;
    let geometry: Geometry = bundle.source_labels.geometry();
    let ids = (file_id(result), file_id(truth));
    let mut report = metrics::evaluate_field(&phi_ab, &hash, &truth_of(&bundle), &geometry, (&ids.0, &ids.1))?;
    if cfg.mtre_direction == MtreDirection::SourceToTarget {
        let phi_ba = read_field("phi_ba.meta")?;
        let id = DisplacementField::identity(phi_ba.dims());
        let (s, t) = (&bundle.source_landmarks, &bundle.target_landmarks);
        report.mtre_mm = Some(metrics::mtre(s, t, &phi_ba, &geometry, cfg.mtre_direction)?);
        report.mtre_identity_mm = Some(metrics::mtre(s, t, &id, &geometry, cfg.mtre_direction)?);
    }
    report.write_json(out)?;
    if let Some(c) = csv {
        metrics::write_reports_csv(std::slice::from_ref(&report), c)?;
    }
    if let Some(d) = &report.dice {
        eprintln!("mean Dice {:.2}", d.mean);
    }
    if let Some(e) = report.mtre_mm {
        eprintln!("mTRE {e:.3} mm");
    }
    eprintln!("%|J|<0 = {:.3}", report.percent_neg_jac);
    Ok(())
}

#[derive(Serialize)]
struct PlanSummary<'a> {
    config: &'a config::PlanConfig,
    guard: GuardReport,
}

fn cmd_plan(
    manifest: &Path,
    out_dir: &Path,
    config: Option<&Path>,
    strategy: Option<sampling::SamplingStrategy>,
    pairs: Option<usize>,
    seed: Option<u64>,
) -> CliResult {
    let mut cfg = RunConfig::load(config)?.plan;
    cfg.strategy = strategy.unwrap_or(cfg.strategy);
    cfg.pairs = pairs.unwrap_or(cfg.pairs);
    cfg.seed = seed.unwrap_or(cfg.seed);
    let manifests = sampling::load_manifests(manifest).map_err(|e| match e {
        mmreg::Error::Io(io) => CliError::Io(format!("{}: {io}", manifest.display())),
        other => CliError::Config(format!("{}: {other}", manifest.display())),
    })?;
    let plans = if cfg.epoch {
        let weights = match cfg.weights {
            WeightSource::Configured => sampling::configured_weights(&manifests, cfg.mode)?,
            WeightSource::Derived => sampling::dataset_weights(&manifests, cfg.mode)?,
        };
        sampling::epoch_plan(&manifests, &weights, cfg.strategy, cfg.pairs, cfg.seed)?
    } else {
        sampling::build_plan(&manifests, cfg.strategy, cfg.pairs, cfg.seed)?
    };
    create_dir(out_dir)?;
    sampling::write_plans_csv(&plans, out_dir.join("plans.csv"))?;
    let guard = sampling::erratum_guard(&plans, cfg.strategy);
    println!("erratum guard: {:?} ({})", guard.verdict, guard.detail);
    write_json(&PlanSummary { config: &cfg, guard }, &out_dir.join("guard.json"))
}

fn cmd_preprocess(
    input: &Path,
    output: &Path,
    modality: Option<Modality>,
    invert: bool,
    resize: Option<Dims>,
) -> CliResult {
    let mut v = read_volume(input)?;
    if let Some(m) = modality {
        v.modality = m;
        v.normalized = false;
    }
    let mut out = volume::preprocess(&v)?;
    if invert {
        out = volume::invert_ct(&out)?;
    }
    if let Some(d) = resize {
        out = volume::resize_trilinear(&out, d)?;
    }
    write_volume(&out, output)?;
    let (lo, hi) = out
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    eprintln!("{} ({}): range [{lo}, {hi}]", output.display(), out.modality);
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Register {
            source,
            target,
            config,
            out_dir,
            truth,
            warm_start,
            steps,
            similarity,
        } => cmd_register(
            &source,
            &target,
            config.as_deref(),
            &out_dir,
            truth.as_deref(),
            warm_start.as_deref(),
            steps,
            similarity,
        ),
        Command::Synth { out_dir, config } => cmd_synth(&out_dir, config.as_deref()),
        Command::Evaluate {
            result,
            truth,
            out,
            csv,
            config,
        } => cmd_evaluate(&result, &truth, &out, csv.as_deref(), config.as_deref()),
        Command::Plan {
            manifest,
            out_dir,
            config,
            strategy,
            pairs,
            seed,
        } => cmd_plan(&manifest, &out_dir, config.as_deref(), strategy, pairs, seed),
        Command::Preprocess {
            input,
            output,
            modality,
            invert_ct,
            resize,
        } => cmd_preprocess(&input, &output, modality, invert_ct, resize),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
