//! The pipeline steps behind each subcommand. Every command returns an
//! [`Outcome`] for the exit code, or an error for exit code 1.

use anyhow::{bail, Context};
use ncbf_core::lipschitz::{ConstantOverrides, LipschitzBundle, LmaxBreakdown};
use ncbf_core::losses::{LossConfig, LossReport};
use ncbf_core::sampling::{GridSpec, DEFAULT_SAMPLE_CAP};
use ncbf_core::trainer::{TrainConfig, Trainer};
use ncbf_core::verify::{
    audit, check_certificate, grid_oracle, initial_pairs, simulate_many, AuditReport, BoundSource, Certificate,
    ControlMode, OracleReport, SimConfig,
};
use ncbf_core::{Benchmark, Nets};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::{PlantConfig, TrainFile};
use crate::executor::Rayon;
use crate::files::{
    digest, digest_parts, read_bytes, read_checkpoint, read_json, read_weights, write_checkpoint, write_dataset_csv,
    write_json, write_loss_csv, write_trajectory_csv, write_weights, FileError, Header, Stamped,
};
use crate::plots;

/// Non-error result of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Converged, certified, or every audit passed.
    Success,
    /// An honest negative answer: not converged, not certified, or a
    /// failed audit.
    Negative,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Negative => 2,
        }
    }

    fn from_bool(ok: bool) -> Self {
        if ok {
            Outcome::Success
        } else {
            Outcome::Negative
        }
    }
}

pub const TRAIN_RESULT: &str = "train_result.json";
pub const LOSSES: &str = "losses.csv";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const DATASET: &str = "dataset.csv";
pub const AUDIT: &str = "audit.json";
/// Epochs between progress log lines.
const PROGRESS_EVERY: usize = 100;

struct LoadedPlant {
    bench: Benchmark,
    bytes: Vec<u8>,
}

fn load_plant(path: &Path) -> anyhow::Result<LoadedPlant> {
    let cfg = PlantConfig::load(path)?;
    let bench = cfg.resolve().with_context(|| format!("{}: invalid plant config", path.display()))?;
    Ok(LoadedPlant {
        bench,
        bytes: read_bytes(path)?,
    })
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub plant: PathBuf,
    pub config: PathBuf,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub resume: Option<PathBuf>,
    /// Write a checkpoint every this many epochs as well as at the end.
    pub checkpoint_every: Option<usize>,
    pub save_dataset: bool,
}

/// Everything a training run reports, written to `train_result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub message: String,
    pub converged: bool,
    pub sop_satisfied: bool,
    pub sop_epoch: Option<usize>,
    pub epochs: usize,
    pub eta: f64,
    pub epsilon: f64,
    pub samples: usize,
    pub tolerance: f64,
    pub loss: LossConfig,
    pub observer_frozen: bool,
    pub final_losses: LossReport,
    pub bundle: LipschitzBundle,
    pub l_max: LmaxBreakdown,
    /// The validity-condition verdict for the final networks.
    pub certificate: Certificate,
    /// Digests of the weight files, checked by `verify` and `simulate`.
    pub weights: BTreeMap<String, String>,
    pub plant_digest: String,
}

pub fn train(args: &TrainArgs) -> anyhow::Result<(Outcome, TrainSummary)> {
    let plant = load_plant(&args.plant)?;
    let file = TrainFile::load(&args.config)?;
    let train_bytes = read_bytes(&args.config)?;
    let header = Header::new(digest_parts(&[&plant.bytes, &train_bytes]));
    let exec = Rayon::new(args.threads)?;
    let Benchmark { system, region, .. } = &plant.bench;
    let cfg: TrainConfig = file.training.clone();

    let ds = file.dataset.build(&exec, region).context("building the training samples")?;
    log::info!("{} samples, covering radius {:.6}", ds.len(), ds.epsilon());
    if args.save_dataset {
        write_dataset_csv(&args.out.join(DATASET), &header, &ds)?;
    }
    let mut trainer = match &args.resume {
        Some(path) => {
            let ckpt = read_checkpoint(path)?;
            if ckpt.header.config_digest != header.config_digest {
                bail!("{}: checkpoint was produced by a different configuration", path.display());
            }
            Trainer::resume(&exec, &ds, system, region, cfg.clone(), ckpt.body.state)?
        }
        None => Trainer::new(&exec, &ds, system, region, cfg.clone())?,
    };
    let ckpt_every = args.checkpoint_every.map(|n| n.max(1));
    let ckpt_path = args.out.join(CHECKPOINT);
    loop {
        let start = trainer.state().epoch;
        let next = |n: usize| (start / n + 1) * n;
        let until = ckpt_every.map_or(next(PROGRESS_EVERY), |n| next(n).min(next(PROGRESS_EVERY)));
        trainer.run_for(until - start)?;
        let s = trainer.state();
        let last = s.history.last().unwrap();
        log::info!(
            "epoch {}: L_cbf {:.4e}, L_obs {:.4e}, eta {:.5}, L_max {:.4e}",
            s.epoch,
            last.losses.l_cbf,
            last.losses.l_obs,
            s.eta,
            s.l_max
        );
        if trainer.should_stop() || s.epoch >= cfg.epochs || s.epoch == start {
            break;
        }
        if ckpt_every.is_some_and(|n| s.epoch % n == 0) {
            write_checkpoint(&ckpt_path, s, &header)?;
        }
    }
    write_checkpoint(&ckpt_path, trainer.state(), &header)?;
    let result = trainer.finish()?;

    let weights = write_weights(&args.out, &result.nets, &header)?;
    write_loss_csv(&args.out.join(LOSSES), &header, &result.history)?;
    let strict = cfg.strict.then_some(cfg.tolerance);
    let mut certificate = check_certificate(result.eta, ds.epsilon(), &result.bundle, strict)?;
    certificate.digests = weights.clone();
    certificate.digests.insert("plant".into(), digest(&plant.bytes));
    let summary = TrainSummary {
        message: result.message.clone(),
        converged: result.converged,
        sop_satisfied: result.sop_satisfied,
        sop_epoch: result.sop_epoch,
        epochs: result.epochs,
        eta: result.eta,
        epsilon: ds.epsilon(),
        samples: ds.len(),
        tolerance: cfg.tolerance,
        loss: cfg.loss.clone(),
        observer_frozen: cfg.freeze_observer,
        final_losses: result.history.last().unwrap().losses.clone(),
        bundle: result.bundle.clone(),
        l_max: result.l_max,
        certificate,
        weights,
        plant_digest: digest(&plant.bytes),
    };
    write_json(
        &args.out.join(TRAIN_RESULT),
        &Stamped {
            header,
            body: summary.clone(),
        },
    )?;
    // A run configured to stop at the scenario problem succeeds when it is
    // solved; the certificate verdict is reported separately.
    let ok = result.converged || (cfg.stop_when_sop_satisfied && result.sop_satisfied);
    Ok((Outcome::from_bool(ok), summary))
}

/// Loads a training run's networks, refusing weight files whose digests do
/// not match the ones recorded at training time.
fn load_run(run: &Path) -> anyhow::Result<(Nets, Option<TrainSummary>, BTreeMap<String, String>)> {
    let (nets, digests) = read_weights(run)?;
    let result_path = run.join(TRAIN_RESULT);
    let summary = if result_path.exists() {
        let s: Stamped<TrainSummary> = read_json(&result_path)?;
        for (file, recorded) in &s.body.weights {
            let found = digests.get(file).cloned().unwrap_or_default();
            if &found != recorded {
                return Err(FileError::DigestMismatch {
                    path: run.join(file),
                    found,
                    expected: recorded.clone(),
                }
                .into());
            }
        }
        Some(s.body)
    } else {
        None
    };
    Ok((nets, summary, digests))
}

#[derive(Debug, Clone, Default)]
pub struct VerifyArgs {
    /// Training output directory; without it the override file must supply
    /// every constant.
    pub run: Option<PathBuf>,
    pub plant: PathBuf,
    pub epsilon: Option<f64>,
    pub eta: Option<f64>,
    pub overrides: Option<PathBuf>,
    pub strict: bool,
    pub tolerance: Option<f64>,
    /// Covering radius of a fresh grid for the oracle.
    pub oracle_epsilon: Option<f64>,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

pub fn verify(args: &VerifyArgs) -> anyhow::Result<(Outcome, Certificate)> {
    let plant = load_plant(&args.plant)?;
    let Benchmark { system, region, .. } = &plant.bench;
    let run = args.run.as_deref().map(load_run).transpose()?;
    let summary = run.as_ref().and_then(|r| r.1.as_ref());
    let eps = args
        .epsilon
        .or(summary.map(|s| s.epsilon))
        .context("--epsilon is required without a training result")?;
    let eta = args.eta.or(summary.map(|s| s.eta)).context("--eta is required without a training result")?;
    let loss = summary.map(|s| s.loss.clone()).unwrap_or_default();
    let tolerance = args.tolerance.or(summary.map(|s| s.tolerance)).unwrap_or(1e-4);
    let strict = args.strict.then_some(tolerance);

    let mut bundle = match &run {
        Some((nets, _, _)) => LipschitzBundle::compute(nets, system, region, loss.alpha)?,
        None => LipschitzBundle::missing(),
    };
    let overrides: Option<ConstantOverrides> = args.overrides.as_deref().map(read_json).transpose()?;
    let mut cert = match &overrides {
        Some(o) if o.l_max.is_some() => Certificate::from_l_max(
            eta,
            eps,
            o.l_max.unwrap(),
            strict,
            BoundSource::Reported {
                source: o.source.clone().unwrap_or_else(|| "override file".into()),
            },
        ),
        _ => {
            if let Some(o) = &overrides {
                bundle.apply(o);
            }
            check_certificate(eta, eps, &bundle, strict).context("incomplete constants for the certificate")?
        }
    };
    cert.digests.insert("plant".into(), digest(&plant.bytes));
    if let Some((nets, _, digests)) = &run {
        cert.digests.extend(digests.clone());
        if let Some(fine) = args.oracle_epsilon {
            let exec = Rayon::new(args.threads)?;
            let grid = GridSpec::for_epsilon(&region.augmented_domain(), fine)?;
            cert.oracle = Some(grid_oracle(&exec, nets, system, region, &loss, &grid, DEFAULT_SAMPLE_CAP)?);
        }
    } else if args.oracle_epsilon.is_some() {
        bail!("the grid oracle needs trained weights (--run)");
    }
    let header = Header::new(digest_parts(&[&plant.bytes, &serde_json::to_vec(&(eps, eta, &overrides, strict))?]));
    write_json(
        &args.out,
        &Stamped {
            header,
            body: cert.clone(),
        },
    )?;
    Ok((Outcome::from_bool(cert.is_certified()), cert))
}

#[derive(Debug, Clone, Default)]
pub struct OracleArgs {
    pub run: PathBuf,
    pub plant: PathBuf,
    pub epsilon: f64,
    pub eta: Option<f64>,
    /// Allowed excess over `η`; defaults to the training tolerance.
    pub slack: Option<f64>,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub eta: f64,
    pub slack: f64,
    pub satisfied: bool,
    pub report: OracleReport,
}

pub fn oracle(args: &OracleArgs) -> anyhow::Result<(Outcome, OracleSummary)> {
    let plant = load_plant(&args.plant)?;
    let Benchmark { system, region, .. } = &plant.bench;
    let (nets, summary, _) = load_run(&args.run)?;
    let eta = args
        .eta
        .or(summary.as_ref().map(|s| s.eta))
        .context("--eta is required without a training result")?;
    let slack = args.slack.or(summary.as_ref().map(|s| s.tolerance)).unwrap_or(0.0);
    let loss = summary.map(|s| s.loss).unwrap_or_default();
    let exec = Rayon::new(args.threads)?;
    let grid = GridSpec::for_epsilon(&region.augmented_domain(), args.epsilon)?;
    let report = grid_oracle(&exec, &nets, system, region, &loss, &grid, DEFAULT_SAMPLE_CAP)?;
    let out = OracleSummary {
        eta,
        slack,
        satisfied: report.satisfied(eta + slack),
        report,
    };
    let header = Header::new(digest_parts(&[&plant.bytes, &serde_json::to_vec(&(args.epsilon, eta, slack))?]));
    write_json(
        &args.out,
        &Stamped {
            header,
            body: out.clone(),
        },
    )?;
    Ok((Outcome::from_bool(out.satisfied), out))
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub run: PathBuf,
    pub plant: PathBuf,
    pub count: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    /// Zero-order-hold sample period; continuous feedback when absent.
    pub zoh: Option<f64>,
    /// Start every trajectory at the centre of the box enclosing `X₀`.
    pub center: bool,
    pub tolerance: Option<f64>,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAudit {
    pub file: String,
    pub x0: Vec<f64>,
    pub xhat0: Vec<f64>,
    pub steps: usize,
    pub min_barrier: f64,
    pub min_residual: f64,
    pub entered_unsafe: bool,
    pub audit: AuditReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub horizon: f64,
    pub dt: f64,
    pub mode: ControlMode,
    pub seed: u64,
    pub alpha: f64,
    pub trajectories: Vec<TrajectoryAudit>,
    pub passed: usize,
    pub failed: usize,
    /// Trajectories with a step where `x ∉ X \ X_u` or `x̂ ∉ X`.
    pub unsafe_entries: usize,
    pub min_barrier: f64,
    pub min_residual: f64,
}

pub fn trajectory_file(i: usize) -> String {
    format!("trajectory_{i:03}.csv")
}

pub fn simulate(args: &SimulateArgs) -> anyhow::Result<(Outcome, SimulationSummary)> {
    anyhow::ensure!(args.count >= 1, "at least one trajectory is required");
    let plant = load_plant(&args.plant)?;
    let Benchmark { system, region, .. } = &plant.bench;
    let (nets, summary, digests) = load_run(&args.run)?;
    let loss = summary.map(|s| s.loss).unwrap_or_default();
    let mut sim = SimConfig::new(args.horizon, args.dt);
    if let Some(period) = args.zoh {
        sim.mode = ControlMode::ZeroOrderHold { period };
    }
    sim.validate()?;
    let pairs = if args.center {
        let c = region.init_bounding_box().center();
        vec![(c.clone(), c); args.count]
    } else {
        initial_pairs(region, args.count, args.seed)?
    };
    let params = serde_json::to_vec(&(&sim, args.seed, args.count, args.center, args.tolerance))?;
    let weights_digest = serde_json::to_vec(&digests)?;
    let header = Header::new(digest_parts(&[&plant.bytes, &weights_digest, &params]));
    let exec = Rayon::new(args.threads)?;
    let trajectories = simulate_many(&exec, &nets, system, region, &loss, &pairs, &sim);
    let mut audits = Vec::with_capacity(pairs.len());
    for (i, (traj, (x0, xhat0))) in trajectories.into_iter().zip(&pairs).enumerate() {
        let traj = traj.with_context(|| format!("trajectory {i}"))?;
        let file = trajectory_file(i);
        write_trajectory_csv(&args.out.join(&file), &header, &traj)?;
        let report = audit(&traj, loss.alpha, args.tolerance);
        audits.push(TrajectoryAudit {
            file,
            x0: x0.clone(),
            xhat0: xhat0.clone(),
            steps: traj.len(),
            min_barrier: traj.barrier.iter().copied().fold(f64::INFINITY, f64::min),
            min_residual: traj.residual.iter().copied().fold(f64::INFINITY, f64::min),
            entered_unsafe: !report.stays_safe.passed,
            audit: report,
        });
    }
    let passed = audits.iter().filter(|a| a.audit.passed).count();
    let out = SimulationSummary {
        horizon: args.horizon,
        dt: args.dt,
        mode: sim.mode,
        seed: args.seed,
        alpha: loss.alpha,
        passed,
        failed: audits.len() - passed,
        unsafe_entries: audits.iter().filter(|a| a.entered_unsafe).count(),
        min_barrier: audits.iter().map(|a| a.min_barrier).fold(f64::INFINITY, f64::min),
        min_residual: audits.iter().map(|a| a.min_residual).fold(f64::INFINITY, f64::min),
        trajectories: audits,
    };
    write_json(
        &args.out.join(AUDIT),
        &Stamped {
            header,
            body: out.clone(),
        },
    )?;
    Ok((Outcome::from_bool(out.failed == 0), out))
}

#[derive(Debug, Clone, Default)]
pub struct ReportArgs {
    pub run: PathBuf,
    pub simulations: Option<PathBuf>,
    pub out: PathBuf,
}

/// Renders static SVG plots from a training run and, optionally, a
/// simulation directory. Returns the files written.
pub fn report(args: &ReportArgs) -> anyhow::Result<Vec<PathBuf>> {
    let result: Stamped<TrainSummary> = read_json(&args.run.join(TRAIN_RESULT))?;
    let header = result.header;
    let mut written = vec![plots::loss_history(&args.run.join(LOSSES), &args.out, &header)?];
    if let Some(dir) = &args.simulations {
        let sims: Stamped<SimulationSummary> = read_json(&dir.join(AUDIT))?;
        let files: Vec<PathBuf> = sims.body.trajectories.iter().map(|t| dir.join(&t.file)).collect();
        written.extend(plots::trajectories(&files, &args.out, &header)?);
    }
    Ok(written)
}
