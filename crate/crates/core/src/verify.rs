//! Certificate checking, the brute-force grid oracle, closed-loop simulation
//! and the trajectory audit.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Executor;
use crate::lipschitz::{compute_l_max, LipschitzBundle, LmaxBreakdown};
use crate::losses::{LossConfig, Workspace};
use crate::nets::Nets;
use crate::sampling::GridSpec;
use crate::systems::{RegionSpec, SystemModel};
use crate::{Error, Result};

/// `L_max·ε + η`, evaluated as a plain multiply then add (no fused step) so
/// the value is reproducible bit for bit.
#[inline(never)]
pub fn certificate_margin(l_max: f64, eps: f64, eta: f64) -> f64 {
    let product = core::hint::black_box(l_max * eps);
    product + eta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    NotCertified,
}

/// Where the constants behind `L_max` came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundSource {
    /// Every constant computed from the weights and the plant.
    Internal,
    /// Some constants replaced; maps each replaced name to its stated source.
    Override { constants: BTreeMap<String, String> },
    /// `L_max` taken as given.
    Reported { source: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub eta_star: f64,
    pub epsilon: f64,
    pub l_max: f64,
    /// Absent when `L_max` was supplied directly.
    pub breakdown: Option<LmaxBreakdown>,
    pub margin: f64,
    /// Loss tolerance folded into the margin in strict mode.
    pub strict_tolerance: Option<f64>,
    pub verdict: Verdict,
    pub bound_source: BoundSource,
    /// Content digests of the weight files and region config, filled by the
    /// caller that read them.
    #[serde(default)]
    pub digests: BTreeMap<String, String>,
    #[serde(default)]
    pub oracle: Option<OracleReport>,
}

impl Certificate {
    /// Certificate for a given `L_max`.
    pub fn from_l_max(eta_star: f64, eps: f64, l_max: f64, strict_tolerance: Option<f64>, source: BoundSource) -> Self {
        let margin = certificate_margin(l_max, eps, eta_star);
        let ok = match strict_tolerance {
            Some(tau) => margin <= 0.0 && margin + tau <= 0.0,
            None => margin <= 0.0,
        };
        Self {
            eta_star,
            epsilon: eps,
            l_max,
            breakdown: None,
            margin,
            strict_tolerance,
            verdict: if ok { Verdict::Certified } else { Verdict::NotCertified },
            bound_source: source,
            digests: BTreeMap::new(),
            oracle: None,
        }
    }

    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

/// Checks the validity condition `L_max·ε + η* ≤ 0` for a complete bundle.
///
/// With `strict_tolerance = Some(τ)` the residual loss tolerance is also
/// charged: `L_max·ε + η* + τ ≤ 0`.
pub fn check_certificate(
    eta_star: f64,
    eps: f64,
    bundle: &LipschitzBundle,
    strict_tolerance: Option<f64>,
) -> Result<Certificate> {
    let breakdown = compute_l_max(bundle)?;
    let source = if bundle.overridden.is_empty() {
        BoundSource::Internal
    } else {
        BoundSource::Override {
            constants: bundle.overridden.clone(),
        }
    };
    let mut cert = Certificate::from_l_max(eta_star, eps, breakdown.l_max, strict_tolerance, source);
    cert.breakdown = Some(breakdown);
    Ok(cert)
}

/// Grid maxima of `q1`, `q2` and `q3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub grid: GridSpec,
    pub covering_radius: f64,
    pub points: u64,
    pub init_points: u64,
    pub unsafe_points: u64,
    /// `max q_k`; `None` when `q_k` has no grid point to be evaluated on.
    pub max_q: [Option<f64>; 3],
    /// First grid point attaining each maximum, as `[x; x̂]`.
    pub argmax: [Option<Vec<f64>>; 3],
}

impl OracleReport {
    /// Whether every evaluated maximum is at most `eta`.
    pub fn satisfied(&self, eta: f64) -> bool {
        self.max_q.iter().flatten().all(|&q| q <= eta)
    }

    /// Largest of the three maxima.
    pub fn worst(&self) -> Option<f64> {
        self.max_q.iter().flatten().copied().reduce(f64::max)
    }
}

const ORACLE_CHUNK: usize = 2048;

#[derive(Clone)]
struct Best {
    value: f64,
    index: u64,
}

fn keep(best: &mut Option<Best>, value: f64, index: u64) {
    // Strict comparison keeps the first index on ties since chunks are
    // visited in order.
    match best {
        Some(b) if !(value > b.value) => {}
        _ => *best = Some(Best { value, index }),
    }
}

/// Evaluates `q1..q3` at every point of `grid` (over `D × D`) and returns the
/// maxima. `q1` is taken over points in `X₀ × X₀`, `q2` over the augmented
/// unsafe set and `q3` over every point.
pub fn grid_oracle<E: Executor>(
    exec: &E,
    nets: &Nets,
    sys: &SystemModel,
    region: &RegionSpec,
    cfg: &LossConfig,
    grid: &GridSpec,
    cap: u64,
) -> Result<OracleReport> {
    let n = region.state_dim();
    if grid.dim() != 2 * n {
        return Err(Error::Shape {
            context: "oracle grid",
            expected: 2 * n,
            got: grid.dim(),
        });
    }
    let count = grid.len();
    if count > cap as u128 {
        return Err(Error::GridCap { count, cap });
    }
    let total = count as usize;
    type Partial = ([Option<Best>; 3], u64, u64);
    let chunks = exec.map_chunks(total, ORACLE_CHUNK, |range| -> Result<Partial> {
        let mut ws = Workspace::new(nets, sys);
        let mut z = vec![0.0; 2 * n];
        let mut best: [Option<Best>; 3] = [None, None, None];
        let (mut init, mut unsafe_) = (0, 0);
        for i in range {
            let index = i as u64;
            grid.point_into(index, &mut z);
            let pw = ws.eval(nets, sys, cfg, &z)?;
            let member = region.classify(&z[..n], &z[n..]);
            if member.in_init {
                init += 1;
                keep(&mut best[0], -pw.b, index);
            }
            if member.in_aug_unsafe {
                unsafe_ += 1;
                keep(&mut best[1], pw.b + cfg.delta, index);
            }
            keep(&mut best[2], pw.q3, index);
        }
        Ok((best, init, unsafe_))
    });
    let mut best: [Option<Best>; 3] = [None, None, None];
    let (mut init, mut unsafe_) = (0, 0);
    for c in chunks {
        let (b, i, u) = c?;
        init += i;
        unsafe_ += u;
        for k in 0..3 {
            if let Some(b) = &b[k] {
                keep(&mut best[k], b.value, b.index);
            }
        }
    }
    Ok(OracleReport {
        grid: grid.clone(),
        covering_radius: grid.covering_radius(),
        points: total as u64,
        init_points: init,
        unsafe_points: unsafe_,
        max_q: [0, 1, 2].map(|k| best[k].as_ref().map(|b| b.value)),
        argmax: [0, 1, 2].map(|k| best[k].as_ref().map(|b| grid.point(b.index))),
    })
}

/// How the controller is applied during simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// `u = g(x̂)` re-evaluated in every integrator stage.
    Continuous,
    /// `u` refreshed at step starts once per `period` seconds and held.
    ZeroOrderHold { period: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub mode: ControlMode,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64) -> Self {
        Self {
            horizon,
            dt,
            mode: ControlMode::Continuous,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("time step must be positive".into()));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("horizon must be finite and nonnegative".into()));
        }
        if let ControlMode::ZeroOrderHold { period } = self.mode {
            if !(period > 0.0 && period.is_finite()) {
                return Err(Error::Config("hold period must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Closed-loop trajectory of the augmented system, one row per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub state_dim: usize,
    pub input_dim: usize,
    /// Class-K coefficient used for `residual`.
    pub alpha: f64,
    pub time: Vec<f64>,
    /// `[x; x̂]` per step, flattened.
    pub states: Vec<f64>,
    /// Applied input per step, flattened.
    pub inputs: Vec<f64>,
    pub barrier: Vec<f64>,
    /// `Ḃ` along the augmented field at each step.
    pub barrier_rate: Vec<f64>,
    /// `Ḃ + α·B`.
    pub residual: Vec<f64>,
    /// `x ∈ X \ X_u` and `x̂ ∈ X`.
    pub safe: Vec<bool>,
    /// Time at which `x` or `x̂` left `D`; integration stops there.
    pub exited_domain: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn x(&self, k: usize) -> &[f64] {
        let n = self.state_dim;
        &self.states[2 * n * k..2 * n * k + n]
    }

    pub fn xhat(&self, k: usize) -> &[f64] {
        let n = self.state_dim;
        &self.states[2 * n * k + n..2 * n * (k + 1)]
    }

    pub fn input(&self, k: usize) -> &[f64] {
        let m = self.input_dim;
        &self.inputs[m * k..m * (k + 1)]
    }

    pub fn final_state(&self) -> &[f64] {
        let n = self.state_dim;
        &self.states[self.states.len() - 2 * n..]
    }
}

struct Integrator<'a> {
    nets: &'a Nets,
    sys: &'a SystemModel,
    ws: Workspace,
    stages: [Vec<f64>; 4],
    probe: Vec<f64>,
}

impl Integrator<'_> {
    fn field(&mut self, z: &[f64], held: Option<&[f64]>, stage: usize) -> Result<()> {
        match held {
            Some(u) => self.ws.vector_field_held(self.nets, self.sys, z, u)?,
            None => self.ws.vector_field(self.nets, self.sys, z)?,
        }
        self.stages[stage].copy_from_slice(self.ws.field());
        Ok(())
    }

    /// One classical RK4 step of length `h`, in place.
    fn step(&mut self, z: &mut [f64], h: f64, held: Option<&[f64]>) -> Result<()> {
        self.field(z, held, 0)?;
        for (stage, scale) in [(1, 0.5), (2, 0.5), (3, 1.0)] {
            for i in 0..z.len() {
                self.probe[i] = z[i] + scale * h * self.stages[stage - 1][i];
            }
            let probe = core::mem::take(&mut self.probe);
            let r = self.field(&probe, held, stage);
            self.probe = probe;
            r?;
        }
        let [k1, k2, k3, k4] = &self.stages;
        for i in 0..z.len() {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

/// Integrates the augmented closed loop from `(x0, x̂0)` with classical RK4
/// and records the barrier, its residual and safety flags at every step.
///
/// Integration stops early, without error, if `x` or `x̂` leaves `D`.
pub fn simulate(
    nets: &Nets,
    sys: &SystemModel,
    region: &RegionSpec,
    loss: &LossConfig,
    x0: &[f64],
    xhat0: &[f64],
    cfg: &SimConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let (n, m) = (sys.state_dim(), sys.input_dim());
    for (context, v) in [("initial state", x0), ("initial estimate", xhat0)] {
        if v.len() != n {
            return Err(Error::Shape {
                context,
                expected: n,
                got: v.len(),
            });
        }
    }
    let mut z = x0.to_vec();
    z.extend_from_slice(xhat0);
    let mut integ = Integrator {
        nets,
        sys,
        ws: Workspace::new(nets, sys),
        stages: [vec![0.0; 2 * n], vec![0.0; 2 * n], vec![0.0; 2 * n], vec![0.0; 2 * n]],
        probe: vec![0.0; 2 * n],
    };
    let ratio = cfg.horizon / cfg.dt;
    let steps = if (ratio - libm::round(ratio)).abs() < 1e-9 * ratio.max(1.0) {
        libm::round(ratio) as usize
    } else {
        libm::ceil(ratio) as usize
    };
    let mut traj = Trajectory {
        state_dim: n,
        input_dim: m,
        alpha: loss.alpha,
        time: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity((steps + 1) * 2 * n),
        inputs: Vec::with_capacity((steps + 1) * m),
        barrier: Vec::with_capacity(steps + 1),
        barrier_rate: Vec::with_capacity(steps + 1),
        residual: Vec::with_capacity(steps + 1),
        safe: Vec::with_capacity(steps + 1),
        exited_domain: None,
    };
    let mut held: Option<(u64, Vec<f64>)> = None;
    for k in 0..=steps {
        let t = if k == steps { cfg.horizon } else { k as f64 * cfg.dt };
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "simulated state",
                state: z.clone(),
            });
        }
        let pw = integ.ws.eval(nets, sys, loss, &z)?;
        let continuous = integ.ws.control().to_vec();
        if let ControlMode::ZeroOrderHold { period } = cfg.mode {
            let slot = libm::floor(t / period + 1e-9) as u64;
            if held.as_ref().map_or(true, |(s, _)| *s != slot) {
                held = Some((slot, continuous.clone()));
            }
        }
        let applied = held.as_ref().map_or(&continuous, |(_, u)| u);
        traj.time.push(t);
        traj.states.extend_from_slice(&z);
        traj.inputs.extend_from_slice(applied);
        traj.barrier.push(pw.b);
        traj.barrier_rate.push(pw.bdot);
        traj.residual.push(pw.bdot + loss.alpha * pw.b);
        traj.safe.push(region.is_safe_state(&z[..n]) && region.safe_box.contains(&z[n..]));
        if !(region.domain.contains(&z[..n]) && region.domain.contains(&z[n..])) {
            traj.exited_domain = Some(t);
            break;
        }
        if k == steps {
            break;
        }
        let h = if k + 1 == steps { cfg.horizon - t } else { cfg.dt };
        let u = held.as_ref().map(|(_, u)| u.clone());
        integ.step(&mut z, h, u.as_deref())?;
    }
    Ok(traj)
}

/// `count` initial pairs `(x0, x̂0)` drawn uniformly from `X₀ × X₀`.
pub fn initial_pairs(region: &RegionSpec, count: usize, seed: u64) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    const MAX_TRIES: usize = 100_000;
    let bounds = region.init_bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Result<Vec<f64>> {
        for _ in 0..MAX_TRIES {
            let p: Vec<f64> = bounds
                .lo
                .iter()
                .zip(&bounds.hi)
                .map(|(&lo, &hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
                .collect();
            if region.init.contains(&p) {
                return Ok(p);
            }
        }
        Err(Error::Config("could not draw a point inside the initial set".into()))
    };
    (0..count)
        .map(|_| {
            let x = draw(&mut rng)?;
            let xhat = draw(&mut rng)?;
            Ok((x, xhat))
        })
        .collect()
}

/// Simulates every pair; results come back in input order.
pub fn simulate_many<E: Executor>(
    exec: &E,
    nets: &Nets,
    sys: &SystemModel,
    region: &RegionSpec,
    loss: &LossConfig,
    pairs: &[(Vec<f64>, Vec<f64>)],
    cfg: &SimConfig,
) -> Vec<Result<Trajectory>> {
    exec.map_chunks(pairs.len(), 1, |range| {
        let (x0, xhat0) = &pairs[range.start];
        simulate(nets, sys, region, loss, x0, xhat0, cfg)
    })
}

/// Outcome of one audit check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub passed: bool,
    pub first_violation: Option<f64>,
    /// Smallest value seen (for the safety check, 1 if always safe else 0).
    pub worst: f64,
}

impl CheckOutcome {
    fn scan(time: &[f64], values: impl Iterator<Item = f64>, floor: f64) -> Self {
        let mut out = Self {
            passed: true,
            first_violation: None,
            worst: f64::INFINITY,
        };
        for (t, v) in time.iter().zip(values) {
            out.worst = out.worst.min(v);
            if !(v >= floor) && out.passed {
                out.passed = false;
                out.first_violation = Some(*t);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub tolerance: f64,
    /// `B(x(0), x̂(0)) ≥ 0`.
    pub initial_barrier: CheckOutcome,
    /// `B(t) ≥ −tol`.
    pub barrier_nonnegative: CheckOutcome,
    /// `Ḃ + α·B ≥ −tol`.
    pub residual_nonnegative: CheckOutcome,
    /// `x(t) ∈ X \ X_u`, `x̂(t) ∈ X`, and the trajectory never left `D`.
    pub stays_safe: CheckOutcome,
    pub passed: bool,
}

/// Default audit tolerance, `1e-9·(1 + |B(0)|)`.
pub fn default_tolerance(traj: &Trajectory) -> f64 {
    1e-9 * (1.0 + traj.barrier.first().map_or(0.0, |b| b.abs()))
}

/// Checks the barrier conditions along a simulated trajectory.
pub fn audit(traj: &Trajectory, alpha: f64, tol: Option<f64>) -> AuditReport {
    let tol = tol.unwrap_or_else(|| default_tolerance(traj));
    let time = &traj.time;
    let initial_barrier = CheckOutcome::scan(&time[..time.len().min(1)], traj.barrier.iter().copied(), 0.0);
    let barrier_nonnegative = CheckOutcome::scan(time, traj.barrier.iter().copied(), -tol);
    let residual = traj.barrier_rate.iter().zip(&traj.barrier).map(|(d, b)| d + alpha * b);
    let residual_nonnegative = CheckOutcome::scan(time, residual, -tol);
    let mut stays_safe = CheckOutcome::scan(time, traj.safe.iter().map(|&s| if s { 1.0 } else { 0.0 }), 1.0);
    if let Some(t) = traj.exited_domain {
        stays_safe.worst = 0.0;
        if stays_safe.passed {
            stays_safe.passed = false;
            stays_safe.first_violation = Some(t);
        }
    }
    let passed = initial_barrier.passed && barrier_nonnegative.passed && residual_nonnegative.passed && stays_safe.passed;
    AuditReport {
        tolerance: tol,
        initial_barrier,
        barrier_nonnegative,
        residual_nonnegative,
        stays_safe,
        passed,
    }
}
