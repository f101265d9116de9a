//! Joint training of the barrier, controller and observer networks and the
//! margin `η`.
//!
//! One epoch:
//!
//! 1. shuffle the dataset (the permutation depends only on the seed and the
//!    epoch number) and take an Adam step per batch on `L_cbf + L_obs`;
//! 2. every `lipschitz_refresh` epochs, recompute the Lipschitz bundle and
//!    `L_max`;
//! 3. take one projected subgradient step on `ReLU(L_max·ε + η) + pull·η`;
//! 4. evaluate every loss on the full dataset at the new `η`.
//!
//! Training has converged when `L_cbf ≤ τ`, `L_p = 0` (or
//! `L_max·ε + η + τ ≤ 0` in strict mode) and `L_obs` has stopped moving.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Executor;
use crate::lipschitz::{compute_l_max, LipschitzBundle, LmaxBreakdown};
use crate::losses::{batch_gradient, evaluate, loss_p, GradMask, LossConfig, LossReport};
use crate::nets::{Architecture, Nets};
use crate::nn::AdamState;
use crate::sampling::{Dataset, Subset};
use crate::systems::{RegionSpec, SystemModel};
use crate::{Error, Result};

/// Version tag written into checkpoints.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_barrier: f64,
    pub lr_controller: f64,
    pub lr_observer: f64,
    pub lr_eta: f64,
    #[serde(default)]
    pub eta_init: f64,
    /// Lower limit for `η`. Without it `η` follows a growing `L_max` down
    /// indefinitely when the bound cannot be met.
    #[serde(default)]
    pub eta_min: Option<f64>,
    /// Weight of the `pull·η` term; positive values push `η` down even once
    /// `L_p = 0`.
    #[serde(default)]
    pub eta_pull: f64,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_refresh")]
    pub lipschitz_refresh: usize,
    pub seed: u64,
    /// Keep the observer at its initial weights and drop `L_obs`.
    #[serde(default)]
    pub freeze_observer: bool,
    /// Require `L_max·ε + η + τ ≤ 0` instead of `L_p = 0`.
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "default_window")]
    pub plateau_window: usize,
    #[serde(default = "default_plateau_rtol")]
    pub plateau_rtol: f64,
    /// Stop as soon as `L_cbf ≤ τ`, even if the validity condition fails.
    #[serde(default)]
    pub stop_when_sop_satisfied: bool,
}

fn default_tolerance() -> f64 {
    1e-4
}

fn default_refresh() -> usize {
    1
}

fn default_window() -> usize {
    20
}

fn default_plateau_rtol() -> f64 {
    1e-3
}

impl TrainConfig {
    /// Configuration with the defaults used across the benchmarks.
    pub fn new(architecture: Architecture, epochs: usize, seed: u64) -> Self {
        Self {
            architecture,
            epochs,
            batch_size: 512,
            lr_barrier: 1e-3,
            lr_controller: 1e-3,
            lr_observer: 1e-3,
            lr_eta: 1e-3,
            eta_init: 0.0,
            eta_min: None,
            eta_pull: 0.0,
            loss: LossConfig::default(),
            tolerance: default_tolerance(),
            lipschitz_refresh: default_refresh(),
            seed,
            freeze_observer: false,
            strict: false,
            plateau_window: default_window(),
            plateau_rtol: default_plateau_rtol(),
            stop_when_sop_satisfied: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("loss tolerance must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.lipschitz_refresh == 0 {
            return Err(Error::Config("lipschitz refresh period must be positive".into()));
        }
        for (name, lr) in [
            ("lr_barrier", self.lr_barrier),
            ("lr_controller", self.lr_controller),
            ("lr_observer", self.lr_observer),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(alloc::format!("{name} must be positive")));
            }
        }
        if !(self.lr_eta >= 0.0 && self.eta_pull >= 0.0) {
            return Err(Error::Config("lr_eta and eta_pull must be nonnegative".into()));
        }
        if self.eta_init > 0.0 {
            return Err(Error::Config("eta_init must be nonpositive".into()));
        }
        if let Some(floor) = self.eta_min {
            if floor > self.eta_init {
                return Err(Error::Config("eta_min must not exceed eta_init".into()));
            }
        }
        Ok(())
    }

    fn mask(&self) -> GradMask {
        if self.freeze_observer {
            GradMask::FROZEN_OBSERVER
        } else {
            GradMask::ALL
        }
    }
}

/// One projected subgradient step on `ReLU(L_max·ε + η) + pull·η`, kept
/// in `[floor, 0]`.
pub fn update_eta(eta: f64, l_max: f64, eps: f64, lr_eta: f64, pull: f64, floor: Option<f64>) -> f64 {
    let active = if l_max * eps + eta > 0.0 { 1.0 } else { 0.0 };
    let next = (eta - lr_eta * (active + pull)).min(0.0);
    match floor {
        Some(f) => next.max(f),
        None => next,
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_max: f64,
    #[serde(flatten)]
    pub losses: LossReport,
}

/// Everything needed to continue a run: networks, optimizer moments,
/// margin, history and the epoch counter that fixes the next shuffle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub version: u32,
    pub seed: u64,
    pub epoch: usize,
    pub nets: Nets,
    pub eta: f64,
    pub adam: [AdamState; 3],
    pub bundle: LipschitzBundle,
    pub l_max: f64,
    pub history: Vec<EpochRecord>,
    /// First epoch at which `L_cbf ≤ τ` held.
    pub sop_epoch: Option<usize>,
    pub converged: bool,
}

/// Outcome of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub nets: Nets,
    pub eta: f64,
    pub history: Vec<EpochRecord>,
    pub converged: bool,
    pub sop_satisfied: bool,
    pub sop_epoch: Option<usize>,
    pub epochs: usize,
    pub bundle: LipschitzBundle,
    pub l_max: LmaxBreakdown,
    pub message: String,
}

/// Message reported when the epoch cap is reached without convergence.
pub const NOT_FOUND: &str = "No suitable barrier and controller found";

pub struct Trainer<'a, E: Executor> {
    exec: &'a E,
    ds: &'a Dataset,
    sys: &'a SystemModel,
    region: &'a RegionSpec,
    cfg: TrainConfig,
    state: TrainState,
    batch: Vec<usize>,
    grads: Vec<f64>,
}

impl<'a, E: Executor> Trainer<'a, E> {
    /// Fresh run with networks drawn from the configured seed.
    pub fn new(exec: &'a E, ds: &'a Dataset, sys: &'a SystemModel, region: &'a RegionSpec, cfg: TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let nets = Nets::random(&cfg.architecture, sys, &mut rng)?;
        Self::with_nets(exec, ds, sys, region, cfg, nets)
    }

    /// Fresh run from given networks.
    pub fn with_nets(
        exec: &'a E,
        ds: &'a Dataset,
        sys: &'a SystemModel,
        region: &'a RegionSpec,
        cfg: TrainConfig,
        nets: Nets,
    ) -> Result<Self> {
        cfg.validate()?;
        nets.validate(sys)?;
        check_dataset(ds, &cfg)?;
        let adam = [
            AdamState::new(nets.barrier.num_params(), cfg.lr_barrier),
            AdamState::new(nets.controller.num_params(), cfg.lr_controller),
            AdamState::new(nets.observer.num_params(), cfg.lr_observer),
        ];
        let bundle = LipschitzBundle::compute(&nets, sys, region, cfg.loss.alpha)?;
        let l_max = compute_l_max(&bundle)?.l_max;
        let eta = cfg.eta_init;
        let report = evaluate(exec, ds, &nets, sys, &cfg.loss, eta)?.with_validity(l_max, ds.epsilon());
        let grads = vec![0.0; nets.num_params()];
        let mut state = TrainState {
            version: CHECKPOINT_VERSION,
            seed: cfg.seed,
            epoch: 0,
            nets,
            eta,
            adam,
            bundle,
            l_max,
            history: vec![EpochRecord {
                epoch: 0,
                l_max,
                losses: report,
            }],
            sop_epoch: None,
            converged: false,
        };
        update_flags(&mut state, &cfg, ds.epsilon());
        Ok(Self {
            exec,
            ds,
            sys,
            region,
            cfg,
            state,
            batch: Vec::new(),
            grads,
        })
    }

    /// Continues from a checkpoint.
    pub fn resume(
        exec: &'a E,
        ds: &'a Dataset,
        sys: &'a SystemModel,
        region: &'a RegionSpec,
        cfg: TrainConfig,
        state: TrainState,
    ) -> Result<Self> {
        if state.version != CHECKPOINT_VERSION {
            return Err(Error::Config(alloc::format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                state.version
            )));
        }
        if state.seed != cfg.seed {
            return Err(Error::Config("checkpoint seed differs from the configured seed".into()));
        }
        cfg.validate()?;
        state.nets.validate(sys)?;
        check_dataset(ds, &cfg)?;
        let grads = vec![0.0; state.nets.num_params()];
        Ok(Self {
            exec,
            ds,
            sys,
            region,
            cfg,
            state,
            batch: Vec::new(),
            grads,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Whether the configured stopping rule is met.
    pub fn should_stop(&self) -> bool {
        self.state.converged || (self.cfg.stop_when_sop_satisfied && self.state.sop_epoch.is_some())
    }

    /// Runs one epoch. On error the state is left at the last good epoch.
    pub fn step_epoch(&mut self) -> Result<&EpochRecord> {
        let last_good = self.state.clone();
        match self.epoch_inner() {
            Ok(()) => Ok(self.state.history.last().unwrap()),
            Err(e) => {
                self.state = last_good;
                Err(e)
            }
        }
    }

    fn epoch_inner(&mut self) -> Result<()> {
        let epoch = self.state.epoch + 1;
        let mask = self.cfg.mask();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..self.ds.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(self.cfg.batch_size) {
            self.batch.clear();
            self.batch.extend_from_slice(chunk);
            let nets = &self.state.nets;
            batch_gradient(
                self.exec,
                self.ds,
                &self.batch,
                nets,
                self.sys,
                &self.cfg.loss,
                self.state.eta,
                mask,
                &mut self.grads,
            )?;
            let offsets = nets.offsets();
            let enabled = [mask.barrier, mask.controller, mask.observer];
            let nets = self.state.nets.nets_mut();
            for (k, net) in nets.into_iter().enumerate() {
                if enabled[k] {
                    let g = &self.grads[offsets[k]..offsets[k + 1]];
                    self.state.adam[k].step(net.params_mut(), g).map_err(|e| Error::Diverged {
                        epoch,
                        reason: alloc::format!("{e}"),
                    })?;
                }
            }
        }
        if epoch % self.cfg.lipschitz_refresh == 0 {
            let diverged = |e: Error| Error::Diverged {
                epoch,
                reason: alloc::format!("{e}"),
            };
            self.state.bundle =
                LipschitzBundle::compute(&self.state.nets, self.sys, self.region, self.cfg.loss.alpha).map_err(diverged)?;
            self.state.l_max = compute_l_max(&self.state.bundle).map_err(diverged)?.l_max;
        }
        let eps = self.ds.epsilon();
        self.state.eta = update_eta(
            self.state.eta,
            self.state.l_max,
            eps,
            self.cfg.lr_eta,
            self.cfg.eta_pull,
            self.cfg.eta_min,
        );
        let report = evaluate(self.exec, self.ds, &self.state.nets, self.sys, &self.cfg.loss, self.state.eta)
            .map_err(|e| Error::Diverged {
                epoch,
                reason: alloc::format!("{e}"),
            })?
            .with_validity(self.state.l_max, eps);
        if !(report.l_cbf.is_finite() && report.l_obs.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite loss".into(),
            });
        }
        self.state.epoch = epoch;
        self.state.history.push(EpochRecord {
            epoch,
            l_max: self.state.l_max,
            losses: report,
        });
        update_flags(&mut self.state, &self.cfg, eps);
        Ok(())
    }

    /// Runs until the stopping rule holds or the epoch cap is reached.
    pub fn run(mut self) -> Result<TrainResult> {
        while !self.should_stop() && self.state.epoch < self.cfg.epochs {
            self.step_epoch()?;
        }
        self.finish()
    }

    /// Runs at most `epochs` more epochs (bounded by the cap) and returns.
    pub fn run_for(&mut self, epochs: usize) -> Result<()> {
        let target = (self.state.epoch + epochs).min(self.cfg.epochs);
        while !self.should_stop() && self.state.epoch < target {
            self.step_epoch()?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<TrainResult> {
        let s = self.state;
        let l_max = compute_l_max(&s.bundle)?;
        let message = if s.converged {
            String::from("converged")
        } else if s.sop_epoch.is_some() {
            alloc::format!("{NOT_FOUND}: constraints met but the validity condition fails")
        } else {
            String::from(NOT_FOUND)
        };
        let last = s.history.last().unwrap();
        Ok(TrainResult {
            sop_satisfied: last.losses.l_cbf <= self.cfg.tolerance,
            nets: s.nets,
            eta: s.eta,
            converged: s.converged,
            sop_epoch: s.sop_epoch,
            epochs: s.epoch,
            bundle: s.bundle,
            l_max,
            message,
            history: s.history,
        })
    }
}

fn check_dataset(ds: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if ds.count(Subset::Init) == 0 {
        return Err(Error::EmptySubset("init"));
    }
    if ds.count(Subset::Unsafe) == 0 {
        return Err(Error::EmptySubset("unsafe"));
    }
    if cfg.batch_size > ds.len() {
        return Err(Error::Config(alloc::format!(
            "batch size {} exceeds the dataset size {}",
            cfg.batch_size,
            ds.len()
        )));
    }
    Ok(())
}

fn update_flags(state: &mut TrainState, cfg: &TrainConfig, eps: f64) {
    let last = state.history.last().unwrap();
    let tol = cfg.tolerance;
    let sop = last.losses.l_cbf <= tol;
    if sop && state.sop_epoch.is_none() {
        state.sop_epoch = Some(last.epoch);
    }
    let valid = if cfg.strict {
        state.l_max * eps + state.eta + tol <= 0.0
    } else {
        loss_p(state.eta, state.l_max, eps) == 0.0
    };
    state.converged = sop && valid && observer_plateaued(&state.history, cfg);
}

/// `L_obs` moved by less than `rtol` (relative) over the trailing window.
fn observer_plateaued(history: &[EpochRecord], cfg: &TrainConfig) -> bool {
    let w = cfg.plateau_window;
    if history.len() <= w {
        return false;
    }
    let now = history.last().unwrap().losses.l_obs;
    let scale = now.abs().max(1e-12);
    history[history.len() - 1 - w..]
        .iter()
        .all(|r| (r.losses.l_obs - now).abs() <= cfg.plateau_rtol * scale)
}

/// Trains from scratch with `cfg`.
pub fn train<E: Executor>(
    exec: &E,
    ds: &Dataset,
    sys: &SystemModel,
    region: &RegionSpec,
    cfg: TrainConfig,
) -> Result<TrainResult> {
    Trainer::new(exec, ds, sys, region, cfg)?.run()
}

#[cfg(test)]
mod tests;
