//! Constraint functions `q1..q3` and the training losses.
//!
//! For a sample `s = (x, x̂)` with `u = g(x̂)`:
//!
//! - `q1 = −B(s)` on `X₀ × X₀` samples,
//! - `q2 = B(s) + δ` on augmented-unsafe samples,
//! - `q3 = −∇ₓB·f(x, u) − ∇ₓ̂B·f̂(x̂, u, h(x) − h(x̂)) − α·B(s)` everywhere.
//!
//! The directional derivative `Ḃ = ∇B·[f; f̂]` comes from one tangent-mode
//! pass through the barrier network, so its parameter gradient is a single
//! reverse sweep over that pass.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::exec::{Executor, Sequential};
use crate::linalg::order_free_sum;
use crate::nets::Nets;
use crate::nn::Tape;
use crate::sampling::{Dataset, Subset};
use crate::systems::{AugmentedPoint, RegionSpec, SystemModel};
use crate::{Error, Result};

/// How the observer Lyapunov term enters the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverLoss {
    /// `Σ [eᵀ(f − f̂) + β·½|e|²]` as written. Unbounded below.
    #[default]
    Literal,
    /// `Σ ReLU(eᵀ(f − f̂) + β·½|e|²)`: only violations of the decay
    /// condition are penalized.
    Hinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    /// Margin turning `B < 0` on the unsafe set into `B + δ ≤ η`.
    pub delta: f64,
    /// Slope of the linear class-K function `α(b) = alpha·b`.
    pub alpha: f64,
    /// Decay rate in the observer term.
    pub beta: f64,
    /// Divide each sum by the size of its subset.
    #[serde(default)]
    pub mean_normalize: bool,
    #[serde(default)]
    pub observer_loss: ObserverLoss,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            k1: 1.0,
            k2: 1.0,
            k3: 1.0,
            k4: 1.0,
            delta: 0.01,
            alpha: 0.1,
            beta: 0.1,
            mean_normalize: false,
            observer_loss: ObserverLoss::Literal,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("k1", self.k1), ("k2", self.k2), ("k3", self.k3), ("k4", self.k4), ("delta", self.delta)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(alloc::format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("alpha must be nonnegative".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("beta must be positive".into()));
        }
        Ok(())
    }
}

/// Loss values over a dataset at a fixed margin `η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub l_cbf: f64,
    pub l_obs: f64,
    /// `ReLU(L_max·ε + η)`; zero until [`LossReport::with_validity`] is applied.
    pub l_p: f64,
    pub eta: f64,
    /// `max_r q_k(s_r)` over the subset each `q_k` lives on; `-inf` if empty.
    pub max_q: [f64; 3],
}

impl LossReport {
    pub fn with_validity(mut self, l_max: f64, eps: f64) -> Self {
        self.l_p = loss_p(self.eta, l_max, eps);
        self
    }

    /// `max_k max_r q_k`.
    pub fn max_violation(&self) -> f64 {
        self.max_q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `ReLU(L_max·ε + η)`.
pub fn loss_p(eta: f64, l_max: f64, eps: f64) -> f64 {
    (l_max * eps + eta).max(0.0)
}

/// Barrier value, its derivative along the augmented field and the
/// observer term at one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pointwise {
    pub b: f64,
    pub bdot: f64,
    /// `−Ḃ − α·B`.
    pub q3: f64,
    /// `eᵀ(f − f̂) + β·½|e|²`.
    pub observer: f64,
}

/// Which parameters receive gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradMask {
    pub barrier: bool,
    pub controller: bool,
    pub observer: bool,
    /// Include the observer loss in the objective.
    pub observer_loss: bool,
}

impl GradMask {
    pub const ALL: Self = Self {
        barrier: true,
        controller: true,
        observer: true,
        observer_loss: true,
    };
    /// Observer held at its current weights and its loss dropped.
    pub const FROZEN_OBSERVER: Self = Self {
        barrier: true,
        controller: true,
        observer: false,
        observer_loss: false,
    };
}

/// Scratch buffers for evaluating and differentiating one sample at a time.
#[derive(Debug, Clone)]
pub struct Workspace {
    n: usize,
    m: usize,
    barrier: Tape,
    controller: Tape,
    observer: Tape,
    u: Vec<f64>,
    v: Vec<f64>,
    fx: Vec<f64>,
    obs_in: Vec<f64>,
    y: Vec<f64>,
    err: Vec<f64>,
    jac: Vec<f64>,
    vbar: Vec<f64>,
    obs_in_bar: Vec<f64>,
    ubar: Vec<f64>,
    fx_bar: Vec<f64>,
    fhat_bar: Vec<f64>,
}

impl Workspace {
    pub fn new(nets: &Nets, sys: &SystemModel) -> Self {
        let (n, m, p) = (sys.state_dim(), sys.input_dim(), sys.output_dim());
        Self {
            n,
            m,
            barrier: nets.barrier.tape(),
            controller: nets.controller.tape(),
            observer: nets.observer.tape(),
            u: vec![0.0; m],
            v: vec![0.0; 2 * n],
            fx: vec![0.0; n],
            obs_in: vec![0.0; n + m + p],
            y: vec![0.0; p],
            err: vec![0.0; n],
            jac: vec![0.0; n * m],
            vbar: vec![0.0; 2 * n],
            obs_in_bar: vec![0.0; n + m + p],
            ubar: vec![0.0; m],
            fx_bar: vec![0.0; n],
            fhat_bar: vec![0.0; n],
        }
    }

    /// Control input from the last evaluation.
    pub fn control(&self) -> &[f64] {
        &self.u
    }

    /// `[f(x, u); f̂(x̂, u, y − ŷ)]` from the last evaluation.
    pub fn field(&self) -> &[f64] {
        &self.v
    }

    /// Fills [`Workspace::field`] and [`Workspace::control`] at `z = [x; x̂]`.
    pub fn vector_field(&mut self, nets: &Nets, sys: &SystemModel, z: &[f64]) -> Result<()> {
        nets.controller.forward_tape(&z[self.n..], &mut self.controller);
        self.u.copy_from_slice(self.controller.output());
        self.field_with_control(nets, sys, z)
    }

    /// Like [`Workspace::vector_field`] but with the control held at `u`
    /// instead of `g(x̂)`. Not valid before [`Workspace::backward`].
    pub fn vector_field_held(&mut self, nets: &Nets, sys: &SystemModel, z: &[f64], u: &[f64]) -> Result<()> {
        self.u.copy_from_slice(u);
        self.field_with_control(nets, sys, z)
    }

    fn field_with_control(&mut self, nets: &Nets, sys: &SystemModel, z: &[f64]) -> Result<()> {
        let (n, m) = (self.n, self.m);
        let (x, xhat) = z.split_at(n);
        let u = &self.u;
        sys.plant.eval_into(x, u, &mut self.fx);
        if self.fx.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "plant dynamics",
                state: z.to_vec(),
            });
        }
        self.obs_in[..n].copy_from_slice(xhat);
        self.obs_in[n..n + m].copy_from_slice(u);
        // innovation y − ŷ = C(x − x̂)
        for (e, (a, b)) in self.err.iter_mut().zip(x.iter().zip(xhat)) {
            *e = a - b;
        }
        sys.observe_into(&self.err, &mut self.y);
        self.obs_in[n + m..].copy_from_slice(&self.y);
        nets.observer.forward_tape(&self.obs_in, &mut self.observer);
        let fhat = self.observer.output();
        if fhat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "observer output",
                state: z.to_vec(),
            });
        }
        self.v[..n].copy_from_slice(&self.fx);
        self.v[n..].copy_from_slice(fhat);
        Ok(())
    }

    /// Evaluates `B`, `Ḃ`, `q3` and the observer term at `z = [x; x̂]`.
    pub fn eval(&mut self, nets: &Nets, sys: &SystemModel, cfg: &LossConfig, z: &[f64]) -> Result<Pointwise> {
        self.vector_field(nets, sys, z)?;
        nets.barrier.forward_tangent(z, &self.v, &mut self.barrier);
        let b = self.barrier.output()[0];
        let bdot = self.barrier.output_tangent()[0];
        if !(b.is_finite() && bdot.is_finite()) {
            return Err(Error::NonFinite {
                context: "barrier",
                state: z.to_vec(),
            });
        }
        let n = self.n;
        let mut inner = 0.0;
        let mut sq = 0.0;
        for i in 0..n {
            let e = self.err[i];
            inner += e * (self.v[i] - self.v[n + i]);
            sq += e * e;
        }
        Ok(Pointwise {
            b,
            bdot,
            q3: -bdot - cfg.alpha * b,
            observer: inner + cfg.beta * 0.5 * sq,
        })
    }

    /// Adds to `grads` the gradient of `c_b·B + c_bdot·Ḃ + w_obs·observer`
    /// at the sample last passed to [`Workspace::eval`].
    ///
    /// `grads` is laid out as [`Nets::offsets`] describes.
    pub fn backward(
        &mut self,
        nets: &Nets,
        sys: &SystemModel,
        z: &[f64],
        c_b: f64,
        c_bdot: f64,
        w_obs: f64,
        mask: GradMask,
        grads: &mut [f64],
    ) {
        if c_b == 0.0 && c_bdot == 0.0 && w_obs == 0.0 {
            return;
        }
        let (n, m) = (self.n, self.m);
        let [o0, o1, o2, o3] = nets.offsets();
        let (g_barrier, rest) = grads[o0..o3].split_at_mut(o1 - o0);
        let (g_controller, g_observer) = rest.split_at_mut(o2 - o1);

        if c_b != 0.0 || c_bdot != 0.0 {
            nets.barrier.backward(
                &mut self.barrier,
                &[c_b],
                Some(&[c_bdot]),
                mask.barrier.then_some(g_barrier),
                None,
                Some(&mut self.vbar),
            );
        } else {
            self.vbar.fill(0.0);
        }
        for i in 0..n {
            self.fx_bar[i] = self.vbar[i] + w_obs * self.err[i];
            self.fhat_bar[i] = self.vbar[n + i] - w_obs * self.err[i];
        }
        nets.observer.backward(
            &mut self.observer,
            &self.fhat_bar,
            None,
            mask.observer.then_some(g_observer),
            Some(&mut self.obs_in_bar),
            None,
        );
        if !mask.controller {
            return;
        }
        self.ubar.copy_from_slice(&self.obs_in_bar[n..n + m]);
        let (x, _) = z.split_at(n);
        sys.plant.input_jacobian_into(x, self.controller.output(), &mut self.jac);
        for j in 0..m {
            let mut acc = 0.0;
            for i in 0..n {
                acc += self.jac[i * m + j] * self.fx_bar[i];
            }
            self.ubar[j] += acc;
        }
        nets.controller.backward(&mut self.controller, &self.ubar, None, Some(g_controller), None, None);
    }
}

/// `q_k` at one augmented point; `q1` and `q2` are zero off their subsets.
pub fn eval_q(
    k: usize,
    point: &AugmentedPoint,
    nets: &Nets,
    sys: &SystemModel,
    region: &RegionSpec,
    cfg: &LossConfig,
) -> Result<f64> {
    if !(1..=3).contains(&k) {
        return Err(Error::Config(alloc::format!("constraint index must be 1, 2 or 3, got {k}")));
    }
    let z = point.concat();
    let mut ws = Workspace::new(nets, sys);
    let pw = ws.eval(nets, sys, cfg, &z)?;
    let member = region.membership(point);
    Ok(match k {
        1 if member.in_init => -pw.b,
        2 if member.in_aug_unsafe => pw.b + cfg.delta,
        3 => pw.q3,
        _ => 0.0,
    })
}

/// Per-subset normalization factors for `L1..L4`.
fn scales(ds: &Dataset, cfg: &LossConfig) -> [f64; 4] {
    if !cfg.mean_normalize {
        return [1.0; 4];
    }
    let inv = |c: usize| if c == 0 { 0.0 } else { 1.0 / c as f64 };
    let all = inv(ds.len());
    [inv(ds.count(Subset::Init)), inv(ds.count(Subset::Unsafe)), all, all]
}

const CHUNK: usize = 64;

#[derive(Default)]
struct Terms {
    t: [Vec<f64>; 4],
    max_q: [f64; 3],
}

/// Evaluates every loss over the full dataset.
pub fn evaluate<E: Executor>(
    exec: &E,
    ds: &Dataset,
    nets: &Nets,
    sys: &SystemModel,
    cfg: &LossConfig,
    eta: f64,
) -> Result<LossReport> {
    let chunks = exec.map_chunks(ds.len(), CHUNK, |range| -> Result<Terms> {
        let mut ws = Workspace::new(nets, sys);
        let mut out = Terms {
            max_q: [f64::NEG_INFINITY; 3],
            ..Terms::default()
        };
        for i in range {
            let pw = ws.eval(nets, sys, cfg, ds.point(i))?;
            if ds.is_init(i) {
                let q1 = -pw.b;
                out.max_q[0] = out.max_q[0].max(q1);
                out.t[0].push((q1 - eta).max(0.0));
            }
            if ds.is_unsafe(i) {
                let q2 = pw.b + cfg.delta;
                out.max_q[1] = out.max_q[1].max(q2);
                out.t[1].push((q2 - eta).max(0.0));
            }
            out.max_q[2] = out.max_q[2].max(pw.q3);
            out.t[2].push((pw.q3 - eta).max(0.0));
            out.t[3].push(match cfg.observer_loss {
                ObserverLoss::Literal => pw.observer,
                ObserverLoss::Hinge => pw.observer.max(0.0),
            });
        }
        Ok(out)
    });
    let mut all: [Vec<f64>; 4] = Default::default();
    let mut max_q = [f64::NEG_INFINITY; 3];
    for c in chunks {
        let c = c?;
        for k in 0..4 {
            all[k].extend_from_slice(&c.t[k]);
        }
        for k in 0..3 {
            max_q[k] = max_q[k].max(c.max_q[k]);
        }
    }
    let s = scales(ds, cfg);
    let [l1, l2, l3, l4] = [0, 1, 2, 3].map(|k| s[k] * order_free_sum(&mut all[k]));
    Ok(LossReport {
        l1,
        l2,
        l3,
        l4,
        l_cbf: cfg.k1 * l1 + cfg.k2 * l2 + cfg.k3 * l3,
        l_obs: cfg.k4 * l4,
        l_p: 0.0,
        eta,
        max_q,
    })
}

/// `L1`, `L2`, `L3` and `L_cbf` over the full dataset (other fields also filled).
pub fn loss_cbf(ds: &Dataset, nets: &Nets, sys: &SystemModel, cfg: &LossConfig, eta: f64) -> Result<LossReport> {
    evaluate(&Sequential, ds, nets, sys, cfg, eta)
}

/// `(L4, L_obs)` over the full dataset.
pub fn loss_obs(ds: &Dataset, nets: &Nets, sys: &SystemModel, cfg: &LossConfig) -> Result<(f64, f64)> {
    let r = evaluate(&Sequential, ds, nets, sys, cfg, 0.0)?;
    Ok((r.l4, r.l_obs))
}

/// Gradient of `L_cbf + L_obs` restricted to the samples in `batch`,
/// written into `grads` (laid out per [`Nets::offsets`]).
///
/// Chunks are reduced in order, so the result does not depend on how the
/// executor schedules them. A ReLU exactly at its kink contributes nothing.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradient<E: Executor>(
    exec: &E,
    ds: &Dataset,
    batch: &[usize],
    nets: &Nets,
    sys: &SystemModel,
    cfg: &LossConfig,
    eta: f64,
    mask: GradMask,
    grads: &mut [f64],
) -> Result<()> {
    let total = nets.num_params();
    if grads.len() != total {
        return Err(Error::Shape {
            context: "gradient buffer",
            expected: total,
            got: grads.len(),
        });
    }
    let s = scales(ds, cfg);
    let partials = exec.map_chunks(batch.len(), CHUNK, |range| -> Result<Vec<f64>> {
        let mut ws = Workspace::new(nets, sys);
        let mut g = vec![0.0; total];
        for &i in &batch[range] {
            let z = ds.point(i);
            let pw = ws.eval(nets, sys, cfg, z)?;
            let mut c_b = 0.0;
            let mut c_bdot = 0.0;
            if ds.is_init(i) && -pw.b - eta > 0.0 {
                c_b -= cfg.k1 * s[0];
            }
            if ds.is_unsafe(i) && pw.b + cfg.delta - eta > 0.0 {
                c_b += cfg.k2 * s[1];
            }
            if pw.q3 - eta > 0.0 {
                c_b -= cfg.k3 * cfg.alpha * s[2];
                c_bdot -= cfg.k3 * s[2];
            }
            let w_obs = if !mask.observer_loss {
                0.0
            } else {
                match cfg.observer_loss {
                    ObserverLoss::Literal => cfg.k4 * s[3],
                    ObserverLoss::Hinge if pw.observer > 0.0 => cfg.k4 * s[3],
                    ObserverLoss::Hinge => 0.0,
                }
            };
            ws.backward(nets, sys, z, c_b, c_bdot, w_obs, mask, &mut g);
        }
        Ok(g)
    });
    grads.fill(0.0);
    for part in partials {
        for (a, b) in grads.iter_mut().zip(part?) {
            *a += b;
        }
    }
    Ok(())
}
