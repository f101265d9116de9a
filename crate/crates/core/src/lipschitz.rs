//! Sound bounds on network Lipschitz constants and the composite `L_max`.
//!
//! Network bounds are products of per-layer spectral norms: activation
//! slopes (Softplus, Tanh and the HardTanh clamp) never exceed 1, so
//! `L ≤ Π ‖W_k‖₂`. Spectral norms come from [`spectral_norm_bound`], an
//! enclosure rather than a bare power-iteration estimate.
//!
//! The gradient bound `L_dB` for a scalar network `B = w·a_{L−1} + b` with
//! hidden layers `a_k = σ(W_k a_{k−1} + b_k)` telescopes the difference of
//! the two Jacobian products `w D_{L−1} W_{L−1} ⋯ D_1 W_1` at `x` and `x'`.
//! The term where the diagonal `D_k = diag σ'(p_k)` differs is bounded by
//!
//! ```text
//! s2 · ‖w‖·Π_{j>k}‖W_j‖ · ‖W_k‖·Π_{j<k}‖W_j‖ · r_k·Π_{j<k}‖W_j‖ · ‖x − x'‖
//! ```
//!
//! with `s2 = sup|σ''|` and `r_k` the largest row norm of `W_k`, which bounds
//! `‖p_k − p_k'‖_∞`. For the last hidden layer the alternative split
//! `‖w diag(δ)‖₂ ≤ ‖w‖_∞ ‖δ‖₂` gives `‖w‖_∞·‖W_k‖` in place of `‖w‖₂·r_k`;
//! the smaller of the two is used.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::linalg::{max_row_norm, norm2, spectral_norm_bound};
use crate::nets::Nets;
use crate::nn::{Mlp, OutputTransform};
use crate::systems::{BoxSet, RegionSpec, SystemModel};
use crate::{Error, Result};

fn layer_norms(net: &Mlp) -> Result<Vec<f64>> {
    net.layers()
        .map(|l| spectral_norm_bound(l.weights, l.out_dim, l.in_dim))
        .collect()
}

/// Upper bound on the global Lipschitz constant of `net`.
pub fn mlp_lipschitz(net: &Mlp) -> Result<f64> {
    let slope = net.activation().max_slope();
    let hidden = (net.num_layers() - 1) as f64;
    Ok(layer_norms(net)?.iter().product::<f64>() * libm::pow(slope, hidden))
}

/// Upper bound on the Lipschitz constant of `∇B` for a scalar, unclamped
/// network (see the module docs for the recursion).
pub fn gradient_lipschitz_bound(net: &Mlp) -> Result<f64> {
    if net.output_dim() != 1 {
        return Err(Error::Unsupported {
            op: "gradient_lipschitz_bound",
            reason: "network output is not scalar",
        });
    }
    if *net.output_transform() != OutputTransform::Linear {
        return Err(Error::Unsupported {
            op: "gradient_lipschitz_bound",
            reason: "clamped output is not differentiable",
        });
    }
    let s2 = net.activation().max_curvature();
    let norms = layer_norms(net)?;
    let hidden = net.num_layers() - 1;
    if hidden == 0 {
        return Ok(0.0);
    }
    let out = net.layer(hidden);
    let w_inf = out.weights.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut total = 0.0;
    for k in 0..hidden {
        let layer = net.layer(k);
        let r_k = max_row_norm(layer.weights, layer.out_dim, layer.in_dim);
        let below: f64 = norms[..k].iter().product();
        let above: f64 = norms[k + 1..].iter().product();
        let mut front = above * r_k;
        if k + 1 == hidden {
            front = front.min(w_inf * norms[k]);
        }
        total += s2 * front * norms[k] * below * below;
    }
    Ok(total)
}

/// `sup ‖∇B‖`, bounded by the network Lipschitz constant.
pub fn sup_gradient_bound(net: &Mlp) -> Result<f64> {
    mlp_lipschitz(net)
}

/// `sup ‖net(v)‖` over `input`: value at the centre plus `L`·half-diagonal.
pub fn sup_output_bound(net: &Mlp, input: &BoxSet) -> Result<f64> {
    let centre = net.forward(&input.center())?;
    Ok(norm2(&centre) + mlp_lipschitz(net)? * input.half_diagonal())
}

/// Box over which the observer is evaluated: `x̂ ∈ D`, `u ∈ U`, innovation
/// `h(x) − h(x̂)` for `x, x̂ ∈ D`.
pub fn observer_input_box(sys: &SystemModel, region: &RegionSpec) -> BoxSet {
    let innov = sys.innovation_bounds(&region.domain);
    region.domain.product(&sys.input_bounds).product(&innov)
}

/// Every constant entering `L_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBundle {
    pub l_b: f64,
    pub l_db: f64,
    pub l_c: f64,
    pub l_o: f64,
    pub m_b: f64,
    pub m_o: f64,
    pub l_x: f64,
    pub l_u: f64,
    pub l_h: f64,
    pub m_f: f64,
    pub m_h: f64,
    pub alpha: f64,
    /// Constants replaced from an override file, with their stated source.
    #[serde(default)]
    pub overridden: BTreeMap<String, String>,
}

/// Optional replacements for bundle constants, e.g. from a tighter external
/// estimator. Unset fields keep the computed value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantOverrides {
    #[serde(default)]
    pub source: Option<String>,
    pub l_b: Option<f64>,
    pub l_db: Option<f64>,
    pub l_c: Option<f64>,
    pub l_o: Option<f64>,
    pub m_b: Option<f64>,
    pub m_o: Option<f64>,
    pub l_x: Option<f64>,
    pub l_u: Option<f64>,
    pub l_h: Option<f64>,
    pub m_f: Option<f64>,
    pub m_h: Option<f64>,
    pub alpha: Option<f64>,
    /// An aggregate `L_max` taken as given, bypassing the constants above.
    #[serde(default)]
    pub l_max: Option<f64>,
}

impl LipschitzBundle {
    /// Bounds for the current networks plus the system constants of `sys`.
    pub fn compute(nets: &Nets, sys: &SystemModel, region: &RegionSpec, alpha: f64) -> Result<Self> {
        let l_b = mlp_lipschitz(&nets.barrier)?;
        let c = sys.constants;
        Ok(Self {
            l_b,
            l_db: gradient_lipschitz_bound(&nets.barrier)?,
            l_c: mlp_lipschitz(&nets.controller)?,
            l_o: mlp_lipschitz(&nets.observer)?,
            m_b: sup_gradient_bound(&nets.barrier)?,
            m_o: sup_output_bound(&nets.observer, &observer_input_box(sys, region))?,
            l_x: c.l_x,
            l_u: c.l_u,
            l_h: c.l_h,
            m_f: c.m_f,
            m_h: c.m_h,
            alpha,
            overridden: BTreeMap::new(),
        })
    }

    /// Every constant set to NaN, i.e. missing, for filling from overrides.
    pub fn missing() -> Self {
        Self {
            l_b: f64::NAN,
            l_db: f64::NAN,
            l_c: f64::NAN,
            l_o: f64::NAN,
            m_b: f64::NAN,
            m_o: f64::NAN,
            l_x: f64::NAN,
            l_u: f64::NAN,
            l_h: f64::NAN,
            m_f: f64::NAN,
            m_h: f64::NAN,
            alpha: f64::NAN,
            overridden: BTreeMap::new(),
        }
    }

    fn fields_mut(&mut self) -> [(&'static str, &mut f64); 12] {
        [
            ("l_b", &mut self.l_b),
            ("l_db", &mut self.l_db),
            ("l_c", &mut self.l_c),
            ("l_o", &mut self.l_o),
            ("m_b", &mut self.m_b),
            ("m_o", &mut self.m_o),
            ("l_x", &mut self.l_x),
            ("l_u", &mut self.l_u),
            ("l_h", &mut self.l_h),
            ("m_f", &mut self.m_f),
            ("m_h", &mut self.m_h),
            ("alpha", &mut self.alpha),
        ]
    }

    pub fn apply(&mut self, o: &ConstantOverrides) {
        let source = o.source.clone().unwrap_or_else(|| String::from("override file"));
        let values = [o.l_b, o.l_db, o.l_c, o.l_o, o.m_b, o.m_o, o.l_x, o.l_u, o.l_h, o.m_f, o.m_h, o.alpha];
        let mut touched = Vec::new();
        for ((name, slot), v) in self.fields_mut().into_iter().zip(values) {
            if let Some(v) = v {
                *slot = v;
                touched.push(name);
            }
        }
        for name in touched {
            self.overridden.insert(String::from(name), source.clone());
        }
    }
}

/// `L_max` and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmaxBreakdown {
    /// Lipschitz constant of `q1` and `q2`, both equal to `L_b`.
    pub l_b: f64,
    /// `M_f·L_dB`.
    pub plant_drift: f64,
    /// `M_B·(L_x + L_u·L_c)`.
    pub plant_sensitivity: f64,
    /// `M_B·L_o·√(1 + L_c² + 2M_h²)`.
    pub observer_sensitivity: f64,
    /// `M_o·L_dB`.
    pub observer_drift: f64,
    /// `α·L_b`.
    pub decay: f64,
    /// Lipschitz constant of `q3`, the sum of the five terms above.
    pub l3: f64,
    pub l_max: f64,
}

pub fn compute_l_max(b: &LipschitzBundle) -> Result<LmaxBreakdown> {
    let mut copy = b.clone();
    for (name, v) in copy.fields_mut() {
        if !(v.is_finite() && *v >= 0.0) {
            return Err(Error::MissingConstant(name));
        }
    }
    let plant_drift = b.m_f * b.l_db;
    let plant_sensitivity = b.m_b * (b.l_x + b.l_u * b.l_c);
    let observer_sensitivity = b.m_b * b.l_o * libm::sqrt(1.0 + b.l_c * b.l_c + 2.0 * b.m_h * b.m_h);
    let observer_drift = b.m_o * b.l_db;
    let decay = b.alpha * b.l_b;
    let l3 = plant_drift + plant_sensitivity + observer_sensitivity + observer_drift + decay;
    Ok(LmaxBreakdown {
        l_b: b.l_b,
        plant_drift,
        plant_sensitivity,
        observer_sensitivity,
        observer_drift,
        decay,
        l3,
        l_max: b.l_b.max(l3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Architecture;
    use crate::nn::Activation;
    use crate::systems::benchmark;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net(dims: Vec<usize>, act: Activation, params: &[f64]) -> Mlp {
        let mut m = Mlp::new(dims, act, OutputTransform::Linear).unwrap();
        m.params_mut().copy_from_slice(params);
        m
    }

    #[test]
    fn scalar_layer() {
        let m = net(vec![1, 1], Activation::Softplus, &[2.0, 0.3]);
        assert!((mlp_lipschitz(&m).unwrap() - 2.0).abs() < 1e-10);
        assert_eq!(gradient_lipschitz_bound(&m).unwrap(), 0.0);
    }

    #[test]
    fn orthonormal_net_bound_at_most_one() {
        let (c, s) = (libm::cos(0.7), libm::sin(0.7));
        let rot = [c, -s, s, c];
        let mut p = Vec::new();
        for _ in 0..3 {
            p.extend_from_slice(&rot);
            p.extend_from_slice(&[0.1, -0.2]);
        }
        let m = net(vec![2, 2, 2, 2], Activation::Softplus, &p);
        assert!(mlp_lipschitz(&m).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn one_neuron_softplus_curvature() {
        let m = net(vec![1, 1, 1], Activation::Softplus, &[1.0, 0.0, 1.0, 0.0]);
        assert!((gradient_lipschitz_bound(&m).unwrap() - 0.25).abs() < 1e-10);
    }

    #[test]
    fn gradient_bound_rejects_vector_and_clamped() {
        let m = Mlp::new(vec![2, 3, 2], Activation::Tanh, OutputTransform::Linear).unwrap();
        assert!(matches!(gradient_lipschitz_bound(&m), Err(Error::Unsupported { .. })));
        let c = Mlp::new(
            vec![2, 3, 1],
            Activation::Tanh,
            OutputTransform::HardTanhClamp { lb: vec![-1.0], ub: vec![1.0] },
        )
        .unwrap();
        assert!(matches!(gradient_lipschitz_bound(&c), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn sup_bound_examples() {
        let mut m = Mlp::new(vec![3, 4, 2], Activation::Softplus, OutputTransform::Linear).unwrap();
        m.layer_mut(1).1.copy_from_slice(&[3.0, 4.0]);
        let b = BoxSet::new(vec![-1.0; 3], vec![2.0; 3]).unwrap();
        assert_eq!(sup_output_bound(&m, &b).unwrap(), 5.0);
        let lin = net(vec![2, 1], Activation::Softplus, &[3.0, -2.0, 0.5]);
        assert!((sup_gradient_bound(&lin).unwrap() - libm::sqrt(13.0)).abs() < 1e-10);
    }

    fn random_scalar_net(rng: &mut ChaCha8Rng, act: Activation) -> Mlp {
        let depth = rng.gen_range(1..=3);
        let mut dims = vec![rng.gen_range(1..=4)];
        for _ in 0..depth {
            dims.push(rng.gen_range(2..=8));
        }
        dims.push(1);
        let mut m = Mlp::random(dims, act, OutputTransform::Linear, rng).unwrap();
        for p in m.params_mut() {
            *p *= 2.0;
        }
        m
    }

    #[test]
    fn bounds_dominate_sampled_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for t in 0..20 {
            let act = if t % 2 == 0 { Activation::Softplus } else { Activation::Tanh };
            let m = random_scalar_net(&mut rng, act);
            let n = m.input_dim();
            let l = mlp_lipschitz(&m).unwrap();
            let ldb = gradient_lipschitz_bound(&m).unwrap();
            for _ in 0..2000 {
                let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
                let d = crate::linalg::dist2(&a, &b);
                let fa = m.forward(&a).unwrap()[0];
                let fb = m.forward(&b).unwrap()[0];
                assert!((fa - fb).abs() <= l * d * (1.0 + 1e-12));
                let ga = m.input_gradient(&a).unwrap();
                let gb = m.input_gradient(&b).unwrap();
                assert!(crate::linalg::dist2(&ga, &gb) <= ldb * d * (1.0 + 1e-12) + 1e-15);
                assert!(norm2(&ga) <= l * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn l_max_examples() {
        let mut b = LipschitzBundle::missing();
        for (_, v) in b.fields_mut() {
            *v = 1.0;
        }
        b.l_db = 0.25;
        b.alpha = 0.1;
        let r = compute_l_max(&b).unwrap();
        assert!((r.l3 - 4.6).abs() < 1e-15);
        assert_eq!(r.l_max, r.l3);

        b.l_c = 0.0;
        b.l_o = 0.0;
        b.m_o = 0.0;
        b.m_f = 0.0;
        b.l_b = 7.0;
        b.m_b = 2.0;
        b.l_x = 3.0;
        let r = compute_l_max(&b).unwrap();
        assert_eq!(r.l_max, 7.0f64.max(2.0 * 3.0 + 0.1 * 7.0));
    }

    #[test]
    fn l_max_missing_constant() {
        let mut b = LipschitzBundle::missing();
        for (_, v) in b.fields_mut() {
            *v = 1.0;
        }
        b.m_o = f64::NAN;
        assert_eq!(compute_l_max(&b), Err(Error::MissingConstant("m_o")));
    }

    #[test]
    fn l_max_monotone_in_each_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut b = LipschitzBundle::missing();
            for (_, v) in b.fields_mut() {
                *v = rng.gen_range(0.0..3.0);
            }
            let base = compute_l_max(&b).unwrap().l_max;
            for k in 0..12 {
                let mut c = b.clone();
                *c.fields_mut()[k].1 += rng.gen_range(0.0..1.0);
                assert!(compute_l_max(&c).unwrap().l_max >= base);
            }
        }
    }

    #[test]
    fn bundle_invariants_and_overrides() {
        let bm = benchmark("dc_motor").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let nets = Nets::random(&Architecture::uniform(vec![8, 8]), &bm.system, &mut rng).unwrap();
        let mut b = LipschitzBundle::compute(&nets, &bm.system, &bm.region, 0.1).unwrap();
        assert!(b.m_b <= b.l_b);
        let r = compute_l_max(&b).unwrap();
        assert!(r.l_max >= b.l_b);
        b.apply(&ConstantOverrides {
            source: Some("external estimator".into()),
            l_b: Some(0.5),
            ..Default::default()
        });
        assert_eq!(b.l_b, 0.5);
        assert_eq!(b.overridden.get("l_b").map(String::as_str), Some("external estimator"));
        assert_eq!(b.overridden.len(), 1);
    }

    #[test]
    fn observer_sup_bound_dominates_samples() {
        let bm = benchmark("three_tank").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let nets = Nets::random(&Architecture::uniform(vec![6]), &bm.system, &mut rng).unwrap();
        let bx = observer_input_box(&bm.system, &bm.region);
        assert_eq!(bx.dim(), 3 + 2 + 2);
        let m_o = sup_output_bound(&nets.observer, &bx).unwrap();
        for _ in 0..5000 {
            let v: Vec<f64> = (0..bx.dim()).map(|i| rng.gen_range(bx.lo[i]..=bx.hi[i])).collect();
            assert!(norm2(&nets.observer.forward(&v).unwrap()) <= m_o);
        }
    }
}
