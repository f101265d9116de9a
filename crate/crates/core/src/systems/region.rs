//! Sets over the state space and the region bookkeeping for `D`, `X`, `X₀`
//! and `X_u`, including membership in the augmented unsafe set
//! `(D×D) \ ((X\X_u) × X)`.

use alloc::boxed::Box;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Closed axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Shape {
                context: "box bounds",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::Config("box needs lo <= hi on every axis".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * libm::sqrt(self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l) * (h - l)).sum())
    }

    /// Largest absolute coordinate on each axis.
    pub fn max_abs(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| l.abs().max(h.abs())).collect()
    }

    pub fn intersect(&self, other: &BoxSet) -> BoxSet {
        BoxSet {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(l, h)| l > h)
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &BoxSet) -> BoxSet {
        let mut lo = self.lo.clone();
        lo.extend_from_slice(&other.lo);
        let mut hi = self.hi.clone();
        hi.extend_from_slice(&other.hi);
        BoxSet { lo, hi }
    }

    /// Every vertex of the box, in binary counting order.
    pub fn vertices(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let n = self.dim();
        (0..1usize << n).map(move |mask| {
            (0..n)
                .map(|i| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] })
                .collect()
        })
    }
}

/// `coeffs · x ≤ bound`, or `<` when `strict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub coeffs: Vec<f64>,
    pub bound: f64,
    #[serde(default)]
    pub strict: bool,
}

impl HalfSpace {
    pub fn contains(&self, x: &[f64]) -> bool {
        let lhs: f64 = self.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
        if self.strict {
            lhs < self.bound
        } else {
            lhs <= self.bound
        }
    }
}

/// Set expression over the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SetExpr {
    Empty,
    Box(BoxSet),
    /// Conjunction of linear inequalities.
    Polytope { constraints: Vec<HalfSpace> },
    Union { sets: Vec<SetExpr> },
    Intersection { sets: Vec<SetExpr> },
    Difference { base: Box<SetExpr>, minus: Box<SetExpr> },
}

impl SetExpr {
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        BoxSet::new(lo, hi).map(SetExpr::Box)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            SetExpr::Empty => false,
            SetExpr::Box(b) => b.contains(x),
            SetExpr::Polytope { constraints } => constraints.iter().all(|h| h.contains(x)),
            SetExpr::Union { sets } => sets.iter().any(|s| s.contains(x)),
            SetExpr::Intersection { sets } => sets.iter().all(|s| s.contains(x)),
            SetExpr::Difference { base, minus } => base.contains(x) && !minus.contains(x),
        }
    }

    /// A box enclosing `self ∩ within`. Polytopes only use their
    /// single-variable constraints, so the box may be loose.
    pub fn bounding_box(&self, within: &BoxSet) -> BoxSet {
        match self {
            SetExpr::Empty => BoxSet {
                lo: within.hi.clone(),
                hi: within.lo.clone(),
            },
            SetExpr::Box(b) => b.intersect(within),
            SetExpr::Polytope { constraints } => {
                let mut out = within.clone();
                for h in constraints {
                    let nz: Vec<usize> = (0..h.coeffs.len()).filter(|&i| h.coeffs[i] != 0.0).collect();
                    if let [i] = nz[..] {
                        let limit = h.bound / h.coeffs[i];
                        if h.coeffs[i] > 0.0 {
                            out.hi[i] = out.hi[i].min(limit);
                        } else {
                            out.lo[i] = out.lo[i].max(limit);
                        }
                    }
                }
                out
            }
            SetExpr::Union { sets } => {
                let boxes: Vec<BoxSet> = sets
                    .iter()
                    .map(|s| s.bounding_box(within))
                    .filter(|b| !b.is_empty())
                    .collect();
                if boxes.is_empty() {
                    return SetExpr::Empty.bounding_box(within);
                }
                let n = within.dim();
                BoxSet {
                    lo: (0..n).map(|i| boxes.iter().map(|b| b.lo[i]).fold(f64::INFINITY, f64::min)).collect(),
                    hi: (0..n).map(|i| boxes.iter().map(|b| b.hi[i]).fold(f64::NEG_INFINITY, f64::max)).collect(),
                }
            }
            SetExpr::Intersection { sets } => sets
                .iter()
                .fold(within.clone(), |acc, s| s.bounding_box(&acc)),
            SetExpr::Difference { base, .. } => base.bounding_box(within),
        }
    }
}

/// A pair of plant and observer states `x̃ = [x; x̂]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPoint {
    pub x: Vec<f64>,
    pub xhat: Vec<f64>,
}

impl AugmentedPoint {
    pub fn new(x: Vec<f64>, xhat: Vec<f64>) -> Self {
        Self { x, xhat }
    }

    pub fn from_concat(z: &[f64]) -> Self {
        let n = z.len() / 2;
        Self {
            x: z[..n].to_vec(),
            xhat: z[n..].to_vec(),
        }
    }

    pub fn concat(&self) -> Vec<f64> {
        let mut z = self.x.clone();
        z.extend_from_slice(&self.xhat);
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Membership {
    /// `(x, x̂) ∈ X₀ × X₀`.
    pub in_init: bool,
    /// `(x, x̂) ∉ (X\X_u) × X`.
    pub in_aug_unsafe: bool,
}

/// Domain `D`, safe box `X`, initial set `X₀` and unsafe set `X_u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub domain: BoxSet,
    pub safe_box: BoxSet,
    pub init: SetExpr,
    pub unsafe_set: SetExpr,
}

impl RegionSpec {
    pub fn new(domain: BoxSet, safe_box: BoxSet, init: SetExpr, unsafe_set: SetExpr) -> Result<Self> {
        let region = Self {
            domain,
            safe_box,
            init,
            unsafe_set,
        };
        region.validate()?;
        Ok(region)
    }

    pub fn validate(&self) -> Result<()> {
        if self.domain.dim() != self.safe_box.dim() {
            return Err(Error::Shape {
                context: "safe box",
                expected: self.domain.dim(),
                got: self.safe_box.dim(),
            });
        }
        if !(self.rho() > 0.0) {
            return Err(Error::Config("the safe box X must lie strictly inside the domain D".into()));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.domain.dim()
    }

    /// Smallest gap between `X` and the boundary of `D`.
    pub fn rho(&self) -> f64 {
        let d = &self.domain;
        let x = &self.safe_box;
        (0..d.dim())
            .map(|i| (x.lo[i] - d.lo[i]).min(d.hi[i] - x.hi[i]))
            .fold(f64::INFINITY, f64::min)
    }

    /// `x ∈ X \ X_u`.
    pub fn is_safe_state(&self, x: &[f64]) -> bool {
        self.safe_box.contains(x) && !self.unsafe_set.contains(x)
    }

    pub fn classify(&self, x: &[f64], xhat: &[f64]) -> Membership {
        Membership {
            in_init: self.init.contains(x) && self.init.contains(xhat),
            in_aug_unsafe: !(self.is_safe_state(x) && self.safe_box.contains(xhat)),
        }
    }

    pub fn membership(&self, p: &AugmentedPoint) -> Membership {
        self.classify(&p.x, &p.xhat)
    }

    /// The augmented domain `D × D`.
    pub fn augmented_domain(&self) -> BoxSet {
        self.domain.product(&self.domain)
    }

    /// Box enclosing `X₀`, used to draw initial states.
    pub fn init_bounding_box(&self) -> BoxSet {
        self.init.bounding_box(&self.safe_box)
    }
}
