//! Uniform ε-nets over the augmented domain `D × D`.
//!
//! The grid is described by a [`GridSpec`] that can enumerate points and find
//! the nearest grid point by rounding without materializing anything, which
//! keeps coverage checks on very large nets cheap. A [`Dataset`] is the
//! materialized, labeled grid used for training.

use alloc::vec;
use alloc::vec::Vec;
use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::exec::{Executor, Sequential};
use crate::systems::{BoxSet, RegionSpec};
use crate::{Error, Result};

/// Default limit on the number of materialized samples.
pub const DEFAULT_SAMPLE_CAP: u64 = 5_000_000;

/// Axis-aligned grid with `counts[i]` points along axis `i`, including both
/// box faces. The last axis varies fastest in the linear index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridSpec {
    /// Coarsest grid over `bounds` whose cells have half-diagonal at most
    /// `eps`: spacing `≤ 2ε/√d` on each of the `d` axes.
    pub fn for_epsilon(bounds: &BoxSet, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config("covering radius must be positive and finite".into()));
        }
        let d = bounds.dim();
        let max_spacing = 2.0 * eps / libm::sqrt(d as f64);
        let counts = (0..d)
            .map(|i| {
                let width = bounds.hi[i] - bounds.lo[i];
                if width == 0.0 {
                    1
                } else {
                    libm::ceil(width / max_spacing) as usize + 1
                }
            })
            .collect();
        Ok(Self {
            lo: bounds.lo.clone(),
            hi: bounds.hi.clone(),
            counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Number of grid points; may exceed `u64` for absurd requests.
    pub fn len(&self) -> u128 {
        self.counts.iter().fold(1u128, |acc, &c| acc.saturating_mul(c as u128))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let c = self.counts[axis];
        if c <= 1 {
            0.0
        } else {
            (self.hi[axis] - self.lo[axis]) / (c - 1) as f64
        }
    }

    /// Worst-case distance from a point of the box to the nearest grid point.
    pub fn covering_radius(&self) -> f64 {
        let sq: f64 = (0..self.dim()).map(|i| self.spacing(i) * self.spacing(i)).sum();
        0.5 * libm::sqrt(sq)
    }

    #[inline]
    fn coord(&self, axis: usize, i: usize) -> f64 {
        let c = self.counts[axis];
        if i + 1 == c {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.spacing(axis)
        }
    }

    /// Writes grid point `index` into `out`.
    pub fn point_into(&self, mut index: u64, out: &mut [f64]) {
        for axis in (0..self.dim()).rev() {
            let c = self.counts[axis] as u64;
            out[axis] = self.coord(axis, (index % c) as usize);
            index /= c;
        }
    }

    pub fn point(&self, index: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.point_into(index, &mut out);
        out
    }

    /// Nearest grid point to `p`, found by per-axis rounding.
    pub fn nearest_into(&self, p: &[f64], out: &mut [f64]) {
        for axis in 0..self.dim() {
            let c = self.counts[axis];
            let s = self.spacing(axis);
            let i = if s == 0.0 {
                0
            } else {
                let r = libm::round((p[axis] - self.lo[axis]) / s);
                r.clamp(0.0, (c - 1) as f64) as usize
            };
            // Rounding can land one cell off near the top face, where the
            // last coordinate is pinned to `hi`; check the neighbour.
            let mut best = i;
            let mut best_gap = (p[axis] - self.coord(axis, i)).abs();
            for j in [i.saturating_sub(1), (i + 1).min(c - 1)] {
                let gap = (p[axis] - self.coord(axis, j)).abs();
                if gap < best_gap {
                    best = j;
                    best_gap = gap;
                }
            }
            out[axis] = self.coord(axis, best);
        }
    }

    pub fn nearest_distance(&self, p: &[f64]) -> f64 {
        let mut q = vec![0.0; self.dim()];
        self.nearest_into(p, &mut q);
        crate::linalg::dist2(p, &q)
    }
}

/// Which labeled part of a dataset to view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    /// Samples in `X₀ × X₀`.
    Init,
    /// Samples in the augmented unsafe set.
    Unsafe,
    All,
}

/// A labeled ε-net: flat sample storage plus one bitset per label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    state_dim: usize,
    epsilon: f64,
    grid: Option<GridSpec>,
    points: Vec<f64>,
    init: FixedBitSet,
    aug_unsafe: FixedBitSet,
}

/// Builds the ε-net for `region` on the calling thread.
pub fn build_epsilon_net(region: &RegionSpec, eps: f64, cap: u64) -> Result<Dataset> {
    build_epsilon_net_with(&Sequential, region, eps, cap)
}

/// Builds the ε-net, labeling grid slabs through `exec`.
pub fn build_epsilon_net_with<E: Executor>(exec: &E, region: &RegionSpec, eps: f64, cap: u64) -> Result<Dataset> {
    let rho = region.rho();
    if !(eps > 0.0) {
        return Err(Error::Config("covering radius must be positive".into()));
    }
    if eps >= rho {
        return Err(Error::EpsilonTooLarge { eps, rho });
    }
    let grid = GridSpec::for_epsilon(&region.augmented_domain(), eps)?;
    Dataset::from_grid_with(exec, region, grid, eps, cap)
}

impl Dataset {
    /// Labels every point of `grid` without checking `ε < ρ`.
    ///
    /// Used for coarse exploratory nets; certificates built on such a net
    /// carry no guarantee from the covering argument.
    pub fn from_grid(region: &RegionSpec, grid: GridSpec, cap: u64) -> Result<Self> {
        let eps = grid.covering_radius();
        Self::from_grid_with(&Sequential, region, grid, eps, cap)
    }

    pub fn from_grid_with<E: Executor>(exec: &E, region: &RegionSpec, grid: GridSpec, eps: f64, cap: u64) -> Result<Self> {
        let n = region.state_dim();
        if grid.dim() != 2 * n {
            return Err(Error::Shape {
                context: "grid dimension",
                expected: 2 * n,
                got: grid.dim(),
            });
        }
        let count = grid.len();
        if count > cap as u128 {
            return Err(Error::GridCap { count, cap });
        }
        let len = count as usize;
        let dim = 2 * n;
        let slabs = exec.map_chunks(len, 4096, |range| {
            let mut pts = vec![0.0; range.len() * dim];
            for (k, idx) in range.enumerate() {
                grid.point_into(idx as u64, &mut pts[k * dim..(k + 1) * dim]);
            }
            pts
        });
        let points = slabs.concat();
        Ok(Self::label(region, eps, Some(grid), points))
    }

    /// Dataset over explicit concatenated `[x; x̂]` samples.
    pub fn from_points(region: &RegionSpec, eps: f64, points: Vec<f64>) -> Result<Self> {
        let dim = 2 * region.state_dim();
        if points.len() % dim != 0 {
            return Err(Error::Shape {
                context: "flat sample buffer",
                expected: dim * (points.len() / dim + 1),
                got: points.len(),
            });
        }
        Ok(Self::label(region, eps, None, points))
    }

    fn label(region: &RegionSpec, eps: f64, grid: Option<GridSpec>, points: Vec<f64>) -> Self {
        let n = region.state_dim();
        let len = points.len() / (2 * n);
        let mut init = FixedBitSet::with_capacity(len);
        let mut aug_unsafe = FixedBitSet::with_capacity(len);
        for (i, p) in points.chunks_exact(2 * n).enumerate() {
            let m = region.classify(&p[..n], &p[n..]);
            init.set(i, m.in_init);
            aug_unsafe.set(i, m.in_aug_unsafe);
        }
        let ds = Self {
            state_dim: n,
            epsilon: eps,
            grid,
            points,
            init,
            aug_unsafe,
        };
        if ds.count(Subset::Init) == 0 {
            log::warn!("no sample lies in X0 x X0; the initial-set condition has no anchor");
        }
        if ds.count(Subset::Unsafe) == 0 {
            log::warn!("no sample lies in the augmented unsafe set");
        }
        ds
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Covering radius the net was built for.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The generating grid, absent for datasets built from explicit points.
    pub fn grid(&self) -> Option<&GridSpec> {
        self.grid.as_ref()
    }

    pub fn len(&self) -> usize {
        self.points.len() / (2 * self.state_dim)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Concatenated `[x; x̂]` of sample `i`.
    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        let d = 2 * self.state_dim;
        &self.points[i * d..(i + 1) * d]
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.point(i)[..self.state_dim]
    }

    pub fn xhat(&self, i: usize) -> &[f64] {
        &self.point(i)[self.state_dim..]
    }

    pub fn is_init(&self, i: usize) -> bool {
        self.init.contains(i)
    }

    pub fn is_unsafe(&self, i: usize) -> bool {
        self.aug_unsafe.contains(i)
    }

    pub fn count(&self, which: Subset) -> usize {
        match which {
            Subset::Init => self.init.count_ones(..),
            Subset::Unsafe => self.aug_unsafe.count_ones(..),
            Subset::All => self.len(),
        }
    }

    /// Indices of the samples in `which`, ascending.
    pub fn subset(&self, which: Subset) -> Vec<usize> {
        match which {
            Subset::Init => self.init.ones().collect(),
            Subset::Unsafe => self.aug_unsafe.ones().collect(),
            Subset::All => (0..self.len()).collect(),
        }
    }

    /// Distance from `p` to the nearest sample.
    pub fn nearest_distance(&self, p: &[f64]) -> f64 {
        match &self.grid {
            Some(g) => g.nearest_distance(p),
            None => (0..self.len())
                .map(|i| crate::linalg::dist2(p, self.point(i)))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{benchmark, SetExpr, BENCHMARK_NAMES};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square_region() -> RegionSpec {
        // D = [0, 1], X = [0.4, 0.6] so that ρ = 0.4 and ε = 0.5 is still too
        // large; the grid tests use GridSpec directly.
        RegionSpec::new(
            BoxSet::new(vec![0.0], vec![1.0]).unwrap(),
            BoxSet::new(vec![0.4], vec![0.6]).unwrap(),
            SetExpr::boxed(vec![0.45], vec![0.55]).unwrap(),
            SetExpr::Empty,
        )
        .unwrap()
    }

    #[test]
    fn unit_square_grid_has_nine_points() {
        let b = BoxSet::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let g = GridSpec::for_epsilon(&b, 0.5).unwrap();
        assert_eq!(g.counts, vec![3, 3]);
        assert_eq!(g.len(), 9);
        assert!((g.covering_radius() - libm::sqrt(0.125)).abs() < 1e-15);
        assert_eq!(g.point(0), vec![0.0, 0.0]);
        assert_eq!(g.point(8), vec![1.0, 1.0]);
        assert_eq!(g.point(5), vec![0.5, 1.0]);
        // brute-force covering radius over a fine probe lattice
        let mut worst: f64 = 0.0;
        for i in 0..=200 {
            for j in 0..=200 {
                let p = [i as f64 / 200.0, j as f64 / 200.0];
                let d = (0..9)
                    .map(|k| crate::linalg::dist2(&p, &g.point(k)))
                    .fold(f64::INFINITY, f64::min);
                worst = worst.max(d);
            }
        }
        assert!(worst <= 0.3536 && worst <= 0.5, "{worst}");
    }

    #[test]
    fn epsilon_at_or_above_rho_rejected() {
        let r = unit_square_region();
        assert!(matches!(build_epsilon_net(&r, 0.4, u64::MAX), Err(Error::EpsilonTooLarge { .. })));
        assert!(matches!(build_epsilon_net(&r, 0.0, u64::MAX), Err(Error::Config(_))));
        assert!(build_epsilon_net(&r, 0.39, u64::MAX).is_ok());
    }

    #[test]
    fn cap_reports_count() {
        let bm = benchmark("dc_motor").unwrap();
        match build_epsilon_net(&bm.region, 0.023, 1000) {
            Err(Error::GridCap { count, cap }) => {
                assert_eq!(cap, 1000);
                assert!(count > 1000);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dc_motor_coarse_net() {
        let bm = benchmark("dc_motor").unwrap();
        // coarser than ρ, so built from an explicit grid
        assert!(matches!(build_epsilon_net(&bm.region, 0.05, DEFAULT_SAMPLE_CAP), Err(Error::EpsilonTooLarge { .. })));
        let grid = GridSpec::for_epsilon(&bm.region.augmented_domain(), 0.05).unwrap();
        let ds = Dataset::from_grid(&bm.region, grid, DEFAULT_SAMPLE_CAP).unwrap();
        let counts = &ds.grid().unwrap().counts;
        assert_eq!(ds.len() as u128, ds.grid().unwrap().len());
        assert_eq!(ds.len(), counts.iter().product::<usize>());
        assert!(ds.grid().unwrap().covering_radius() <= 0.05);
        // init ∪ unsafe ⊆ all and init ∩ unsafe = ∅
        assert!(ds.count(Subset::Init) > 0);
        assert!(ds.count(Subset::Unsafe) > 0);
        for i in 0..ds.len() {
            assert!(!(ds.is_init(i) && ds.is_unsafe(i)));
        }
        // independent re-classification
        let mut init = 0;
        let mut uns = 0;
        for i in 0..ds.len() {
            let (x, xh) = (ds.x(i), ds.xhat(i));
            let in_x0 = |p: &[f64]| p[0].abs() <= 0.03 && p[1].abs() <= 0.2;
            let in_x = |p: &[f64]| p[0].abs() <= 0.1 && p[1].abs() <= 0.5;
            let in_u = |p: &[f64]| {
                (p[0] >= -0.1 && p[0] <= -0.05 && p[1] >= -0.5 && p[1] <= -0.3)
                    || (p[0] >= 0.05 && p[0] <= 0.1 && p[1] >= 0.3 && p[1] <= 0.5)
            };
            if in_x0(x) && in_x0(xh) {
                init += 1;
            }
            if !(in_x(x) && !in_u(x) && in_x(xh)) {
                uns += 1;
            }
        }
        assert_eq!(init, ds.count(Subset::Init));
        assert_eq!(uns, ds.count(Subset::Unsafe));
        assert_eq!(ds.subset(Subset::All).len(), ds.len());
    }

    #[test]
    fn empty_init_subset_is_allowed() {
        let r = RegionSpec::new(
            BoxSet::new(vec![0.0], vec![1.0]).unwrap(),
            BoxSet::new(vec![0.2], vec![0.8]).unwrap(),
            SetExpr::boxed(vec![0.501], vec![0.502]).unwrap(),
            SetExpr::Empty,
        )
        .unwrap();
        let ds = build_epsilon_net(&r, 0.15, 1000).unwrap();
        assert_eq!(ds.count(Subset::Init), 0);
        assert!(ds.subset(Subset::Init).is_empty());
    }

    #[test]
    fn nets_are_deterministic() {
        let bm = benchmark("dc_motor").unwrap();
        let a = build_epsilon_net(&bm.region, 0.024, DEFAULT_SAMPLE_CAP).unwrap();
        let b = build_epsilon_net(&bm.region, 0.024, DEFAULT_SAMPLE_CAP).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lazy_nearest_matches_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for name in BENCHMARK_NAMES {
            let bm = benchmark(name).unwrap();
            let aug = bm.region.augmented_domain();
            let eps = bm.region.rho() / 2.0;
            let g = GridSpec::for_epsilon(&aug, eps).unwrap();
            for _ in 0..2000 {
                let p: Vec<f64> = (0..aug.dim()).map(|i| rng.gen_range(aug.lo[i]..=aug.hi[i])).collect();
                assert!(g.nearest_distance(&p) <= eps, "{name}");
            }
        }
    }

    #[test]
    fn nearest_agrees_with_enumeration() {
        let b = BoxSet::new(vec![-0.3, 0.0, 1.0], vec![0.25, 0.1, 1.7]).unwrap();
        let g = GridSpec::for_epsilon(&b, 0.11).unwrap();
        let pts: Vec<Vec<f64>> = (0..g.len() as u64).map(|k| g.point(k)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let p: Vec<f64> = (0..3).map(|i| rng.gen_range(b.lo[i]..=b.hi[i])).collect();
            let brute = pts.iter().map(|q| crate::linalg::dist2(&p, q)).fold(f64::INFINITY, f64::min);
            assert!((g.nearest_distance(&p) - brute).abs() < 1e-15);
        }
    }
}
