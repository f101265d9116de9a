//! Small dense linear algebra on row-major `f64` buffers.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Shape {
                    context: "matrix row",
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        if self.cols == 0 {
            return vec![Vec::new(); self.rows];
        }
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        mat_vec(&self.data, self.rows, self.cols, x, out);
    }

    pub fn spectral_norm(&self) -> Result<f64> {
        spectral_norm_bound(&self.data, self.rows, self.cols)
    }
}

/// `out = W x` for a row-major `rows × cols` matrix.
#[inline]
pub fn mat_vec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (o, row) in out[..rows].iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

/// `out = Wᵀ y` for a row-major `rows × cols` matrix.
#[inline]
pub fn mat_t_vec(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    let out = &mut out[..cols];
    out.fill(0.0);
    for (row, &yi) in w.chunks_exact(cols).zip(&y[..rows]) {
        if yi != 0.0 {
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += wij * yi;
            }
        }
    }
}

/// Four interleaved partial sums, combined in a fixed order; the result
/// depends only on the inputs, not on the target.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0f64; 4];
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Largest row 2-norm of a row-major matrix; bounds `‖W v‖_∞ / ‖v‖_2`.
pub fn max_row_norm(w: &[f64], rows: usize, cols: usize) -> f64 {
    w.chunks_exact(cols)
        .take(rows)
        .map(norm2)
        .fold(0.0, f64::max)
}

/// Sum of a set of terms that does not depend on their order: the terms are
/// sorted and then added pairwise.
pub fn order_free_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    pairwise_sum(terms)
}

pub fn pairwise_sum(terms: &[f64]) -> f64 {
    if terms.len() <= 8 {
        return terms.iter().sum();
    }
    let mid = terms.len() / 2;
    pairwise_sum(&terms[..mid]) + pairwise_sum(&terms[mid..])
}

const POWER_ITERATION_CAP: usize = 100_000;
const POWER_ITERATION_RTOL: f64 = 1e-9;
const SQUARINGS: usize = 60;

/// Gram matrix `G = WᵀW` (or `WWᵀ`, whichever is smaller), row-major `k × k`.
fn gram(w: &[f64], rows: usize, cols: usize) -> (Vec<f64>, usize) {
    if cols <= rows {
        let mut g = vec![0.0; cols * cols];
        for row in w.chunks_exact(cols) {
            for i in 0..cols {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in 0..cols {
                    g[i * cols + j] += ri * row[j];
                }
            }
        }
        (g, cols)
    } else {
        let mut g = vec![0.0; rows * rows];
        for i in 0..rows {
            for j in 0..rows {
                g[i * rows + j] = dot(&w[i * cols..(i + 1) * cols], &w[j * cols..(j + 1) * cols]);
            }
        }
        (g, rows)
    }
}

/// Power iteration estimate of `σ_max(W)` from a fixed start vector.
///
/// The estimate approaches the true value from below; see
/// [`spectral_norm_bound`] for the enclosure used in certificates.
pub fn power_iteration(w: &[f64], rows: usize, cols: usize) -> Result<f64> {
    if rows == 0 || cols == 0 {
        return Ok(0.0);
    }
    let (g, k) = gram(w, rows, cols);
    // Fixed, non-symmetric start vector keeps runs reproducible.
    let mut v: Vec<f64> = (0..k).map(|i| 1.0 + (i as f64) / (k as f64)).collect();
    let n0 = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut gv = vec![0.0; k];
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATION_CAP {
        mat_vec(&g, k, k, &v, &mut gv);
        let next = dot(&v, &gv);
        let norm = norm2(&gv);
        if norm == 0.0 {
            return Ok(0.0);
        }
        for (vi, gi) in v.iter_mut().zip(&gv) {
            *vi = gi / norm;
        }
        if (next - lambda).abs() <= POWER_ITERATION_RTOL * next.abs() {
            return Ok(libm::sqrt(next.max(0.0)));
        }
        lambda = next;
    }
    Err(Error::PowerIteration(POWER_ITERATION_CAP))
}

/// Sound upper bound on `σ_max(W)`.
///
/// Runs power iteration for the estimate, then encloses the largest
/// eigenvalue of `G = WᵀW` by `‖G^p‖_F^{1/p}` with `p = 2^60`, evaluated by
/// repeated normalized squaring. For `G` of size `k`, the
/// enclosure exceeds `λ_max` by at most a factor `k^{1/p}`, far below one
/// ulp. A relative slack proportional to `(rows + cols + k)·ε_mach` covers
/// rounding in the Gram product and the squarings.
pub fn spectral_norm_bound(w: &[f64], rows: usize, cols: usize) -> Result<f64> {
    let estimate = power_iteration(w, rows, cols)?;
    if estimate == 0.0 && w.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let (mut g, k) = gram(w, rows, cols);
    let mut log_bound = 0.0;
    let mut scale = frobenius(&g);
    if scale == 0.0 {
        return Ok(0.0);
    }
    log_bound += libm::log(scale);
    g.iter_mut().for_each(|x| *x /= scale);
    let mut sq = vec![0.0; k * k];
    let mut weight = 1.0;
    for _ in 0..SQUARINGS {
        square_into(&g, k, &mut sq);
        scale = frobenius(&sq);
        if scale == 0.0 {
            break;
        }
        weight *= 0.5;
        log_bound += weight * libm::log(scale);
        for (gi, si) in g.iter_mut().zip(&sq) {
            *gi = si / scale;
        }
    }
    let slack = 1.0 + 4.0 * (rows + cols + k) as f64 * f64::EPSILON;
    let sigma = libm::sqrt(libm::exp(log_bound)) * slack;
    Ok(sigma.max(estimate))
}

fn frobenius(a: &[f64]) -> f64 {
    norm2(a)
}

fn square_into(a: &[f64], k: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..k {
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == 0.0 {
                continue;
            }
            let row = &a[l * k..(l + 1) * k];
            let dst = &mut out[i * k..(i + 1) * k];
            for (d, &alj) in dst.iter_mut().zip(row) {
                *d += ail * alj;
            }
        }
    }
}
