//! Plant dynamics `ẋ = f(x, u)`, linear output maps `y = C x`, the
//! constants needed by the validity condition, and the benchmark plants.

mod benchmarks;
mod region;

pub use benchmarks::{benchmark, Benchmark, BENCHMARK_NAMES};
pub use region::{AugmentedPoint, BoxSet, HalfSpace, Membership, RegionSpec, SetExpr};

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, Matrix};
use crate::{Error, Result};

/// Continuous-time plant dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Plant {
    /// Armature current `x1` and speed `x2` driven by the input voltage.
    DcMotor {
        resistance: f64,
        inductance: f64,
        emf_constant: f64,
        inertia: f64,
        friction: f64,
    },
    /// Angle `x1` and angular velocity `x2` driven by a torque.
    Pendulum {
        mass: f64,
        length: f64,
        damping: f64,
        gravity: f64,
    },
    /// Three coupled tanks, levels `x1..x3`, inflows `u1` (tank 1) and `u2`
    /// (tank 3). Tank 3 drains through `a3 √x3`.
    ThreeTank {
        a1: f64,
        a2: f64,
        a3: f64,
        area: f64,
        /// Lower limit on level differences and on `x3` assumed when
        /// bounding the slope of the square roots.
        #[serde(default = "default_level_floor")]
        level_floor: f64,
    },
    /// `ẋ = A x + B u`.
    Linear { a: Matrix, b: Matrix },
}

fn default_level_floor() -> f64 {
    1e-3
}

#[inline]
fn signed_sqrt(d: f64) -> f64 {
    libm::copysign(libm::sqrt(d.abs()), d)
}

impl Plant {
    pub fn state_dim(&self) -> usize {
        match self {
            Plant::DcMotor { .. } | Plant::Pendulum { .. } => 2,
            Plant::ThreeTank { .. } => 3,
            Plant::Linear { a, .. } => a.rows,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Plant::DcMotor { .. } | Plant::Pendulum { .. } => 1,
            Plant::ThreeTank { .. } => 2,
            Plant::Linear { b, .. } => b.cols,
        }
    }

    /// `(A, B)` for plants that are linear.
    pub fn linear_matrices(&self) -> Option<(Matrix, Matrix)> {
        match *self {
            Plant::DcMotor {
                resistance: r,
                inductance: l,
                emf_constant: k,
                inertia: j,
                friction: b,
            } => Some((
                Matrix {
                    rows: 2,
                    cols: 2,
                    data: vec![-r / l, -k / l, k / j, -b / j],
                },
                Matrix {
                    rows: 2,
                    cols: 1,
                    data: vec![1.0 / l, 0.0],
                },
            )),
            Plant::Linear { ref a, ref b } => Some((a.clone(), b.clone())),
            _ => None,
        }
    }

    /// Writes `f(x, u)` into `out`.
    pub fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        match *self {
            Plant::DcMotor {
                resistance: r,
                inductance: l,
                emf_constant: k,
                inertia: j,
                friction: b,
            } => {
                out[0] = -r / l * x[0] - k / l * x[1] + u[0] / l;
                out[1] = k / j * x[0] - b / j * x[1];
            }
            Plant::Pendulum {
                mass: m,
                length: l,
                damping: b,
                gravity: g,
            } => {
                let ml2 = m * l * l;
                out[0] = x[1];
                out[1] = u[0] / ml2 - g / l * libm::sin(x[0]) - b / ml2 * x[1];
            }
            Plant::ThreeTank { a1, a2, a3, area, .. } => {
                let q12 = a1 * signed_sqrt(x[0] - x[1]);
                let q23 = a2 * signed_sqrt(x[1] - x[2]);
                out[0] = -q12 + u[0] / area;
                out[1] = q12 - q23;
                out[2] = q23 - a3 * libm::sqrt(x[2]) + u[1] / area;
            }
            Plant::Linear { ref a, ref b } => {
                a.mul_vec(x, out);
                for i in 0..a.rows {
                    out[i] += linalg::dot(&b.data[i * b.cols..(i + 1) * b.cols], u);
                }
            }
        }
    }

    /// Writes `∂f/∂u` (row-major `n × m`) into `out`.
    pub fn input_jacobian_into(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        match *self {
            Plant::DcMotor { inductance: l, .. } => {
                out[0] = 1.0 / l;
                out[1] = 0.0;
            }
            Plant::Pendulum { mass: m, length: l, .. } => {
                out[0] = 0.0;
                out[1] = 1.0 / (m * l * l);
            }
            Plant::ThreeTank { area, .. } => {
                out.fill(0.0);
                out[0] = 1.0 / area;
                out[5] = 1.0 / area;
            }
            Plant::Linear { ref b, .. } => out.copy_from_slice(&b.data),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantSource {
    Analytic,
    Estimated,
}

/// Lipschitz constants of `f` in `x` and `u` and of `h`, and sup-norm bounds
/// of `f` over `D × U` and of `h` over `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConstants {
    pub l_x: f64,
    pub l_u: f64,
    pub l_h: f64,
    pub m_f: f64,
    pub m_h: f64,
    pub source: ConstantSource,
}

/// A plant together with its output map, input box and constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    pub plant: Plant,
    /// `C` in `y = C x`, shape `p × n`.
    pub output_matrix: Matrix,
    pub input_bounds: BoxSet,
    pub constants: SystemConstants,
}

impl SystemModel {
    /// Builds the model and derives its constants analytically over `domain`.
    pub fn new(plant: Plant, output_matrix: Matrix, input_bounds: BoxSet, domain: &BoxSet) -> Result<Self> {
        let n = plant.state_dim();
        if output_matrix.cols != n {
            return Err(Error::Shape {
                context: "output matrix columns",
                expected: n,
                got: output_matrix.cols,
            });
        }
        if input_bounds.dim() != plant.input_dim() {
            return Err(Error::Shape {
                context: "input bounds",
                expected: plant.input_dim(),
                got: input_bounds.dim(),
            });
        }
        if domain.dim() != n {
            return Err(Error::Shape {
                context: "domain",
                expected: n,
                got: domain.dim(),
            });
        }
        let constants = analytic_constants(&plant, &output_matrix, &input_bounds, domain)?;
        Ok(Self {
            plant,
            output_matrix,
            input_bounds,
            constants,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.plant.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output_matrix.rows
    }

    /// `f(x, u)`, rejecting non-finite results.
    pub fn eval_dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::Shape {
                context: "state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if u.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "input",
                expected: self.input_dim(),
                got: u.len(),
            });
        }
        let mut out = vec![0.0; self.state_dim()];
        self.plant.eval_into(x, u, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "plant dynamics",
                state: x.to_vec(),
            });
        }
        Ok(out)
    }

    pub fn input_admissible(&self, u: &[f64]) -> bool {
        self.input_bounds.contains(u)
    }

    /// `y = C x`.
    pub fn observe_into(&self, x: &[f64], out: &mut [f64]) {
        self.output_matrix.mul_vec(x, out);
    }

    pub fn observe(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.output_dim()];
        self.observe_into(x, &mut y);
        y
    }

    /// Box containing `h(x) - h(x̂)` for `x, x̂ ∈ domain`.
    pub fn innovation_bounds(&self, domain: &BoxSet) -> BoxSet {
        let c = &self.output_matrix;
        let mut lo = Vec::with_capacity(c.rows);
        let mut hi = Vec::with_capacity(c.rows);
        for i in 0..c.rows {
            // range of c_i · (x - x̂) with x - x̂ ∈ [lo - hi, hi - lo]
            let span: f64 = (0..c.cols)
                .map(|j| c.get(i, j).abs() * (domain.hi[j] - domain.lo[j]))
                .sum();
            lo.push(-span);
            hi.push(span);
        }
        BoxSet { lo, hi }
    }
}

fn analytic_constants(plant: &Plant, c: &Matrix, u_box: &BoxSet, domain: &BoxSet) -> Result<SystemConstants> {
    let l_h = c.spectral_norm()?;
    let m_h = domain
        .vertices()
        .map(|v| {
            let mut y = vec![0.0; c.rows];
            c.mul_vec(&v, &mut y);
            linalg::norm2(&y)
        })
        .fold(0.0, f64::max);
    let (l_x, l_u, m_f) = match plant {
        Plant::DcMotor { .. } | Plant::Linear { .. } => {
            let (a, b) = plant.linear_matrices().unwrap();
            // ‖A x + B u‖ is convex, so its maximum over the box D × U sits on a vertex.
            let n = a.rows;
            let m_f = domain
                .product(u_box)
                .vertices()
                .map(|v| {
                    let mut out = vec![0.0; n];
                    plant.eval_into(&v[..n], &v[n..], &mut out);
                    linalg::norm2(&out)
                })
                .fold(0.0, f64::max);
            (a.spectral_norm()?, b.spectral_norm()?, m_f)
        }
        Plant::Pendulum {
            mass,
            length,
            damping,
            gravity,
        } => {
            let ml2 = mass * length * length;
            // |∂f/∂x| ≤ [[0, 1], [g/l, b/ml²]] entry-wise since |cos| ≤ 1.
            let jac = Matrix {
                rows: 2,
                cols: 2,
                data: vec![0.0, 1.0, gravity / length, damping / ml2],
            };
            let xmax = domain.max_abs();
            let umax = u_box.max_abs()[0];
            let sin_max = xmax[0].min(1.0);
            let f1 = xmax[1];
            let f2 = umax / ml2 + gravity / length * sin_max + damping / ml2 * xmax[1];
            (
                jac.spectral_norm()?,
                1.0 / ml2,
                libm::sqrt(f1 * f1 + f2 * f2),
            )
        }
        Plant::ThreeTank {
            a1,
            a2,
            a3,
            area,
            level_floor,
        } => {
            if !(*level_floor > 0.0) {
                return Err(Error::Config("three-tank level floor must be positive".into()));
            }
            // d/dd √|d| = 1 / (2√|d|) ≤ 1 / (2√floor) on the restricted domain.
            let s = 1.0 / (2.0 * libm::sqrt(*level_floor));
            let (c1, c2, c3) = (a1 * s, a2 * s, a3 * s);
            let jac = Matrix {
                rows: 3,
                cols: 3,
                data: vec![c1, c1, 0.0, c1, c1 + c2, c2, 0.0, c2, c2 + c3],
            };
            let gap = |i: usize, j: usize| {
                let d = (domain.hi[i] - domain.lo[j]).max(domain.hi[j] - domain.lo[i]);
                libm::sqrt(d.max(0.0))
            };
            let umax = u_box.max_abs();
            let root3 = libm::sqrt(domain.hi[2].max(0.0));
            let f = [
                a1 * gap(0, 1) + umax[0] / area,
                a1 * gap(0, 1) + a2 * gap(1, 2),
                a2 * gap(1, 2) + a3 * root3 + umax[1] / area,
            ];
            (jac.spectral_norm()?, 1.0 / area, linalg::norm2(&f))
        }
    };
    Ok(SystemConstants {
        l_x,
        l_u,
        l_h,
        m_f,
        m_h,
        source: ConstantSource::Analytic,
    })
}
