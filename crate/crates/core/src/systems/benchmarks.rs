//! The DC motor, pendulum and three-tank case studies.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::boxed::Box;
use core::f64::consts::PI;
use serde::{Deserialize, Serialize};

use super::{BoxSet, HalfSpace, Plant, RegionSpec, SetExpr, SystemModel};
use crate::linalg::Matrix;
use crate::{Error, Result};

pub const BENCHMARK_NAMES: [&str; 3] = ["dc_motor", "pendulum", "three_tank"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub name: String,
    pub system: SystemModel,
    pub region: RegionSpec,
}

pub fn benchmark(name: &str) -> Result<Benchmark> {
    match name {
        "dc_motor" => dc_motor(),
        "pendulum" => pendulum(),
        "three_tank" => three_tank(),
        other => Err(Error::UnknownBenchmark(other.to_string())),
    }
}

fn deg(d: f64) -> f64 {
    d * PI / 180.0
}

fn dc_motor() -> Result<Benchmark> {
    let domain = BoxSet::new(vec![-0.125, -0.525], vec![0.125, 0.525])?;
    let safe_box = BoxSet::new(vec![-0.1, -0.5], vec![0.1, 0.5])?;
    let init = SetExpr::boxed(vec![-0.03, -0.2], vec![0.03, 0.2])?;
    // The first declared unsafe box, [-0.5, -0.05] × [-0.5, -0.3], reaches
    // outside X; only its part inside X matters, so it is stored clipped.
    let declared = [
        BoxSet::new(vec![-0.5, -0.5], vec![-0.05, -0.3])?,
        BoxSet::new(vec![0.05, 0.3], vec![0.1, 0.5])?,
    ];
    let unsafe_set = SetExpr::Union {
        sets: declared.iter().map(|b| SetExpr::Box(b.intersect(&safe_box))).collect(),
    };
    let plant = Plant::DcMotor {
        resistance: 1.0,
        inductance: 0.5,
        emf_constant: 0.01,
        inertia: 0.01,
        friction: 0.1,
    };
    let output = Matrix::from_rows(&[vec![0.0, 1.0]])?;
    let inputs = BoxSet::new(vec![-1.0], vec![1.0])?;
    Ok(Benchmark {
        name: "dc_motor".into(),
        system: SystemModel::new(plant, output, inputs, &domain)?,
        region: RegionSpec::new(domain, safe_box, init, unsafe_set)?,
    })
}

fn pendulum() -> Result<Benchmark> {
    let safe_box = BoxSet::new(vec![deg(-2.7), -0.5], vec![deg(10.0), 0.5])?;
    // No enclosing domain is given for this plant; D is X grown by 0.02.
    let pad = 0.02;
    let domain = BoxSet::new(
        safe_box.lo.iter().map(|v| v - pad).collect(),
        safe_box.hi.iter().map(|v| v + pad).collect(),
    )?;
    let init = SetExpr::boxed(vec![deg(5.0), -0.3], vec![deg(7.0), 0.3])?;
    let safe = SetExpr::boxed(vec![deg(-1.0), -0.4], vec![deg(8.0), 0.4])?;
    let unsafe_set = SetExpr::Difference {
        base: Box::new(SetExpr::Box(safe_box.clone())),
        minus: Box::new(safe),
    };
    let plant = Plant::Pendulum {
        mass: 1.0,
        length: 1.0,
        damping: 1.0,
        gravity: 9.8,
    };
    let output = Matrix::from_rows(&[vec![1.0, 0.0]])?;
    let inputs = BoxSet::new(vec![-1.0], vec![1.0])?;
    Ok(Benchmark {
        name: "pendulum".into(),
        system: SystemModel::new(plant, output, inputs, &domain)?,
        region: RegionSpec::new(domain, safe_box, init, unsafe_set)?,
    })
}

fn half(coeffs: [f64; 3], bound: f64, strict: bool) -> HalfSpace {
    HalfSpace {
        coeffs: coeffs.to_vec(),
        bound,
        strict,
    }
}

/// Three-tank coefficients: tank cross-section `A = 0.0154 m²`, valve
/// section `S_n = 5e-5 m²` and outflow coefficients `μ = (0.5, 0.675, 0.6)`,
/// giving `a_i = μ_i S_n √(2g) / A`.
fn three_tank() -> Result<Benchmark> {
    let area = 0.0154;
    let sn = 5e-5;
    let root = libm::sqrt(2.0 * 9.81);
    let [a1, a2, a3] = [0.5, 0.675, 0.6].map(|mu| mu * sn * root / area);
    let domain = BoxSet::new(vec![0.0; 3], vec![0.7; 3])?;
    let safe_box = BoxSet::new(vec![0.1; 3], vec![0.63; 3])?;
    // X_s = {0.2 ≤ x2 < x1 ≤ 0.63, 0.2 ≤ x3 ≤ 0.63}
    let safe = SetExpr::Polytope {
        constraints: vec![
            half([0.0, -1.0, 0.0], -0.2, false),
            half([-1.0, 1.0, 0.0], 0.0, true),
            half([1.0, 0.0, 0.0], 0.63, false),
            half([0.0, 0.0, -1.0], -0.2, false),
            half([0.0, 0.0, 1.0], 0.63, false),
        ],
    };
    let unsafe_set = SetExpr::Difference {
        base: Box::new(SetExpr::Box(safe_box.clone())),
        minus: Box::new(safe),
    };
    // X₀ = {0.4 ≤ x2 ≤ 0.5, x2 + 0.05 ≤ x1 ≤ 0.55, 0.4 ≤ x3 ≤ 0.5}
    let init = SetExpr::Polytope {
        constraints: vec![
            half([0.0, -1.0, 0.0], -0.4, false),
            half([0.0, 1.0, 0.0], 0.5, false),
            half([-1.0, 1.0, 0.0], -0.05, false),
            half([1.0, 0.0, 0.0], 0.55, false),
            half([0.0, 0.0, -1.0], -0.4, false),
            half([0.0, 0.0, 1.0], 0.5, false),
        ],
    };
    let plant = Plant::ThreeTank {
        a1,
        a2,
        a3,
        area,
        level_floor: 1e-3,
    };
    let output = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]])?;
    let inputs = BoxSet::new(vec![0.0, 0.0], vec![1e-4, 1e-4])?;
    Ok(Benchmark {
        name: "three_tank".into(),
        system: SystemModel::new(plant, output, inputs, &domain)?,
        region: RegionSpec::new(domain, safe_box, init, unsafe_set)?,
    })
}
