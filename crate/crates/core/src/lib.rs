//! Co-synthesis of a neural control barrier function, an output-feedback
//! controller and a state observer for partially observed continuous-time
//! systems.
//!
//! The crate is `no_std` (with `alloc`) and holds every numerical piece of
//! the pipeline:
//!
//! - [`nn`]: dense networks with forward, tangent and reverse passes, plus Adam.
//! - [`systems`]: plant dynamics, output maps, region algebra and the three
//!   benchmark plants.
//! - [`sampling`]: the ε-net over the augmented domain `D × D`.
//! - [`nets`]: the barrier, controller and observer networks as one unit.
//! - [`losses`]: constraint functions `q1..q3` and the training losses.
//! - [`lipschitz`]: sound Lipschitz and sup-norm bounds and the composite `L_max`.
//! - [`trainer`]: the joint training loop for the three networks and the margin `η`.
//! - [`verify`]: certificate arithmetic, the brute-force grid oracle, RK4
//!   closed-loop simulation and trajectory auditing.
//!
//! File formats, the command line and plotting live in the `ncbf` crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod exec;
pub mod linalg;
pub mod lipschitz;
pub mod losses;
pub mod nets;
pub mod nn;
pub mod sampling;
pub mod systems;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use nets::{Architecture, Nets};
pub use nn::{Activation, AdamState, Mlp, OutputTransform};
pub use systems::{AugmentedPoint, Benchmark, RegionSpec, SetExpr, SystemModel};
