//! The three learned objects: barrier, controller and observer.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Mlp, OutputTransform};
use crate::systems::SystemModel;
use crate::{Error, Result};

/// Hidden widths and activations of the three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub barrier_hidden: Vec<usize>,
    pub controller_hidden: Vec<usize>,
    pub observer_hidden: Vec<usize>,
    /// Hidden activation shared by every network unless overridden below.
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier_activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller_activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer_activation: Option<Activation>,
}

fn default_activation() -> Activation {
    Activation::Softplus
}

impl Architecture {
    pub fn uniform(hidden: Vec<usize>) -> Self {
        Self {
            barrier_hidden: hidden.clone(),
            controller_hidden: hidden.clone(),
            observer_hidden: hidden,
            activation: Activation::Softplus,
            barrier_activation: None,
            controller_activation: None,
            observer_activation: None,
        }
    }

    pub fn barrier_activation(&self) -> Activation {
        self.barrier_activation.unwrap_or(self.activation)
    }

    pub fn controller_activation(&self) -> Activation {
        self.controller_activation.unwrap_or(self.activation)
    }

    pub fn observer_activation(&self) -> Activation {
        self.observer_activation.unwrap_or(self.activation)
    }
}

/// Barrier `B(x, x̂)`, controller `u = g(x̂)` and observer `f̂(x̂, u, y − ŷ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nets {
    pub barrier: Mlp,
    pub controller: Mlp,
    pub observer: Mlp,
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

impl Nets {
    /// Randomly initialized networks sized for `sys`; the controller output
    /// is clamped to the input box.
    pub fn random<R: Rng + ?Sized>(arch: &Architecture, sys: &SystemModel, rng: &mut R) -> Result<Self> {
        let (n, m, p) = (sys.state_dim(), sys.input_dim(), sys.output_dim());
        let clamp = OutputTransform::HardTanhClamp {
            lb: sys.input_bounds.lo.clone(),
            ub: sys.input_bounds.hi.clone(),
        };
        let nets = Self {
            barrier: Mlp::random(dims(2 * n, &arch.barrier_hidden, 1), arch.barrier_activation(), OutputTransform::Linear, rng)?,
            controller: Mlp::random(dims(n, &arch.controller_hidden, m), arch.controller_activation(), clamp, rng)?,
            observer: Mlp::random(dims(n + m + p, &arch.observer_hidden, n), arch.observer_activation(), OutputTransform::Linear, rng)?,
        };
        nets.validate(sys)?;
        Ok(nets)
    }

    /// Checks that the network shapes fit `sys`.
    pub fn validate(&self, sys: &SystemModel) -> Result<()> {
        let (n, m, p) = (sys.state_dim(), sys.input_dim(), sys.output_dim());
        let check = |context, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::Shape { context, expected, got })
            }
        };
        check("barrier input", 2 * n, self.barrier.input_dim())?;
        check("barrier output", 1, self.barrier.output_dim())?;
        check("controller input", n, self.controller.input_dim())?;
        check("controller output", m, self.controller.output_dim())?;
        check("observer input", n + m + p, self.observer.input_dim())?;
        check("observer output", n, self.observer.output_dim())?;
        if *self.barrier.output_transform() != OutputTransform::Linear {
            return Err(Error::Config("the barrier output must be linear".into()));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.barrier.num_params() + self.controller.num_params() + self.observer.num_params()
    }

    /// Start offsets of the barrier, controller and observer parameters in
    /// a flat gradient vector, plus the total length.
    pub fn offsets(&self) -> [usize; 4] {
        let a = self.barrier.num_params();
        let b = a + self.controller.num_params();
        [0, a, b, b + self.observer.num_params()]
    }

    pub fn nets(&self) -> [&Mlp; 3] {
        [&self.barrier, &self.controller, &self.observer]
    }

    pub fn nets_mut(&mut self) -> [&mut Mlp; 3] {
        [&mut self.barrier, &mut self.controller, &mut self.observer]
    }

    /// Control input `g(x̂)`.
    pub fn control(&self, xhat: &[f64]) -> Result<Vec<f64>> {
        self.controller.forward(xhat)
    }

    pub fn barrier_value(&self, x: &[f64], xhat: &[f64]) -> Result<f64> {
        let mut z = x.to_vec();
        z.extend_from_slice(xhat);
        Ok(self.barrier.forward(&z)?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::benchmark;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn per_network_activation_overrides_the_shared_one() {
        let sys = benchmark("three_tank").unwrap().system;
        let mut arch = Architecture::uniform(vec![4]);
        arch.activation = Activation::Tanh;
        arch.controller_activation = Some(Activation::Softplus);
        let nets = Nets::random(&arch, &sys, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(nets.barrier.activation(), Activation::Tanh);
        assert_eq!(nets.controller.activation(), Activation::Softplus);
        assert_eq!(nets.observer.activation(), Activation::Tanh);
        // observer input is x̂, u and the output error: 3 + 2 + 2
        assert_eq!(nets.observer.input_dim(), 7);
    }

    #[test]
    fn overrides_are_optional_in_json() {
        let arch: Architecture =
            serde_json::from_str(r#"{"barrier_hidden":[8],"controller_hidden":[8],"observer_hidden":[8]}"#).unwrap();
        assert_eq!(arch.observer_activation(), Activation::Softplus);
        assert!(!serde_json::to_string(&arch).unwrap().contains("observer_activation"));
    }
}
