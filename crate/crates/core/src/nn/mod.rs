//! Dense feed-forward networks.
//!
//! A network with layer dimensions `[d0, d1, ..., dL]` computes
//! `z_{k+1} = σ(W_k z_k + b_k)` on hidden layers and `W_{L-1} z_{L-1} + b_{L-1}`
//! on the last one, optionally saturated element-wise into `[lb, ub]`.
//!
//! Besides plain evaluation, [`Mlp::forward_tangent`] pushes a tangent
//! vector alongside the input (forward-mode directional derivative) and
//! [`Mlp::backward`] runs reverse accumulation through both the primal and
//! the tangent pass. That combination yields gradients of expressions such
//! as `∇B(z)·v` with respect to the parameters, the input and `v` in a single
//! sweep.
//!
//! All parameters live in one flat buffer: layer `k` stores its row-major
//! `(d_{k+1} × d_k)` weight matrix followed by its bias vector.

mod adam;
mod document;

pub use adam::AdamState;
pub use document::MlpDocument;

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{mat_t_vec, mat_vec};
use crate::{Error, Result};

/// Smooth hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            // max(x, 0) + log1p(exp(-|x|)) never overflows.
            Activation::Softplus => x.max(0.0) + libm::log1p(libm::exp(-x.abs())),
            Activation::Tanh => libm::tanh(x),
        }
    }

    /// Returns `(σ(x), σ'(x), σ''(x))`.
    #[inline]
    pub fn eval_all(self, x: f64) -> (f64, f64, f64) {
        match self {
            Activation::Softplus => {
                let e = libm::exp(-x.abs());
                let value = x.max(0.0) + libm::log1p(e);
                let s = if x >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                (value, s, s * (1.0 - s))
            }
            Activation::Tanh => {
                let t = libm::tanh(x);
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
        }
    }

    /// Upper bound on `|σ'|` over the real line.
    pub fn max_slope(self) -> f64 {
        1.0
    }

    /// Upper bound on `|σ''|` over the real line.
    pub fn max_curvature(self) -> f64 {
        match self {
            Activation::Softplus => 0.25,
            // |d²/dx² tanh| peaks at 4 / (3√3).
            Activation::Tanh => 4.0 / (3.0 * libm::sqrt(3.0)),
        }
    }
}

/// Transform applied to the last affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputTransform {
    Linear,
    /// `HardTanh` saturation into the box `[lb, ub]`. Inside the closed box the
    /// subgradient is 1 (boundary included), outside it is 0.
    HardTanhClamp { lb: Vec<f64>, ub: Vec<f64> },
}

/// Borrowed view of one affine layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: &'a [f64],
    pub biases: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpDocument", try_from = "MlpDocument")]
pub struct Mlp {
    layer_dims: Vec<usize>,
    activation: Activation,
    output: OutputTransform,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

impl Mlp {
    /// Zero-initialized network.
    pub fn new(layer_dims: Vec<usize>, activation: Activation, output: OutputTransform) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Config("a network needs at least an input and an output dimension".into()));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        let out_dim = *layer_dims.last().unwrap();
        if let OutputTransform::HardTanhClamp { lb, ub } = &output {
            if lb.len() != out_dim || ub.len() != out_dim {
                return Err(Error::Shape {
                    context: "clamp bounds",
                    expected: out_dim,
                    got: lb.len().min(ub.len()),
                });
            }
            if lb.iter().zip(ub).any(|(l, u)| !(l < u)) {
                return Err(Error::Config("clamp bounds need lb < ub element-wise".into()));
            }
        }
        let mut offsets = Vec::with_capacity(layer_dims.len());
        let mut total = 0;
        for w in layer_dims.windows(2) {
            offsets.push(total);
            total += w[1] * w[0] + w[1];
        }
        offsets.push(total);
        Ok(Self {
            layer_dims,
            activation,
            output,
            params: vec![0.0; total],
            offsets,
        })
    }

    /// Network with weights and biases drawn uniformly from
    /// `[-1/√fan_in, 1/√fan_in]`.
    pub fn random<R: Rng + ?Sized>(
        layer_dims: Vec<usize>,
        activation: Activation,
        output: OutputTransform,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::new(layer_dims, activation, output)?;
        for k in 0..net.num_layers() {
            let bound = 1.0 / libm::sqrt(net.layer_dims[k] as f64);
            let (start, end) = (net.offsets[k], net.offsets[k + 1]);
            for p in &mut net.params[start..end] {
                *p = rng.gen_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_transform(&self) -> &OutputTransform {
        &self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn layer(&self, k: usize) -> LayerView<'_> {
        let (in_dim, out_dim) = (self.layer_dims[k], self.layer_dims[k + 1]);
        let start = self.offsets[k];
        let split = start + in_dim * out_dim;
        LayerView {
            in_dim,
            out_dim,
            weights: &self.params[start..split],
            biases: &self.params[split..self.offsets[k + 1]],
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = LayerView<'_>> + '_ {
        (0..self.num_layers()).map(move |k| self.layer(k))
    }

    /// Mutable `(weights, biases)` of layer `k`.
    pub fn layer_mut(&mut self, k: usize) -> (&mut [f64], &mut [f64]) {
        let (in_dim, out_dim) = (self.layer_dims[k], self.layer_dims[k + 1]);
        let start = self.offsets[k];
        let (w, b) = self.params[start..self.offsets[k + 1]].split_at_mut(in_dim * out_dim);
        (w, b)
    }

    pub fn tape(&self) -> Tape {
        Tape::new(self)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "network input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Evaluates the network on one input.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut tape = self.tape();
        self.forward_tape(input, &mut tape);
        Ok(tape.output().to_vec())
    }

    /// Primal pass recorded on `tape`. Panics on shape mismatch.
    pub fn forward_tape(&self, input: &[f64], tape: &mut Tape) {
        self.run(input, None, tape);
    }

    /// Primal pass plus the directional derivative along `tangent`.
    pub fn forward_tangent(&self, input: &[f64], tangent: &[f64], tape: &mut Tape) {
        self.run(input, Some(tangent), tape);
    }

    fn run(&self, input: &[f64], tangent: Option<&[f64]>, tape: &mut Tape) {
        assert_eq!(input.len(), self.input_dim(), "network input dimension");
        let with_tangent = tangent.is_some();
        tape.with_tangent = with_tangent;
        tape.acts[0].copy_from_slice(input);
        if let Some(t) = tangent {
            assert_eq!(t.len(), self.input_dim(), "tangent dimension");
            tape.tans[0].copy_from_slice(t);
        }
        let last = self.num_layers() - 1;
        for k in 0..=last {
            let layer = self.layer(k);
            let (head, tail) = tape.acts.split_at_mut(k + 1);
            let a_in = &head[k];
            let pre = &mut tape.pres[k];
            mat_vec(layer.weights, layer.out_dim, layer.in_dim, a_in, pre);
            for (p, b) in pre.iter_mut().zip(layer.biases) {
                *p += b;
            }
            if with_tangent {
                mat_vec(layer.weights, layer.out_dim, layer.in_dim, &tape.tans[k], &mut tape.dpres[k]);
            }
            let a_out = &mut tail[0];
            if k < last {
                let slopes = &mut tape.slopes[k];
                if with_tangent {
                    let curv = &mut tape.curvs[k];
                    for i in 0..layer.out_dim {
                        let (v, s, c) = self.activation.eval_all(pre[i]);
                        a_out[i] = v;
                        slopes[i] = s;
                        curv[i] = c;
                    }
                    for i in 0..layer.out_dim {
                        tape.tans[k + 1][i] = slopes[i] * tape.dpres[k][i];
                    }
                } else {
                    for i in 0..layer.out_dim {
                        let (v, s, _) = self.activation.eval_all(pre[i]);
                        a_out[i] = v;
                        slopes[i] = s;
                    }
                }
            } else {
                let slopes = &mut tape.slopes[k];
                match &self.output {
                    OutputTransform::Linear => {
                        a_out.copy_from_slice(pre);
                        slopes.fill(1.0);
                    }
                    OutputTransform::HardTanhClamp { lb, ub } => {
                        for i in 0..layer.out_dim {
                            let p = pre[i];
                            if p < lb[i] {
                                a_out[i] = lb[i];
                                slopes[i] = 0.0;
                            } else if p > ub[i] {
                                a_out[i] = ub[i];
                                slopes[i] = 0.0;
                            } else {
                                a_out[i] = p;
                                slopes[i] = 1.0;
                            }
                        }
                    }
                }
                if with_tangent {
                    for i in 0..layer.out_dim {
                        tape.tans[k + 1][i] = slopes[i] * tape.dpres[k][i];
                    }
                }
            }
        }
    }

    /// Reverse accumulation through the pass recorded on `tape`.
    ///
    /// `out_bar` is the adjoint of the output and `tangent_out_bar` the
    /// adjoint of the output tangent (only meaningful after
    /// [`Mlp::forward_tangent`]). Parameter adjoints are *added* into
    /// `grads`; input and tangent adjoints overwrite their buffers.
    pub fn backward(
        &self,
        tape: &mut Tape,
        out_bar: &[f64],
        tangent_out_bar: Option<&[f64]>,
        mut grads: Option<&mut [f64]>,
        input_bar: Option<&mut [f64]>,
        tangent_bar: Option<&mut [f64]>,
    ) {
        let use_tangent = tape.with_tangent && tangent_out_bar.is_some();
        let last = self.num_layers() - 1;
        let Tape {
            acts,
            pres: _,
            tans,
            dpres,
            slopes,
            curvs,
            abar,
            tbar,
            prebar,
            dprebar,
            ..
        } = tape;

        abar[..self.output_dim()].copy_from_slice(out_bar);
        if use_tangent {
            tbar[..self.output_dim()].copy_from_slice(tangent_out_bar.unwrap());
        }
        for k in (0..=last).rev() {
            let layer = self.layer(k);
            let (n_out, n_in) = (layer.out_dim, layer.in_dim);
            let s = &slopes[k];
            for i in 0..n_out {
                prebar[i] = s[i] * abar[i];
            }
            if use_tangent {
                for i in 0..n_out {
                    dprebar[i] = s[i] * tbar[i];
                }
                if k < last {
                    let c = &curvs[k];
                    let dp = &dpres[k];
                    for i in 0..n_out {
                        prebar[i] += c[i] * dp[i] * tbar[i];
                    }
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                let start = self.offsets[k];
                let (gw, gb) = g[start..self.offsets[k + 1]].split_at_mut(n_in * n_out);
                let a_in = &acts[k];
                for i in 0..n_out {
                    let pb = prebar[i];
                    gb[i] += pb;
                    let row = &mut gw[i * n_in..(i + 1) * n_in];
                    if pb != 0.0 {
                        for (gij, &aj) in row.iter_mut().zip(a_in) {
                            *gij += pb * aj;
                        }
                    }
                    if use_tangent {
                        let db = dprebar[i];
                        if db != 0.0 {
                            for (gij, &tj) in row.iter_mut().zip(&tans[k]) {
                                *gij += db * tj;
                            }
                        }
                    }
                }
            }
            mat_t_vec(layer.weights, n_out, n_in, prebar, abar);
            if use_tangent {
                mat_t_vec(layer.weights, n_out, n_in, dprebar, tbar);
            }
        }
        let n0 = self.input_dim();
        if let Some(ib) = input_bar {
            ib[..n0].copy_from_slice(&abar[..n0]);
        }
        if let Some(tb) = tangent_bar {
            if use_tangent {
                tb[..n0].copy_from_slice(&tbar[..n0]);
            } else {
                tb[..n0].fill(0.0);
            }
        }
    }

    /// Exact gradient of a scalar, unclamped network with respect to its input.
    pub fn input_gradient(&self, input: &[f64]) -> Result<Vec<f64>> {
        if self.output_dim() != 1 {
            return Err(Error::Unsupported {
                op: "input_gradient",
                reason: "network output is not scalar",
            });
        }
        if self.output != OutputTransform::Linear {
            return Err(Error::Unsupported {
                op: "input_gradient",
                reason: "network output is clamped",
            });
        }
        self.check_input(input)?;
        let mut tape = self.tape();
        self.forward_tape(input, &mut tape);
        let mut grad = vec![0.0; self.input_dim()];
        self.backward(&mut tape, &[1.0], None, None, Some(&mut grad), None);
        Ok(grad)
    }

    /// Gradient of `⟨upstream, forward(input)⟩` with respect to every
    /// parameter, laid out like [`Mlp::params`].
    pub fn param_gradients(&self, upstream: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape {
                context: "upstream gradient",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let mut tape = self.tape();
        self.forward_tape(input, &mut tape);
        let mut grads = vec![0.0; self.num_params()];
        self.backward(&mut tape, upstream, None, Some(&mut grads), None, None);
        Ok(grads)
    }
}

/// Reusable buffers for one forward/backward evaluation.
#[derive(Debug, Clone)]
pub struct Tape {
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
    tans: Vec<Vec<f64>>,
    dpres: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
    curvs: Vec<Vec<f64>>,
    abar: Vec<f64>,
    tbar: Vec<f64>,
    prebar: Vec<f64>,
    dprebar: Vec<f64>,
    with_tangent: bool,
}

impl Tape {
    pub fn new(net: &Mlp) -> Self {
        let dims = &net.layer_dims;
        let widest = dims.iter().copied().max().unwrap_or(0);
        let per_layer = |skip_input: bool| -> Vec<Vec<f64>> {
            dims.iter()
                .skip(usize::from(skip_input))
                .map(|&d| vec![0.0; d])
                .collect()
        };
        Self {
            acts: per_layer(false),
            pres: per_layer(true),
            tans: per_layer(false),
            dpres: per_layer(true),
            slopes: per_layer(true),
            curvs: per_layer(true),
            abar: vec![0.0; widest],
            tbar: vec![0.0; widest],
            prebar: vec![0.0; widest],
            dprebar: vec![0.0; widest],
            with_tangent: false,
        }
    }

    /// Output of the last recorded pass.
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    /// Directional derivative of the output from the last tangent pass.
    pub fn output_tangent(&self) -> &[f64] {
        self.tans.last().unwrap()
    }

    /// Output of the last affine map before any clamp.
    pub fn pre_output(&self) -> &[f64] {
        self.pres.last().unwrap()
    }
}

#[cfg(test)]
mod tests;
