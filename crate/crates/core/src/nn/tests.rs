use super::*;
use alloc::vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_dims(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Vec<usize> {
    let hidden = rng.gen_range(1..=3);
    let mut dims = vec![input];
    for _ in 0..hidden {
        dims.push(rng.gen_range(2..=16));
    }
    dims.push(output);
    dims
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Straight-line re-evaluation using textbook activation formulas.
fn reference_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
    let mut z = input.to_vec();
    let n = net.num_layers();
    for (k, layer) in net.layers().enumerate() {
        let mut next = Vec::new();
        for i in 0..layer.out_dim {
            let mut acc = layer.biases[i];
            for j in 0..layer.in_dim {
                acc += layer.weights[i * layer.in_dim + j] * z[j];
            }
            next.push(if k + 1 < n {
                match net.activation() {
                    Activation::Softplus => libm::log(1.0 + libm::exp(acc)),
                    Activation::Tanh => {
                        let e = libm::exp(2.0 * acc);
                        (e - 1.0) / (e + 1.0)
                    }
                }
            } else {
                acc
            });
        }
        z = next;
    }
    if let OutputTransform::HardTanhClamp { lb, ub } = net.output_transform() {
        for i in 0..z.len() {
            z[i] = z[i].max(lb[i]).min(ub[i]);
        }
    }
    z
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn softplus_single_neuron() {
    let mut net = Mlp::new(vec![1, 1, 1], Activation::Softplus, OutputTransform::Linear).unwrap();
    net.layer_mut(0).0[0] = 1.0;
    net.layer_mut(1).0[0] = 1.0;
    let y = net.forward(&[0.0]).unwrap();
    assert!((y[0] - core::f64::consts::LN_2).abs() < 1e-15);
    // d softplus(0) = sigmoid(0)
    let g = net.input_gradient(&[0.0]).unwrap();
    assert!((g[0] - 0.5).abs() < 1e-15);
}

#[test]
fn clamp_saturates_above_ub() {
    let mut net = Mlp::new(
        vec![1, 1],
        Activation::Softplus,
        OutputTransform::HardTanhClamp { lb: vec![-1.0], ub: vec![1.0] },
    )
    .unwrap();
    net.layer_mut(0).1[0] = 2.0;
    assert_eq!(net.forward(&[0.0]).unwrap(), vec![1.0]);
    net.layer_mut(0).1[0] = -2.0;
    assert_eq!(net.forward(&[0.0]).unwrap(), vec![-1.0]);
}

#[test]
fn forward_matches_reference() {
    let mut r = rng(1);
    for act in [Activation::Softplus, Activation::Tanh] {
        for _ in 0..20 {
            let net = Mlp::random(vec![3, 8, 2], act, OutputTransform::Linear, &mut r).unwrap();
            let x = random_vec(&mut r, 3, 2.0);
            let got = net.forward(&x).unwrap();
            let want = reference_forward(&net, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!(rel_err(*g, *w) <= 1e-12, "{g} vs {w}");
            }
        }
    }
}

#[test]
fn dimension_mismatch_rejected() {
    let net = Mlp::new(vec![2, 3, 1], Activation::Tanh, OutputTransform::Linear).unwrap();
    assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { expected: 2, got: 1, .. })));
    assert!(matches!(net.param_gradients(&[1.0, 2.0], &[0.0, 0.0]), Err(Error::Shape { .. })));
}

#[test]
fn linear_net_gradient_is_weight_row() {
    let mut net = Mlp::new(vec![2, 1], Activation::Softplus, OutputTransform::Linear).unwrap();
    net.layer_mut(0).0.copy_from_slice(&[3.0, -2.0]);
    for x in [[0.0, 0.0], [1.5, -7.0], [1e3, 2.0]] {
        assert_eq!(net.input_gradient(&x).unwrap(), vec![3.0, -2.0]);
    }
}

#[test]
fn input_gradient_rejects_vector_or_clamped_output() {
    let vector = Mlp::new(vec![2, 2], Activation::Tanh, OutputTransform::Linear).unwrap();
    assert!(matches!(vector.input_gradient(&[0.0, 0.0]), Err(Error::Unsupported { .. })));
    let clamped = Mlp::new(
        vec![2, 1],
        Activation::Tanh,
        OutputTransform::HardTanhClamp { lb: vec![-1.0], ub: vec![1.0] },
    )
    .unwrap();
    assert!(matches!(clamped.input_gradient(&[0.0, 0.0]), Err(Error::Unsupported { .. })));
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut r = rng(2);
    let h = 1e-5;
    for trial in 0..100 {
        let act = if trial % 2 == 0 { Activation::Softplus } else { Activation::Tanh };
        let n_in = r.gen_range(1..=6);
        let dims = random_dims(&mut r, n_in, 1);
        let net = Mlp::random(dims, act, OutputTransform::Linear, &mut r).unwrap();
        let x = random_vec(&mut r, net.input_dim(), 1.5);
        let g = net.input_gradient(&x).unwrap();
        let fd: Vec<f64> = (0..x.len())
            .map(|i| {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[i] += h;
                b[i] -= h;
                (net.forward(&a).unwrap()[0] - net.forward(&b).unwrap()[0]) / (2.0 * h)
            })
            .collect();
        let err = crate::linalg::dist2(&g, &fd) / crate::linalg::norm2(&fd).max(1e-8);
        assert!(err <= 1e-6, "trial {trial}: {err}");
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut r = rng(3);
    let net = Mlp::random(vec![3, 5, 2], Activation::Tanh, OutputTransform::Linear, &mut r).unwrap();
    let g = net.param_gradients(&[0.0, 0.0], &[0.3, -0.2, 0.9]).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn one_layer_linear_param_gradient() {
    let net = Mlp::new(vec![1, 1], Activation::Tanh, OutputTransform::Linear).unwrap();
    let g = net.param_gradients(&[1.0], &[2.5]).unwrap();
    assert_eq!(g, vec![2.5, 1.0]);
}

fn fd_param_gradients(net: &Mlp, upstream: &[f64], x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = net.clone();
    (0..net.num_params())
        .map(|i| {
            let p0 = net.params()[i];
            probe.params_mut()[i] = p0 + h;
            let a = linalg::dot(upstream, &probe.forward(x).unwrap());
            probe.params_mut()[i] = p0 - h;
            let b = linalg::dot(upstream, &probe.forward(x).unwrap());
            probe.params_mut()[i] = p0;
            (a - b) / (2.0 * h)
        })
        .collect()
}

use crate::linalg;

#[test]
fn param_gradients_match_finite_differences() {
    let mut r = rng(4);
    for trial in 0..100 {
        let act = if trial % 2 == 0 { Activation::Softplus } else { Activation::Tanh };
        let n_in = r.gen_range(1..=6);
        let n_out = r.gen_range(1..=3);
        let dims = random_dims(&mut r, n_in, n_out);
        let net = Mlp::random(dims, act, OutputTransform::Linear, &mut r).unwrap();
        let x = random_vec(&mut r, n_in, 1.5);
        let up = random_vec(&mut r, n_out, 1.0);
        let g = net.param_gradients(&up, &x).unwrap();
        let fd = fd_param_gradients(&net, &up, &x, 1e-5);
        let err = linalg::dist2(&g, &fd) / linalg::norm2(&fd).max(1e-8);
        assert!(err <= 1e-5, "trial {trial}: {err}");
    }
}

#[test]
fn clamp_subgradient_is_indicator() {
    let mut net = Mlp::new(
        vec![1, 1],
        Activation::Tanh,
        OutputTransform::HardTanhClamp { lb: vec![-1.0], ub: vec![1.0] },
    )
    .unwrap();
    net.layer_mut(0).0[0] = 1.0;
    // saturated: no gradient
    assert_eq!(net.param_gradients(&[1.0], &[3.0]).unwrap(), vec![0.0, 0.0]);
    // inside, and exactly on the boundary: pass-through
    assert_eq!(net.param_gradients(&[1.0], &[0.5]).unwrap(), vec![0.5, 1.0]);
    assert_eq!(net.param_gradients(&[1.0], &[1.0]).unwrap(), vec![1.0, 1.0]);
}

/// `∇B(z)·v` via the tangent pass; the backward adjoints of that scalar
/// with respect to parameters, input and tangent are checked against
/// central differences of the tangent pass itself.
#[test]
fn tangent_backward_matches_finite_differences() {
    let mut r = rng(5);
    let h = 1e-5;
    for trial in 0..30 {
        let act = if trial % 2 == 0 { Activation::Softplus } else { Activation::Tanh };
        let dims = random_dims(&mut r, 4, 1);
        let net = Mlp::random(dims, act, OutputTransform::Linear, &mut r).unwrap();
        let z = random_vec(&mut r, 4, 1.0);
        let v = random_vec(&mut r, 4, 1.0);
        let (cb, ct) = (r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
        let objective = |net: &Mlp, z: &[f64], v: &[f64]| {
            let mut tape = net.tape();
            net.forward_tangent(z, v, &mut tape);
            cb * tape.output()[0] + ct * tape.output_tangent()[0]
        };
        // directional derivative agrees with the input gradient
        let mut tape = net.tape();
        net.forward_tangent(&z, &v, &mut tape);
        let grad = net.input_gradient(&z).unwrap();
        assert!((tape.output_tangent()[0] - linalg::dot(&grad, &v)).abs() < 1e-12);

        let mut grads = vec![0.0; net.num_params()];
        let mut zbar = vec![0.0; 4];
        let mut vbar = vec![0.0; 4];
        net.backward(&mut tape, &[cb], Some(&[ct]), Some(&mut grads), Some(&mut zbar), Some(&mut vbar));

        let mut probe = net.clone();
        let fd: Vec<f64> = (0..net.num_params())
            .map(|i| {
                let p0 = net.params()[i];
                probe.params_mut()[i] = p0 + h;
                let a = objective(&probe, &z, &v);
                probe.params_mut()[i] = p0 - h;
                let b = objective(&probe, &z, &v);
                probe.params_mut()[i] = p0;
                (a - b) / (2.0 * h)
            })
            .collect();
        let err = linalg::dist2(&grads, &fd) / linalg::norm2(&fd).max(1e-8);
        assert!(err <= 1e-5, "params, trial {trial}: {err}");

        for (i, (&zb, &vb)) in zbar.iter().zip(&vbar).enumerate() {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[i] += h;
            zm[i] -= h;
            let fz = (objective(&net, &zp, &v) - objective(&net, &zm, &v)) / (2.0 * h);
            let (mut vp, mut vm) = (v.clone(), v.clone());
            vp[i] += h;
            vm[i] -= h;
            let fv = (objective(&net, &z, &vp) - objective(&net, &z, &vm)) / (2.0 * h);
            assert!((zb - fz).abs() <= 1e-6 * fz.abs().max(1.0), "z{i}: {zb} vs {fz}");
            assert!((vb - fv).abs() <= 1e-6 * fv.abs().max(1.0), "v{i}: {vb} vs {fv}");
        }
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let mut r = rng(6);
    let net = Mlp::random(vec![4, 16, 16, 1], Activation::Softplus, OutputTransform::Linear, &mut r).unwrap();
    let x = random_vec(&mut r, 4, 3.0);
    let a = net.forward(&x).unwrap();
    let b = net.clone().forward(&x).unwrap();
    assert_eq!(a[0].to_bits(), b[0].to_bits());
}

#[test]
fn activation_slopes_bounded_by_one() {
    for act in [Activation::Softplus, Activation::Tanh] {
        let mut x = -60.0;
        while x <= 60.0 {
            let (_, s, c) = act.eval_all(x);
            assert!((0.0..=1.0).contains(&s), "{act:?} slope {s} at {x}");
            assert!(c.abs() <= act.max_curvature() + 1e-15);
            x += 1e-3;
        }
    }
    // stable form: no overflow far from zero
    assert_eq!(Activation::Softplus.eval(800.0), 800.0);
    assert!(Activation::Softplus.eval(-800.0) >= 0.0);
}

#[test]
fn clamp_holds_for_many_inputs() {
    let mut r = rng(7);
    let lb = vec![-1.0, 0.0];
    let ub = vec![1.0, 1e-4];
    let net = Mlp::random(
        vec![3, 16, 16, 2],
        Activation::Tanh,
        OutputTransform::HardTanhClamp { lb: lb.clone(), ub: ub.clone() },
        &mut r,
    )
    .unwrap();
    let mut tape = net.tape();
    for _ in 0..100_000 {
        let x = random_vec(&mut r, 3, 50.0);
        net.forward_tape(&x, &mut tape);
        let y = tape.output();
        for i in 0..2 {
            assert!(lb[i] <= y[i] && y[i] <= ub[i]);
        }
    }
}

#[test]
fn document_rejects_bad_shapes() {
    let net = Mlp::new(vec![2, 3, 1], Activation::Tanh, OutputTransform::Linear).unwrap();
    let mut doc = MlpDocument::from(net.clone());
    assert_eq!(Mlp::try_from(doc.clone()).unwrap(), net);
    doc.weights[0][1].push(0.0);
    assert!(matches!(Mlp::try_from(doc), Err(Error::Shape { .. })));
}

proptest! {
    #[test]
    fn document_round_trip_is_exact(seed in any::<u64>(), clamp in any::<bool>()) {
        let mut r = rng(seed);
        let output = if clamp {
            OutputTransform::HardTanhClamp { lb: vec![-0.5, 0.0], ub: vec![0.5, 1e-4] }
        } else {
            OutputTransform::Linear
        };
        let net = Mlp::random(vec![3, 7, 2], Activation::Softplus, output, &mut r).unwrap();
        let back = Mlp::try_from(MlpDocument::from(net.clone())).unwrap();
        prop_assert_eq!(back, net);
    }

    #[test]
    fn clamped_output_within_bounds(seed in any::<u64>(), x in proptest::collection::vec(-1e3f64..1e3, 2)) {
        let mut r = rng(seed);
        let net = Mlp::random(
            vec![2, 8, 1],
            Activation::Softplus,
            OutputTransform::HardTanhClamp { lb: vec![-1.0], ub: vec![1.0] },
            &mut r,
        ).unwrap();
        let y = net.forward(&x).unwrap()[0];
        prop_assert!((-1.0..=1.0).contains(&y));
    }
}
