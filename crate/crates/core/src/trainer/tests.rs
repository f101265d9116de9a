use super::*;
use crate::exec::Sequential;
use crate::linalg::Matrix;
use crate::losses::ObserverLoss;
use crate::nn::Activation;
use crate::sampling::build_epsilon_net;
use crate::systems::{BoxSet, Plant, SetExpr};
use alloc::vec;

/// Fully observed `ẋ = u`, `y = x` on `[-1, 1]` with `X₀ = [-0.2, 0.2]` and
/// unsafe bands at both ends of `X = [-0.8, 0.8]`.
fn smoke_problem() -> (SystemModel, RegionSpec, Dataset) {
    let region = RegionSpec::new(
        BoxSet::new(vec![-1.0], vec![1.0]).unwrap(),
        BoxSet::new(vec![-0.8], vec![0.8]).unwrap(),
        SetExpr::boxed(vec![-0.2], vec![0.2]).unwrap(),
        SetExpr::Union {
            sets: vec![
                SetExpr::boxed(vec![-0.8], vec![-0.6]).unwrap(),
                SetExpr::boxed(vec![0.6], vec![0.8]).unwrap(),
            ],
        },
    )
    .unwrap();
    let plant = Plant::Linear {
        a: Matrix::from_rows(&[vec![0.0]]).unwrap(),
        b: Matrix::from_rows(&[vec![1.0]]).unwrap(),
    };
    let sys = SystemModel::new(
        plant,
        Matrix::from_rows(&[vec![1.0]]).unwrap(),
        BoxSet::new(vec![-1.0], vec![1.0]).unwrap(),
        &region.domain,
    )
    .unwrap();
    let ds = build_epsilon_net(&region, 0.1, 100_000).unwrap();
    (sys, region, ds)
}

fn smoke_config(epochs: usize) -> TrainConfig {
    let mut arch = Architecture::uniform(vec![16, 16]);
    arch.activation = Activation::Tanh;
    let mut cfg = TrainConfig::new(arch, epochs, 1);
    cfg.batch_size = 64;
    cfg.lr_barrier = 1e-2;
    cfg.lr_controller = 1e-2;
    cfg.lr_observer = 1e-2;
    cfg.eta_init = -0.05;
    cfg.eta_min = Some(-0.05);
    cfg.loss.observer_loss = ObserverLoss::Hinge;
    cfg.stop_when_sop_satisfied = true;
    cfg
}

#[test]
fn smoke_problem_reaches_sop() {
    let (sys, region, ds) = smoke_problem();
    assert_eq!(ds.len(), 256);
    let cfg = smoke_config(2000);
    let tol = cfg.tolerance;
    let result = train(&Sequential, &ds, &sys, &region, cfg).unwrap();
    let epoch = result.sop_epoch.expect("SOP not reached within 2000 epochs");
    assert!(epoch <= 2000);
    assert!(result.sop_satisfied);
    let last = result.history.last().unwrap();
    assert!(last.losses.l_cbf <= tol);
    // A single ReLU term bounds each constraint's excess over the margin.
    for q in last.losses.max_q {
        assert!(q <= result.eta + tol, "{q}");
    }
}

#[test]
fn zero_epoch_cap_returns_initial_losses() {
    let (sys, region, ds) = smoke_problem();
    let result = train(&Sequential, &ds, &sys, &region, smoke_config(0)).unwrap();
    assert!(!result.converged);
    assert_eq!(result.epochs, 0);
    assert_eq!(result.history.len(), 1);
    assert_eq!(result.message, NOT_FOUND);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut arch = Architecture::uniform(vec![16, 16]);
    arch.activation = Activation::Tanh;
    let nets = Nets::random(&arch, &sys, &mut rng).unwrap();
    let cfg = smoke_config(0);
    let initial = evaluate(&Sequential, &ds, &nets, &sys, &cfg.loss, cfg.eta_init).unwrap();
    assert_eq!(result.history[0].losses.l_cbf, initial.l_cbf);
    assert_eq!(result.nets, nets);
}

#[test]
fn eta_examples() {
    // Unit subgradient when active.
    assert!((update_eta(0.0, 2.5, 0.02, 0.01, 0.0, None) + 0.01).abs() < 1e-18);
    // Inactive ReLU: only the pull acts.
    assert_eq!(update_eta(-0.2, 1.0, 0.1, 0.01, 0.0, None), -0.2);
    assert!((update_eta(-0.2, 1.0, 0.1, 0.01, 0.5, None) + 0.205).abs() < 1e-15);
    // Projection onto η ≤ 0 and the floor.
    assert_eq!(update_eta(0.0, 0.0, 0.1, 0.01, 0.0, None), 0.0);
    assert_eq!(update_eta(-0.05, 10.0, 0.1, 0.01, 0.0, Some(-0.05)), -0.05);
}

#[test]
fn eta_step_count() {
    for (l_max, eps, lr) in [(2.776, 0.0193, 1e-3), (0.55, 0.0957, 7e-4), (5.0, 0.01, 0.013)] {
        let bound = libm::ceil(l_max * eps / lr) as usize;
        let mut eta = 0.0;
        let mut steps = 0;
        while loss_p(eta, l_max, eps) > 0.0 {
            eta = update_eta(eta, l_max, eps, lr, 0.0, None);
            steps += 1;
            assert!(steps <= bound);
        }
        assert!(steps >= bound.saturating_sub(1));
    }
}

#[test]
fn runs_are_deterministic_and_resumable() {
    let (sys, region, ds) = smoke_problem();
    let mut cfg = smoke_config(6);
    cfg.eta_min = None;
    cfg.lr_eta = 1e-2;
    let full = train(&Sequential, &ds, &sys, &region, cfg.clone()).unwrap();
    let again = train(&Sequential, &ds, &sys, &region, cfg.clone()).unwrap();
    assert_eq!(full.history, again.history);
    assert_eq!(full.nets, again.nets);

    let mut first = Trainer::new(&Sequential, &ds, &sys, &region, cfg.clone()).unwrap();
    first.run_for(3).unwrap();
    let saved = first.state().clone();
    let resumed = Trainer::resume(&Sequential, &ds, &sys, &region, cfg.clone(), saved).unwrap().run().unwrap();
    assert_eq!(resumed.history, full.history);
    assert_eq!(resumed.nets, full.nets);
    assert_eq!(resumed.eta.to_bits(), full.eta.to_bits());

    let mut other = first.state().clone();
    other.version += 1;
    assert!(Trainer::resume(&Sequential, &ds, &sys, &region, cfg.clone(), other).is_err());
    let mut other_seed = cfg;
    other_seed.seed += 1;
    assert!(Trainer::resume(&Sequential, &ds, &sys, &region, other_seed, first.state().clone()).is_err());
}

#[test]
fn eta_never_increases() {
    let (sys, region, ds) = smoke_problem();
    let mut cfg = smoke_config(15);
    cfg.eta_init = 0.0;
    cfg.eta_min = None;
    cfg.lr_eta = 1e-2;
    cfg.stop_when_sop_satisfied = false;
    let result = train(&Sequential, &ds, &sys, &region, cfg).unwrap();
    for w in result.history.windows(2) {
        assert!(w[1].losses.eta <= w[0].losses.eta);
        if w[0].losses.l_p > 0.0 {
            assert!(w[1].losses.eta < w[0].losses.eta);
        }
    }
}

#[test]
fn frozen_observer_keeps_weights() {
    let (sys, region, ds) = smoke_problem();
    let mut cfg = smoke_config(3);
    cfg.freeze_observer = true;
    let mut trainer = Trainer::new(&Sequential, &ds, &sys, &region, cfg).unwrap();
    let before = trainer.state().nets.clone();
    trainer.run_for(3).unwrap();
    let after = &trainer.state().nets;
    assert_eq!(after.observer, before.observer);
    assert_ne!(after.barrier, before.barrier);
    assert_ne!(after.controller, before.controller);
}

#[test]
fn rejects_ill_posed_datasets() {
    let (sys, region, _) = smoke_problem();
    // Samples only near the origin: no unsafe point.
    let ds = Dataset::from_points(&region, 0.1, vec![0.0, 0.0, 0.1, 0.1, -0.1, 0.0]).unwrap();
    let err = Trainer::new(&Sequential, &ds, &sys, &region, smoke_config(1)).err().unwrap();
    assert_eq!(err, Error::EmptySubset("unsafe"));
    let ds = Dataset::from_points(&region, 0.1, vec![0.7, 0.7, 0.5, 0.5]).unwrap();
    let err = Trainer::new(&Sequential, &ds, &sys, &region, smoke_config(1)).err().unwrap();
    assert_eq!(err, Error::EmptySubset("init"));
    let (_, _, ds) = smoke_problem();
    let mut cfg = smoke_config(1);
    cfg.batch_size = ds.len() + 1;
    assert!(matches!(Trainer::new(&Sequential, &ds, &sys, &region, cfg), Err(Error::Config(_))));
}

#[test]
fn divergence_keeps_last_good_state() {
    let (sys, region, ds) = smoke_problem();
    let mut cfg = smoke_config(5);
    cfg.lr_barrier = 1e300;
    let mut trainer = Trainer::new(&Sequential, &ds, &sys, &region, cfg).unwrap();
    let before = trainer.state().clone();
    let err = trainer.step_epoch().unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 1, .. }), "{err:?}");
    assert_eq!(trainer.state(), &before);
}

fn record(epoch: usize, l_cbf: f64, l_obs: f64) -> EpochRecord {
    EpochRecord {
        epoch,
        l_max: 1.0,
        losses: LossReport {
            l1: l_cbf,
            l2: 0.0,
            l3: 0.0,
            l4: l_obs,
            l_cbf,
            l_obs,
            l_p: 0.0,
            eta: -0.5,
            max_q: [0.0; 3],
        },
    }
}

#[test]
fn convergence_needs_all_three_conditions() {
    let (sys, region, ds) = smoke_problem();
    let cfg = smoke_config(0);
    let trainer = Trainer::new(&Sequential, &ds, &sys, &region, cfg.clone()).unwrap();
    let mut state = trainer.state().clone();
    state.l_max = 1.0;
    state.eta = -0.5;
    let eps = 0.1;
    let flat: Vec<EpochRecord> = (0..=25).map(|e| record(e, 0.0, 3.0)).collect();

    state.history = flat.clone();
    update_flags(&mut state, &cfg, eps);
    assert!(state.converged);

    // L_obs still moving.
    state.history = flat.clone();
    state.history.last_mut().unwrap().losses.l_obs = 2.0;
    update_flags(&mut state, &cfg, eps);
    assert!(!state.converged);

    // L_cbf above tolerance.
    state.history = flat.clone();
    state.history.last_mut().unwrap().losses.l_cbf = 1e-3;
    update_flags(&mut state, &cfg, eps);
    assert!(!state.converged);

    // Validity fails: 1·0.1 − 0.05 > 0.
    state.history = flat.clone();
    state.eta = -0.05;
    update_flags(&mut state, &cfg, eps);
    assert!(!state.converged);

    // Strict mode charges τ: 0.1 − 0.10005 + 1e-4 > 0.
    let mut strict = cfg.clone();
    strict.strict = true;
    state.eta = -0.10005;
    update_flags(&mut state, &cfg, eps);
    assert!(state.converged);
    update_flags(&mut state, &strict, eps);
    assert!(!state.converged);

    // Too little history for a plateau.
    state.eta = -0.5;
    state.history = flat[..10].to_vec();
    update_flags(&mut state, &cfg, eps);
    assert!(!state.converged);
}

#[test]
fn config_validation() {
    let mut cfg = smoke_config(1);
    cfg.tolerance = 0.0;
    assert!(cfg.validate().is_err());
    let mut cfg = smoke_config(1);
    cfg.eta_init = 0.1;
    assert!(cfg.validate().is_err());
    let mut cfg = smoke_config(1);
    cfg.eta_min = Some(0.0);
    assert!(cfg.validate().is_err());
    let mut cfg = smoke_config(1);
    cfg.lipschitz_refresh = 0;
    assert!(cfg.validate().is_err());
    assert!(smoke_config(1).validate().is_ok());
}
