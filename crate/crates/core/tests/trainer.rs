mod common;

use common::*;
use pmptrain::data::synthetic_blobs;
use pmptrain::hamiltonian::{satisfies_aug_inequality, AugmentationWeight};
use pmptrain::metrics::accuracy;
use pmptrain::network::*;
use pmptrain::trainer::*;
use pmptrain::{Error, Regularizer};

/// Loss of the one-sample, one-input, two-class linear model with x = 1 and
/// label 0: `log(1 + exp(z1 − z0))`, `z_k = w_k + b_k`.
fn toy_loss(w: &[f64; 4]) -> f64 {
    let d = (w[1] + w[3]) - (w[0] + w[2]);
    if d > 0.0 {
        d + (-d).exp().ln_1p()
    } else {
        d.exp().ln_1p()
    }
}

fn toy_setup() -> (Model, ParamSet, Batch) {
    let model = build_model("fc out=2", &[1]).unwrap();
    let params = ParamSet::from_layers(
        &model,
        vec![LayerParams {
            weight: vec![0.3, -0.2],
            bias: vec![0.1, 0.4],
        }],
    )
    .unwrap();
    let batch = Batch::new(vec![1.0], vec![1.0, 0.0], 1, 2, vec![1.0, 1.0]).unwrap();
    (model, params, batch)
}

#[test]
fn line_search_stops_at_the_first_sufficient_decrease() {
    let (model, u, batch) = toy_setup();
    let reg = Regularizer::none();
    let (j_u, grad) = objective_and_gradient(&model, &u, &batch, &reg).unwrap();
    let uv = [0.3, -0.2, 0.1, 0.4];
    assert!((j_u - toy_loss(&uv)).abs() < 1e-15);
    // negative gradient: for label 0, F = (1 − σ0, −σ1) on weights and biases alike
    let d = (uv[1] + uv[3]) - (uv[0] + uv[2]);
    let s1 = 1.0 / (1.0 + (-d).exp());
    let f = [s1, -s1, s1, -s1];
    let g = &grad.layers()[0];
    for (a, b) in g.weight.iter().chain(&g.bias).zip(&f) {
        assert!((a - b).abs() < 1e-15);
    }
    let eta = 1e-2;
    for (eps_hat, mu) in [(1e-3, 2.0), (0.05, 7.0), (1e-4, 1.1)] {
        let search = LineSearch {
            mu,
            eta,
            j_max: 200,
            keep_trajectory: false,
        };
        let out = linesearch_step(&model, &u, &batch, &reg, &grad, j_u, eps_hat, &search, 0).unwrap();
        let expected_j = (0..)
            .find(|&j| {
                let eps = eps_hat * mu.powi(j);
                let w: Vec<f64> = uv.iter().zip(&f).map(|(u, f)| u + f / eps).collect();
                let step: f64 = f.iter().map(|f| (f / eps).powi(2)).sum();
                toy_loss(&[w[0], w[1], w[2], w[3]]) - toy_loss(&uv) <= -eta * step
            })
            .unwrap();
        assert_eq!(out.trials, expected_j as usize, "eps_hat={eps_hat} mu={mu}");
        assert!(out.trials > 0);
        assert_eq!(out.epsilon, eps_hat * mu.powi(expected_j));
        assert_eq!(out.forward_evals, out.trials + 1);
    }
}

#[test]
fn zero_gradient_is_accepted_immediately() {
    let (model, u, batch) = toy_setup();
    let reg = Regularizer::none();
    let j_u = batch_objective(&model, &u, &batch, &reg).unwrap();
    let zero = HamiltonianGradient::from_layers(vec![LayerParams {
        weight: vec![0.0; 2],
        bias: vec![0.0; 2],
    }]);
    let search = LineSearch { mu: 7.0, eta: 1e-9, j_max: 60, keep_trajectory: false };
    let out = linesearch_step(&model, &u, &batch, &reg, &zero, j_u, 1.0, &search, 0).unwrap();
    assert_eq!(out.trials, 0);
    assert_eq!(out.step_sq, 0.0);
    assert!(out.params.bitwise_eq(&u));
}

#[test]
fn escalation_cap_is_an_error() {
    let (model, u, batch) = toy_setup();
    let reg = Regularizer::none();
    let (j_u, grad) = objective_and_gradient(&model, &u, &batch, &reg).unwrap();
    let search = LineSearch { mu: 2.0, eta: 1e-2, j_max: 2, keep_trajectory: false };
    let err = linesearch_step(&model, &u, &batch, &reg, &grad, j_u, 1e-6, &search, 4).unwrap_err();
    assert!(matches!(err, Error::LineSearchFailed { iteration: 4, trials: 3, .. }), "{err}");
}

fn blobs_model() -> Model {
    build_model("fc out=6 act=tanh\nfc out=2", &[2]).unwrap()
}

#[test]
fn unregularized_steps_are_plain_gradient_steps() {
    let data = synthetic_blobs(3, 20, 2, 2, 3.0).unwrap();
    let model = blobs_model();
    let config = TrainConfig { zeta: 1.0, k_max: 5, ..TrainConfig::default() };
    let mut trainer = Trainer::new(config, &model, &data, init_params(&model, 0)).unwrap();
    let xs: Vec<Vec<f64>> = (0..data.len()).map(|i| data.image(i).to_vec()).collect();
    while !trainer.is_done() {
        let u = trainer.params().clone();
        let g = naive_gradient(&model, &u, &xs, data.labels());
        let eps = trainer.step().unwrap().epsilon;
        for ((new, old), gl) in trainer.params().layers().iter().zip(u.layers()).zip(g.layers()) {
            let vals = new.weight.iter().chain(&new.bias);
            let olds = old.weight.iter().chain(&old.bias);
            let grads = gl.weight.iter().chain(&gl.bias);
            for ((n, o), g) in vals.zip(olds).zip(grads) {
                assert!((n - (o - g / eps)).abs() <= 1e-12, "{n} vs {}", o - g / eps);
            }
        }
    }
}

#[test]
fn separable_blobs_are_learned() {
    let data = synthetic_blobs(1, 50, 2, 2, 10.0).unwrap();
    let model = blobs_model();
    let config = TrainConfig { k_max: 100, seed: 1, ..TrainConfig::default() };
    let (params, log) = train(config, &model, &data).unwrap();
    assert_eq!(accuracy(&model, &params, &data).unwrap(), 100.0);
    assert_eq!(log.len(), 100);
}

#[test]
fn full_batch_runs_decrease_monotonically() {
    let data = synthetic_blobs(2, 40, 3, 2, 2.0).unwrap();
    let model = build_model("fc out=8 act=tanh\nfc out=3", &[2]).unwrap();
    for reg in [
        Regularizer::none(),
        Regularizer::elastic_net(0.8, 1e-3).unwrap(),
        Regularizer::l2l0(0.8, 1e-3).unwrap(),
    ] {
        let config = TrainConfig {
            k_max: 60,
            reg,
            diagnostics: true,
            ..TrainConfig::default()
        };
        let full = data.full_batch(&[1.0; 3]).unwrap();
        let mut trainer = Trainer::new(config.clone(), &model, &data, init_params(&model, 0)).unwrap();
        let mut evals = 0;
        while !trainer.is_done() {
            let u = trainer.params().clone();
            let (_, grad) = objective_and_gradient(&model, &u, &full, &reg).unwrap();
            let r = trainer.step().unwrap().clone();
            evals += 1 + r.trials;
            assert!(r.mb_loss_after - r.mb_loss_before <= -config.eta * r.step_sq_norm);
            assert_eq!(r.full_loss, Some(r.mb_loss_after));
            assert!(r.delta_h.unwrap() <= 1e-10, "delta_h {:?}", r.delta_h);
            assert_eq!(r.ls_steps_cum, evals);
            let eps = AugmentationWeight::new(r.epsilon).unwrap();
            for ((f, w), ul) in grad.layers().iter().zip(trainer.params().layers()).zip(u.layers()) {
                assert!(satisfies_aug_inequality(f, w, ul, &reg, eps));
            }
        }
        let recs = &trainer.log().records;
        for pair in recs.windows(2) {
            assert_eq!(pair[1].mb_loss_before, pair[0].mb_loss_after);
        }
        assert!(recs.iter().skip(6).all(|r| r.delta_u.is_some()));
    }
}

#[test]
fn runs_are_reproducible() {
    let data = synthetic_blobs(4, 30, 3, 3, 2.0).unwrap();
    let model = build_model("fc out=5 act=tanh\nfc out=3", &[3]).unwrap();
    let config = TrainConfig {
        k_max: 40,
        diagnostics: true,
        reg: Regularizer::l2l0(0.5, 1e-3).unwrap(),
        eval_every: 10,
        ..TrainConfig::minibatch_profile(16)
    };
    let (p1, l1) = train(config.clone(), &model, &data).unwrap();
    let (p2, l2) = train(config.clone(), &model, &data).unwrap();
    assert!(p1.bitwise_eq(&p2));
    assert!(l1.records.iter().zip(&l2.records).all(|(a, b)| a.same_outcome(b)));
    let (p3, _) = train(TrainConfig { seed: 1, ..config }, &model, &data).unwrap();
    assert!(!p1.bitwise_eq(&p3));
    for r in &l1.records {
        assert!(r.delta_h.unwrap() >= 0.0);
        assert!(r.delta_u.is_none_or(|d| d >= 0.0));
    }
    assert!(l1.records[9].train_acc.is_some());
    assert!(l1.records[8].train_acc.is_none());
}

#[test]
fn config_is_checked_against_the_dataset() {
    let data = synthetic_blobs(0, 5, 2, 2, 1.0).unwrap();
    let model = blobs_model();
    let config = TrainConfig { batch_size: Some(11), ..TrainConfig::default() };
    assert!(matches!(
        Trainer::new(config, &model, &data, init_params(&model, 0)),
        Err(Error::ConfigValue { .. })
    ));
    let wrong = build_model("fc out=2", &[3]).unwrap();
    assert!(Trainer::new(TrainConfig::default(), &wrong, &data, init_params(&wrong, 0)).is_err());
}
