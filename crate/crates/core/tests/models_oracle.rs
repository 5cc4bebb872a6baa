//! Classifier properties checked against independent computations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use respire_core::models::{
    fit, logistic_objective, model_to_bytes, ClassifierKind, GradientBoosting, Mlp, ModelError, Params, TrainConfig,
};
use respire_core::{Label, Matrix};

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| StandardNormal.sample(rng)).collect())
}

fn rel_err(a: f64, b: f64) -> f64 {
    // the floor keeps round-off on vanishing coordinates from dominating
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn mlp_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for net_id in 0..10 {
        let d = rng.random_range(3..9);
        let sizes = [d, rng.random_range(2..7), rng.random_range(2..6), 1];
        let mut net = Mlp::new(&sizes, net_id);
        // nonzero biases so every parameter group is exercised
        let mut params = net.parameters();
        for p in params.iter_mut() {
            *p += 0.1 * rng.random_range(-1.0..1.0);
        }
        net.set_parameters(&params);
        let x = random_matrix(&mut rng, 10, d);
        let y: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let (_, grads) = net.gradients(&x, &y).unwrap();
        let analytic = grads.flatten();
        assert_eq!(analytic.len(), params.len());
        for _ in 0..10 {
            let c = rng.random_range(0..params.len());
            let mut probe = net.clone();
            let mut p = params.clone();
            p[c] = params[c] + h;
            probe.set_parameters(&p);
            let up = probe.loss(&x, &y).unwrap();
            p[c] = params[c] - h;
            probe.set_parameters(&p);
            let down = probe.loss(&x, &y).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let e = rel_err(analytic[c], numeric);
            worst = worst.max(e);
            assert!(e < 1e-4, "net {net_id} coord {c}: analytic {} numeric {numeric}", analytic[c]);
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn mlp_zero_network_closed_form() {
    let net = Mlp::zeros(&[512, 128, 64, 1]);
    let x = Matrix::zeros(4, 512);
    let y = [1.0, 0.0, 1.0, 1.0];
    assert!(net.hidden_activations(x.row(0)).iter().flatten().all(|&a| a == 0.0));
    assert_eq!(net.predict_proba(x.row(0)), 0.5);
    let (_, g) = net.gradients(&x, &y).unwrap();
    let expected = y.iter().map(|t| 0.5 - t).sum::<f64>() / 4.0;
    assert_eq!(g.biases.last().unwrap()[0], expected);
    assert!(matches!(net.gradients(&Matrix::zeros(2, 3), &[0.0, 1.0]), Err(ModelError::DimensionMismatch { .. })));
}

fn boosting_loss(model: &GradientBoosting, stages: usize, x: &Matrix, y: &[Label]) -> f64 {
    let mut total = 0.0;
    for (row, label) in x.iter_rows().zip(y) {
        let f = model.init + model.trees[..stages].iter().map(|t| t.predict(row)).sum::<f64>();
        let t = label.as_int() as f64;
        total += (1.0 + f.exp()).ln() - t * f;
    }
    total / y.len() as f64
}

#[test]
fn boosting_loss_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for ds in 0..20 {
        let n = rng.random_range(30..120);
        let d = rng.random_range(2..12);
        let x = random_matrix(&mut rng, n, d);
        let noise = rng.random_range(0.0..2.0);
        let mut y: Vec<Label> = x
            .iter_rows()
            .map(|r| {
                let e: f64 = StandardNormal.sample(&mut rng);
                Label::from_bool(r[0] * r[1 % d] + r[d - 1] + noise * e > 0.0)
            })
            .collect();
        y[0] = Label::Positive;
        y[1] = Label::Negative;
        let m = fit(ClassifierKind::GradientBoosting, &x, &y, &TrainConfig::with_seed(ds)).unwrap();
        let Params::Boosting(b) = &m.params else { unreachable!() };
        assert_eq!(b.trees.len(), 100);
        let history: Vec<f64> = m.diagnostics.history.iter().map(|r| r.loss).collect();
        assert_eq!(history.len(), 101);
        assert!(history.windows(2).all(|w| w[1] <= w[0]), "dataset {ds}");
        let mut prev = f64::INFINITY;
        for (s, &h) in history.iter().enumerate() {
            let l = boosting_loss(b, s, &x, &y);
            assert!((l - h).abs() < 1e-10, "dataset {ds} stage {s}");
            assert!(l <= prev + 1e-12, "dataset {ds} stage {s}");
            prev = l;
        }
        let prior = y.iter().filter(|l| l.is_positive()).count() as f64 / n as f64;
        assert!((b.init - (prior / (1.0 - prior)).ln()).abs() < 1e-12);
    }
}

/// Two unit-variance blobs at (+-5, 0), ten points each.
fn blobs(seed: u64) -> (Matrix, Vec<Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..20 {
        let cx = if i % 2 == 0 { 5.0 } else { -5.0 };
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        rows.push(vec![cx + a, b]);
        y.push(Label::from_bool(i % 2 == 0));
    }
    (Matrix::from_rows(&rows), y)
}

#[test]
fn separated_blobs_are_learned_by_every_kind() {
    for seed in 0..5 {
        let (x, y) = blobs(seed);
        // separability oracle: every point is nearer its own centre
        for (r, l) in x.iter_rows().zip(&y) {
            let own = if l.is_positive() { 5.0 } else { -5.0 };
            assert!((r[0] - own).abs() < (r[0] + own).abs());
        }
        for kind in ClassifierKind::ALL {
            let m = fit(kind, &x, &y, &TrainConfig::with_seed(seed)).unwrap();
            let correct = x
                .iter_rows()
                .zip(&y)
                .filter(|(r, l)| m.predict(r, None).unwrap() == **l)
                .count();
            assert_eq!(correct, 20, "{kind} seed {seed}");
        }
    }
}

/// Labels from a random hyperplane with a guaranteed margin.
fn separable(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Matrix, Vec<Label>) {
    let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (mut rows, mut y) = (Vec::new(), Vec::new());
    let (mut pos, mut neg) = (0, 0);
    while rows.len() < n {
        let r: Vec<f64> = (0..d).map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, rng)).collect();
        let m = r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / norm + 0.3;
        let room = if m > 0.0 { pos < n / 2 } else { neg < n - n / 2 };
        if m.abs() > 0.5 && room {
            if m > 0.0 {
                pos += 1;
            } else {
                neg += 1;
            }
            y.push(Label::from_bool(m > 0.0));
            rows.push(r);
        }
    }
    (Matrix::from_rows(&rows), y)
}

#[test]
fn linear_models_fit_separable_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..10 {
        let d = rng.random_range(2..10);
        let (x, y) = separable(&mut rng, 60, d);
        let mut cfg = TrainConfig::with_seed(case);
        cfg.svm.c = 100.0;
        cfg.svm.epochs = 400;
        cfg.logreg.l2 = 1e-4;
        cfg.logreg.max_iter = 5000;
        for kind in [ClassifierKind::SvmLinear, ClassifierKind::LogisticRegression] {
            let m = fit(kind, &x, &y, &cfg).unwrap();
            let correct = x
                .iter_rows()
                .zip(&y)
                .filter(|(r, l)| m.predict(r, None).unwrap() == **l)
                .count();
            assert_eq!(correct, 60, "{kind} case {case}");
        }
    }
}

#[test]
fn logistic_training_decreases_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x = random_matrix(&mut rng, 50, 5);
    let y: Vec<Label> = x.iter_rows().map(|r| Label::from_bool(r[0] - r[2] > 0.1)).collect();
    let cfg = TrainConfig::with_seed(0);
    let m = fit(ClassifierKind::LogisticRegression, &x, &y, &cfg).unwrap();
    let Params::Linear(lin) = &m.params else { unreachable!() };
    let zero = respire_core::models::LinearModel {
        weights: vec![0.0; 5],
        bias: 0.0,
    };
    assert!(logistic_objective(lin, &x, &y, cfg.logreg.l2) < logistic_objective(&zero, &x, &y, cfg.logreg.l2));
    let h: Vec<f64> = m.diagnostics.history.iter().map(|r| r.loss).collect();
    assert!(h.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn training_is_reproducible_and_seed_sensitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let x = random_matrix(&mut rng, 80, 12);
    let y: Vec<Label> = x.iter_rows().map(|r| Label::from_bool(r[0] + r[1] * r[2] > 0.0)).collect();
    for kind in ClassifierKind::ALL {
        let a = fit(kind, &x, &y, &TrainConfig::with_seed(7)).unwrap();
        let b = fit(kind, &x, &y, &TrainConfig::with_seed(7)).unwrap();
        assert_eq!(model_to_bytes(&a), model_to_bytes(&b), "{kind}");
        let c = fit(kind, &x, &y, &TrainConfig::with_seed(8)).unwrap();
        match kind {
            ClassifierKind::LogisticRegression | ClassifierKind::GradientBoosting => assert_eq!(a.params, c.params, "{kind}"),
            _ => assert_ne!(a.params, c.params, "{kind} ignored its seed"),
        }
    }
}

#[test]
fn scores_are_finite_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let x = random_matrix(&mut rng, 60, 6);
    let y: Vec<Label> = x.iter_rows().map(|r| Label::from_bool(r[3] > 0.2)).collect();
    for kind in ClassifierKind::ALL {
        let m = fit(kind, &x, &y, &TrainConfig::with_seed(1)).unwrap();
        for _ in 0..50 {
            let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1e3..1e3)).collect();
            let s = m.score(&v).unwrap();
            assert!(s.is_finite());
            if kind.is_probabilistic() {
                assert!((0.0..=1.0).contains(&s));
            }
        }
    }
}
