//! Linear scorers: logistic regression and a linear SVM.

use rand::seq::SliceRandom;

use super::rng::{stream, SVM_SHUFFLE};
use super::{softplus, Diagnostics, LogRegConfig, Progress, Result, SvmConfig};
use crate::matrix::dot;
use crate::{Label, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn zeros(d: usize) -> Self {
        Self {
            weights: vec![0.0; d],
            bias: 0.0,
        }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

fn signs(y: &[Label]) -> Vec<f64> {
    y.iter().map(|l| if l.is_positive() { 1.0 } else { -1.0 }).collect()
}

/// Mean log-loss plus `l2 / (2n) * |w|^2`; the bias is not penalised.
pub fn logistic_objective(m: &LinearModel, x: &Matrix, y: &[Label], l2: f64) -> f64 {
    let n = x.rows() as f64;
    let loss: f64 = x
        .iter_rows()
        .zip(signs(y))
        .map(|(r, s)| softplus(-s * m.decision(r)))
        .sum();
    loss / n + l2 / (2.0 * n) * dot(&m.weights, &m.weights)
}

fn logistic_gradient(m: &LinearModel, x: &Matrix, s: &[f64], l2: f64) -> (Vec<f64>, f64) {
    let n = x.rows() as f64;
    let mut gw: Vec<f64> = m.weights.iter().map(|w| l2 / n * w).collect();
    let mut gb = 0.0;
    for (r, &si) in x.iter_rows().zip(s) {
        // d/dz softplus(-s z) = -s * sigmoid(-s z)
        let coef = -si * super::sigmoid(-si * m.decision(r)) / n;
        gb += coef;
        for (g, v) in gw.iter_mut().zip(r) {
            *g += coef * v;
        }
    }
    (gw, gb)
}

/// Full-batch gradient descent with Armijo backtracking.
pub(crate) fn fit_logreg(x: &Matrix, y: &[Label], cfg: &LogRegConfig) -> Result<(LinearModel, Diagnostics)> {
    let s = signs(y);
    let mut m = LinearModel::zeros(x.cols());
    let mut obj = logistic_objective(&m, x, y, cfg.l2);
    let mut progress = Progress::new();
    let mut step = 1.0;
    let mut iterations = 0;
    for it in 1..=cfg.max_iter {
        iterations = it;
        let (gw, gb) = logistic_gradient(&m, x, &s, cfg.l2);
        let gnorm2 = dot(&gw, &gw) + gb * gb;
        if gnorm2.sqrt() < cfg.tol {
            progress.record(it, obj);
            break;
        }
        step *= 2.0;
        let (next, next_obj) = loop {
            let cand = LinearModel {
                weights: m.weights.iter().zip(&gw).map(|(w, g)| w - step * g).collect(),
                bias: m.bias - step * gb,
            };
            let o = logistic_objective(&cand, x, y, cfg.l2);
            if o <= obj - 0.5 * step * gnorm2 || step < 1e-20 {
                break (cand, o);
            }
            step *= 0.5;
        };
        let decrease = obj - next_obj;
        m = next;
        obj = next_obj;
        progress.record(it, obj);
        if decrease < cfg.tol * obj.abs().max(1.0) {
            break;
        }
    }
    Ok((m, progress.finish(iterations)))
}

/// `lambda/2 * (|w|^2 + b^2) + mean hinge` with `lambda = 1 / (C n)`.
/// The bias is an ordinary weight on a constant feature, so it is penalised too.
pub fn svm_objective(m: &LinearModel, x: &Matrix, y: &[Label], c: f64) -> f64 {
    let n = x.rows() as f64;
    let lambda = 1.0 / (c * n);
    let hinge: f64 = x
        .iter_rows()
        .zip(signs(y))
        .map(|(r, s)| (1.0 - s * m.decision(r)).max(0.0))
        .sum();
    lambda / 2.0 * (dot(&m.weights, &m.weights) + m.bias * m.bias) + hinge / n
}

/// Pegasos: one stochastic subgradient step per sample, step size
/// `1 / (lambda t)`, then projection onto the ball of radius `1 / sqrt(lambda)`.
pub(crate) fn fit_svm(x: &Matrix, y: &[Label], cfg: &SvmConfig, seed: u64) -> Result<(LinearModel, Diagnostics)> {
    if !(cfg.c > 0.0) {
        return Err(super::ModelError::InvalidConfig(format!("svm c must be positive, got {}", cfg.c)));
    }
    let n = x.rows();
    let s = signs(y);
    let lambda = 1.0 / (cfg.c * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let mut m = LinearModel::zeros(x.cols());
    let mut order: Vec<usize> = (0..n).collect();
    let mut progress = Progress::new();
    let mut t = 0u64;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream(seed, SVM_SHUFFLE + epoch as u64));
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let r = x.row(i);
            let violated = s[i] * m.decision(r) < 1.0;
            let shrink = 1.0 - eta * lambda;
            for w in m.weights.iter_mut() {
                *w *= shrink;
            }
            m.bias *= shrink;
            if violated {
                for (w, v) in m.weights.iter_mut().zip(r) {
                    *w += eta * s[i] * v;
                }
                m.bias += eta * s[i];
            }
            let norm = (dot(&m.weights, &m.weights) + m.bias * m.bias).sqrt();
            if norm > radius {
                let k = radius / norm;
                m.weights.iter_mut().for_each(|w| *w *= k);
                m.bias *= k;
            }
        }
        progress.record(epoch + 1, svm_objective(&m, x, y, cfg.c));
    }
    Ok((m, progress.finish(cfg.epochs)))
}
