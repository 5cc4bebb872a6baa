//! Fully connected network with ReLU hidden layers and a sigmoid output unit,
//! trained on binary cross-entropy with momentum SGD.

use rand::seq::SliceRandom;
use rand::Rng;

use super::rng::{stream, MLP_INIT, MLP_SHUFFLE};
use super::{sigmoid, softplus, Diagnostics, MlpConfig, ModelError, Progress, Result};
use crate::matrix::dot;
use crate::{Label, Matrix};

/// `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Gradients shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGradients {
    fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Same order as [`Mlp::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `sizes` runs from input to output.
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        let mut rng = stream(seed, MLP_INIT);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
                Layer {
                    weights: Matrix::from_vec(fan_out, fan_in, data),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: Matrix::zeros(w[1], w[0]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weights.cols())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weights.rows()));
        s
    }

    /// Pre-activations of every layer for one input.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a: Vec<f64> = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let z: Vec<f64> = layer
                .weights
                .iter_rows()
                .zip(&layer.bias)
                .map(|(w, b)| dot(w, &a) + b)
                .collect();
            if k + 1 < self.layers.len() {
                a = z.iter().map(|v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        pre
    }

    /// ReLU outputs of the hidden layers.
    pub fn hidden_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = self.forward(x);
        pre.pop();
        pre.into_iter().map(|z| z.into_iter().map(|v| v.max(0.0)).collect()).collect()
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.forward(x).last().map_or(0.0, |z| z[0])
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    fn check(&self, x: &Matrix, y: &[f64]) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        if x.is_empty() || x.rows() != y.len() {
            return Err(ModelError::InvalidData(format!("{} rows, {} targets", x.rows(), y.len())));
        }
        Ok(())
    }

    /// Mean binary cross-entropy against 0/1 targets.
    pub fn loss(&self, x: &Matrix, y: &[f64]) -> Result<f64> {
        self.check(x, y)?;
        let total: f64 = x
            .iter_rows()
            .zip(y)
            .map(|(r, &t)| {
                let z = self.logit(r);
                softplus(z) - t * z
            })
            .sum();
        Ok(total / y.len() as f64)
    }

    /// Mean loss over the batch and its gradient with respect to every weight and bias.
    pub fn gradients(&self, x: &Matrix, y: &[f64]) -> Result<(f64, MlpGradients)> {
        self.check(x, y)?;
        let n = y.len() as f64;
        let mut g = MlpGradients::zeros_like(self);
        let mut loss = 0.0;
        for (r, &t) in x.iter_rows().zip(y) {
            let pre = self.forward(r);
            let z_out = pre.last().unwrap()[0];
            loss += softplus(z_out) - t * z_out;
            let mut delta = vec![(sigmoid(z_out) - t) / n];
            for k in (0..self.layers.len()).rev() {
                let input: Vec<f64> = if k == 0 {
                    r.to_vec()
                } else {
                    pre[k - 1].iter().map(|v| v.max(0.0)).collect()
                };
                let gw = &mut g.weights[k];
                for (o, d) in delta.iter().enumerate() {
                    g.biases[k][o] += d;
                    if *d != 0.0 {
                        for (slot, a) in gw.row_mut(o).iter_mut().zip(&input) {
                            *slot += d * a;
                        }
                    }
                }
                if k > 0 {
                    let w = &self.layers[k].weights;
                    let mut prev = vec![0.0; w.cols()];
                    for (o, d) in delta.iter().enumerate() {
                        if *d != 0.0 {
                            for (p, wv) in prev.iter_mut().zip(w.row(o)) {
                                *p += d * wv;
                            }
                        }
                    }
                    for (p, z) in prev.iter_mut().zip(&pre[k - 1]) {
                        if *z <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        Ok((loss / n, g))
    }

    /// All parameters, layer by layer: weights row-major, then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_parameters(&mut self, p: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&p[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[at..at + nb]);
            at += nb;
        }
        assert_eq!(at, p.len(), "parameter count mismatch");
    }
}

/// Mini-batch SGD with classical momentum. Stops early once the full training
/// loss has failed to improve on its best value by `tol` for `patience` epochs.
pub(crate) fn fit_mlp(x: &Matrix, y: &[Label], cfg: &MlpConfig, seed: u64) -> Result<(Mlp, Diagnostics)> {
    if cfg.batch == 0 || !(cfg.learning_rate > 0.0) || cfg.hidden.contains(&0) {
        return Err(ModelError::InvalidConfig(
            "mlp needs positive batch size, learning rate and layer widths".into(),
        ));
    }
    let mut sizes = vec![x.cols()];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut net = Mlp::new(&sizes, seed);
    let targets: Vec<f64> = y.iter().map(|l| l.as_int() as f64).collect();
    let mut velocity = vec![0.0; net.parameters().len()];
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut progress = Progress::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut epochs = 0;
    for epoch in 0..cfg.epochs {
        epochs = epoch + 1;
        order.sort_unstable();
        order.shuffle(&mut stream(seed, MLP_SHUFFLE + epoch as u64));
        for chunk in order.chunks(cfg.batch) {
            let bx = x.select_rows(chunk);
            let by: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let (_, g) = net.gradients(&bx, &by)?;
            let mut p = net.parameters();
            for ((v, w), gi) in velocity.iter_mut().zip(p.iter_mut()).zip(g.flatten()) {
                *v = cfg.momentum * *v - cfg.learning_rate * gi;
                *w += *v;
            }
            net.set_parameters(&p);
        }
        let loss = net.loss(x, &targets)?;
        progress.record(epochs, loss);
        if !loss.is_finite() {
            return Err(ModelError::InvalidData(format!("mlp loss diverged at epoch {epochs}")));
        }
        if loss < best - cfg.tol {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((net, progress.finish(epochs)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_closed_form() {
        let net = Mlp::zeros(&[4, 3, 2, 1]);
        let x = Matrix::zeros(3, 4);
        let y = [1.0, 0.0, 1.0];
        assert!(net.hidden_activations(&[0.0; 4]).iter().flatten().all(|&a| a == 0.0));
        assert_eq!(net.predict_proba(&[0.0; 4]), 0.5);
        let (_, g) = net.gradients(&x, &y).unwrap();
        let expected = y.iter().map(|t| 0.5 - t).sum::<f64>() / 3.0;
        assert!((g.biases[2][0] - expected).abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_has_single_sample_gradient() {
        let net = Mlp::new(&[3, 5, 1], 2);
        let one = Matrix::from_rows(&[vec![0.2, -1.0, 0.7]]);
        let two = Matrix::from_rows(&[vec![0.2, -1.0, 0.7], vec![0.2, -1.0, 0.7]]);
        let (l1, g1) = net.gradients(&one, &[1.0]).unwrap();
        let (l2, g2) = net.gradients(&two, &[1.0, 1.0]).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn parameters_round_trip() {
        let mut net = Mlp::new(&[4, 3, 1], 9);
        let p = net.parameters();
        assert_eq!(p.len(), 4 * 3 + 3 + 3 + 1);
        net.set_parameters(&vec![0.0; p.len()]);
        assert_eq!(net, Mlp::zeros(&[4, 3, 1]));
        net.set_parameters(&p);
        assert_eq!(net, Mlp::new(&[4, 3, 1], 9));
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let net = Mlp::new(&[512, 128, 64, 1], 1);
        let limit = (6.0f64 / 640.0).sqrt();
        assert!(net.layers[0].weights.as_slice().iter().all(|w| w.abs() <= limit));
        assert!(net.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert_eq!(net.sizes(), vec![512, 128, 64, 1]);
    }

    #[test]
    fn dimension_is_checked() {
        let net = Mlp::new(&[3, 2, 1], 0);
        assert!(matches!(
            net.gradients(&Matrix::zeros(1, 4), &[0.0]),
            Err(ModelError::DimensionMismatch { expected: 3, got: 4 })
        ));
    }
}
