//! Gradient-boosted regression trees under logistic loss.
//!
//! Each stage fits a depth-limited least-squares tree to the residuals
//! `y - p`, then replaces every leaf with the shrunken Newton step
//! `lr * sum(y - p) / sum(p (1 - p))` over its samples. A leaf step that would
//! raise that leaf's loss is halved until it does not, so the training loss
//! never increases from one stage to the next.

use super::tree::{presort, Criterion, Node, Tree, TreeBuilder, TreeParams};
use super::{rng, sigmoid, softplus, BoostingConfig, Diagnostics, ModelError, Progress, Result};
use crate::{Label, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBoosting {
    /// Log-odds of the training prior.
    pub init: f64,
    /// Leaf values already include the learning rate.
    pub trees: Vec<Tree>,
}

impl GradientBoosting {
    /// Log-odds of the positive class.
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.init + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// Logistic loss of one sample with 0/1 target at log-odds `f`.
fn logloss(y: f64, f: f64) -> f64 {
    softplus(f) - y * f
}

fn mean_loss(y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(&yi, &fi)| logloss(yi, fi)).sum::<f64>() / y.len() as f64
}

const MAX_HALVINGS: usize = 60;

pub(crate) fn fit_boosting(x: &Matrix, y: &[Label], cfg: &BoostingConfig) -> Result<(GradientBoosting, Diagnostics)> {
    if !(cfg.learning_rate > 0.0) || cfg.tree_depth == 0 {
        return Err(ModelError::InvalidConfig("boosting needs a positive learning rate and depth".into()));
    }
    let n = x.rows();
    let targets: Vec<f64> = y.iter().map(|l| l.as_int() as f64).collect();
    let prior = targets.iter().sum::<f64>() / n as f64;
    let init = (prior / (1.0 - prior)).ln();
    let mut f = vec![init; n];
    let ones = vec![1.0; n];
    let orders = presort(x);
    let params = TreeParams {
        criterion: Criterion::Mse,
        max_depth: cfg.tree_depth,
        min_samples_split: 2,
        max_features: None,
    };
    // no feature sampling, so the stream is never drawn from
    let mut unused = rng::stream(0, 0);

    let mut progress = Progress::new();
    progress.record(0, mean_loss(&targets, &f));
    let mut trees = Vec::with_capacity(cfg.n_stages);
    for stage in 1..=cfg.n_stages {
        let residuals: Vec<f64> = targets.iter().zip(&f).map(|(yi, fi)| yi - sigmoid(*fi)).collect();
        let builder = TreeBuilder::new(x, &residuals, &ones, params).with_presorted(&orders);
        let (mut tree, members) = builder.build(&mut unused, &|_| 0.0);

        let leaf_slots: Vec<usize> = (0..tree.nodes.len())
            .filter(|&i| matches!(tree.nodes[i], Node::Leaf { .. }))
            .collect();
        for (slot, samples) in leaf_slots.into_iter().zip(&members) {
            let (g, h) = samples.iter().fold((0.0, 0.0), |(g, h), &i| {
                let p = sigmoid(f[i]);
                (g + targets[i] - p, h + p * (1.0 - p))
            });
            let mut step = if h > 0.0 { cfg.learning_rate * g / h } else { 0.0 };
            let before: f64 = samples.iter().map(|&i| logloss(targets[i], f[i])).sum();
            let leaf_loss = |v: f64| samples.iter().map(|&i| logloss(targets[i], f[i] + v)).sum::<f64>();
            let mut halvings = 0;
            while !(leaf_loss(step) <= before) {
                step *= 0.5;
                halvings += 1;
                if halvings >= MAX_HALVINGS {
                    step = 0.0;
                    break;
                }
            }
            tree.nodes[slot] = Node::Leaf { value: step };
            for &i in samples {
                f[i] += step;
            }
        }
        progress.record(stage, mean_loss(&targets, &f));
        trees.push(tree);
    }
    Ok((GradientBoosting { init, trees }, progress.finish(cfg.n_stages)))
}
