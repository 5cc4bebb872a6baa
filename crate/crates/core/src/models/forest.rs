//! Bagged Gini trees scored by vote fraction.

use rand::Rng;
use rayon::prelude::*;

use super::rng::stream;
use super::tree::{Criterion, Tree, TreeBuilder, TreeParams};
use super::{Diagnostics, ForestConfig, ModelError, Progress, Result, MAX_TREE_DEPTH};
use crate::{Label, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    /// Every leaf holds 1.0 (positive vote) or 0.0.
    pub trees: Vec<Tree>,
}

impl RandomForest {
    /// Fraction of trees voting positive.
    pub fn vote_fraction(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        let votes = self.trees.iter().filter(|t| t.predict(x) >= 0.5).count();
        votes as f64 / self.trees.len() as f64
    }
}

pub(crate) fn tree_params(cfg: &ForestConfig, d: usize) -> TreeParams {
    let k = cfg
        .features_per_split
        .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1));
    TreeParams {
        criterion: Criterion::Gini,
        max_depth: cfg.max_depth.unwrap_or(MAX_TREE_DEPTH).min(MAX_TREE_DEPTH),
        min_samples_split: 2,
        max_features: Some(k.clamp(1, d)),
    }
}

/// Grows tree `index` on a bootstrap sample drawn from its own stream.
/// Returns the tree and the bootstrap multiplicities.
pub(crate) fn grow_tree(x: &Matrix, targets: &[f64], params: TreeParams, seed: u64, index: u64) -> (Tree, Vec<f64>) {
    let n = x.rows();
    let mut rng = stream(seed, index);
    let mut weights = vec![0.0; n];
    for _ in 0..n {
        weights[rng.random_range(0..n)] += 1.0;
    }
    let builder = TreeBuilder::new(x, targets, &weights, params);
    let vote = |s: &[usize]| {
        let (w, pos) = s
            .iter()
            .fold((0.0, 0.0), |(w, p), &i| (w + weights[i], p + weights[i] * targets[i]));
        if 2.0 * pos >= w {
            1.0
        } else {
            0.0
        }
    };
    let (tree, _) = builder.build(&mut rng, &vote);
    (tree, weights)
}

pub(crate) fn fit_forest(x: &Matrix, y: &[Label], cfg: &ForestConfig, seed: u64) -> Result<(RandomForest, Diagnostics)> {
    if cfg.n_trees == 0 {
        return Err(ModelError::InvalidConfig("forest needs at least one tree".into()));
    }
    let targets: Vec<f64> = y.iter().map(|l| l.as_int() as f64).collect();
    let params = tree_params(cfg, x.cols());
    let mut progress = Progress::new();
    let grown: Vec<(Tree, Vec<f64>)> = (0..cfg.n_trees as u64)
        .into_par_iter()
        .map(|i| grow_tree(x, &targets, params, seed, i))
        .collect();

    // out-of-bag error of the first k trees, k = 1..=n_trees
    let mut votes = vec![(0u32, 0u32); x.rows()];
    for (k, (tree, weights)) in grown.iter().enumerate() {
        for (i, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                votes[i].1 += 1;
                votes[i].0 += u32::from(tree.predict(x.row(i)) >= 0.5);
            }
        }
        let (mut seen, mut wrong) = (0usize, 0usize);
        for (i, &(pos, total)) in votes.iter().enumerate() {
            if total > 0 {
                seen += 1;
                let predicted = 2 * pos >= total;
                wrong += usize::from(predicted != (targets[i] > 0.5));
            }
        }
        let err = if seen == 0 { f64::NAN } else { wrong as f64 / seen as f64 };
        progress.record(k + 1, err);
    }
    let trees = grown.into_iter().map(|(t, _)| t).collect();
    Ok((RandomForest { trees }, progress.finish(cfg.n_trees)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tree::Node;

    #[test]
    fn unanimous_forest_scores_one() {
        let f = RandomForest {
            trees: vec![Tree::leaf(1.0); 100],
        };
        assert_eq!(f.vote_fraction(&[0.0, 1.0]), 1.0);
        let mut mixed = f.clone();
        mixed.trees[..25].iter_mut().for_each(|t| *t = Tree::leaf(0.0));
        assert_eq!(mixed.vote_fraction(&[0.0, 1.0]), 0.75);
    }

    #[test]
    fn default_feature_count_is_sqrt() {
        let p = tree_params(&ForestConfig::default(), 512);
        assert_eq!(p.max_features, Some(22));
        assert_eq!(p.max_depth, MAX_TREE_DEPTH);
        let p = tree_params(
            &ForestConfig {
                max_depth: Some(100),
                ..ForestConfig::default()
            },
            3,
        );
        assert_eq!(p.max_depth, MAX_TREE_DEPTH);
        assert_eq!(p.max_features, Some(1));
    }

    #[test]
    fn leaves_are_votes() {
        let x = Matrix::from_rows(&(0..30).map(|i| vec![f64::from(i), f64::from(i % 7)]).collect::<Vec<_>>());
        let y: Vec<Label> = (0..30).map(|i| Label::from_bool(i % 3 == 0)).collect();
        let cfg = ForestConfig {
            n_trees: 10,
            ..ForestConfig::default()
        };
        let (f, d) = fit_forest(&x, &y, &cfg, 5).unwrap();
        assert_eq!(d.history.len(), 10);
        for t in &f.trees {
            for n in &t.nodes {
                if let Node::Leaf { value } = n {
                    assert!(*value == 0.0 || *value == 1.0);
                }
            }
        }
    }
}
