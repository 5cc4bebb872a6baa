//! CART decision trees shared by the forest and the boosting ensemble.
//!
//! Splits are axis-aligned `x[feature] <= threshold` tests with thresholds at
//! the midpoint between consecutive distinct sorted values. Among equally good
//! splits the lowest feature index wins, then the lowest threshold.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// Index of the leaf `x` falls into.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left as usize).max(walk(nodes, right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Weighted Gini impurity for 0/1 targets.
    Gini,
    /// Weighted sum of squared errors.
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub criterion: Criterion,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features examined per node; `None` examines all of them.
    pub max_features: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Side {
    weight: f64,
    sum: f64,
    sum_sq: f64,
}

impl Side {
    fn add(&mut self, w: f64, y: f64) {
        self.weight += w;
        self.sum += w * y;
        self.sum_sq += w * y * y;
    }

    fn sub(&mut self, w: f64, y: f64) {
        self.weight -= w;
        self.sum -= w * y;
        self.sum_sq -= w * y * y;
    }

    fn impurity(&self, c: Criterion) -> f64 {
        if self.weight <= 0.0 {
            return 0.0;
        }
        match c {
            Criterion::Gini => gini(self.weight, self.sum),
            Criterion::Mse => (self.sum_sq - self.sum * self.sum / self.weight).max(0.0),
        }
    }
}

/// Weighted Gini impurity `w * (1 - p^2 - (1-p)^2)` of a node with total
/// weight `w` of which `pos` is positive.
pub fn gini(w: f64, pos: f64) -> f64 {
    let p = pos / w;
    let q = 1.0 - p;
    w * (1.0 - p * p - q * q)
}

#[derive(Debug, Clone, Copy)]
struct SplitChoice {
    score: f64,
    feature: usize,
    threshold: f64,
}

/// Builds trees over a fixed training matrix.
///
/// `weights[i]` is the multiplicity of sample `i` (bootstrap counts, or 1);
/// samples with weight 0 are out of the bag. Each node keeps its member
/// samples; every examined feature is sorted within the node unless
/// [`TreeBuilder::with_presorted`] was used.
pub struct TreeBuilder<'a> {
    x: &'a Matrix,
    targets: &'a [f64],
    weights: &'a [f64],
    params: TreeParams,
    presorted: Option<&'a [Vec<usize>]>,
}

const PARALLEL_WORK: usize = 50_000;

impl<'a> TreeBuilder<'a> {
    pub fn new(x: &'a Matrix, targets: &'a [f64], weights: &'a [f64], params: TreeParams) -> Self {
        assert_eq!(x.rows(), targets.len());
        assert_eq!(x.rows(), weights.len());
        Self {
            x,
            targets,
            weights,
            params,
            presorted: None,
        }
    }

    /// Uses a global per-feature order from [`presort`] so nodes filter it
    /// instead of sorting. Pays off when trees are shallow and use all features.
    pub fn with_presorted(mut self, orders: &'a [Vec<usize>]) -> Self {
        assert_eq!(orders.len(), self.x.cols());
        self.presorted = Some(orders);
        self
    }

    /// Grows a tree. `leaf_value` maps the samples of a finished leaf to its value.
    pub fn build<R: Rng>(&self, rng: &mut R, leaf_value: &dyn Fn(&[usize]) -> f64) -> (Tree, Vec<Vec<usize>>) {
        let root: Vec<usize> = (0..self.x.rows()).filter(|&i| self.weights[i] > 0.0).collect();
        let mut nodes = Vec::new();
        let mut leaves = Vec::new();
        let mut stack = vec![(root, 0usize, 0usize)];
        nodes.push(Node::Leaf { value: 0.0 });
        // (samples, depth, node slot)
        while let Some((samples, depth, slot)) = stack.pop() {
            match self.choose_split(&samples, depth, rng) {
                Some(split) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = samples
                        .iter()
                        .partition(|&&i| self.x.get(i, split.feature) <= split.threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[slot] = Node::Split {
                        feature: split.feature as u32,
                        threshold: split.threshold,
                        left: left as u32,
                        right: left as u32 + 1,
                    };
                    // right pushed first so the left subtree is finished first
                    stack.push((r, depth + 1, left + 1));
                    stack.push((l, depth + 1, left));
                }
                None => {
                    nodes[slot] = Node::Leaf {
                        value: leaf_value(&samples),
                    };
                    leaves.push((slot, samples));
                }
            }
        }
        leaves.sort_by_key(|(slot, _)| *slot);
        let members = leaves.into_iter().map(|(_, s)| s).collect();
        (Tree { nodes }, members)
    }

    fn node_stats(&self, samples: &[usize]) -> Side {
        let mut s = Side::default();
        for &i in samples {
            s.add(self.weights[i], self.targets[i]);
        }
        s
    }

    fn choose_split<R: Rng>(&self, samples: &[usize], depth: usize, rng: &mut R) -> Option<SplitChoice> {
        let total = self.node_stats(samples);
        if depth >= self.params.max_depth || (total.weight as usize) < self.params.min_samples_split || samples.len() < 2 {
            return None;
        }
        let first = self.targets[samples[0]];
        if samples.iter().all(|&i| self.targets[i] == first) {
            return None;
        }

        let d = self.x.cols();
        let mut features: Vec<usize> = match self.params.max_features {
            Some(k) if k < d => sample(rng, d, k).into_vec(),
            _ => (0..d).collect(),
        };
        features.sort_unstable();
        if let Some(best) = self.best_over(samples, &features, &total) {
            return Some(best);
        }
        // nothing splittable among the sampled features: fall back to the rest
        if features.len() < d {
            let rest: Vec<usize> = (0..d).filter(|f| features.binary_search(f).is_err()).collect();
            return self.best_over(samples, &rest, &total);
        }
        None
    }

    fn best_over(&self, samples: &[usize], features: &[usize], total: &Side) -> Option<SplitChoice> {
        let member = self.presorted.as_ref().map(|_| {
            let mut m = vec![false; self.x.rows()];
            samples.iter().for_each(|&i| m[i] = true);
            m
        });
        let per_feature = |f: usize| self.best_for_feature(f, samples, member.as_deref(), total);
        let candidates: Vec<Option<SplitChoice>> = if samples.len() * features.len() > PARALLEL_WORK {
            features.par_iter().map(|&f| per_feature(f)).collect()
        } else {
            features.iter().map(|&f| per_feature(f)).collect()
        };
        // reduce in feature order so the lowest feature index wins ties
        candidates.into_iter().flatten().fold(None, |best: Option<SplitChoice>, c| match best {
            Some(b) if !improves(c.score, b.score) => Some(b),
            _ => Some(c),
        })
    }

    fn best_for_feature(&self, f: usize, samples: &[usize], member: Option<&[bool]>, total: &Side) -> Option<SplitChoice> {
        let c = self.params.criterion;
        let sorted: Vec<(f64, usize)> = match (self.presorted, member) {
            (Some(orders), Some(m)) => orders[f].iter().filter(|&&i| m[i]).map(|&i| (self.x.get(i, f), i)).collect(),
            _ => {
                let mut v: Vec<(f64, usize)> = samples.iter().map(|&i| (self.x.get(i, f), i)).collect();
                v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                v
            }
        };
        if sorted[0].0 == sorted[sorted.len() - 1].0 {
            return None;
        }
        let mut best: Option<SplitChoice> = None;
        let mut left = Side::default();
        let mut right = *total;
        for j in 0..sorted.len() - 1 {
            let (v, i) = sorted[j];
            let (w, y) = (self.weights[i], self.targets[i]);
            left.add(w, y);
            right.sub(w, y);
            let next = sorted[j + 1].0;
            if v == next {
                continue;
            }
            let score = match c {
                Criterion::Gini => gini(left.weight, left.sum) + gini(total.weight - left.weight, total.sum - left.sum),
                Criterion::Mse => left.impurity(c) + right.impurity(c),
            };
            if best.is_none_or(|b| improves(score, b.score)) {
                best = Some(SplitChoice {
                    score,
                    feature: f,
                    threshold: midpoint(v, next),
                });
            }
        }
        best
    }
}

/// Strict improvement beyond rounding noise, so mathematically equal
/// impurities fall to the tie-break order.
fn improves(candidate: f64, best: f64) -> bool {
    candidate < best - TIE_TOL * best.abs()
}

const TIE_TOL: f64 = 1e-12;

/// Row indices of `x` sorted by each feature (ties by index).
pub fn presort(x: &Matrix) -> Vec<Vec<usize>> {
    (0..x.cols())
        .into_par_iter()
        .map(|f| {
            let mut idx: Vec<usize> = (0..x.rows()).collect();
            idx.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
            idx
        })
        .collect()
}

/// Midpoint that is guaranteed to separate `lo < hi`.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi || m < lo {
        lo
    } else {
        m
    }
}
