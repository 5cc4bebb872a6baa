//! Decision trees against an exhaustive reference builder, plus forest
//! invariants that follow from it.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use respire_core::models::tree::{Criterion, Node, Tree, TreeBuilder, TreeParams};
use respire_core::models::{fit, load_model, save_model, ClassifierKind, ForestConfig, Params, TrainConfig};
use respire_core::{Label, Matrix};

#[derive(Debug, PartialEq)]
enum Ref {
    Leaf(f64),
    Split(usize, f64, Box<Ref>, Box<Ref>),
}

fn share(idx: &[usize], y: &[f64], w: &[f64]) -> f64 {
    let tw: f64 = idx.iter().map(|&i| w[i]).sum();
    idx.iter().map(|&i| w[i] * y[i]).sum::<f64>() / tw
}

/// Tries every feature and every gap between distinct values.
fn brute_force(rows: &[Vec<f64>], y: &[f64], w: &[f64], idx: Vec<usize>) -> Ref {
    let weight: f64 = idx.iter().map(|&i| w[i]).sum();
    let pure = idx.iter().all(|&i| y[i] == y[idx[0]]);
    if idx.len() < 2 || weight < 2.0 || pure {
        return Ref::Leaf(share(&idx, y, w));
    }
    let impurity = |part: &[usize]| {
        let tw: f64 = part.iter().map(|&i| w[i]).sum();
        let pos: f64 = part.iter().map(|&i| w[i] * y[i]).sum();
        if tw == 0.0 {
            0.0
        } else {
            2.0 * pos * (tw - pos) / tw
        }
    };
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..rows[0].len() {
        let mut vals: Vec<f64> = idx.iter().map(|&i| rows[i][f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for pair in vals.windows(2) {
            let t = pair[0] + (pair[1] - pair[0]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][f] <= t);
            let score = impurity(&l) + impurity(&r);
            if best.is_none_or(|(b, _, _)| score < b - 1e-9 * b.abs()) {
                best = Some((score, f, t));
            }
        }
    }
    match best {
        None => Ref::Leaf(share(&idx, y, w)),
        Some((_, f, t)) => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][f] <= t);
            Ref::Split(
                f,
                t,
                Box::new(brute_force(rows, y, w, l)),
                Box::new(brute_force(rows, y, w, r)),
            )
        }
    }
}

fn to_ref(tree: &Tree, i: usize) -> Ref {
    match tree.nodes[i] {
        Node::Leaf { value } => Ref::Leaf(value),
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => Ref::Split(
            feature as usize,
            threshold,
            Box::new(to_ref(tree, left as usize)),
            Box::new(to_ref(tree, right as usize)),
        ),
    }
}

fn full_gini() -> TreeParams {
    TreeParams {
        criterion: Criterion::Gini,
        max_depth: 64,
        min_samples_split: 2,
        max_features: None,
    }
}

fn dataset(seed: u64, n: usize, d: usize, levels: Option<u32>) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| match levels {
                    Some(k) => f64::from(rng.random_range(0..k)),
                    None => rng.random_range(-3.0..3.0),
                })
                .collect()
        })
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            f64::from(u8::from(s + rng.random_range(-1.5..1.5) > 0.0))
        })
        .collect();
    let w: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..3u8))).collect();
    (rows, y, w)
}

fn check_against_reference(seed: u64, n: usize, d: usize, levels: Option<u32>) {
    let (rows, y, w) = dataset(seed, n, d, levels);
    let x = Matrix::from_rows(&rows);
    let leaf = |idx: &[usize]| share(idx, &y, &w);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (tree, _) = TreeBuilder::new(&x, &y, &w, full_gini()).build(&mut rng, &leaf);
    let in_bag: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    let expected = brute_force(&rows, &y, &w, in_bag);
    assert_eq!(to_ref(&tree, 0), expected, "seed {seed} n {n} d {d} levels {levels:?}");
}

#[test]
fn builder_matches_exhaustive_search_on_continuous_features() {
    for seed in 0..40 {
        check_against_reference(seed, 12 + seed as usize % 30, 1 + seed as usize % 5, None);
    }
}

#[test]
fn builder_matches_exhaustive_search_with_ties() {
    // few distinct values make equal-impurity splits common, exercising the tie-break order
    for seed in 100..160 {
        check_against_reference(seed, 10 + seed as usize % 25, 2 + seed as usize % 4, Some(3 + seed as u32 % 3));
    }
}

#[test]
fn presorted_builder_matches_plain_builder() {
    for seed in 0..10 {
        let (rows, y, _) = dataset(seed, 60, 6, Some(5));
        let x = Matrix::from_rows(&rows);
        let w = vec![1.0; rows.len()];
        let params = TreeParams {
            criterion: Criterion::Mse,
            max_depth: 3,
            ..full_gini()
        };
        let leaf = |idx: &[usize]| share(idx, &y, &w);
        let orders = respire_core::models::tree::presort(&x);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plain = TreeBuilder::new(&x, &y, &w, params).build(&mut rng, &leaf).0;
        let sorted = TreeBuilder::new(&x, &y, &w, params)
            .with_presorted(&orders)
            .build(&mut rng, &leaf)
            .0;
        assert_eq!(plain, sorted);
    }
}

fn labelled(seed: u64, n: usize, d: usize) -> (Matrix, Vec<Label>) {
    let (rows, y, _) = dataset(seed, n, d, None);
    (Matrix::from_rows(&rows), y.iter().map(|&v| Label::from_bool(v > 0.5)).collect())
}

fn small_forest(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        forest: ForestConfig {
            n_trees: 15,
            ..ForestConfig::default()
        },
        ..TrainConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forest_predictions_ignore_feature_scale(seed in 0u64..1000, factor in prop::sample::select(vec![2.0, 0.5, 3.7, 1e-3])) {
        let (x, y) = labelled(seed, 40, 6);
        let cfg = small_forest(seed);
        let base = fit(ClassifierKind::RandomForest, &x, &y, &cfg).unwrap();
        let scaled = fit(ClassifierKind::RandomForest, &x.scaled(factor), &y, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        for _ in 0..30 {
            let v: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let sv: Vec<f64> = v.iter().map(|a| a * factor).collect();
            prop_assert_eq!(base.score(&v).unwrap(), scaled.score(&sv).unwrap());
        }
        for i in 0..x.rows() {
            let sv: Vec<f64> = x.row(i).iter().map(|a| a * factor).collect();
            prop_assert_eq!(base.score(x.row(i)).unwrap(), scaled.score(&sv).unwrap());
        }
    }

    #[test]
    fn forest_score_is_vote_fraction(seed in 0u64..1000) {
        let (x, y) = labelled(seed, 30, 4);
        let m = fit(ClassifierKind::RandomForest, &x, &y, &small_forest(seed)).unwrap();
        let Params::Forest(forest) = &m.params else { unreachable!() };
        for row in x.iter_rows() {
            let votes = forest.trees.iter().filter(|t| t.predict(row) == 1.0).count();
            prop_assert_eq!(m.score(row).unwrap(), votes as f64 / forest.trees.len() as f64);
        }
        let mut doubled = forest.clone();
        doubled.trees.push(forest.trees[0].clone());
        for row in x.iter_rows() {
            let s = doubled.vote_fraction(row);
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}

#[test]
fn hundred_tree_forest_round_trips() {
    let (x, y) = labelled(7, 120, 16);
    let m = fit(ClassifierKind::RandomForest, &x, &y, &TrainConfig::with_seed(3)).unwrap();
    let Params::Forest(forest) = &m.params else { unreachable!() };
    assert_eq!(forest.trees.len(), 100);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("forest.bin");
    save_model(&m, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, m);
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let v: Vec<f64> = (0..16).map(|_| rng.random_range(-4.0..4.0)).collect();
        assert_eq!(back.score(&v).unwrap().to_bits(), m.score(&v).unwrap().to_bits());
        assert_eq!(back.predict(&v, None).unwrap(), m.predict(&v, None).unwrap());
    }
}
