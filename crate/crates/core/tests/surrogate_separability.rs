//! Cosine-similarity check that the surrogate embedding separates synthetic
//! wheeze bursts from breath noise.

use rand::Rng;
use respire_core::embed::surrogate_embed;
use respire_core::models::rng::stream;
use respire_core::synth::{breath_noise, wheeze};
use respire_core::{CLIP_SAMPLES, TARGET_RATE};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Embeddings of `n` clips per class; each clip holds a burst of random length
/// and loudness over quiet background, zero padded at the tail.
fn embeddings(n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = stream(77, 0);
    let mut make = |positive: bool| {
        let len = rng.random_range(CLIP_SAMPLES / 2..=CLIP_SAMPLES);
        let gain = rng.random_range(0.06..0.15);
        let burst = if positive {
            wheeze(len, TARGET_RATE, 10.0, &mut rng)
        } else {
            breath_noise(len, TARGET_RATE, &mut rng)
        };
        let bg = breath_noise(len, TARGET_RATE, &mut rng);
        let mut clip = vec![0.0f32; CLIP_SAMPLES];
        for i in 0..len {
            clip[i] = (gain * burst[i] + 0.01 * bg[i]) as f32;
        }
        surrogate_embed(&clip).into_iter().map(f64::from).collect::<Vec<f64>>()
    };
    let pos = (0..n).map(|_| make(true)).collect();
    let neg = (0..n).map(|_| make(false)).collect();
    (pos, neg)
}

fn centroid(rows: &[&Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect()
}

#[test]
fn classes_separate_under_cosine_similarity() {
    let (mut pos, mut neg) = embeddings(20);
    // standardise each feature over the pooled set, labels unused
    let pooled: Vec<&Vec<f64>> = pos.iter().chain(&neg).collect();
    let mu = centroid(&pooled);
    let sd: Vec<f64> = (0..mu.len())
        .map(|j| (pooled.iter().map(|r| (r[j] - mu[j]).powi(2)).sum::<f64>() / pooled.len() as f64).sqrt().max(1e-9))
        .collect();
    for r in pos.iter_mut().chain(neg.iter_mut()) {
        for j in 0..r.len() {
            r[j] = (r[j] - mu[j]) / sd[j];
        }
    }
    let all: Vec<(&Vec<f64>, bool)> = pos.iter().map(|r| (r, true)).chain(neg.iter().map(|r| (r, false))).collect();

    // leave-one-out nearest centroid and nearest neighbour
    let mut correct = 0;
    let mut nn_correct = 0;
    for (i, (row, label)) in all.iter().enumerate() {
        let others = |cls: bool| -> Vec<&Vec<f64>> {
            all.iter()
                .enumerate()
                .filter(|(j, (_, l))| *j != i && *l == cls)
                .map(|(_, (r, _))| *r)
                .collect()
        };
        let to_pos = cosine(row, &centroid(&others(true)));
        let to_neg = cosine(row, &centroid(&others(false)));
        if (to_pos > to_neg) == *label {
            correct += 1;
        }
        let nn = all
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .max_by(|a, b| cosine(row, a.1 .0).total_cmp(&cosine(row, b.1 .0)))
            .unwrap();
        if nn.1 .1 == *label {
            nn_correct += 1;
        }
    }
    let n = all.len() as f64;
    assert!(correct as f64 / n >= 0.9, "nearest centroid {correct}/{n}");
    assert!(nn_correct as f64 / n >= 0.9, "nearest neighbour {nn_correct}/{n}");

    let mean = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        let mut s = 0.0;
        for x in a {
            for y in b {
                s += cosine(x, y);
            }
        }
        s / (a.len() * b.len()) as f64
    };
    let within = (mean(&pos, &pos) + mean(&neg, &neg)) / 2.0;
    let across = mean(&pos, &neg);
    assert!(within > across, "within {within} across {across}");
}
