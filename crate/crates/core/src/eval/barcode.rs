//! Rows for the barcode heatmap of embeddings.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::embed::EmbeddingMatrix;
use crate::models::rng::{stream, BARCODE};
use crate::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarcodeRow {
    pub clip_id: String,
    pub label: Label,
    /// Min-max normalised to `[0, 1]`; a constant row is all 0.5.
    pub intensities: Vec<f64>,
}

fn normalise(row: &[f32]) -> Vec<f64> {
    let (lo, hi) = row
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(f64::from(v)), hi.max(f64::from(v))));
    if !(hi > lo) {
        return vec![0.5; row.len()];
    }
    row.iter().map(|&v| (f64::from(v) - lo) / (hi - lo)).collect()
}

/// Up to `per_class` rows of each class, positives first. Selection within a
/// class is drawn from the seed; selected rows keep their dataset order.
pub fn barcode_data(m: &EmbeddingMatrix, per_class: usize, seed: u64) -> Result<Vec<BarcodeRow>> {
    let labels = m.labels();
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    if pos == 0 || pos == labels.len() {
        return Err(EvalError::SingleClassData);
    }
    let mut out = Vec::new();
    for class in [Label::Positive, Label::Negative] {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let take = per_class.min(idx.len());
        let mut rng = stream(seed, BARCODE + class.as_int() as u64);
        let mut chosen: Vec<usize> = sample(&mut rng, idx.len(), take).into_iter().map(|j| idx[j]).collect();
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|i| BarcodeRow {
            clip_id: m.clip_ids()[i].clone(),
            label: class,
            intensities: normalise(m.row(i)),
        }));
    }
    Ok(out)
}
