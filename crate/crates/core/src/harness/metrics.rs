use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::argmax_rows;

pub const N_CLASSES: usize = 4;
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub micro: f64,
    #[serde(rename = "macro")]
    pub macro_: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub top1: Averaged,
    pub top2: Averaged,
    /// Top-1 confusion counts, `[truth][prediction]`.
    pub confusion: [[u64; N_CLASSES]; N_CLASSES],
}

/// Micro and macro F1 of single-label predictions. Macro skips classes with
/// neither support nor predictions.
pub fn f1_from_predictions(truth: &[usize], pred: &[usize]) -> Averaged {
    let mut tp = [0u64; N_CLASSES];
    let mut fp = [0u64; N_CLASSES];
    let mut fn_ = [0u64; N_CLASSES];
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let (stp, sfp, sfn) = (tp.iter().sum::<u64>(), fp.iter().sum::<u64>(), fn_.iter().sum::<u64>());
    let f1 = |tp: u64, fp: u64, fn_: u64| {
        if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        }
    };
    let micro = f1(stp, sfp, sfn);
    let per_class: Vec<f64> = (0..N_CLASSES)
        .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
        .map(|c| f1(tp[c], fp[c], fn_[c]))
        .collect();
    let macro_ = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    };
    Averaged { micro, macro_ }
}

/// Top-1 uses the argmax (ties to the lowest class). Top-2 credits the true
/// class when it is among the two highest scores and otherwise keeps the argmax.
pub fn f1_scores(probs: &Array2<f64>, truth: &[usize]) -> Result<F1Scores> {
    if probs.ncols() != N_CLASSES || probs.nrows() != truth.len() {
        return Err(Error::Shape {
            name: "probabilities".into(),
            expected: vec![truth.len(), N_CLASSES],
            actual: probs.shape().to_vec(),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid("f1 scores", "no predictions"));
    }
    if let Some(&t) = truth.iter().find(|&&t| t >= N_CLASSES) {
        return Err(Error::invalid("f1 scores", format!("class {t} out of range")));
    }
    for (i, row) in probs.rows().into_iter().enumerate() {
        let sum = row.sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::invalid("probabilities", format!("row {i} is not a distribution (sum {sum})")));
        }
    }
    let top1 = argmax_rows(probs);
    let top2: Vec<usize> = probs
        .rows()
        .into_iter()
        .zip(truth.iter().zip(&top1))
        .map(|(row, (&t, &p1))| {
            let mut order: Vec<usize> = (0..N_CLASSES).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            if order[..2].contains(&t) {
                t
            } else {
                p1
            }
        })
        .collect();
    let mut confusion = [[0u64; N_CLASSES]; N_CLASSES];
    for (&t, &p) in truth.iter().zip(&top1) {
        confusion[t][p] += 1;
    }
    Ok(F1Scores {
        top1: f1_from_predictions(truth, &top1),
        top2: f1_from_predictions(truth, &top2),
        confusion,
    })
}

/// Classes ordered by test frequency, most frequent first (ties to the lower class).
fn by_frequency(truth: &[usize]) -> Vec<usize> {
    let mut counts = [0usize; N_CLASSES];
    truth.iter().for_each(|&t| counts[t] += 1);
    let mut order: Vec<usize> = (0..N_CLASSES).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

/// Scores of a constant predictor of the modal test class; its top-2 guess is
/// the second most frequent class.
pub fn chance_baseline(truth: &[usize]) -> Result<F1Scores> {
    if truth.is_empty() {
        return Err(Error::invalid("chance baseline", "empty test set"));
    }
    let order = by_frequency(truth);
    let mut row = [0.0; N_CLASSES];
    row[order[0]] = 0.6;
    row[order[1]] = 0.4;
    let probs = Array2::from_shape_fn((truth.len(), N_CLASSES), |(_, c)| row[c]);
    f1_scores(&probs, truth)
}

/// Divides each row by its sum, turning per-class sigmoid scores into a
/// distribution without changing their ranking.
pub fn normalize_rows(scores: &Array2<f32>) -> Array2<f64> {
    let mut out = scores.mapv(|v| v as f64);
    for mut row in out.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|v| v / s);
        } else {
            row.fill(1.0 / N_CLASSES as f64);
        }
    }
    out
}
