//! Hand-written LSTM seq2seq network, loss, Adam and gradient checking.
//!
//! All arithmetic is `f64`. Forward passes record a [`Trace`] and the matching
//! backward pass produces exact reverse-mode gradients for every parameter
//! and for the text-encoder inputs (so embeddings can be trained).

mod adam;
mod gradcheck;
mod lstm;
mod seq2seq;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_fn, random_case, relative_error, CheckCase, GradCheckReport, REL_ERROR_FLOOR};
pub use lstm::{lstm_step, lstm_step_traced, Gate, LstmState, LstmWeights, StepCache};
pub use seq2seq::{decode, encode, Example, Gradients, Projection, Seq2Seq, Trace};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("loss needs at least one valid step")]
    NoValidSteps,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a * x`
#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Which per-step distance the sequence loss averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean Euclidean norm of the per-step difference.
    #[default]
    Norm,
    /// Mean squared Euclidean norm.
    Squared,
}

fn diff_sq(gt: &[f64], pred: &[f64]) -> f64 {
    gt.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// `l = (1/n) * sum_i ||gt_i - pred_i||` over the `n` steps whose mask is set.
pub fn sequence_loss(
    gt: &[Vec<f64>],
    pred: &[Vec<f64>],
    mask: &[bool],
    kind: LossKind,
) -> Result<f64, NnError> {
    if gt.len() != pred.len() || gt.len() != mask.len() {
        return Err(NnError::Shape(format!(
            "{} targets, {} predictions, {} mask entries",
            gt.len(),
            pred.len(),
            mask.len()
        )));
    }
    let mut n = 0usize;
    let mut sum = 0.0;
    for ((g, p), &m) in gt.iter().zip(pred).zip(mask) {
        if !m {
            continue;
        }
        if g.len() != p.len() {
            return Err(NnError::Shape(format!("step widths {} and {}", g.len(), p.len())));
        }
        let sq = diff_sq(g, p);
        sum += match kind {
            LossKind::Norm => sq.sqrt(),
            LossKind::Squared => sq,
        };
        n += 1;
    }
    if n == 0 {
        return Err(NnError::NoValidSteps);
    }
    Ok(sum / n as f64)
}

/// Gradient of [`sequence_loss`] with respect to the predictions. The norm's
/// derivative at a zero difference is taken to be zero.
pub fn sequence_loss_grad(
    gt: &[Vec<f64>],
    pred: &[Vec<f64>],
    mask: &[bool],
    kind: LossKind,
) -> Result<Vec<Vec<f64>>, NnError> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(NnError::NoValidSteps);
    }
    let inv_n = 1.0 / n as f64;
    Ok(gt
        .iter()
        .zip(pred)
        .zip(mask)
        .map(|((g, p), &m)| {
            if !m {
                return vec![0.0; p.len()];
            }
            let scale = match kind {
                LossKind::Norm => {
                    let d = diff_sq(g, p).sqrt();
                    if d == 0.0 {
                        0.0
                    } else {
                        inv_n / d
                    }
                }
                LossKind::Squared => 2.0 * inv_n,
            };
            p.iter().zip(g).map(|(pv, gv)| scale * (pv - gv)).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
        assert_eq!(dot(&[], &[]), 0.0);
    }

    #[test]
    fn loss_identity_and_hand_values() {
        let a = vec![vec![1.0, 2.0, 3.0]];
        assert_eq!(sequence_loss(&a, &a, &[true], LossKind::Norm).unwrap(), 0.0);

        let mut gt = vec![0.0; 360];
        gt[0] = 3.0;
        gt[1] = 4.0;
        let l = sequence_loss(&[gt], &[vec![0.0; 360]], &[true], LossKind::Norm).unwrap();
        assert_eq!(l, 5.0);

        let gt = vec![vec![1.0, 0.0], vec![0.0, 3.0]];
        let pred = vec![vec![0.0; 2]; 2];
        assert_eq!(sequence_loss(&gt, &pred, &[true, true], LossKind::Norm).unwrap(), 2.0);
        assert_eq!(sequence_loss(&gt, &pred, &[true, true], LossKind::Squared).unwrap(), 5.0);
    }

    #[test]
    fn masked_steps_are_ignored() {
        let gt = vec![vec![1.0, 0.0], vec![100.0, 3.0]];
        let pred = vec![vec![0.0; 2]; 2];
        assert_eq!(sequence_loss(&gt, &pred, &[true, false], LossKind::Norm).unwrap(), 1.0);
        assert_eq!(
            sequence_loss(&gt, &pred, &[false, false], LossKind::Norm),
            Err(NnError::NoValidSteps)
        );
        assert!(sequence_loss(&gt, &pred[..1], &[true], LossKind::Norm).is_err());
    }

    #[test]
    fn zero_difference_has_zero_gradient() {
        let a = vec![vec![0.5, -0.5]];
        let g = sequence_loss_grad(&a, &a, &[true], LossKind::Norm).unwrap();
        assert_eq!(g, vec![vec![0.0, 0.0]]);
    }
}
