use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{refresh_text, ModelError, Sample};
use crate::featurize::{FEATURE_DIM, FRAME_DIM, GROUP_SIZE};
use crate::featurize::Vocabulary;
use crate::nn::Seq2Seq;
use crate::skeleton::KeypointId;

/// How cosine similarity is aggregated within one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    /// Mean of per-step cosines over valid steps.
    #[default]
    PerStep,
    /// One cosine between the concatenated valid steps.
    PerSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "S_C")]
    pub s_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneMetrics {
    pub bone: KeypointId,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "S_C")]
    pub s_c: f64,
}

/// The metrics JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "S_C")]
    pub s_c: f64,
    pub per_bone: Vec<BoneMetrics>,
}

/// Cosine of the angle between `a` and `b`. Two zero vectors count as
/// identical (1); one zero vector against a non-zero one gives 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    match (aa == 0.0, bb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        // sqrt(aa * bb) rather than sqrt(aa) * sqrt(bb): exact 1 for identical inputs
        _ => (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0),
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sample_metrics(gt: &[Vec<f64>], pred: &[Vec<f64>], mode: SimilarityMode) -> (f64, f64) {
    let n = gt.len() as f64;
    let l = gt.iter().zip(pred).map(|(g, p)| distance(g, p)).sum::<f64>() / n;
    let s = match mode {
        SimilarityMode::PerStep => gt.iter().zip(pred).map(|(g, p)| cosine_similarity(g, p)).sum::<f64>() / n,
        SimilarityMode::PerSequence => cosine_similarity(&gt.concat(), &pred.concat()),
    };
    (l, s)
}

/// `L` is the mean over samples of the per-sample mean step distance and
/// `S_C` the mean over samples of the per-sample similarity. Every sample
/// must have at least one step.
pub fn metrics_from_predictions(
    gts: &[Vec<Vec<f64>>],
    preds: &[Vec<Vec<f64>>],
    mode: SimilarityMode,
) -> Result<Metrics, ModelError> {
    if gts.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    check_pairs(gts, preds)?;
    let (mut l, mut s) = (0.0, 0.0);
    for (g, p) in gts.iter().zip(preds) {
        let (li, si) = sample_metrics(g, p, mode);
        l += li;
        s += si;
    }
    let m = gts.len() as f64;
    Ok(Metrics { l: l / m, s_c: s / m })
}

fn check_pairs(gts: &[Vec<Vec<f64>>], preds: &[Vec<Vec<f64>>]) -> Result<(), ModelError> {
    if gts.len() != preds.len() {
        return Err(ModelError::Config(format!("{} targets but {} predictions", gts.len(), preds.len())));
    }
    for (i, (g, p)) in gts.iter().zip(preds).enumerate() {
        if g.is_empty() || g.len() != p.len() {
            return Err(ModelError::Config(format!("sample {i}: {} target and {} predicted steps", g.len(), p.len())));
        }
        if g.iter().chain(p).any(|v| v.len() != FEATURE_DIM) {
            return Err(ModelError::Config(format!("sample {i}: step width is not {FEATURE_DIM}")));
        }
    }
    Ok(())
}

/// The 30 values of `bone` inside one packed step: its three components in
/// each of the ten frames.
fn bone_slice(step: &[f64], bone: KeypointId) -> Vec<f64> {
    let k = 3 * bone.index();
    (0..GROUP_SIZE)
        .flat_map(|f| step[f * FRAME_DIM + k..f * FRAME_DIM + k + 3].iter().copied())
        .collect()
}

/// Metrics restricted to each bone. The belly is the fixed origin of the
/// vector representation, so its row is (0, 1) whatever the model emits.
pub fn per_bone_from_predictions(
    gts: &[Vec<Vec<f64>>],
    preds: &[Vec<Vec<f64>>],
    mode: SimilarityMode,
) -> Result<Vec<BoneMetrics>, ModelError> {
    if gts.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    check_pairs(gts, preds)?;
    KeypointId::ALL
        .iter()
        .map(|&bone| {
            if bone == KeypointId::Belly {
                return Ok(BoneMetrics { bone, l: 0.0, s_c: 1.0 });
            }
            let slice = |seqs: &[Vec<Vec<f64>>]| -> Vec<Vec<Vec<f64>>> {
                seqs.iter().map(|s| s.iter().map(|step| bone_slice(step, bone)).collect()).collect()
            };
            let (g, p) = (slice(gts), slice(preds));
            let (mut l, mut s) = (0.0, 0.0);
            for (gi, pi) in g.iter().zip(&p) {
                let (li, si) = sample_metrics(gi, pi, mode);
                l += li;
                s += si;
            }
            let m = gts.len() as f64;
            Ok(BoneMetrics { bone, l: l / m, s_c: s / m })
        })
        .collect()
}

/// Free-running predictions for every sample, in sample order.
pub(crate) fn predict_all(
    samples: &[Sample],
    net: &Seq2Seq,
    vocab: &Vocabulary,
) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>), ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let preds = samples
        .par_iter()
        .map(|s| {
            let ex = refresh_text(s, vocab);
            net.predict(&ex.text, ex.motion.as_ref(), ex.target.valid_len())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let gts = samples.iter().map(|s| s.example.target.valid().to_vec()).collect();
    Ok((gts, preds))
}

pub fn evaluate(
    samples: &[Sample],
    net: &Seq2Seq,
    vocab: &Vocabulary,
    mode: SimilarityMode,
) -> Result<Metrics, ModelError> {
    let (gts, preds) = predict_all(samples, net, vocab)?;
    metrics_from_predictions(&gts, &preds, mode)
}

pub fn evaluate_per_bone(
    samples: &[Sample],
    net: &Seq2Seq,
    vocab: &Vocabulary,
    mode: SimilarityMode,
) -> Result<Vec<BoneMetrics>, ModelError> {
    let (gts, preds) = predict_all(samples, net, vocab)?;
    per_bone_from_predictions(&gts, &preds, mode)
}
