use std::borrow::Cow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::evaluate;
use super::{refresh_text, ModelCheckpoint, ModelError, ModelKind, NormalizationMethod, Sample, TrainConfig};
use crate::featurize::{Vocabulary, FEATURE_DIM};
use crate::geometry::GlobalStats;
use crate::nn::{axpy, AdamConfig, AdamState, Seq2Seq};

/// Featurized splits plus everything a checkpoint must carry to reproduce them.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub kind: ModelKind,
    pub vocabulary: Vocabulary,
    /// Required for global normalization, ignored otherwise.
    pub global_stats: Option<GlobalStats>,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's mini-batches.
    pub train_loss: f64,
    /// Free-running metric `L` on the validation split.
    pub val_loss: Option<f64>,
}

const EMBEDDING_TENSOR: &str = "embedding";

fn check_samples(samples: &[Sample], kind: ModelKind, vocab: &Vocabulary) -> Result<(), ModelError> {
    for s in samples {
        let ex = &s.example;
        if ex.motion.is_some() != kind.has_motion_input() {
            return Err(ModelError::Config(format!("sample {} does not fit a {kind:?} model", s.id)));
        }
        if ex.target.valid_len() == 0 {
            return Err(ModelError::Config(format!("sample {} has no target steps", s.id)));
        }
        if s.token_ids.len() != ex.text.valid_len() || s.token_ids.iter().any(|&t| t >= vocab.len()) {
            return Err(ModelError::Config(format!("sample {} token ids do not match its text", s.id)));
        }
        let widths = ex.text.vectors().iter().chain(ex.target.vectors());
        if widths.chain(ex.motion.iter().flat_map(|m| m.vectors())).any(|v| v.len() != FEATURE_DIM) {
            return Err(ModelError::Config(format!("sample {} step width is not {FEATURE_DIM}", s.id)));
        }
    }
    Ok(())
}

/// Mini-batch Adam on the sequence loss. Per-sample gradients may be
/// computed in parallel; they are summed in batch order so the result does
/// not depend on the thread count. Returns the best-validation checkpoint
/// (best training loss when there is no validation split).
pub fn train(data: &TrainData, config: &TrainConfig) -> Result<ModelCheckpoint, ModelError> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if config.normalization == NormalizationMethod::Global && data.global_stats.is_none() {
        return Err(ModelError::Config("global normalization needs training-split statistics".into()));
    }
    check_samples(&data.train, data.kind, &data.vocabulary)?;
    check_samples(&data.validation, data.kind, &data.vocabulary)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Seq2Seq::init(FEATURE_DIM, config.hidden_size, data.kind.has_motion_input(), &mut rng);
    let mut vocab = data.vocabulary.clone();

    let mut names: Vec<String> = net.tensors().into_iter().map(|(n, _, _)| n).collect();
    let mut sizes: Vec<usize> = net.tensors().iter().map(|(_, _, d)| d.len()).collect();
    if config.train_embeddings {
        names.push(EMBEDDING_TENSOR.into());
        sizes.push(vocab.table().len());
    }
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &sizes,
    );

    let snapshot = |net: &Seq2Seq, vocab: &Vocabulary, history: &[EpochRecord], best_epoch: usize| ModelCheckpoint {
        kind: data.kind,
        config: config.clone(),
        vocabulary: vocab.clone(),
        global_stats: data.global_stats.clone(),
        history: history.to_vec(),
        best_epoch,
        net: net.clone(),
    };

    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best = snapshot(&net, &vocab, &history, 0);
    let mut best_score = f64::INFINITY;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    // Gradient buffers are reused across batches; a fresh multi-megabyte
    // allocation per sample made the allocator dominate small runs.
    let slots = config.batch_size.min(data.train.len());
    let mut sample_grads: Vec<Seq2Seq> = (0..slots).map(|_| net.zeros_like()).collect();
    let mut grad = net.zeros_like();
    let table_len = if config.train_embeddings { vocab.table().len() } else { 0 };
    let mut table_grad = vec![0.0; table_len];

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<_> = batch
                .par_iter()
                .zip(sample_grads.par_iter_mut())
                .map(|(&i, g)| {
                    let s = &data.train[i];
                    let ex = if config.train_embeddings {
                        Cow::Owned(refresh_text(s, &vocab))
                    } else {
                        Cow::Borrowed(&s.example)
                    };
                    g.fill_zero();
                    net.loss_and_grad_into(&ex, config.loss, config.teacher_forcing, g)
                })
                .collect();

            grad.fill_zero();
            table_grad.fill(0.0);
            for ((&i, r), g) in batch.iter().zip(results).zip(&sample_grads) {
                let (loss, text_inputs) = r?;
                if !loss.is_finite() {
                    return Err(diverged(epoch, format!("loss is {loss} on sample {}", data.train[i].id), best));
                }
                loss_sum += loss;
                grad.add_assign(g);
                if config.train_embeddings {
                    for (&tok, d) in data.train[i].token_ids.iter().zip(&text_inputs) {
                        axpy(&mut table_grad[tok * FEATURE_DIM..(tok + 1) * FEATURE_DIM], 1.0, d);
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grad.scale(inv);
            table_grad.iter_mut().for_each(|v| *v *= inv);

            let grads: Vec<&[f64]> = grad
                .tensors()
                .into_iter()
                .map(|(_, _, d)| d)
                .chain(config.train_embeddings.then_some(table_grad.as_slice()))
                .collect();
            let mut params = net.tensors_mut();
            if config.train_embeddings {
                params.push(vocab.table_mut());
            }
            if let Err(e) = adam.step(&mut params, &grads, &names) {
                return Err(diverged(epoch, e.to_string(), best));
            }
        }

        let train_loss = loss_sum / data.train.len() as f64;
        let val_loss = if data.validation.is_empty() {
            None
        } else {
            let l = evaluate(&data.validation, &net, &vocab, config.similarity)?.l;
            if !l.is_finite() {
                return Err(diverged(epoch, format!("validation loss is {l}"), best));
            }
            Some(l)
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        let score = val_loss.unwrap_or(train_loss);
        if score < best_score {
            best_score = score;
            best = snapshot(&net, &vocab, &[], epoch);
        }
        if config.target_loss.is_some_and(|t| train_loss < t) {
            break;
        }
    }
    best.history = history;
    Ok(best)
}

fn diverged(epoch: usize, reason: String, last_good: ModelCheckpoint) -> ModelError {
    ModelError::Diverged {
        epoch,
        reason,
        last_good: Box::new(last_good),
    }
}
