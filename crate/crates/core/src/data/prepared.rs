use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{split_corpus, Clip, Corpus, DataError, DatasetSplit, FrameFlags, Preprocessor, Rejection, Role, TaskSpec};
use crate::featurize::{build_vocabulary, embed_ids, pad_or_truncate, FeatureSequence, Vocabulary, MAX_STEPS};
use crate::geometry::GlobalStats;
use crate::models::{ModelKind, NormalizationMethod, Sample};
use crate::nn::Example;

pub const PREPARED_FORMAT: &str = "gesture-prepared";
pub const PREPARED_VERSION: u32 = 1;

/// One clip after rotation, normalization and packing. A stream too short
/// for a single step is stored as `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreparedClip {
    pub id: String,
    pub tokens: Vec<String>,
    pub speaker_role: Role,
    pub speaker: Option<Vec<Vec<f64>>>,
    pub listener: Option<Vec<Vec<f64>>>,
}

/// A featurized corpus with its split, statistics and preprocessing report.
/// Vocabulary and samples are derived from it on demand so one file serves
/// every model kind and learning target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreparedDataset {
    pub format: String,
    pub version: u32,
    pub method: NormalizationMethod,
    pub global_stats: Option<GlobalStats>,
    pub split: DatasetSplit,
    /// Fraction of frames whose shoulders are already level in height.
    pub shoulder_fraction: f64,
    pub flags: FrameFlags,
    /// Clips the loader refused.
    pub rejected: Vec<Rejection>,
    /// Streams too short to yield a step.
    pub skipped: Vec<Rejection>,
    pub clips: Vec<PreparedClip>,
}

fn prepare_stream(pre: &Preprocessor, id: &str, frames: &[crate::skeleton::KeypointFrame]) -> Result<(Option<Vec<Vec<f64>>>, FrameFlags, Option<Rejection>), DataError> {
    match pre.featurize_motion(id, frames) {
        Ok((seq, flags)) => Ok((Some(seq.valid().to_vec()), flags, None)),
        Err(DataError::ClipTooShort { id, frames }) => Ok((
            None,
            FrameFlags::default(),
            Some(Rejection {
                reason: format!("stream has {frames} frames, fewer than one step"),
                id,
            }),
        )),
        Err(e) => Err(e),
    }
}

impl PreparedDataset {
    /// Splits the valid clips, fits statistics on the training split and
    /// featurizes both streams of every clip.
    pub fn prepare(
        corpus: &Corpus,
        method: NormalizationMethod,
        split_seed: u64,
        ratios: [f64; 3],
    ) -> Result<Self, DataError> {
        if corpus.clips.is_empty() {
            return Err(DataError::ZeroValidClips(corpus.rejected.clone()));
        }
        let ids: Vec<&str> = corpus.clips.iter().map(|c| c.id.as_str()).collect();
        let split = split_corpus(&ids, ratios, split_seed)?;
        let train = super::select_clips(&corpus.clips, &split.train);
        let pre = Preprocessor::fit(method, train.iter().copied())?;
        let shoulder_fraction = super::corpus_shoulder_fraction(&corpus.clips)?;

        let results: Vec<Result<_, DataError>> = corpus
            .clips
            .par_iter()
            .map(|c: &Clip| {
                let (speaker, f1, r1) = prepare_stream(&pre, &c.id, &c.speaker_frames)?;
                let (listener, f2, r2) = prepare_stream(&pre, &c.id, &c.listener_frames)?;
                let clip = PreparedClip {
                    id: c.id.clone(),
                    tokens: c.tokens(),
                    speaker_role: c.speaker_role,
                    speaker,
                    listener,
                };
                Ok((clip, [f1, f2], [r1, r2]))
            })
            .collect();

        let mut out = Self {
            format: PREPARED_FORMAT.to_string(),
            version: PREPARED_VERSION,
            method,
            global_stats: pre.global_stats,
            split,
            shoulder_fraction,
            flags: FrameFlags::default(),
            rejected: corpus.rejected.clone(),
            skipped: Vec::new(),
            clips: Vec::with_capacity(corpus.clips.len()),
        };
        for r in results {
            let (clip, flags, rejections) = r?;
            flags.into_iter().for_each(|f| out.flags.add(f));
            out.skipped.extend(rejections.into_iter().flatten());
            out.clips.push(clip);
        }
        Ok(out)
    }

    /// Embedding table over the training split's tokens.
    pub fn vocabulary(&self, seed: u64) -> Result<Vocabulary, DataError> {
        let corpus: Vec<Vec<&str>> = self
            .clips
            .iter()
            .filter(|c| self.split.train.contains(&c.id))
            .map(|c| c.tokens.iter().map(String::as_str).collect())
            .collect();
        Ok(build_vocabulary(&corpus, seed)?)
    }

    /// Samples for the clips in `ids` (in that order) that `spec` selects.
    /// Clips lacking a required stream are left out.
    pub fn samples(&self, ids: &[String], spec: &TaskSpec, vocab: &Vocabulary) -> Result<Vec<Sample>, DataError> {
        let mut out = Vec::new();
        for id in ids {
            let Some(c) = self.clips.iter().find(|c| &c.id == id) else {
                return Err(DataError::InvalidClip {
                    id: id.clone(),
                    reason: "not in the prepared dataset".into(),
                });
            };
            if !spec.selects_role(c.speaker_role) {
                continue;
            }
            let Some(speaker) = &c.speaker else { continue };
            let seq = |v: &Vec<Vec<f64>>| pad_or_truncate(v.clone(), MAX_STEPS);
            let (motion, target) = match spec.kind {
                ModelKind::Speaking => (None, seq(speaker)?),
                ModelKind::Listening => {
                    let Some(listener) = &c.listener else { continue };
                    (Some(seq(speaker)?), seq(listener)?)
                }
            };
            let token_ids: Vec<usize> = vocab.token_ids(&c.tokens).into_iter().take(MAX_STEPS).collect();
            out.push(Sample {
                id: c.id.clone(),
                example: Example {
                    text: embed_ids(&token_ids, vocab),
                    motion,
                    target,
                },
                token_ids,
            });
        }
        Ok(out)
    }

    pub fn split_ids(&self, split: SplitName) -> &[String] {
        match split {
            SplitName::Train => &self.split.train,
            SplitName::Validation => &self.split.validation,
            SplitName::Test => &self.split.test,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let json = serde_json::to_vec(self).map_err(std::io::Error::other)?;
        crate::io::atomic_write(path, |f| {
            f.write_all(&json)?;
            f.write_all(b"\n")
        })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let bad = |message: String| DataError::Manifest {
            path: path.to_path_buf(),
            message,
        };
        let bytes = std::fs::read(path)?;
        let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
        if value.get("format").and_then(|v| v.as_str()) != Some(PREPARED_FORMAT) {
            return Err(bad("not a prepared dataset".into()));
        }
        if value.get("version").and_then(|v| v.as_u64()) != Some(PREPARED_VERSION as u64) {
            return Err(bad(format!("unsupported version, expected {PREPARED_VERSION}")));
        }
        let ds: Self = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        if let Some(s) = &ds.global_stats {
            s.check()?;
        }
        if ds.method == NormalizationMethod::Global && ds.global_stats.is_none() {
            return Err(DataError::MissingStats);
        }
        for c in &ds.clips {
            for v in c.speaker.iter().chain(&c.listener) {
                FeatureSequence::from_valid(v.clone()).map_err(|e| bad(format!("clip {}: {e}", c.id)))?;
            }
        }
        Ok(ds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" | "val" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            _ => Err(format!("unknown split {s:?}; expected train, validation or test")),
        }
    }
}
