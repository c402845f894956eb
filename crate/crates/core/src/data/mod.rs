//! Corpus ingestion, deterministic splits, learning-target selection,
//! featurization into samples, and the synthetic corpus generator.

mod prepared;
mod synth;

pub use crate::models::LearningTarget;
pub use prepared::{PreparedClip, PreparedDataset, SplitName, PREPARED_FORMAT, PREPARED_VERSION};
pub use synth::{generate_synthetic_corpus, motif_phrase, SynthConfig};

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::featurize::{
    embed_ids, flatten_bone_frame, flatten_keypoint_frame, pack_frames, pad_or_truncate, tokenize, FeatureError,
    FeatureSequence, Vocabulary, FRAME_DIM, GROUP_SIZE, MAX_STEPS,
};
use crate::geometry::{
    compute_global_stats, normalize_global, normalize_individual, normalize_vector, rotate_frame_with,
    validate_shoulder_hypothesis, DegeneratePolicy, GeometryError, GlobalStats,
};
use crate::models::{ModelKind, NormalizationMethod, Sample};
use crate::nn::Example;
use crate::skeleton::{load_frames, write_frames, KeypointFrame, SkeletonError, SkeletonTopology};

/// Frames consumed per motion stream: seven steps of ten frames.
pub const MAX_FRAMES: usize = MAX_STEPS * GROUP_SIZE;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("corpus has no valid clips ({} rejected)", .0.len())]
    ZeroValidClips(Vec<Rejection>),
    #[error("splitting needs at least 3 clips, got {0}")]
    TooFewClips(usize),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("duplicate clip id {0}")]
    DuplicateId(String),
    #[error("invalid clip {id}: {reason}")]
    InvalidClip { id: String, reason: String },
    #[error("clip {id} has {frames} frames, fewer than one group of {GROUP_SIZE}")]
    ClipTooShort { id: String, frames: usize },
    #[error("global normalization needs statistics from the training split")]
    MissingStats,
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Host,
    Guest,
}

/// One conversation clip: what the speaker said, and both parties' motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    pub text: String,
    pub speaker_frames: Vec<KeypointFrame>,
    pub listener_frames: Vec<KeypointFrame>,
    pub speaker_role: Role,
}

impl Clip {
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let invalid = |reason: &str| {
            Err(DataError::InvalidClip {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return invalid("id must be non-empty and contain no path separators");
        }
        if self.tokens().is_empty() {
            return invalid("text has no tokens");
        }
        if self.speaker_frames.is_empty() {
            return invalid("no speaker frames");
        }
        if self.listener_frames.is_empty() {
            return invalid("no listener frames");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: String,
    text: String,
    speaker_frames: PathBuf,
    listener_frames: PathBuf,
    speaker_role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    clips: Vec<ManifestEntry>,
}

/// Valid clips in manifest order plus the rejected ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub clips: Vec<Clip>,
    pub rejected: Vec<Rejection>,
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads a corpus from a manifest file or a directory holding `manifest.json`.
/// Frame paths are relative to the manifest's directory.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, DataError> {
    let manifest = manifest_path(path.as_ref());
    let manifest_err = |message: String| DataError::Manifest {
        path: manifest.clone(),
        message,
    };
    let text = std::fs::read_to_string(&manifest).map_err(|e| manifest_err(e.to_string()))?;
    let parsed: Manifest = serde_json::from_str(&text).map_err(|e| manifest_err(e.to_string()))?;
    let base = manifest.parent().unwrap_or(Path::new("."));

    let loaded: Vec<Result<Clip, Rejection>> = parsed
        .clips
        .par_iter()
        .map(|e| {
            let reject = |reason: String| Rejection {
                id: e.id.clone(),
                reason,
            };
            let speaker = load_frames(base.join(&e.speaker_frames)).map_err(|err| reject(err.to_string()))?;
            let listener = load_frames(base.join(&e.listener_frames)).map_err(|err| reject(err.to_string()))?;
            let clip = Clip {
                id: e.id.clone(),
                text: e.text.clone(),
                speaker_frames: speaker,
                listener_frames: listener,
                speaker_role: e.speaker_role,
            };
            clip.validate().map_err(|err| reject(err.to_string()))?;
            Ok(clip)
        })
        .collect();

    let mut clips = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = BTreeSet::new();
    for r in loaded {
        match r {
            Ok(c) if !seen.insert(c.id.clone()) => rejected.push(Rejection {
                id: c.id,
                reason: "duplicate clip id".into(),
            }),
            Ok(c) => clips.push(c),
            Err(rej) => rejected.push(rej),
        }
    }
    if clips.is_empty() {
        return Err(DataError::ZeroValidClips(rejected));
    }
    Ok(Corpus { clips, rejected })
}

/// Writes `dir/manifest.json` plus `dir/frames/<id>.speaker.jsonl` and
/// `<id>.listener.jsonl`. `dir` is created if missing; its parent must exist.
pub fn write_corpus(dir: impl AsRef<Path>, clips: &[Clip]) -> Result<(), DataError> {
    let dir = dir.as_ref();
    let mut seen = BTreeSet::new();
    for c in clips {
        c.validate()?;
        if !seen.insert(c.id.as_str()) {
            return Err(DataError::DuplicateId(c.id.clone()));
        }
    }
    if !dir.is_dir() {
        std::fs::create_dir(dir)?;
    }
    let frames_dir = dir.join("frames");
    if !frames_dir.is_dir() {
        std::fs::create_dir(&frames_dir)?;
    }
    let mut entries = Vec::with_capacity(clips.len());
    for c in clips {
        let speaker = PathBuf::from("frames").join(format!("{}.speaker.jsonl", c.id));
        let listener = PathBuf::from("frames").join(format!("{}.listener.jsonl", c.id));
        write_frames(&c.speaker_frames, dir.join(&speaker))?;
        write_frames(&c.listener_frames, dir.join(&listener))?;
        entries.push(ManifestEntry {
            id: c.id.clone(),
            text: c.text.clone(),
            speaker_frames: speaker,
            listener_frames: listener,
            speaker_role: c.speaker_role,
        });
    }
    let json = serde_json::to_string_pretty(&Manifest { clips: entries }).expect("manifest serializes");
    crate::io::atomic_write(&dir.join(MANIFEST_FILE), |f| {
        f.write_all(json.as_bytes())?;
        f.write_all(b"\n")
    })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

/// Sorts the ids, applies a seeded permutation and cuts by ratio. Split sizes
/// are rounded for train and validation; test takes the remainder.
pub fn split_corpus<S: AsRef<str>>(ids: &[S], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit, DataError> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios(ratios));
    }
    let mut sorted: Vec<String> = ids.iter().map(|s| s.as_ref().to_string()).collect();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(DataError::DuplicateId(w[0].clone()));
    }
    let n = sorted.len();
    if n < 3 {
        return Err(DataError::TooFewClips(n));
    }
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let test = sorted.split_off(n_train + n_val);
    let validation = sorted.split_off(n_train);
    Ok(DatasetSplit {
        train: sorted,
        validation,
        test,
        seed,
        ratios,
    })
}

/// Maps clips to (input text, optional input motion, target motion).
/// Listening: the learning target is the listener, so a clip is used when the
/// other party speaks; speaker text and motion in, listener motion out.
/// Speaking: the learning target is the speaker; speaker text in, speaker
/// motion out. Swapping host and guest exchanges which party's streams are
/// inputs and which is ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: ModelKind,
    pub target: LearningTarget,
}

impl TaskSpec {
    pub fn selects(&self, clip: &Clip) -> bool {
        self.selects_role(clip.speaker_role)
    }

    /// Same as [`TaskSpec::selects`] given only the clip's speaker role.
    pub fn selects_role(&self, speaker_role: Role) -> bool {
        match self.kind {
            ModelKind::Speaking => self.target.matches(speaker_role),
            ModelKind::Listening => self.target.matches(match speaker_role {
                Role::Host => Role::Guest,
                Role::Guest => Role::Host,
            }),
        }
    }
}

/// Rotation, normalization and packing settings shared by training and inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub method: NormalizationMethod,
    pub global_stats: Option<GlobalStats>,
    pub topology: SkeletonTopology,
    pub policy: DegeneratePolicy,
}

/// Flag counts from featurizing one or more streams.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameFlags {
    pub frames: usize,
    /// Frames whose shoulders were too close to define a rotation.
    pub rotation_flagged: usize,
    /// Frames with a degenerate axis under individual normalization.
    pub axis_flagged: usize,
}

impl FrameFlags {
    fn add(&mut self, other: FrameFlags) {
        self.frames += other.frames;
        self.rotation_flagged += other.rotation_flagged;
        self.axis_flagged += other.axis_flagged;
    }
}

impl Preprocessor {
    pub fn new(method: NormalizationMethod) -> Self {
        Self {
            method,
            global_stats: None,
            topology: SkeletonTopology::default(),
            policy: DegeneratePolicy::Flag,
        }
    }

    /// For global normalization, computes the statistics from the rotated
    /// frames (both streams, first [`MAX_FRAMES`] each) of `train_clips`.
    pub fn fit<'a>(method: NormalizationMethod, train_clips: impl IntoIterator<Item = &'a Clip>) -> Result<Self, DataError> {
        let mut pre = Self::new(method);
        if method == NormalizationMethod::Global {
            let mut rotated = Vec::new();
            for c in train_clips {
                for stream in [&c.speaker_frames, &c.listener_frames] {
                    for f in stream.iter().take(MAX_FRAMES) {
                        rotated.push(rotate_frame_with(f, pre.policy)?.frame);
                    }
                }
            }
            pre.global_stats = Some(compute_global_stats(&rotated)?);
        }
        Ok(pre)
    }

    pub fn frame_features(&self, frame: &KeypointFrame) -> Result<([f64; FRAME_DIM], FrameFlags), DataError> {
        let rotated = rotate_frame_with(frame, self.policy)?;
        let mut flags = FrameFlags {
            frames: 1,
            rotation_flagged: usize::from(rotated.degenerate),
            axis_flagged: 0,
        };
        let values = match self.method {
            NormalizationMethod::Individual => {
                let n = normalize_individual(&rotated.frame);
                flags.axis_flagged = usize::from(n.flagged());
                flatten_keypoint_frame(&n.frame)
            }
            NormalizationMethod::Global => {
                let stats = self.global_stats.as_ref().ok_or(DataError::MissingStats)?;
                flatten_keypoint_frame(&normalize_global(&rotated.frame, stats)?)
            }
            NormalizationMethod::Vector => flatten_bone_frame(&normalize_vector(&rotated.frame, &self.topology)?),
        };
        Ok((values, flags))
    }

    /// rotate, normalize, flatten, pack into 10-frame steps, pad to 7 steps.
    /// Frames past [`MAX_FRAMES`] are dropped; a trailing partial group is dropped.
    pub fn featurize_motion(&self, id: &str, frames: &[KeypointFrame]) -> Result<(FeatureSequence, FrameFlags), DataError> {
        if frames.len() < GROUP_SIZE {
            return Err(DataError::ClipTooShort {
                id: id.to_string(),
                frames: frames.len(),
            });
        }
        let used = &frames[..frames.len().min(MAX_FRAMES)];
        let used = &used[..used.len() - used.len() % GROUP_SIZE];
        let mut flags = FrameFlags::default();
        let mut rows = Vec::with_capacity(used.len());
        for f in used {
            let (v, fl) = self.frame_features(f)?;
            flags.add(fl);
            rows.push(v);
        }
        Ok((pad_or_truncate(pack_frames(&rows, GROUP_SIZE), MAX_STEPS)?, flags))
    }
}

/// Samples in clip order, clips skipped for being too short, and flag totals.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    pub skipped: Vec<Rejection>,
    pub flags: FrameFlags,
}

/// Featurizes the clips selected by `spec`. Speaking samples never read the
/// listener stream.
pub fn make_samples(
    clips: &[Clip],
    spec: &TaskSpec,
    pre: &Preprocessor,
    vocab: &Vocabulary,
) -> Result<SampleSet, DataError> {
    let results: Vec<Result<(Sample, FrameFlags), DataError>> = clips
        .par_iter()
        .filter(|c| spec.selects(c))
        .map(|c| {
            let token_ids: Vec<usize> = vocab.token_ids(&c.tokens()).into_iter().take(MAX_STEPS).collect();
            let text = embed_ids(&token_ids, vocab);
            let (speaker, mut flags) = pre.featurize_motion(&c.id, &c.speaker_frames)?;
            let (motion, target) = match spec.kind {
                ModelKind::Speaking => (None, speaker),
                ModelKind::Listening => {
                    let (listener, f) = pre.featurize_motion(&c.id, &c.listener_frames)?;
                    flags.add(f);
                    (Some(speaker), listener)
                }
            };
            let sample = Sample {
                id: c.id.clone(),
                token_ids,
                example: Example { text, motion, target },
            };
            Ok((sample, flags))
        })
        .collect();

    let mut set = SampleSet {
        samples: Vec::new(),
        skipped: Vec::new(),
        flags: FrameFlags::default(),
    };
    for r in results {
        match r {
            Ok((s, f)) => {
                set.flags.add(f);
                set.samples.push(s);
            }
            Err(DataError::ClipTooShort { id, frames }) => set.skipped.push(Rejection {
                reason: format!("{frames} frames, fewer than one group of {GROUP_SIZE}"),
                id,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(set)
}

/// Shoulder-hypothesis fraction over every frame of both streams.
pub fn corpus_shoulder_fraction(clips: &[Clip]) -> Result<f64, DataError> {
    let frames: Vec<KeypointFrame> = clips
        .iter()
        .flat_map(|c| c.speaker_frames.iter().chain(&c.listener_frames).copied())
        .collect();
    Ok(validate_shoulder_hypothesis(&frames)?)
}

/// Clips whose ids appear in `ids`, in the order of `ids`.
pub fn select_clips<'a>(clips: &'a [Clip], ids: &[String]) -> Vec<&'a Clip> {
    ids.iter().filter_map(|id| clips.iter().find(|c| &c.id == id)).collect()
}

/// Cloned clips for the given ids, in the order of `ids`.
pub fn clips_by_id(clips: &[Clip], ids: &[String]) -> Vec<Clip> {
    select_clips(clips, ids).into_iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::build_vocabulary;
    use crate::geometry::rotate_frame;

    fn synth(clips: usize, frames: usize, noise: f64) -> Vec<Clip> {
        generate_synthetic_corpus(&SynthConfig {
            motifs: 2,
            clips_per_motif: clips / 2,
            frames_per_clip: frames,
            noise,
            seed: 3,
        })
    }

    fn vocab_for(clips: &[Clip]) -> Vocabulary {
        build_vocabulary(&clips.iter().map(Clip::tokens).collect::<Vec<_>>(), 1).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ids: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        let s = split_corpus(&ids, DEFAULT_RATIOS, 4).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split_corpus(&ids, DEFAULT_RATIOS, 4).unwrap());
        let mut rev = ids.clone();
        rev.reverse();
        assert_eq!(s, split_corpus(&rev, DEFAULT_RATIOS, 4).unwrap());
    }

    #[test]
    fn split_errors() {
        let ids: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        assert!(matches!(split_corpus(&ids, [0.8, 0.1, 0.2], 0), Err(DataError::BadRatios(_))));
        assert!(matches!(split_corpus(&ids, [1.2, -0.1, -0.1], 0), Err(DataError::BadRatios(_))));
        assert!(matches!(split_corpus(&ids[..2], DEFAULT_RATIOS, 0), Err(DataError::TooFewClips(2))));
        let dup = vec!["a", "b", "a"];
        assert!(matches!(split_corpus(&dup, DEFAULT_RATIOS, 0), Err(DataError::DuplicateId(_))));
    }

    #[test]
    fn seventy_frames_give_seven_steps() {
        let clips = synth(2, 70, 0.01);
        let pre = Preprocessor::new(NormalizationMethod::Vector);
        let (seq, flags) = pre.featurize_motion("x", &clips[0].speaker_frames).unwrap();
        assert_eq!(seq.valid_len(), 7);
        assert_eq!(flags.frames, 70);
        assert_eq!(flags.rotation_flagged, 0);
    }

    #[test]
    fn partial_groups_and_long_clips_are_cut() {
        let clips = synth(2, 95, 0.0);
        let pre = Preprocessor::new(NormalizationMethod::Vector);
        let (seq, flags) = pre.featurize_motion("x", &clips[0].speaker_frames).unwrap();
        assert_eq!((seq.valid_len(), seq.len(), flags.frames), (7, 7, 70));
        let (seq, flags) = pre.featurize_motion("x", &clips[0].speaker_frames[..25]).unwrap();
        assert_eq!((seq.valid_len(), seq.len(), flags.frames), (2, 7, 20));
        assert!(matches!(
            pre.featurize_motion("x", &clips[0].speaker_frames[..9]),
            Err(DataError::ClipTooShort { frames: 9, .. })
        ));
    }

    #[test]
    fn speaking_never_reads_listener_frames() {
        let clips = synth(4, 30, 0.01);
        let vocab = vocab_for(&clips);
        let spec = TaskSpec {
            kind: ModelKind::Speaking,
            target: LearningTarget::Both,
        };
        let pre = Preprocessor::new(NormalizationMethod::Vector);
        let clean = make_samples(&clips, &spec, &pre, &vocab).unwrap();
        // An empty listener stream would fail featurization if it were touched.
        let mut poisoned = clips.clone();
        for c in &mut poisoned {
            c.listener_frames.clear();
        }
        assert_eq!(make_samples(&poisoned, &spec, &pre, &vocab).unwrap(), clean);
        let listening = TaskSpec {
            kind: ModelKind::Listening,
            ..spec
        };
        let short = make_samples(&poisoned, &listening, &pre, &vocab).unwrap();
        assert!(short.samples.is_empty());
        assert_eq!(short.skipped.len(), 4);
    }

    #[test]
    fn target_swap_exchanges_roles() {
        let clips = synth(8, 20, 0.01);
        let vocab = vocab_for(&clips);
        let pre = Preprocessor::new(NormalizationMethod::Vector);
        for kind in [ModelKind::Speaking, ModelKind::Listening] {
            let host = make_samples(&clips, &TaskSpec { kind, target: LearningTarget::Host }, &pre, &vocab).unwrap();
            let guest = make_samples(&clips, &TaskSpec { kind, target: LearningTarget::Guest }, &pre, &vocab).unwrap();
            assert_eq!(host.samples.len(), guest.samples.len());
            let host_ids: BTreeSet<_> = host.samples.iter().map(|s| s.id.clone()).collect();
            let guest_ids: BTreeSet<_> = guest.samples.iter().map(|s| s.id.clone()).collect();
            assert!(host_ids.is_disjoint(&guest_ids));
            assert_eq!(host_ids.len() + guest_ids.len(), clips.len());
            for s in &host.samples {
                let clip = clips.iter().find(|c| c.id == s.id).unwrap();
                let learner = match kind {
                    ModelKind::Speaking => clip.speaker_role,
                    ModelKind::Listening => match clip.speaker_role {
                        Role::Host => Role::Guest,
                        Role::Guest => Role::Host,
                    },
                };
                assert_eq!(learner, Role::Host);
            }
        }
    }

    #[test]
    fn global_method_needs_stats() {
        let clips = synth(2, 20, 0.01);
        let vocab = vocab_for(&clips);
        let spec = TaskSpec {
            kind: ModelKind::Speaking,
            target: LearningTarget::Both,
        };
        let bare = Preprocessor::new(NormalizationMethod::Global);
        assert!(matches!(make_samples(&clips, &spec, &bare, &vocab), Err(DataError::MissingStats)));
        let fitted = Preprocessor::fit(NormalizationMethod::Global, &clips).unwrap();
        let set = make_samples(&clips, &spec, &fitted, &vocab).unwrap();
        // training frames map into the unit cube
        for s in &set.samples {
            for v in s.example.target.valid().iter().flatten() {
                assert!((-1e-12..=1.0 + 1e-12).contains(v));
            }
        }
    }

    #[test]
    fn rotation_precedes_normalization() {
        let clips = synth(2, 10, 0.05);
        let pre = Preprocessor::new(NormalizationMethod::Individual);
        let f = clips[0].speaker_frames[3];
        let (v, _) = pre.frame_features(&f).unwrap();
        let want = flatten_keypoint_frame(&normalize_individual(&rotate_frame(&f)).frame);
        assert_eq!(v, want);
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let clips = synth(4, 12, 0.02);
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("corpus");
        write_corpus(&root, &clips).unwrap();
        let loaded = load_corpus(&root).unwrap();
        assert!(loaded.rejected.is_empty());
        assert_eq!(loaded.clips, clips);
        assert_eq!(load_corpus(root.join(MANIFEST_FILE)).unwrap().clips, clips);
    }

    #[test]
    fn bad_clips_are_reported_not_fatal() {
        let clips = synth(2, 12, 0.02);
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &clips).unwrap();
        std::fs::write(dir.path().join("frames/empty.jsonl"), "").unwrap();
        let mut manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        let mut extra = manifest["clips"][0].clone();
        extra["id"] = "frameless".into();
        extra["speaker_frames"] = "frames/empty.jsonl".into();
        manifest["clips"].as_array_mut().unwrap().push(extra);
        std::fs::write(dir.path().join(MANIFEST_FILE), manifest.to_string()).unwrap();

        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded.clips.len(), 2);
        assert_eq!(loaded.rejected.len(), 1);
        assert_eq!(loaded.rejected[0].id, "frameless");
    }

    #[test]
    fn empty_or_missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(DataError::Manifest { .. })));
        std::fs::write(dir.path().join(MANIFEST_FILE), r#"{"clips": []}"#).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(DataError::ZeroValidClips(_))));
    }

    #[test]
    fn write_needs_existing_parent() {
        let dir = tempfile::tempdir().unwrap();
        let clips = synth(2, 10, 0.0);
        assert!(write_corpus(dir.path().join("a/b"), &clips).is_err());
    }
}
