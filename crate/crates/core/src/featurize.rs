//! Turns bone frames and token sequences into fixed-width feature sequences.
//!
//! Motion is flattened to 36 values per frame and ten consecutive frames are
//! concatenated into one 360-D step (ten frames at 25 fps is roughly the
//! duration of one spoken word). Words are embedded straight to 360-D so both
//! modalities share one width. Sequences hold at most seven steps and are
//! zero-padded at the tail.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{BoneFrame, GeometryError};
use crate::skeleton::{KeypointFrame, NUM_KEYPOINTS};

pub const FRAME_DIM: usize = 3 * NUM_KEYPOINTS;
pub const GROUP_SIZE: usize = 10;
pub const FEATURE_DIM: usize = FRAME_DIM * GROUP_SIZE;
pub const MAX_STEPS: usize = 7;
pub const UNK_TOKEN: &str = "<unk>";
const EMBED_RANGE: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("sequence has {0} steps, the maximum is {MAX_STEPS}")]
    TooLong(usize),
    #[error("mask length {mask} does not match {vectors} vectors")]
    MaskLength { mask: usize, vectors: usize },
    #[error("mask has a valid step after padding at step {0}")]
    MaskGap(usize),
    #[error("step {step} has width {width}, expected {FEATURE_DIM}")]
    Width { step: usize, width: usize },
    #[error("step {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("expected {FRAME_DIM} values for a frame, got {0}")]
    FrameWidth(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("embedding file line {line}: {message}")]
    EmbeddingFile { line: usize, message: String },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
}

/// Up to seven 360-D steps with a validity mask whose valid steps form a prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    vectors: Vec<Vec<f64>>,
    mask: Vec<bool>,
}

impl FeatureSequence {
    pub fn new(vectors: Vec<Vec<f64>>, mask: Vec<bool>) -> Result<Self, FeatureError> {
        let seq = Self { vectors, mask };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.vectors.len() > MAX_STEPS {
            return Err(FeatureError::TooLong(self.vectors.len()));
        }
        if self.mask.len() != self.vectors.len() {
            return Err(FeatureError::MaskLength {
                mask: self.mask.len(),
                vectors: self.vectors.len(),
            });
        }
        if let Some(gap) = self.mask.windows(2).position(|w| !w[0] && w[1]) {
            return Err(FeatureError::MaskGap(gap + 1));
        }
        for (step, v) in self.vectors.iter().enumerate() {
            if v.len() != FEATURE_DIM {
                return Err(FeatureError::Width {
                    step,
                    width: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(FeatureError::NonFinite(step));
            }
        }
        Ok(())
    }

    /// All steps valid, no padding.
    pub fn from_valid(vectors: Vec<Vec<f64>>) -> Result<Self, FeatureError> {
        let mask = vec![true; vectors.len()];
        Self::new(vectors, mask)
    }

    pub fn empty() -> Self {
        Self {
            vectors: Vec::new(),
            mask: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m).count()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub(crate) fn vectors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.vectors
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// The valid prefix.
    pub fn valid(&self) -> &[Vec<f64>] {
        &self.vectors[..self.valid_len()]
    }

    /// Appends masked zero steps up to `len` (capped at the maximum length).
    pub fn padded_to(&self, len: usize) -> Self {
        let mut out = self.clone();
        while out.vectors.len() < len.min(MAX_STEPS) {
            out.vectors.push(vec![0.0; FEATURE_DIM]);
            out.mask.push(false);
        }
        out
    }
}

/// 36 values in keypoint order, `x, y, z` per keypoint.
pub fn flatten_keypoint_frame(frame: &KeypointFrame) -> [f64; FRAME_DIM] {
    let mut out = [0.0; FRAME_DIM];
    for (k, p) in frame.points().iter().enumerate() {
        out[3 * k..3 * k + 3].copy_from_slice(p);
    }
    out
}

/// Same layout as [`flatten_keypoint_frame`]; the belly slots are zero.
pub fn flatten_bone_frame(bones: &BoneFrame) -> [f64; FRAME_DIM] {
    let mut out = [0.0; FRAME_DIM];
    for (k, p) in bones.dirs().iter().enumerate() {
        out[3 * k..3 * k + 3].copy_from_slice(p);
    }
    out
}

/// Inverse of [`flatten_bone_frame`]; the input must already hold unit bones.
pub fn unflatten_bone_frame(values: &[f64]) -> Result<BoneFrame, FeatureError> {
    if values.len() != FRAME_DIM {
        return Err(FeatureError::FrameWidth(values.len()));
    }
    let mut dirs = [[0.0; 3]; NUM_KEYPOINTS];
    for (k, d) in dirs.iter_mut().enumerate() {
        d.copy_from_slice(&values[3 * k..3 * k + 3]);
    }
    Ok(BoneFrame::new(dirs)?)
}

/// Concatenates consecutive, non-overlapping groups of frames. A trailing
/// partial group is dropped.
pub fn pack_frames<F: AsRef<[f64]>>(frames: &[F], group_size: usize) -> Vec<Vec<f64>> {
    assert!(group_size >= 1, "group size must be at least 1");
    frames
        .chunks_exact(group_size)
        .map(|group| {
            group
                .iter()
                .flat_map(|f| f.as_ref().iter().copied())
                .collect()
        })
        .collect()
}

/// Truncates to `max_len` steps or zero-pads the tail with masked steps.
pub fn pad_or_truncate(mut vectors: Vec<Vec<f64>>, max_len: usize) -> Result<FeatureSequence, FeatureError> {
    let max_len = max_len.min(MAX_STEPS);
    vectors.truncate(max_len);
    let valid = vectors.len();
    vectors.resize(max_len, vec![0.0; FEATURE_DIM]);
    let mask = (0..max_len).map(|i| i < valid).collect();
    FeatureSequence::new(vectors, mask)
}

/// Whitespace split plus lowercasing.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Token index plus a seeded embedding row per token. Index 0 is `<unk>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    seed: u64,
    /// Row-major `tokens.len() x FEATURE_DIM`.
    #[serde(skip)]
    table: Vec<f64>,
}

impl Vocabulary {
    pub const UNK: usize = 0;

    fn with_tokens(tokens: Vec<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..tokens.len() * FEATURE_DIM)
            .map(|_| rng.gen_range(-EMBED_RANGE..=EMBED_RANGE))
            .collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            index,
            seed,
            table,
        }
    }

    /// Rebuilds a vocabulary from its token list and an explicit table,
    /// e.g. when loading a checkpoint.
    pub fn from_parts(tokens: Vec<String>, seed: u64, table: Vec<f64>) -> Result<Self, FeatureError> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(FeatureError::InvalidVocabulary(format!("first token must be {UNK_TOKEN}")));
        }
        if table.len() != tokens.len() * FEATURE_DIM {
            return Err(FeatureError::InvalidVocabulary(format!(
                "table has {} values for {} tokens",
                table.len(),
                tokens.len()
            )));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::InvalidVocabulary("non-finite embedding value".into()));
        }
        let mut v = Self::with_tokens(Vec::new(), seed);
        v.index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        v.tokens = tokens;
        v.table = table;
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.table[index * FEATURE_DIM..(index + 1) * FEATURE_DIM]
    }

    pub fn token_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(t.as_ref())).collect()
    }

    /// Replaces rows for tokens listed in a JSON-lines embedding file
    /// (`{"token": ..., "vector": [360 floats]}`). Returns how many rows changed.
    pub fn apply_embedding_file(&mut self, path: impl AsRef<Path>) -> Result<usize, FeatureError> {
        #[derive(Deserialize)]
        struct Row {
            token: String,
            vector: Vec<f64>,
        }
        let mut updated = 0;
        let reader = BufReader::new(File::open(path)?);
        for (line_no, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| FeatureError::EmbeddingFile {
                line: line_no,
                message: e.to_string(),
            })?;
            if row.vector.len() != FEATURE_DIM || row.vector.iter().any(|v| !v.is_finite()) {
                return Err(FeatureError::EmbeddingFile {
                    line: line_no,
                    message: format!("expected {FEATURE_DIM} finite values"),
                });
            }
            if let Some(&i) = self.index.get(&row.token) {
                self.table[i * FEATURE_DIM..(i + 1) * FEATURE_DIM].copy_from_slice(&row.vector);
                updated += 1;
            }
        }
        Ok(updated)
    }
}

/// Sorted, deduplicated vocabulary with rows drawn uniformly from
/// `[-0.1, 0.1]` in index order.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[Vec<S>], seed: u64) -> Result<Vocabulary, FeatureError> {
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut tokens: Vec<String> = corpus
        .iter()
        .flatten()
        .map(|t| t.as_ref().to_string())
        .filter(|t| t != UNK_TOKEN)
        .collect();
    tokens.sort();
    tokens.dedup();
    tokens.insert(0, UNK_TOKEN.to_string());
    Ok(Vocabulary::with_tokens(tokens, seed))
}

/// Embeds tokens (unknown ones become `<unk>`) and pads or truncates to seven steps.
pub fn embed_tokens<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> FeatureSequence {
    embed_ids(&vocab.token_ids(tokens), vocab)
}

pub fn embed_ids(ids: &[usize], vocab: &Vocabulary) -> FeatureSequence {
    let vectors = ids.iter().map(|&i| vocab.row(i).to_vec()).collect();
    pad_or_truncate(vectors, MAX_STEPS).expect("embedding rows are finite and 360 wide")
}
