use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{evaluate, evaluate_per_bone, predict_all, per_bone_from_predictions, metrics_from_predictions};
use super::{
    BoneMetrics, EpochRecord, Metrics, MetricsReport, ModelError, ModelKind, NormalizationMethod, Sample,
    TrainConfig,
};
use crate::featurize::{Vocabulary, FEATURE_DIM};
use crate::geometry::GlobalStats;
use crate::nn::Seq2Seq;

pub const FORMAT_VERSION: u64 = 1;
const MAGIC: &[u8; 8] = b"GESTCKPT";
const EMBEDDING_TENSOR: &str = "embedding";

/// A self-contained trained model: weights, vocabulary and embedding table,
/// normalization statistics, config and training history.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub kind: ModelKind,
    pub config: TrainConfig,
    pub vocabulary: Vocabulary,
    pub global_stats: Option<GlobalStats>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights are stored; 0 means the initial weights.
    pub best_epoch: usize,
    pub net: Seq2Seq,
}

impl ModelCheckpoint {
    pub fn normalization(&self) -> NormalizationMethod {
        self.config.normalization
    }

    pub fn evaluate(&self, samples: &[Sample]) -> Result<Metrics, ModelError> {
        evaluate(samples, &self.net, &self.vocabulary, self.config.similarity)
    }

    pub fn evaluate_per_bone(&self, samples: &[Sample]) -> Result<Vec<BoneMetrics>, ModelError> {
        self.require_vector()?;
        evaluate_per_bone(samples, &self.net, &self.vocabulary, self.config.similarity)
    }

    fn require_vector(&self) -> Result<(), ModelError> {
        match self.normalization() {
            NormalizationMethod::Vector => Ok(()),
            other => Err(ModelError::NotVectorNormalized(other)),
        }
    }

    /// Overall metrics plus, under vector normalization, the per-bone table.
    pub fn report(&self, samples: &[Sample]) -> Result<MetricsReport, ModelError> {
        let (gts, preds) = predict_all(samples, &self.net, &self.vocabulary)?;
        let mode = self.config.similarity;
        let m = metrics_from_predictions(&gts, &preds, mode)?;
        let per_bone = if self.normalization() == NormalizationMethod::Vector {
            per_bone_from_predictions(&gts, &preds, mode)?
        } else {
            Vec::new()
        };
        Ok(MetricsReport {
            l: m.l,
            s_c: m.s_c,
            per_bone,
        })
    }

    fn check(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Corrupted(m));
        self.config.validate()?;
        if self.net.hidden_size() != self.config.hidden_size {
            return bad("hidden size differs from config".into());
        }
        if self.net.has_motion_encoder() != self.kind.has_motion_input() {
            return bad(format!("encoder layout does not match a {:?} model", self.kind));
        }
        match (&self.global_stats, self.normalization()) {
            (None, NormalizationMethod::Global) => return bad("global normalization without statistics".into()),
            (Some(s), _) => s.check()?,
            _ => {}
        }
        if let Some((name, _, _)) = self
            .net
            .tensors()
            .into_iter()
            .find(|(_, _, d)| d.iter().any(|v| !v.is_finite()))
        {
            return bad(format!("tensor {name} has a non-finite value"));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in values.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabHeader {
    tokens: Vec<String>,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u64,
    kind: ModelKind,
    feature_dim: usize,
    config: TrainConfig,
    vocabulary: VocabHeader,
    global_stats: Option<GlobalStats>,
    best_epoch: usize,
    history: Vec<EpochRecord>,
    tensors: Vec<TensorEntry>,
    payload_values: usize,
    payload_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn encode(ck: &ModelCheckpoint) -> Result<Vec<u8>, ModelError> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    let table_shape = vec![ck.vocabulary.len(), FEATURE_DIM];
    let tensors = ck.net.tensors();
    let all = tensors
        .iter()
        .map(|(n, s, d)| (n.as_str(), s.clone(), *d))
        .chain(std::iter::once((EMBEDDING_TENSOR, table_shape, ck.vocabulary.table())));
    for (name, shape, data) in all {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape,
            offset,
        });
        offset += data.len();
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: ck.kind,
        feature_dim: FEATURE_DIM,
        config: ck.config.clone(),
        vocabulary: VocabHeader {
            tokens: ck.vocabulary.tokens().to_vec(),
            seed: ck.vocabulary.seed(),
        },
        global_stats: ck.global_stats.clone(),
        best_epoch: ck.best_epoch,
        history: ck.history.clone(),
        tensors: entries,
        payload_values: offset,
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Corrupted(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<ModelCheckpoint, ModelError> {
    let corrupt = |m: &str| ModelError::Corrupted(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing checkpoint magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let raw = &bytes[16..header_end];

    // The version is read on its own first so that a newer layout reports a
    // version mismatch rather than a parse failure.
    let value: serde_json::Value = serde_json::from_slice(raw).map_err(|e| ModelError::Corrupted(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("header has no format_version"))?;
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header = serde_json::from_value(value).map_err(|e| ModelError::Corrupted(e.to_string()))?;
    if header.feature_dim != FEATURE_DIM {
        return Err(corrupt("feature width differs from this build"));
    }

    let payload = &bytes[header_end..];
    if Some(payload.len()) != header.payload_values.checked_mul(8) {
        return Err(corrupt("payload length does not match header"));
    }
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(corrupt("payload checksum mismatch"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut net = Seq2Seq::zeros(FEATURE_DIM, header.config.hidden_size, header.kind.has_motion_input());
    let expected: Vec<(String, Vec<usize>)> = net
        .tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .chain(std::iter::once((
            EMBEDDING_TENSOR.to_string(),
            vec![header.vocabulary.tokens.len(), FEATURE_DIM],
        )))
        .collect();
    if expected.len() != header.tensors.len() {
        return Err(corrupt("tensor manifest has the wrong number of entries"));
    }
    let mut slices = Vec::new();
    let mut offset = 0;
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if name != &entry.name || shape != &entry.shape || entry.offset != offset {
            return Err(ModelError::Corrupted(format!("unexpected tensor entry {}", entry.name)));
        }
        let len: usize = shape.iter().product();
        slices.push(&values[offset..offset + len]);
        offset += len;
    }
    if offset != values.len() {
        return Err(corrupt("payload has trailing values"));
    }
    for (dst, src) in net.tensors_mut().into_iter().zip(&slices) {
        dst.copy_from_slice(src);
    }
    let table = slices.last().expect("embedding entry").to_vec();
    let vocabulary = Vocabulary::from_parts(header.vocabulary.tokens, header.vocabulary.seed, table)?;

    let ck = ModelCheckpoint {
        kind: header.kind,
        config: header.config,
        vocabulary,
        global_stats: header.global_stats,
        history: header.history,
        best_epoch: header.best_epoch,
        net,
    };
    ck.check()?;
    Ok(ck)
}

/// Writes the checkpoint atomically: a failed save leaves no file behind.
pub fn save_checkpoint(ck: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<(), ModelError> {
    ck.check()?;
    let bytes = encode(ck)?;
    crate::io::atomic_write(path.as_ref(), |f| f.write_all(&bytes))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint, ModelError> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}
