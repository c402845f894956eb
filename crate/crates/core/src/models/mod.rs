//! Listening and speaking models, training, evaluation and checkpoints.

mod checkpoint;
mod metrics;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, FORMAT_VERSION};
pub use metrics::{
    cosine_similarity, evaluate, evaluate_per_bone, metrics_from_predictions, per_bone_from_predictions,
    BoneMetrics, Metrics, MetricsReport, SimilarityMode,
};
pub use train::{train, EpochRecord, TrainData};

use serde::{Deserialize, Serialize};

use crate::featurize::{FeatureError, FeatureSequence, Vocabulary};
use crate::geometry::GeometryError;
use crate::data::Role;
use crate::nn::{Example, LossKind, NnError, Seq2Seq};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset split is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        last_good: Box<ModelCheckpoint>,
    },
    #[error("per-bone evaluation needs vector normalization, checkpoint uses {0:?}")]
    NotVectorNormalized(NormalizationMethod),
    #[error("checkpoint format version {found}, this build reads {expected}")]
    VersionMismatch { found: u64, expected: u64 },
    #[error("corrupted checkpoint: {0}")]
    Corrupted(String),
    #[error("checkpoint i/o")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Listening,
    Speaking,
}

impl ModelKind {
    pub fn has_motion_input(self) -> bool {
        self == ModelKind::Listening
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMethod {
    Individual,
    Global,
    #[default]
    Vector,
}

impl NormalizationMethod {
    pub const ALL: [NormalizationMethod; 3] = [Self::Individual, Self::Global, Self::Vector];

    pub fn name(self) -> &'static str {
        match self {
            Self::Individual => "individual",
            Self::Global => "global",
            Self::Vector => "vector",
        }
    }
}

/// Whose behaviour the model learns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningTarget {
    #[default]
    Host,
    Guest,
    /// Every clip, regardless of roles.
    Both,
}

impl LearningTarget {
    pub(crate) fn matches(self, role: Role) -> bool {
        match self {
            LearningTarget::Host => role == Role::Host,
            LearningTarget::Guest => role == Role::Guest,
            LearningTarget::Both => true,
        }
    }
}

/// Defaults are the full-scale values; [`TrainConfig::desk`] gives the small
/// preset used in tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Full passes over the training split.
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub teacher_forcing: bool,
    pub hidden_size: usize,
    pub normalization: NormalizationMethod,
    /// Update the embedding table jointly with the network.
    pub train_embeddings: bool,
    /// Stop once the epoch's mean training loss drops below this.
    pub target_loss: Option<f64>,
    pub similarity: SimilarityMode,
    /// Whose motion the model learns. Training itself does not read it; it
    /// travels with the checkpoint so evaluation selects the same clips.
    pub target: LearningTarget,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 0.01,
            epochs: 40000,
            seed: 0,
            loss: LossKind::Norm,
            teacher_forcing: true,
            hidden_size: 360,
            normalization: NormalizationMethod::Vector,
            train_embeddings: false,
            target_loss: None,
            similarity: SimilarityMode::PerStep,
            target: LearningTarget::Host,
        }
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            batch_size: 8,
            epochs: 2000,
            hidden_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be positive");
        }
        if self.target_loss.is_some_and(|t| !t.is_finite()) {
            return bad("target_loss must be finite");
        }
        Ok(())
    }
}

/// One featurized training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Vocabulary ids behind `example.text`, one per valid text step.
    pub token_ids: Vec<usize>,
    pub example: Example,
}

/// Listening model: text encoder plus keypoints encoder, fused by addition.
#[derive(Debug, Clone, PartialEq)]
pub struct ListeningModel(Seq2Seq);

impl ListeningModel {
    pub fn new(net: Seq2Seq) -> Result<Self, ModelError> {
        if !net.has_motion_encoder() {
            return Err(ModelError::Config("listening model needs a keypoints encoder".into()));
        }
        Ok(Self(net))
    }

    pub fn forward(
        &self,
        text: &FeatureSequence,
        speaker_motion: &FeatureSequence,
        steps: usize,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(self.0.predict(text, Some(speaker_motion), steps)?)
    }

    pub fn net(&self) -> &Seq2Seq {
        &self.0
    }
}

/// Speaking model: a single text encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakingModel(Seq2Seq);

impl SpeakingModel {
    pub fn new(net: Seq2Seq) -> Result<Self, ModelError> {
        if net.has_motion_encoder() {
            return Err(ModelError::Config("speaking model has no keypoints encoder".into()));
        }
        Ok(Self(net))
    }

    pub fn forward(&self, text: &FeatureSequence, steps: usize) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(self.0.predict(text, None, steps)?)
    }

    pub fn net(&self) -> &Seq2Seq {
        &self.0
    }
}

/// Rebuilds the text sequence of `sample` from the current embedding table.
pub(crate) fn refresh_text(sample: &Sample, vocab: &Vocabulary) -> Example {
    let mut ex = sample.example.clone();
    ex.text = crate::featurize::embed_ids(&sample.token_ids, vocab);
    ex
}
