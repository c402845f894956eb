//! The normalization comparison and the learning-target swap, run end to end
//! on a synthetic corpus.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic_corpus, Corpus, DataError, LearningTarget, PreparedDataset, SplitName, SynthConfig, TaskSpec,
    DEFAULT_RATIOS,
};
use crate::models::{train, Metrics, ModelError, ModelKind, NormalizationMethod, TrainConfig, TrainData};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{kind:?} / {target:?} has no {split:?} samples")]
    NoSamples {
        kind: ModelKind,
        target: LearningTarget,
        split: SplitName,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparisonConfig {
    pub synth: SynthConfig,
    /// Normalization is overridden per run; everything else applies to all.
    pub train: TrainConfig,
    pub split_seed: u64,
    pub vocab_seed: u64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig {
                clips_per_motif: 16,
                ..SynthConfig::default()
            },
            train: TrainConfig {
                epochs: 300,
                ..TrainConfig::desk()
            },
            split_seed: 7,
            vocab_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub kind: ModelKind,
    pub method: NormalizationMethod,
    pub target: LearningTarget,
    pub best_epoch: usize,
    pub test: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: ComparisonConfig,
    /// Every method for each model kind, host target.
    pub normalization: Vec<RunResult>,
    /// Vector normalization for each model kind and target.
    pub targets: Vec<RunResult>,
}

pub const KINDS: [ModelKind; 2] = [ModelKind::Listening, ModelKind::Speaking];
pub const TARGETS: [LearningTarget; 3] = [LearningTarget::Host, LearningTarget::Guest, LearningTarget::Both];

fn run(ds: &PreparedDataset, kind: ModelKind, target: LearningTarget, cfg: &ComparisonConfig) -> Result<RunResult, ExperimentError> {
    let vocab = ds.vocabulary(cfg.vocab_seed)?;
    let spec = TaskSpec { kind, target };
    let samples = |split| -> Result<_, ExperimentError> {
        let s = ds.samples(ds.split_ids(split), &spec, &vocab)?;
        if s.is_empty() && split != SplitName::Validation {
            return Err(ExperimentError::NoSamples { kind, target, split });
        }
        Ok(s)
    };
    let data = TrainData {
        kind,
        vocabulary: vocab.clone(),
        global_stats: ds.global_stats.clone(),
        train: samples(SplitName::Train)?,
        validation: samples(SplitName::Validation)?,
    };
    let config = TrainConfig {
        normalization: ds.method,
        target,
        ..cfg.train.clone()
    };
    let ck = train(&data, &config)?;
    Ok(RunResult {
        kind,
        method: ds.method,
        target,
        best_epoch: ck.best_epoch,
        test: ck.evaluate(&samples(SplitName::Test)?)?,
    })
}

/// Trains one model per table cell. The vector/host runs are shared by both
/// tables. `progress` is called after each run.
pub fn run_comparison(
    cfg: &ComparisonConfig,
    mut progress: impl FnMut(&RunResult),
) -> Result<ComparisonReport, ExperimentError> {
    let corpus = Corpus {
        clips: generate_synthetic_corpus(&cfg.synth),
        rejected: Vec::new(),
    };
    let mut normalization = Vec::new();
    let mut targets = Vec::new();
    for method in NormalizationMethod::ALL {
        let ds = PreparedDataset::prepare(&corpus, method, cfg.split_seed, DEFAULT_RATIOS)?;
        for kind in KINDS {
            let r = run(&ds, kind, LearningTarget::Host, cfg)?;
            progress(&r);
            normalization.push(r);
        }
        if method == NormalizationMethod::Vector {
            for kind in KINDS {
                for target in TARGETS {
                    let r = match target {
                        LearningTarget::Host => normalization
                            .iter()
                            .find(|r| r.kind == kind && r.method == method)
                            .expect("host run done above")
                            .clone(),
                        _ => {
                            let r = run(&ds, kind, target, cfg)?;
                            progress(&r);
                            r
                        }
                    };
                    targets.push(r);
                }
            }
        }
    }
    Ok(ComparisonReport {
        config: cfg.clone(),
        normalization,
        targets,
    })
}

impl ComparisonReport {
    fn cell(&self, kind: ModelKind, method: NormalizationMethod) -> &Metrics {
        &self
            .normalization
            .iter()
            .find(|r| r.kind == kind && r.method == method)
            .expect("every cell is filled")
            .test
    }

    /// Methods ordered from lowest to highest test `S_C` for one model kind.
    /// Ties keep the fixed method order.
    pub fn ranking(&self, kind: ModelKind) -> Vec<NormalizationMethod> {
        let mut m = NormalizationMethod::ALL.to_vec();
        m.sort_by(|a, b| self.cell(kind, *a).s_c.total_cmp(&self.cell(kind, *b).s_c));
        m
    }

    /// Whether vector normalization avoids last place by test `S_C` for
    /// every model kind.
    pub fn vector_not_worst(&self) -> bool {
        KINDS.iter().all(|&k| self.ranking(k)[0] != NormalizationMethod::Vector)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let methods = NormalizationMethod::ALL;
        for (title, pick) in [("L", 0), ("S_C", 1)] {
            let _ = writeln!(s, "Normalization comparison, test {title} (host target)");
            let _ = writeln!(s, "{:<10} | {:>10} {:>10} {:>10}", "model", methods[0].name(), methods[1].name(), methods[2].name());
            for kind in KINDS {
                let v: Vec<String> = methods
                    .iter()
                    .map(|&m| {
                        let c = self.cell(kind, m);
                        format!("{:>10.4}", if pick == 0 { c.l } else { c.s_c })
                    })
                    .collect();
                let _ = writeln!(s, "{:<10} | {}", kind_name(kind), v.join(" "));
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s, "Learning target swap (vector normalization)");
        let _ = writeln!(s, "{:<7} {:<10} | {:>10} {:>10} {:>10}", "metric", "model", "host", "guest", "both");
        for (title, pick) in [("L", 0), ("S_C", 1)] {
            for kind in KINDS {
                let v: Vec<String> = TARGETS
                    .iter()
                    .map(|&t| {
                        let r = self.targets.iter().find(|r| r.kind == kind && r.target == t).expect("filled");
                        format!("{:>10.4}", if pick == 0 { r.test.l } else { r.test.s_c })
                    })
                    .collect();
                let _ = writeln!(s, "{:<7} {:<10} | {}", title, kind_name(kind), v.join(" "));
            }
        }
        let _ = writeln!(s);
        for kind in KINDS {
            let order: Vec<&str> = self.ranking(kind).iter().map(|m| m.name()).collect();
            let _ = writeln!(s, "{} ranking by test S_C, worst first: {}", kind_name(kind), order.join(" < "));
        }
        let _ = writeln!(
            s,
            "L values are distances in each method's own feature space and are not comparable across methods."
        );
        s
    }
}

fn kind_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Listening => "listening",
        ModelKind::Speaking => "speaking",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ComparisonConfig {
        ComparisonConfig {
            synth: SynthConfig {
                motifs: 2,
                clips_per_motif: 12,
                frames_per_clip: 20,
                ..SynthConfig::default()
            },
            train: TrainConfig {
                epochs: 2,
                hidden_size: 4,
                ..TrainConfig::desk()
            },
            ..ComparisonConfig::default()
        }
    }

    #[test]
    fn fills_both_tables_deterministically() {
        let mut calls = 0;
        let a = run_comparison(&tiny(), |_| calls += 1).unwrap();
        // six normalization runs plus guest and both for each kind
        assert_eq!(calls, 10);
        assert_eq!(a.normalization.len(), 6);
        assert_eq!(a.targets.len(), 6);
        for r in a.normalization.iter().chain(&a.targets) {
            assert!(r.test.l.is_finite());
            assert!((-1.0..=1.0).contains(&r.test.s_c));
        }
        let b = run_comparison(&tiny(), |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_table(), b.to_table());
        assert!(a.to_table().contains("Learning target swap"));
    }

    #[test]
    fn ranking_orders_by_similarity() {
        let mut r = run_comparison(&tiny(), |_| {}).unwrap();
        for (i, run) in r.normalization.iter_mut().enumerate() {
            run.test.s_c = match run.method {
                NormalizationMethod::Individual => 0.5,
                NormalizationMethod::Global => 0.7,
                NormalizationMethod::Vector => 0.6 + i as f64 * 1e-3,
            };
        }
        assert_eq!(r.ranking(ModelKind::Speaking)[0], NormalizationMethod::Individual);
        assert!(r.vector_not_worst());
        for run in r.normalization.iter_mut().filter(|x| x.method == NormalizationMethod::Vector) {
            run.test.s_c = 0.1;
        }
        assert!(!r.vector_not_worst());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(serde_json::from_str::<ComparisonConfig>(r#"{"epochs": 3}"#).is_err());
        let c: ComparisonConfig = serde_json::from_str(r#"{"split_seed": 3}"#).unwrap();
        assert_eq!(c.split_seed, 3);
        assert_eq!(c.train.epochs, 300);
    }
}
