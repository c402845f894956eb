use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use gesture_core::data::{
    generate_synthetic_corpus, load_corpus, write_corpus, Corpus, LearningTarget, PreparedDataset, SplitName,
    SynthConfig, TaskSpec, DEFAULT_RATIOS,
};
use gesture_core::experiments::{run_comparison, ComparisonConfig};
use gesture_core::featurize::{embed_tokens, tokenize, MAX_STEPS};
use gesture_core::geometry::{normalize_vector, rotate_frame, validate_shoulder_hypothesis};
use gesture_core::models::{
    load_checkpoint, save_checkpoint, train, ModelCheckpoint, ModelError, ModelKind, NormalizationMethod,
    SimilarityMode, TrainConfig, TrainData,
};
use gesture_core::nn::{grad_check, random_case, CheckCase, LossKind};
use gesture_core::retarget::{
    export_animation, interpolate, read_predictions, subsample_keyframes, unpack_features, write_predictions,
    AnimationTrack, JointLimits, PredictionHeader, RetargetOptions, TrackFormat, PREDICTIONS_FORMAT,
};
use gesture_core::skeleton::{load_frames, SkeletonTopology};

use crate::{usage, CheckFailed, Cli, Command, Global};

pub const DEFAULT_SEED: u64 = 7;
/// gradcheck fails at or above this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Parses a value through its serde name, e.g. `per_step`.
fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.replace('-', "_"))).map_err(|_| format!("invalid value {s:?}"))
}

fn print_out(g: &Global, value: &impl Serialize, text: impl FnOnce() -> String) -> Result<()> {
    if g.json {
        println!("{}", serde_json::to_string(value)?);
    } else {
        print!("{}", text());
    }
    Ok(())
}

fn no_config(g: &Global, cmd: &str) -> Result<()> {
    if g.config.is_some() {
        return usage(format!("--config is not used by {cmd}"));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return usage("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::SynthData(a) => synth_data(g, a),
        Command::Preprocess(a) => preprocess(g, a),
        Command::Validate(a) => validate(g, a),
        Command::Train(a) => cmd_train(g, a),
        Command::Eval(a) => eval(g, a),
        Command::Predict(a) => predict(g, a),
        Command::Retarget(a) => retarget(g, a),
        Command::Gradcheck(a) => gradcheck(g, a),
        Command::Compare(a) => compare(g, a),
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; created, but its parent must exist
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub motifs: usize,
    /// Total clips; must be a multiple of --motifs
    #[arg(long, default_value_t = 32)]
    pub clips: usize,
    #[arg(long, default_value_t = 70)]
    pub frames: usize,
    /// Scale of per-clip perturbations and per-frame jitter
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
}

fn synth_data(g: &Global, a: &SynthArgs) -> Result<()> {
    no_config(g, "synth-data")?;
    if a.motifs == 0 || a.clips == 0 || a.clips % a.motifs != 0 {
        return usage("--clips must be a positive multiple of --motifs");
    }
    if a.frames == 0 {
        return usage("--frames must be positive");
    }
    if !(a.noise.is_finite() && a.noise >= 0.0) {
        return usage("--noise must be finite and non-negative");
    }
    let cfg = SynthConfig {
        motifs: a.motifs,
        clips_per_motif: a.clips / a.motifs,
        frames_per_clip: a.frames,
        noise: a.noise,
        seed: g.seed.unwrap_or(DEFAULT_SEED),
    };
    let clips = generate_synthetic_corpus(&cfg);
    write_corpus(&a.out, &clips).with_context(|| format!("writing corpus to {}", a.out.display()))?;
    let summary = json!({
        "out": a.out,
        "clips": clips.len(),
        "motifs": cfg.motifs,
        "frames_per_clip": cfg.frames_per_clip,
        "noise": cfg.noise,
        "seed": cfg.seed,
    });
    print_out(g, &summary, || {
        format!(
            "wrote {} clips ({} motifs, seed {}) to {}\n",
            clips.len(),
            cfg.motifs,
            cfg.seed,
            a.out.display()
        )
    })
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Corpus directory or manifest file
    #[arg(long)]
    pub corpus: PathBuf,
    /// Where to write the prepared dataset
    #[arg(long)]
    pub out: PathBuf,
    /// individual | global | vector
    #[arg(long, default_value = "vector", value_parser = parse_enum::<NormalizationMethod>)]
    pub method: NormalizationMethod,
    /// Train, validation and test fractions
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = DEFAULT_RATIOS)]
    pub ratios: Vec<f64>,
}

fn provenance(m: NormalizationMethod) -> &'static str {
    match m {
        NormalizationMethod::Individual => "rotate, then per-frame min-max scaling",
        NormalizationMethod::Global => "rotate, then min-max scaling with training-split statistics",
        NormalizationMethod::Vector => "rotate, then unit bone directions from the belly",
    }
}

fn preprocess(g: &Global, a: &PreprocessArgs) -> Result<()> {
    no_config(g, "preprocess")?;
    let ratios: [f64; 3] = a.ratios.clone().try_into().map_err(|_| crate::UsageError("--ratios takes three values".into()))?;
    let corpus = load_corpus(&a.corpus).with_context(|| format!("loading {}", a.corpus.display()))?;
    let ds = PreparedDataset::prepare(&corpus, a.method, g.seed.unwrap_or(DEFAULT_SEED), ratios)?;
    ds.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let report = json!({
        "out": a.out,
        "method": a.method,
        "provenance": provenance(a.method),
        "clips": ds.clips.len(),
        "rejected": ds.rejected,
        "skipped": ds.skipped,
        "split": {"train": ds.split.train.len(), "validation": ds.split.validation.len(), "test": ds.split.test.len(), "seed": ds.split.seed},
        "shoulder_fraction": ds.shoulder_fraction,
        "frames": ds.flags.frames,
        "rotation_flagged": ds.flags.rotation_flagged,
        "axis_flagged": ds.flags.axis_flagged,
    });
    print_out(g, &report, || {
        let mut s = format!(
            "{} clips prepared with {} normalization ({})\n",
            ds.clips.len(),
            a.method.name(),
            provenance(a.method)
        );
        s += &format!(
            "split: {} train / {} validation / {} test (seed {})\n",
            ds.split.train.len(),
            ds.split.validation.len(),
            ds.split.test.len(),
            ds.split.seed
        );
        s += &format!("shoulder hypothesis holds on {:.4} of frames\n", ds.shoulder_fraction);
        s += &format!(
            "flagged frames: {} rotation, {} axis (of {})\n",
            ds.flags.rotation_flagged, ds.flags.axis_flagged, ds.flags.frames
        );
        for r in ds.rejected.iter().chain(&ds.skipped) {
            s += &format!("skipped {}: {}\n", r.id, r.reason);
        }
        s
    })
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Corpus directory or manifest file
    #[arg(long, conflicts_with = "frames", required_unless_present = "frames")]
    pub corpus: Option<PathBuf>,
    /// A single keypoint JSON-lines file
    #[arg(long)]
    pub frames: Option<PathBuf>,
}

fn validate(g: &Global, a: &ValidateArgs) -> Result<()> {
    no_config(g, "validate")?;
    if let Some(path) = &a.frames {
        let frames = load_frames(path)?;
        let fraction = validate_shoulder_hypothesis(&frames)?;
        let report = json!({"frames": frames.len(), "shoulder_fraction": fraction});
        return print_out(g, &report, || {
            format!("{} valid frames; shoulder hypothesis holds on {fraction:.4}\n", frames.len())
        });
    }
    let path = a.corpus.as_ref().expect("clap requires one input");
    let Corpus { clips, rejected } = load_corpus(path)?;
    let report = json!({"valid": clips.len(), "rejected": rejected});
    print_out(g, &report, || {
        let mut s = format!("{} valid clips, {} rejected\n", clips.len(), rejected.len());
        for r in &rejected {
            s += &format!("rejected {}: {}\n", r.id, r.reason);
        }
        s
    })
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared dataset from `preprocess`
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write
    #[arg(long)]
    pub out: PathBuf,
    /// listening | speaking
    #[arg(long, default_value = "speaking", value_parser = parse_enum::<ModelKind>)]
    pub kind: ModelKind,
    /// host | guest | both [default: host]
    #[arg(long, value_parser = parse_enum::<LearningTarget>)]
    pub target: Option<LearningTarget>,
    /// Starting point before the config file and flags: desk or full
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// norm | squared
    #[arg(long, value_parser = parse_enum::<LossKind>)]
    pub loss: Option<LossKind>,
    /// Feed the decoder its own predictions during training
    #[arg(long)]
    pub free_running: bool,
    #[arg(long)]
    pub train_embeddings: bool,
    /// Stop once an epoch's mean training loss falls below this
    #[arg(long)]
    pub target_loss: Option<f64>,
    /// per-step | per-sequence
    #[arg(long, value_parser = parse_enum::<SimilarityMode>)]
    pub similarity: Option<SimilarityMode>,
}

/// Preset, then config file keys, then flags.
fn train_config(g: &Global, a: &TrainArgs, method: NormalizationMethod) -> Result<TrainConfig> {
    let preset = match a.preset.as_str() {
        "desk" => TrainConfig::desk(),
        "full" => TrainConfig::default(),
        other => return usage(format!("unknown preset {other:?}; expected desk or full")),
    };
    let preset = TrainConfig {
        seed: DEFAULT_SEED,
        ..preset
    };
    let mut value = serde_json::to_value(&preset)?;
    let mut file_method = false;
    if let Some(path) = &g.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let Value::Object(map) = file else {
            return usage("config file must hold a JSON object");
        };
        file_method = map.contains_key("normalization");
        for (k, v) in map {
            value[k] = v;
        }
    }
    let mut cfg: TrainConfig = match serde_json::from_value(value) {
        Ok(c) => c,
        Err(e) => return usage(format!("invalid config: {e}")),
    };
    if file_method && cfg.normalization != method {
        return usage(format!(
            "config asks for {} normalization but the dataset is {}",
            cfg.normalization.name(),
            method.name()
        ));
    }
    cfg.normalization = method;
    macro_rules! set {
        ($field:ident, $v:expr) => {
            if let Some(v) = $v {
                cfg.$field = v;
            }
        };
    }
    set!(seed, g.seed);
    set!(epochs, a.epochs);
    set!(batch_size, a.batch_size);
    set!(lr, a.lr);
    set!(hidden_size, a.hidden);
    set!(loss, a.loss);
    set!(similarity, a.similarity);
    set!(target, a.target);
    if a.free_running {
        cfg.teacher_forcing = false;
    }
    if a.train_embeddings {
        cfg.train_embeddings = true;
    }
    if a.target_loss.is_some() {
        cfg.target_loss = a.target_loss;
    }
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    Ok(cfg)
}

fn cmd_train(g: &Global, a: &TrainArgs) -> Result<()> {
    let ds = PreparedDataset::load(&a.data)?;
    let cfg = train_config(g, a, ds.method)?;
    let vocab = ds.vocabulary(cfg.seed)?;
    let spec = TaskSpec {
        kind: a.kind,
        target: cfg.target,
    };
    let train_samples = ds.samples(&ds.split.train, &spec, &vocab)?;
    let validation = ds.samples(&ds.split.validation, &spec, &vocab)?;
    if g.verbose {
        eprintln!(
            "training {:?} on {} samples ({} validation), {} epochs",
            a.kind,
            train_samples.len(),
            validation.len(),
            cfg.epochs
        );
    }
    let data = TrainData {
        kind: a.kind,
        vocabulary: vocab,
        global_stats: ds.global_stats.clone(),
        train: train_samples,
        validation,
    };
    let ck = match train(&data, &cfg) {
        Ok(ck) => ck,
        Err(ModelError::Diverged { epoch, reason, .. }) => {
            bail!("training diverged at epoch {epoch}: {reason}; nothing was written")
        }
        Err(e) => return Err(e.into()),
    };
    save_checkpoint(&ck, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let last = ck.history.last().expect("at least one epoch");
    let best = ck.history.iter().find(|r| r.epoch == ck.best_epoch);
    let summary = json!({
        "out": a.out,
        "kind": a.kind,
        "target": cfg.target,
        "normalization": cfg.normalization,
        "seed": cfg.seed,
        "epochs_run": ck.history.len(),
        "best_epoch": ck.best_epoch,
        "final_train_loss": last.train_loss,
        "best_train_loss": best.map(|r| r.train_loss),
        "best_val_loss": best.and_then(|r| r.val_loss),
        "parameters": ck.net.parameter_count(),
    });
    print_out(g, &summary, || {
        format!(
            "trained {} epochs; best epoch {} (val L {}); final train loss {:.6}\nwrote {}\n",
            ck.history.len(),
            ck.best_epoch,
            best.and_then(|r| r.val_loss).map_or("n/a".into(), |v| format!("{v:.6}")),
            last.train_loss,
            a.out.display()
        )
    })
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Prepared dataset; must use the checkpoint's normalization
    #[arg(long)]
    pub data: PathBuf,
    /// train | validation | test
    #[arg(long, default_value = "test", value_parser = parse_enum::<SplitName>)]
    pub split: SplitName,
    /// Also report each bone separately (vector normalization only)
    #[arg(long)]
    pub per_bone: bool,
    /// Also write the metrics JSON here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn check_dataset(ck: &ModelCheckpoint, ds: &PreparedDataset) -> Result<()> {
    if ds.method != ck.normalization() {
        bail!(
            "the checkpoint uses {} normalization but the dataset is {}",
            ck.normalization().name(),
            ds.method.name()
        );
    }
    if ds.global_stats != ck.global_stats {
        bail!("the dataset's normalization statistics differ from the checkpoint's");
    }
    Ok(())
}

fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    no_config(g, "eval")?;
    let ck = load_checkpoint(&a.model)?;
    let ds = PreparedDataset::load(&a.data)?;
    check_dataset(&ck, &ds)?;
    let spec = TaskSpec {
        kind: ck.kind,
        target: ck.config.target,
    };
    let samples = ds.samples(ds.split_ids(a.split), &spec, &ck.vocabulary)?;
    let value = if a.per_bone {
        serde_json::to_value(ck.report(&samples)?)?
    } else {
        serde_json::to_value(ck.evaluate(&samples)?)?
    };
    if a.per_bone && ck.normalization() != NormalizationMethod::Vector {
        bail!(ModelError::NotVectorNormalized(ck.normalization()));
    }
    let text = serde_json::to_string(&value)?;
    if let Some(out) = &a.out {
        gesture_core::io::atomic_write(out, |f| {
            use std::io::Write;
            writeln!(f, "{text}")
        })
        .with_context(|| format!("writing {}", out.display()))?;
    }
    println!("{text}");
    if a.per_bone && !g.json {
        let report = ck.report(&samples)?;
        println!("{:<28} {:>7} {:>7}", "keypoint vector", "L", "S_C");
        for b in &report.per_bone {
            println!("{:<28} {:>7.3} {:>7.3}", b.bone.bone_label(), b.l, b.s_c);
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Words spoken; alternatively take text and motion from --data/--clip
    #[arg(long, conflicts_with_all = ["data", "clip"])]
    pub text: Option<String>,
    /// Speaker keypoint frames for a listening model
    #[arg(long, requires = "text")]
    pub motion: Option<PathBuf>,
    #[arg(long, requires = "clip")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub clip: Option<String>,
    /// Steps to decode, each ten frames
    #[arg(long, default_value_t = MAX_STEPS)]
    pub steps: usize,
    /// Predictions file to write
    #[arg(long)]
    pub out: PathBuf,
}

fn predict(g: &Global, a: &PredictArgs) -> Result<()> {
    no_config(g, "predict")?;
    if a.steps == 0 || a.steps > MAX_STEPS {
        return usage(format!("--steps must be between 1 and {MAX_STEPS}"));
    }
    let ck = load_checkpoint(&a.model)?;
    let (text, tokens, motion) = match (&a.text, &a.data, &a.clip) {
        (Some(text), _, _) => {
            let tokens = tokenize(text);
            let motion = match &a.motion {
                Some(path) => {
                    let mut pre = gesture_core::data::Preprocessor::new(ck.normalization());
                    pre.global_stats = ck.global_stats.clone();
                    Some(pre.featurize_motion("input", &load_frames(path)?)?.0)
                }
                None => None,
            };
            (text.clone(), tokens, motion)
        }
        (None, Some(data), Some(id)) => {
            let ds = PreparedDataset::load(data)?;
            check_dataset(&ck, &ds)?;
            let Some(c) = ds.clips.iter().find(|c| &c.id == id) else {
                bail!("clip {id} is not in {}", data.display());
            };
            let motion = match &c.speaker {
                Some(v) => Some(gesture_core::featurize::pad_or_truncate(v.clone(), MAX_STEPS)?),
                None => None,
            };
            (c.tokens.join(" "), c.tokens.clone(), motion)
        }
        _ => return usage("give either --text or --data with --clip"),
    };
    if tokens.is_empty() {
        return usage("the text has no tokens");
    }
    let motion = if ck.kind.has_motion_input() {
        match motion {
            Some(m) => Some(m),
            None => return usage("a listening model needs speaker motion (--motion or --data/--clip)"),
        }
    } else {
        None
    };
    let tokens: Vec<String> = tokens.into_iter().take(MAX_STEPS).collect();
    let embedded = embed_tokens(&tokens, &ck.vocabulary);
    let steps = ck.net.predict(&embedded, motion.as_ref(), a.steps)?;
    let header = PredictionHeader::new(ck.kind, ck.normalization(), &text, steps.len());
    write_predictions(&a.out, &header, &steps).with_context(|| format!("writing {}", a.out.display()))?;
    let summary = json!({"out": a.out, "kind": ck.kind, "normalization": ck.normalization(), "text": text, "steps": steps.len()});
    print_out(g, &summary, || format!("wrote {} predicted steps to {}\n", steps.len(), a.out.display()))
}

#[derive(Debug, Args)]
pub struct RetargetArgs {
    /// Predictions file from `predict`, or keypoint frames
    #[arg(long)]
    pub input: PathBuf,
    /// Track to write
    #[arg(long)]
    pub out: PathBuf,
    /// bone-json | angle-json
    #[arg(long, default_value = "bone-json")]
    pub format: TrackFormat,
    /// Keep every n-th frame as a keyframe (plus the last)
    #[arg(long, default_value_t = 10)]
    pub stride: usize,
    /// Frames per keyframe gap after interpolation
    #[arg(long, default_value_t = 10)]
    pub substeps: usize,
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    /// Multiplies every display length of the default skeleton
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// JSON {"max_angle": {"l_elbow": 1.5, ...}} in radians
    #[arg(long)]
    pub limits: Option<PathBuf>,
}

fn is_predictions(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    Ok(serde_json::from_str::<Value>(first)
        .ok()
        .and_then(|v| v.get("format").and_then(|f| f.as_str()).map(|f| f == PREDICTIONS_FORMAT))
        .unwrap_or(false))
}

fn retarget(g: &Global, a: &RetargetArgs) -> Result<()> {
    no_config(g, "retarget")?;
    if a.stride == 0 || a.substeps == 0 {
        return usage("--stride and --substeps must be at least 1");
    }
    if !(a.fps.is_finite() && a.fps > 0.0) {
        return usage("--fps must be positive");
    }
    if !(a.scale.is_finite() && a.scale > 0.0) {
        return usage("--scale must be positive");
    }
    let skeleton = SkeletonTopology::default().scaled(a.scale)?;
    let limits: JointLimits = match &a.limits {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => JointLimits::default(),
    };
    let frames = if is_predictions(&a.input)? {
        let (header, steps) = read_predictions(&a.input)?;
        if header.normalization != NormalizationMethod::Vector {
            bail!(
                "only vector-normalized predictions can be retargeted, {} has {}",
                a.input.display(),
                header.normalization.name()
            );
        }
        unpack_features(&steps)?
    } else {
        let topo = SkeletonTopology::default();
        load_frames(&a.input)?
            .iter()
            .map(|f| normalize_vector(&rotate_frame(f), &topo))
            .collect::<Result<Vec<_>, _>>()?
    };
    let opts = RetargetOptions {
        stride: a.stride,
        substeps: a.substeps,
        fps: a.fps,
    };
    let keys = subsample_keyframes(&frames, opts.stride)?;
    let antiparallel: usize = keys
        .windows(2)
        .map(|w| gesture_core::retarget::angle_between(&w[0], &w[1]).antiparallel.len())
        .sum();
    let dense = interpolate(&keys, opts.substeps)?;
    let track = AnimationTrack::from_bones(&dense, skeleton, opts.fps, &limits)?;
    export_animation(&track, &a.out, a.format).with_context(|| format!("writing {}", a.out.display()))?;
    let duration = (track.len() - 1) as f64 / track.fps;
    let summary = json!({
        "out": a.out,
        "format": a.format.name(),
        "input_frames": frames.len(),
        "keyframes": keys.len(),
        "frames": track.len(),
        "duration_s": duration,
        "antiparallel_bones": antiparallel,
    });
    print_out(g, &summary, || {
        format!(
            "{} input frames -> {} keyframes -> {} frames ({duration:.2} s); wrote {} track to {}\n",
            frames.len(),
            keys.len(),
            track.len(),
            a.format.name(),
            a.out.display()
        )
    })
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// listening | speaking | both
    #[arg(long, default_value = "both")]
    pub kind: String,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub text_steps: usize,
    /// Used by the listening model only
    #[arg(long, default_value_t = 2)]
    pub motion_steps: usize,
    #[arg(long, default_value_t = 2)]
    pub decoder_steps: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// norm | squared
    #[arg(long, default_value = "norm", value_parser = parse_enum::<LossKind>)]
    pub loss: LossKind,
    #[arg(long)]
    pub free_running: bool,
}

fn gradcheck(g: &Global, a: &GradcheckArgs) -> Result<()> {
    no_config(g, "gradcheck")?;
    let kinds = match a.kind.as_str() {
        "both" => vec![ModelKind::Listening, ModelKind::Speaking],
        k => vec![parse_enum::<ModelKind>(k).map_err(|e| crate::UsageError(format!("--kind: {e}")))?],
    };
    if a.hidden == 0 || a.text_steps == 0 || a.decoder_steps == 0 || a.text_steps > MAX_STEPS || a.decoder_steps > MAX_STEPS {
        return usage(format!("--hidden must be positive and step counts between 1 and {MAX_STEPS}"));
    }
    if kinds.contains(&ModelKind::Listening) && (a.motion_steps == 0 || a.motion_steps > MAX_STEPS) {
        return usage(format!("--motion-steps must be between 1 and {MAX_STEPS}"));
    }
    if !(a.eps.is_finite() && a.eps > 0.0) {
        return usage("--eps must be positive");
    }
    let seed = g.seed.unwrap_or(DEFAULT_SEED);
    let mut results = Vec::new();
    for kind in kinds {
        let case = CheckCase {
            hidden: a.hidden,
            text_steps: a.text_steps,
            motion_steps: if kind.has_motion_input() { a.motion_steps } else { 0 },
            decoder_steps: a.decoder_steps,
            seed,
        };
        let (model, ex) = random_case(&case);
        let r = grad_check(&model, &ex, a.loss, !a.free_running, a.eps)?;
        results.push(json!({
            "kind": kind,
            "max_rel_error": r.max_rel_error,
            "worst": r.worst,
            "checked": r.checked,
            "pass": r.max_rel_error < GRADCHECK_TOLERANCE,
        }));
    }
    let pass = results.iter().all(|r| r["pass"] == true);
    let report = json!({"eps": a.eps, "tolerance": GRADCHECK_TOLERANCE, "seed": seed, "pass": pass, "models": results});
    print_out(g, &report, || {
        let mut s = String::new();
        for r in &results {
            s += &format!(
                "{}: max relative error {:.3e} at {} over {} values -> {}\n",
                r["kind"].as_str().unwrap_or("?"),
                r["max_rel_error"].as_f64().unwrap_or(f64::NAN),
                r["worst"].as_str().unwrap_or("?"),
                r["checked"],
                if r["pass"] == true { "ok" } else { "FAILED" }
            );
        }
        s
    })?;
    if !pass {
        return Err(CheckFailed(format!("gradient check exceeded {GRADCHECK_TOLERANCE:e}")).into());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub motifs: Option<usize>,
    #[arg(long)]
    pub clips_per_motif: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Also write the full report as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn compare(g: &Global, a: &CompareArgs) -> Result<()> {
    let mut cfg = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            match serde_json::from_str::<ComparisonConfig>(&text) {
                Ok(c) => c,
                Err(e) => return usage(format!("invalid config: {e}")),
            }
        }
        None => ComparisonConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.synth.seed = s;
        cfg.split_seed = s;
        cfg.vocab_seed = s;
        cfg.train.seed = s;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.motifs {
        cfg.synth.motifs = v;
    }
    if let Some(v) = a.clips_per_motif {
        cfg.synth.clips_per_motif = v;
    }
    if let Some(v) = a.hidden {
        cfg.train.hidden_size = v;
    }
    if cfg.synth.motifs == 0 || cfg.synth.clips_per_motif == 0 {
        return usage("--motifs and --clips-per-motif must be positive");
    }
    if let Err(e) = cfg.train.validate() {
        return usage(e.to_string());
    }
    let verbose = g.verbose;
    let report = run_comparison(&cfg, |r| {
        if verbose {
            eprintln!(
                "{:?} / {} / {:?}: L {:.4}, S_C {:.4}",
                r.kind,
                r.method.name(),
                r.target,
                r.test.l,
                r.test.s_c
            );
        }
    })?;
    let value = json!({"report": report, "vector_not_worst": report.vector_not_worst()});
    if let Some(out) = &a.out {
        let text = serde_json::to_string_pretty(&value)?;
        gesture_core::io::atomic_write(out, |f| {
            use std::io::Write;
            writeln!(f, "{text}")
        })
        .with_context(|| format!("writing {}", out.display()))?;
    }
    print_out(g, &value, || {
        format!(
            "{}vector normalization is {}the worst of the three by test S_C\n",
            report.to_table(),
            if report.vector_not_worst() { "not " } else { "" }
        )
    })
}
