use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::featurize::{flatten_bone_frame, pack_frames, FeatureError, FEATURE_DIM, FRAME_DIM, GROUP_SIZE};
use crate::geometry::{add, cross, dot, norm, scale, sub, BoneFrame, GeometryError};
use crate::io::atomic_write;
use crate::skeleton::{KeypointFrame, KeypointId, SkeletonTopology, Vec3, NUM_KEYPOINTS};

pub const DEFAULT_FPS: f64 = 25.0;
pub const DEFAULT_STRIDE: usize = 10;
pub const DEFAULT_SUBSTEPS: usize = 10;
/// Predicted bones shorter than this cannot be given a direction.
pub const MIN_BONE_NORM: f64 = 1e-9;
const TRACK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RetargetError {
    #[error("step {step}, frame {frame}: predicted bone {bone} has zero length")]
    ZeroBone { step: usize, frame: usize, bone: KeypointId },
    #[error("step {step} has {len} values, expected {FEATURE_DIM}")]
    StepWidth { step: usize, len: usize },
    #[error("no frames to retarget")]
    Empty,
    #[error("{0} must be at least 1")]
    ZeroParameter(&'static str),
    #[error("invalid frame rate {0}")]
    BadFps(f64),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Splits each 360-D step into its ten frames and rescales every bone to
/// unit length. Model outputs are unconstrained, so this is where they are
/// projected back onto valid directions.
pub fn unpack_features(steps: &[Vec<f64>]) -> Result<Vec<BoneFrame>, RetargetError> {
    let mut out = Vec::with_capacity(steps.len() * GROUP_SIZE);
    for (step, v) in steps.iter().enumerate() {
        if v.len() != FEATURE_DIM {
            return Err(RetargetError::StepWidth { step, len: v.len() });
        }
        for (frame, chunk) in v.chunks_exact(FRAME_DIM).enumerate() {
            let mut dirs = [[0.0; 3]; NUM_KEYPOINTS];
            for (k, d) in dirs.iter_mut().enumerate() {
                d.copy_from_slice(&chunk[3 * k..3 * k + 3]);
            }
            let bones = BoneFrame::from_raw(dirs, MIN_BONE_NORM).map_err(|e| match e {
                GeometryError::ZeroBone(bone) => RetargetError::ZeroBone { step, frame, bone },
                other => other.into(),
            })?;
            out.push(bones);
        }
    }
    Ok(out)
}

/// Inverse of [`unpack_features`] for frames that are already unit length.
pub fn pack_bone_frames(frames: &[BoneFrame]) -> Vec<Vec<f64>> {
    let flat: Vec<[f64; FRAME_DIM]> = frames.iter().map(flatten_bone_frame).collect();
    pack_frames(&flat, GROUP_SIZE)
}

/// Indices `0, stride, 2*stride, ...` plus the last frame if it was skipped.
pub fn keyframe_indices(len: usize, stride: usize) -> Result<Vec<usize>, RetargetError> {
    if stride == 0 {
        return Err(RetargetError::ZeroParameter("stride"));
    }
    if len == 0 {
        return Err(RetargetError::Empty);
    }
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if idx.last() != Some(&(len - 1)) {
        idx.push(len - 1);
    }
    Ok(idx)
}

pub fn subsample_keyframes<T: Clone>(frames: &[T], stride: usize) -> Result<Vec<T>, RetargetError> {
    Ok(keyframe_indices(frames.len(), stride)?
        .into_iter()
        .map(|i| frames[i].clone())
        .collect())
}

/// Forward kinematics: the belly sits at the origin and each child is its
/// parent plus the bone direction times the display length.
pub fn align_to_skeleton(bones: &BoneFrame, skeleton: &SkeletonTopology) -> KeypointFrame {
    let mut pts = [[0.0; 3]; NUM_KEYPOINTS];
    for (parent, child) in skeleton.edges() {
        pts[child.index()] = add(pts[parent.index()], scale(bones.get(child), skeleton.length(child)));
    }
    KeypointFrame::new(pts).expect("unit bones and finite lengths give finite positions")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle {
    pub axis: Vec3,
    pub angle: f64,
}

impl AxisAngle {
    pub const IDENTITY: AxisAngle = AxisAngle {
        axis: [0.0, 0.0, 1.0],
        angle: 0.0,
    };

    /// Rodrigues' rotation of `v`.
    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let (s, c) = self.angle.sin_cos();
        let k = self.axis;
        let kv = cross(k, v);
        let kdv = dot(k, v);
        [0, 1, 2].map(|i| v[i] * c + kv[i] * s + k[i] * kdv * (1.0 - c))
    }

    pub fn scaled(&self, t: f64) -> AxisAngle {
        AxisAngle {
            axis: self.axis,
            angle: self.angle * t,
        }
    }
}

/// Unit axis orthogonal to `v`, built from the coordinate axis least aligned
/// with it. Ties go to the lowest index so the choice is reproducible.
fn orthogonal_axis(v: Vec3) -> Vec3 {
    let mut best = 0;
    for i in 1..3 {
        if v[i].abs() < v[best].abs() {
            best = i;
        }
    }
    let mut e = [0.0; 3];
    e[best] = 1.0;
    let w = sub(e, scale(v, dot(e, v) / dot(v, v)));
    scale(w, 1.0 / norm(w))
}

/// Shortest rotation taking unit `a` onto unit `b`. The flag is set when the
/// two are antiparallel and the axis had to be chosen by policy.
pub fn rotation_between(a: Vec3, b: Vec3) -> (AxisAngle, bool) {
    let angle = dot(a, b).clamp(-1.0, 1.0).acos();
    let c = cross(a, b);
    let n = norm(c);
    if n > 1e-12 {
        return (
            AxisAngle {
                axis: scale(c, 1.0 / n),
                angle,
            },
            false,
        );
    }
    if dot(a, b) > 0.0 {
        (AxisAngle::IDENTITY, false)
    } else {
        (
            AxisAngle {
                axis: orthogonal_axis(a),
                angle: std::f64::consts::PI,
            },
            true,
        )
    }
}

/// Per-bone rotations taking one keyframe onto the next.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneDeltas {
    /// Indexed by child keypoint; the belly entry is the identity.
    pub rotations: [AxisAngle; NUM_KEYPOINTS],
    pub antiparallel: Vec<KeypointId>,
}

pub fn angle_between(key_a: &BoneFrame, key_b: &BoneFrame) -> BoneDeltas {
    let mut rotations = [AxisAngle::IDENTITY; NUM_KEYPOINTS];
    let mut antiparallel = Vec::new();
    for bone in KeypointId::BONES {
        let (r, flagged) = rotation_between(key_a.get(bone), key_b.get(bone));
        rotations[bone.index()] = r;
        if flagged {
            antiparallel.push(bone);
        }
    }
    BoneDeltas { rotations, antiparallel }
}

/// Direction a bone is measured against: its parent bone, or straight up for
/// bones hanging off the belly.
fn reference_dir(bones: &BoneFrame, bone: KeypointId) -> Vec3 {
    match bone.parent() {
        Some(p) if p != KeypointId::Belly => bones.get(p),
        _ => [0.0, 0.0, 1.0],
    }
}

/// Joint rotations relative to the parent bone at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAngleFrame {
    pub time: f64,
    /// Indexed by child keypoint; the belly entry is the identity.
    pub joints: [AxisAngle; NUM_KEYPOINTS],
}

impl JointAngleFrame {
    pub fn from_bones(time: f64, bones: &BoneFrame) -> Self {
        let mut joints = [AxisAngle::IDENTITY; NUM_KEYPOINTS];
        for bone in KeypointId::BONES {
            joints[bone.index()] = rotation_between(reference_dir(bones, bone), bones.get(bone)).0;
        }
        Self { time, joints }
    }

    /// Rebuilds bone directions by applying each joint to its reference,
    /// parents first.
    pub fn to_bones(&self) -> Result<BoneFrame, GeometryError> {
        let mut dirs = [[0.0; 3]; NUM_KEYPOINTS];
        for (_, child) in SkeletonTopology::default().edges() {
            let reference = match child.parent() {
                Some(p) if p != KeypointId::Belly => dirs[p.index()],
                _ => [0.0, 0.0, 1.0],
            };
            let v = self.joints[child.index()].rotate(reference);
            dirs[child.index()] = scale(v, 1.0 / norm(v));
        }
        BoneFrame::new(dirs)
    }
}

/// Optional per-joint caps on the rotation angle, in radians. Empty by
/// default; robot-specific limits are supplied by the caller.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimits {
    pub max_angle: BTreeMap<KeypointId, f64>,
}

impl JointLimits {
    pub fn is_empty(&self) -> bool {
        self.max_angle.is_empty()
    }

    pub fn clamp(&self, frame: &mut JointAngleFrame) {
        for (&bone, &limit) in &self.max_angle {
            let j = &mut frame.joints[bone.index()];
            if j.angle > limit {
                j.angle = limit.max(0.0);
            }
        }
    }
}

/// One posed frame: bone directions, their joint angles and FK positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AnimationFrame {
    pub bones: BoneFrame,
    pub joints: JointAngleFrame,
    pub positions: KeypointFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnimationTrack {
    pub fps: f64,
    pub skeleton: SkeletonTopology,
    pub frames: Vec<AnimationFrame>,
}

impl AnimationTrack {
    /// Frame `i` is stamped `i / fps`. When limits are given, clamped joints
    /// are turned back into bones so the three views stay consistent.
    pub fn from_bones(
        bones: &[BoneFrame],
        skeleton: SkeletonTopology,
        fps: f64,
        limits: &JointLimits,
    ) -> Result<Self, RetargetError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(RetargetError::BadFps(fps));
        }
        if bones.is_empty() {
            return Err(RetargetError::Empty);
        }
        let mut frames = Vec::with_capacity(bones.len());
        for (i, b) in bones.iter().enumerate() {
            let mut joints = JointAngleFrame::from_bones(i as f64 / fps, b);
            let b = if limits.is_empty() {
                *b
            } else {
                limits.clamp(&mut joints);
                joints.to_bones()?
            };
            frames.push(AnimationFrame {
                bones: b,
                positions: align_to_skeleton(&b, &skeleton),
                joints,
            });
        }
        Ok(Self { fps, skeleton, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn bones(&self) -> Vec<BoneFrame> {
        self.frames.iter().map(|f| f.bones).collect()
    }
}

/// Fills each gap between consecutive keyframes with `substeps - 1` frames.
/// Every bone turns about its own fixed axis at constant angular speed, so
/// intermediate bones stay unit length and each keyframe is hit exactly.
pub fn interpolate(keyframes: &[BoneFrame], substeps: usize) -> Result<Vec<BoneFrame>, RetargetError> {
    if substeps == 0 {
        return Err(RetargetError::ZeroParameter("substeps"));
    }
    let Some(last) = keyframes.last() else {
        return Err(RetargetError::Empty);
    };
    let mut out = Vec::with_capacity((keyframes.len() - 1) * substeps + 1);
    for pair in keyframes.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let deltas = angle_between(a, b);
        out.push(*a);
        for k in 1..substeps {
            let t = k as f64 / substeps as f64;
            let mut dirs = [[0.0; 3]; NUM_KEYPOINTS];
            for bone in KeypointId::BONES {
                dirs[bone.index()] = deltas.rotations[bone.index()].scaled(t).rotate(a.get(bone));
            }
            out.push(BoneFrame::from_raw(dirs, MIN_BONE_NORM)?);
        }
    }
    out.push(*last);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetargetOptions {
    pub stride: usize,
    pub substeps: usize,
    pub fps: f64,
}

impl Default for RetargetOptions {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
            substeps: DEFAULT_SUBSTEPS,
            fps: DEFAULT_FPS,
        }
    }
}

/// Full pipeline from predicted 360-D steps to a posed track.
pub fn retarget_steps(
    steps: &[Vec<f64>],
    skeleton: SkeletonTopology,
    opts: RetargetOptions,
    limits: &JointLimits,
) -> Result<AnimationTrack, RetargetError> {
    let frames = unpack_features(steps)?;
    let keys = subsample_keyframes(&frames, opts.stride)?;
    let dense = interpolate(&keys, opts.substeps)?;
    AnimationTrack::from_bones(&dense, skeleton, opts.fps, limits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackFormat {
    BoneJson,
    AngleJson,
}

impl TrackFormat {
    pub fn name(self) -> &'static str {
        match self {
            TrackFormat::BoneJson => "bone-json",
            TrackFormat::AngleJson => "angle-json",
        }
    }
}

impl std::str::FromStr for TrackFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bone-json" => Ok(TrackFormat::BoneJson),
            "angle-json" => Ok(TrackFormat::AngleJson),
            _ => Err(format!("unknown track format {s:?}; expected bone-json or angle-json")),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackHeader {
    format: TrackFormat,
    version: u32,
    fps: f64,
    frames: usize,
    skeleton: SkeletonTopology,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoneRecord {
    frame: usize,
    t: f64,
    bones: BTreeMap<KeypointId, Vec3>,
    positions: BTreeMap<KeypointId, Vec3>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AngleRecord {
    frame: usize,
    t: f64,
    joints: BTreeMap<KeypointId, AxisAngle>,
}

/// Writes a header line followed by one JSON record per frame.
pub fn export_animation(track: &AnimationTrack, path: &Path, format: TrackFormat) -> Result<(), RetargetError> {
    if track.is_empty() {
        return Err(RetargetError::Empty);
    }
    let header = TrackHeader {
        format,
        version: TRACK_FORMAT_VERSION,
        fps: track.fps,
        frames: track.len(),
        skeleton: track.skeleton.clone(),
    };
    let mut lines = vec![serde_json::to_string(&header).map_err(std::io::Error::other)?];
    for (i, f) in track.frames.iter().enumerate() {
        let line = match format {
            TrackFormat::BoneJson => serde_json::to_string(&BoneRecord {
                frame: i,
                t: f.joints.time,
                bones: KeypointId::BONES.iter().map(|&b| (b, f.bones.get(b))).collect(),
                positions: KeypointId::ALL.iter().map(|&k| (k, f.positions.get(k))).collect(),
            }),
            TrackFormat::AngleJson => serde_json::to_string(&AngleRecord {
                frame: i,
                t: f.joints.time,
                joints: KeypointId::BONES.iter().map(|&b| (b, f.joints.joints[b.index()])).collect(),
            }),
        }
        .map_err(std::io::Error::other)?;
        lines.push(line);
    }
    atomic_write(path, |file| {
        for l in &lines {
            writeln!(file, "{l}")?;
        }
        Ok(())
    })?;
    Ok(())
}

fn lookup<T: Copy>(map: &BTreeMap<KeypointId, T>, id: KeypointId, what: &str) -> Result<T, String> {
    map.get(&id).copied().ok_or_else(|| format!("missing {what} for {id}"))
}

/// Reads either format back. Angle records are turned into bones by forward
/// rotation; positions are recomputed from the stored skeleton.
pub fn import_animation(path: &Path) -> Result<(TrackFormat, AnimationTrack), RetargetError> {
    let shown = path.display().to_string();
    let err = |line: usize, msg: String| RetargetError::Parse {
        path: shown.clone(),
        line,
        msg,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(s) if s.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let (n, first) = lines.next().ok_or(RetargetError::Empty)?;
    let header: TrackHeader = serde_json::from_str(&first?).map_err(|e| err(n, e.to_string()))?;
    if header.version != TRACK_FORMAT_VERSION {
        return Err(err(n, format!("unsupported track version {}", header.version)));
    }
    if !(header.fps.is_finite() && header.fps > 0.0) {
        return Err(RetargetError::BadFps(header.fps));
    }
    let mut frames = Vec::with_capacity(header.frames);
    for (n, line) in lines {
        let line = line?;
        let frame = match header.format {
            TrackFormat::BoneJson => {
                let r: BoneRecord = serde_json::from_str(&line).map_err(|e| err(n, e.to_string()))?;
                let mut dirs = [[0.0; 3]; NUM_KEYPOINTS];
                for b in KeypointId::BONES {
                    dirs[b.index()] = lookup(&r.bones, b, "bone").map_err(|m| err(n, m))?;
                }
                let bones = BoneFrame::new(dirs).map_err(|e| err(n, e.to_string()))?;
                let mut pts = [[0.0; 3]; NUM_KEYPOINTS];
                for k in KeypointId::ALL {
                    pts[k.index()] = lookup(&r.positions, k, "position").map_err(|m| err(n, m))?;
                }
                let positions = KeypointFrame::new(pts).map_err(|e| err(n, e.to_string()))?;
                let joints = JointAngleFrame::from_bones(r.t, &bones);
                AnimationFrame {
                    bones,
                    joints,
                    positions,
                }
            }
            TrackFormat::AngleJson => {
                let r: AngleRecord = serde_json::from_str(&line).map_err(|e| err(n, e.to_string()))?;
                let mut joints = [AxisAngle::IDENTITY; NUM_KEYPOINTS];
                for b in KeypointId::BONES {
                    let j = lookup(&r.joints, b, "joint").map_err(|m| err(n, m))?;
                    if (norm(j.axis) - 1.0).abs() > 1e-9 || !(0.0..=std::f64::consts::PI).contains(&j.angle) {
                        return Err(err(n, format!("invalid axis-angle for {b}")));
                    }
                    joints[b.index()] = j;
                }
                let joints = JointAngleFrame { time: r.t, joints };
                let bones = joints.to_bones().map_err(|e| err(n, e.to_string()))?;
                AnimationFrame {
                    positions: align_to_skeleton(&bones, &header.skeleton),
                    bones,
                    joints,
                }
            }
        };
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(RetargetError::Empty);
    }
    if frames.len() != header.frames {
        return Err(err(1, format!("header announces {} frames, found {}", header.frames, frames.len())));
    }
    Ok((
        header.format,
        AnimationTrack {
            fps: header.fps,
            skeleton: header.skeleton,
            frames,
        },
    ))
}

pub const PREDICTIONS_FORMAT: &str = "gesture-predictions";
const PREDICTIONS_VERSION: u32 = 1;

/// Where a predicted sequence came from. Only vector-normalized predictions
/// can be retargeted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionHeader {
    pub format: String,
    pub version: u32,
    pub kind: crate::models::ModelKind,
    pub normalization: crate::models::NormalizationMethod,
    pub text: String,
    pub steps: usize,
}

impl PredictionHeader {
    pub fn new(
        kind: crate::models::ModelKind,
        normalization: crate::models::NormalizationMethod,
        text: &str,
        steps: usize,
    ) -> Self {
        Self {
            format: PREDICTIONS_FORMAT.to_string(),
            version: PREDICTIONS_VERSION,
            kind,
            normalization,
            text: text.to_string(),
            steps,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionRecord {
    step: usize,
    values: Vec<f64>,
}

/// Header line, then one `{"step", "values"}` line per 360-D step.
pub fn write_predictions(path: &Path, header: &PredictionHeader, steps: &[Vec<f64>]) -> Result<(), RetargetError> {
    let mut lines = vec![serde_json::to_string(header).map_err(std::io::Error::other)?];
    for (step, v) in steps.iter().enumerate() {
        let rec = PredictionRecord {
            step,
            values: v.clone(),
        };
        lines.push(serde_json::to_string(&rec).map_err(std::io::Error::other)?);
    }
    atomic_write(path, |f| {
        for l in &lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    })?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<(PredictionHeader, Vec<Vec<f64>>), RetargetError> {
    let shown = path.display().to_string();
    let err = |line: usize, msg: String| RetargetError::Parse {
        path: shown.clone(),
        line,
        msg,
    };
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (i, first) = lines.next().ok_or(RetargetError::Empty)?;
    let header: PredictionHeader = serde_json::from_str(first).map_err(|e| err(i + 1, e.to_string()))?;
    if header.format != PREDICTIONS_FORMAT || header.version != PREDICTIONS_VERSION {
        return Err(err(i + 1, format!("expected {PREDICTIONS_FORMAT} version {PREDICTIONS_VERSION}")));
    }
    let mut steps = Vec::new();
    for (i, line) in lines {
        let r: PredictionRecord = serde_json::from_str(line).map_err(|e| err(i + 1, e.to_string()))?;
        if r.step != steps.len() {
            return Err(err(i + 1, format!("expected step {}, found {}", steps.len(), r.step)));
        }
        if r.values.len() != FEATURE_DIM {
            return Err(RetargetError::StepWidth {
                step: r.step,
                len: r.values.len(),
            });
        }
        steps.push(r.values);
    }
    if steps.len() != header.steps {
        return Err(err(1, format!("header announces {} steps, found {}", header.steps, steps.len())));
    }
    Ok((header, steps))
}
