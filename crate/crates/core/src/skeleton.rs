//! Keypoint identities, the upper-body skeleton tree and the keypoint
//! interchange file format.
//!
//! Coordinates are right-handed with `z` as the vertical axis. Every frame
//! stores its twelve keypoints in [`KeypointId`] order.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io::atomic_write;

pub type Vec3 = [f64; 3];

pub const NUM_KEYPOINTS: usize = 12;
pub const NUM_BONES: usize = 11;

/// The twelve upper-body keypoints. The discriminant is the column index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointId {
    HeadTop = 0,
    Neck = 1,
    Chest = 2,
    Belly = 3,
    LShoulder = 4,
    RShoulder = 5,
    LElbow = 6,
    RElbow = 7,
    LWrist = 8,
    RWrist = 9,
    LHip = 10,
    RHip = 11,
}

impl KeypointId {
    pub const ALL: [KeypointId; NUM_KEYPOINTS] = [
        KeypointId::HeadTop,
        KeypointId::Neck,
        KeypointId::Chest,
        KeypointId::Belly,
        KeypointId::LShoulder,
        KeypointId::RShoulder,
        KeypointId::LElbow,
        KeypointId::RElbow,
        KeypointId::LWrist,
        KeypointId::RWrist,
        KeypointId::LHip,
        KeypointId::RHip,
    ];

    /// Every keypoint except the root, i.e. the child end of each bone.
    pub const BONES: [KeypointId; NUM_BONES] = [
        KeypointId::HeadTop,
        KeypointId::Neck,
        KeypointId::Chest,
        KeypointId::LShoulder,
        KeypointId::RShoulder,
        KeypointId::LElbow,
        KeypointId::RElbow,
        KeypointId::LWrist,
        KeypointId::RWrist,
        KeypointId::LHip,
        KeypointId::RHip,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<KeypointId> {
        Self::ALL.get(index).copied()
    }

    /// Parent in the skeleton tree; `None` for the belly.
    pub fn parent(self) -> Option<KeypointId> {
        use KeypointId::*;
        match self {
            Belly => None,
            Chest | LHip | RHip => Some(Belly),
            Neck | LShoulder | RShoulder => Some(Chest),
            HeadTop => Some(Neck),
            LElbow => Some(LShoulder),
            RElbow => Some(RShoulder),
            LWrist => Some(LElbow),
            RWrist => Some(RElbow),
        }
    }

    pub fn name(self) -> &'static str {
        use KeypointId::*;
        match self {
            HeadTop => "head_top",
            Neck => "neck",
            Chest => "chest",
            Belly => "belly",
            LShoulder => "l_shoulder",
            RShoulder => "r_shoulder",
            LElbow => "l_elbow",
            RElbow => "r_elbow",
            LWrist => "l_wrist",
            RWrist => "r_wrist",
            LHip => "l_hip",
            RHip => "r_hip",
        }
    }

    /// Human readable bone label, e.g. `chest -> neck`.
    pub fn bone_label(self) -> String {
        match self.parent() {
            Some(p) => format!("{} -> {}", p.name(), self.name()),
            None => format!("{} (center)", self.name()),
        }
    }
}

impl fmt::Display for KeypointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SkeletonError {
    #[error("non-finite coordinate at keypoint {keypoint} axis {axis}")]
    NonFinite { keypoint: KeypointId, axis: usize },
    #[error("display length for bone {0} must be positive")]
    BadLength(KeypointId),
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("record {record}: malformed JSON: {message}")]
    Malformed { record: usize, message: String },
    #[error("record {record}: expected 12 keypoints, found {found}")]
    KeypointCount { record: usize, found: usize },
    #[error("record {record}: keypoint {keypoint} has {found} coordinates, expected 3")]
    CoordinateCount {
        record: usize,
        keypoint: usize,
        found: usize,
    },
    #[error("record {record}: non-finite value at keypoint {keypoint}")]
    NonFiniteRecord { record: usize, keypoint: usize },
    #[error("frame {index} is invalid: non-finite value at keypoint {keypoint}")]
    InvalidFrame { index: usize, keypoint: KeypointId },
}

/// One 3x12 keypoint matrix, stored column-wise (one `[x, y, z]` per keypoint).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointFrame {
    points: [Vec3; NUM_KEYPOINTS],
}

impl KeypointFrame {
    pub fn new(points: [Vec3; NUM_KEYPOINTS]) -> Result<Self, SkeletonError> {
        for (k, p) in points.iter().enumerate() {
            for (axis, v) in p.iter().enumerate() {
                if !v.is_finite() {
                    return Err(SkeletonError::NonFinite {
                        keypoint: KeypointId::ALL[k],
                        axis,
                    });
                }
            }
        }
        Ok(Self { points })
    }

    pub fn zeros() -> Self {
        Self {
            points: [[0.0; 3]; NUM_KEYPOINTS],
        }
    }

    /// Skips validation; used where inputs are finite by construction.
    pub(crate) fn from_points_unchecked(points: [Vec3; NUM_KEYPOINTS]) -> Self {
        debug_assert!(points.iter().flatten().all(|v| v.is_finite()));
        Self { points }
    }

    #[inline]
    pub fn get(&self, id: KeypointId) -> Vec3 {
        self.points[id.index()]
    }

    #[inline]
    pub fn points(&self) -> &[Vec3; NUM_KEYPOINTS] {
        &self.points
    }

    /// Returns a copy with one keypoint replaced.
    pub fn with(&self, id: KeypointId, p: Vec3) -> Result<Self, SkeletonError> {
        let mut points = self.points;
        points[id.index()] = p;
        Self::new(points)
    }

    /// Applies `f` to every keypoint. Fails if the result is not finite.
    pub fn map(&self, f: impl Fn(Vec3) -> Vec3) -> Result<Self, SkeletonError> {
        let mut points = self.points;
        for p in points.iter_mut() {
            *p = f(*p);
        }
        Self::new(points)
    }
}

/// The parent map plus per-bone display lengths used when posing an avatar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    /// Indexed by child keypoint; the belly entry is unused and kept at 0.
    lengths: [f64; NUM_KEYPOINTS],
}

impl Default for SkeletonTopology {
    fn default() -> Self {
        use KeypointId::*;
        let mut lengths = [0.0; NUM_KEYPOINTS];
        for (id, len) in [
            (Chest, 0.25),
            (Neck, 0.20),
            (HeadTop, 0.20),
            (LShoulder, 0.18),
            (RShoulder, 0.18),
            (LElbow, 0.28),
            (RElbow, 0.28),
            (LWrist, 0.25),
            (RWrist, 0.25),
            (LHip, 0.14),
            (RHip, 0.14),
        ] {
            lengths[id.index()] = len;
        }
        Self { lengths }
    }
}

impl SkeletonTopology {
    /// Builds a topology from `(bone, length)` pairs. Every bone must be listed.
    pub fn with_lengths(
        lengths: impl IntoIterator<Item = (KeypointId, f64)>,
    ) -> Result<Self, SkeletonError> {
        let mut out = [f64::NAN; NUM_KEYPOINTS];
        out[KeypointId::Belly.index()] = 0.0;
        for (id, len) in lengths {
            out[id.index()] = len;
        }
        for id in KeypointId::BONES {
            let len = out[id.index()];
            if !(len.is_finite() && len > 0.0) {
                return Err(SkeletonError::BadLength(id));
            }
        }
        Ok(Self { lengths: out })
    }

    pub fn root(&self) -> KeypointId {
        KeypointId::Belly
    }

    pub fn parent(&self, id: KeypointId) -> Option<KeypointId> {
        id.parent()
    }

    /// `(parent, child)` pairs, parents always listed before their children.
    pub fn edges(&self) -> Vec<(KeypointId, KeypointId)> {
        self.topological_order()
            .into_iter()
            .filter_map(|c| c.parent().map(|p| (p, c)))
            .collect()
    }

    /// All keypoints ordered so every parent precedes its children.
    pub fn topological_order(&self) -> Vec<KeypointId> {
        let mut order = vec![KeypointId::Belly];
        let mut i = 0;
        while i < order.len() {
            let p = order[i];
            order.extend(KeypointId::ALL.iter().filter(|c| c.parent() == Some(p)));
            i += 1;
        }
        order
    }

    pub fn length(&self, bone: KeypointId) -> f64 {
        self.lengths[bone.index()]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, SkeletonError> {
        Self::with_lengths(KeypointId::BONES.map(|b| (b, self.length(b) * factor)))
    }
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame: usize,
    keypoints: Vec<Vec<f64>>,
}

fn parse_frame_record(line: &str, record: usize) -> Result<KeypointFrame, SkeletonError> {
    let rec: FrameRecord = serde_json::from_str(line).map_err(|e| SkeletonError::Malformed {
        record,
        message: e.to_string(),
    })?;
    if rec.keypoints.len() != NUM_KEYPOINTS {
        return Err(SkeletonError::KeypointCount {
            record,
            found: rec.keypoints.len(),
        });
    }
    let mut points = [[0.0; 3]; NUM_KEYPOINTS];
    for (k, p) in rec.keypoints.iter().enumerate() {
        if p.len() != 3 {
            return Err(SkeletonError::CoordinateCount {
                record,
                keypoint: k,
                found: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(SkeletonError::NonFiniteRecord {
                record,
                keypoint: k,
            });
        }
        points[k] = [p[0], p[1], p[2]];
    }
    Ok(KeypointFrame { points })
}

/// Reads a keypoint interchange file (one JSON object per line).
pub fn load_frames(path: impl AsRef<Path>) -> Result<Vec<KeypointFrame>, SkeletonError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| SkeletonError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let mut frames = Vec::new();
    let mut record = 0;
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        frames.push(parse_frame_record(&line, record)?);
        record += 1;
    }
    Ok(frames)
}

/// Serializes frames to the interchange format. Nothing is written if any
/// frame is invalid; the file appears atomically.
pub fn write_frames(frames: &[KeypointFrame], path: impl AsRef<Path>) -> Result<(), SkeletonError> {
    for (index, f) in frames.iter().enumerate() {
        if let Err(SkeletonError::NonFinite { keypoint, .. }) = KeypointFrame::new(f.points) {
            return Err(SkeletonError::InvalidFrame { index, keypoint });
        }
    }
    atomic_write(path.as_ref(), |w| write_frames_to(frames, w))?;
    Ok(())
}

pub(crate) fn write_frames_to<W: Write>(frames: &[KeypointFrame], w: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    for (i, f) in frames.iter().enumerate() {
        let rec = FrameRecord {
            frame: i,
            keypoints: f.points.iter().map(|p| p.to_vec()).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
