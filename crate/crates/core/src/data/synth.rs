use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Clip, Role};
use crate::geometry::{add, rotation_matrix_z, scale};
use crate::skeleton::{KeypointFrame, KeypointId, SkeletonTopology, Vec3, NUM_KEYPOINTS};

const FPS: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub motifs: usize,
    pub clips_per_motif: usize,
    pub frames_per_clip: usize,
    /// Scales every per-clip perturbation; 0 makes clips of a motif identical.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            motifs: 4,
            clips_per_motif: 8,
            frames_per_clip: 70,
            noise: 0.01,
            seed: 7,
        }
    }
}

const VERBS: [&str; 8] = ["wave", "point", "shrug", "clap", "reach", "sweep", "raise", "circle"];
const OBJECTS: [&str; 8] = ["hello", "there", "maybe", "great", "forward", "away", "high", "around"];

/// The fixed sentence spoken in every clip of motif `m`.
pub fn motif_phrase(m: usize) -> String {
    let base = format!("{} {} {}", VERBS[m % 8], OBJECTS[(m / 8) % 8], "now");
    if m < 64 {
        base
    } else {
        format!("{base} m{m}")
    }
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

/// Low-discrepancy coordinates that keep motifs well apart.
fn motif_coords(m: usize) -> [f64; 3] {
    let k = (m + 1) as f64;
    [frac(0.618_034 * k), frac(0.381_966 * k + 0.25), frac(0.754_878 * k + 0.5)]
}

/// Unit direction of an arm segment: elevation `a` away from straight down,
/// azimuth `b` towards the front, mirrored in x for the right side.
fn arm_dir(side: f64, a: f64, b: f64) -> Vec3 {
    [side * a.sin() * b.cos(), a.sin() * b.sin(), -a.cos()]
}

fn unit(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    scale(v, 1.0 / n)
}

/// Posture angles of one party at one instant.
struct Pose {
    nod: f64,
    arms: [[f64; 3]; 2],
}

/// Per-clip constant offsets added to the motif's posture angles.
struct Offsets {
    nod: f64,
    arms: [[f64; 3]; 2],
}

fn speaker_pose(m: usize, t: f64, o: &Offsets) -> Pose {
    let [g1, g2, g3] = motif_coords(m);
    let (w_l, w_r) = (2.0 + 4.0 * g3, 2.0 + 4.0 * g1);
    let (p_l, p_r) = (TAU * g2, TAU * g1);
    Pose {
        nod: 0.1 * (1.5 * t).sin() + o.nod,
        arms: [
            [
                0.3 + g1 + 0.4 * (w_l * t + p_l).sin() + o.arms[0][0],
                0.2 + 0.8 * g2 + o.arms[0][1],
                0.3 + 0.9 * g3 + 0.35 * (w_l * t + p_l + 1.0).sin() + o.arms[0][2],
            ],
            [
                0.3 + g2 + 0.4 * (w_r * t + p_r).sin() + o.arms[1][0],
                0.2 + 0.8 * g3 + o.arms[1][1],
                0.3 + 0.9 * g1 + 0.35 * (w_r * t + p_r + 1.0).sin() + o.arms[1][2],
            ],
        ],
    }
}

fn listener_pose(m: usize, t: f64, o: &Offsets) -> Pose {
    let [g1, g2, g3] = motif_coords(m);
    let sway = 0.05 * t.sin();
    Pose {
        nod: 0.1 + (0.1 + 0.2 * g1) * ((3.0 + 3.0 * g2) * t + TAU * g3).sin() + o.nod,
        arms: [
            [0.15 + 0.1 * g2 + sway + o.arms[0][0], 0.3 + o.arms[0][1], 0.2 + o.arms[0][2]],
            [0.15 + 0.1 * g3 - sway + o.arms[1][0], 0.3 + o.arms[1][1], 0.2 + o.arms[1][2]],
        ],
    }
}

/// Belly-rooted positions in the body frame (x left, y forward, z up).
fn body_points(p: &Pose, topo: &SkeletonTopology) -> [Vec3; NUM_KEYPOINTS] {
    use KeypointId::*;
    let mut dirs = [[0.0; 3]; NUM_KEYPOINTS];
    dirs[Chest.index()] = [0.0, 0.0, 1.0];
    dirs[Neck.index()] = [0.0, 0.0, 1.0];
    dirs[HeadTop.index()] = [0.0, p.nod.sin(), p.nod.cos()];
    dirs[LShoulder.index()] = unit([1.0, 0.0, -0.05]);
    dirs[RShoulder.index()] = unit([-1.0, 0.0, -0.05]);
    dirs[LHip.index()] = unit([0.45, 0.0, -1.0]);
    dirs[RHip.index()] = unit([-0.45, 0.0, -1.0]);
    for (side, (elbow, wrist), arm) in [(1.0, (LElbow, LWrist), p.arms[0]), (-1.0, (RElbow, RWrist), p.arms[1])] {
        let [a, b, flex] = arm;
        dirs[elbow.index()] = arm_dir(side, a, b);
        dirs[wrist.index()] = arm_dir(side, a + flex, b);
    }
    let mut pts = [[0.0; 3]; NUM_KEYPOINTS];
    for (parent, child) in topo.edges() {
        pts[child.index()] = add(pts[parent.index()], scale(dirs[child.index()], topo.length(child)));
    }
    pts
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// One stream: fixed per-clip nuisance transform plus per-frame jitter.
fn stream(
    frames: usize,
    rng: &mut ChaCha8Rng,
    noise: f64,
    pose_at: impl Fn(f64, &Offsets) -> Pose,
) -> Vec<KeypointFrame> {
    let topo = SkeletonTopology::default();
    let mut offsets = Offsets {
        nod: 0.25 * noise * normal(rng),
        arms: [[0.0; 3]; 2],
    };
    for v in offsets.arms.iter_mut().flatten() {
        *v = 0.25 * noise * normal(rng);
    }
    let body_scale = (1.0 + 5.0 * noise * normal(rng)).max(0.2);
    let yaw = 10.0 * noise * normal(rng);
    let shift = [normal(rng), normal(rng), normal(rng)].map(|v| 10.0 * noise * v);
    let r = rotation_matrix_z(yaw);
    (0..frames)
        .map(|f| {
            let pts = body_points(&pose_at(f as f64 / FPS, &offsets), &topo);
            let pts = pts.map(|p| {
                let p = scale(p, body_scale);
                let p = [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]);
                let jitter = [normal(rng), normal(rng), normal(rng)].map(|v| 0.02 * noise * v);
                add(add(p, shift), jitter)
            });
            KeypointFrame::new(pts).expect("generated coordinates are finite")
        })
        .collect()
}

/// A deterministic corpus of `motifs * clips_per_motif` clips. Clip `i` uses
/// motif `i % motifs`; speaker roles alternate between host and guest within
/// each motif. Every clip draws its perturbations from its own stream.
pub fn generate_synthetic_corpus(config: &SynthConfig) -> Vec<Clip> {
    let total = config.motifs * config.clips_per_motif;
    (0..total)
        .map(|i| {
            let m = i % config.motifs;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64 + 1);
            let speaker = stream(config.frames_per_clip, &mut rng, config.noise, |t, o| speaker_pose(m, t, o));
            let listener = stream(config.frames_per_clip, &mut rng, config.noise, |t, o| listener_pose(m, t, o));
            Clip {
                id: format!("clip_{i:04}"),
                text: motif_phrase(m),
                speaker_frames: speaker,
                listener_frames: listener,
                speaker_role: if (i / config.motifs) % 2 == 0 { Role::Host } else { Role::Guest },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dot, normalize_vector, rotate_frame, validate_shoulder_hypothesis};

    fn cfg(noise: f64) -> SynthConfig {
        SynthConfig {
            noise,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_clips_of_a_motif_are_identical() {
        let clips = generate_synthetic_corpus(&cfg(0.0));
        assert_eq!(clips.len(), 32);
        assert_eq!(clips[0].speaker_frames, clips[4].speaker_frames);
        assert_eq!(clips[0].listener_frames, clips[8].listener_frames);
        assert_eq!(clips[0].text, clips[4].text);
        assert_ne!(clips[0].speaker_frames, clips[1].speaker_frames);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_synthetic_corpus(&cfg(0.01)), generate_synthetic_corpus(&cfg(0.01)));
        let other = SynthConfig { seed: 8, ..cfg(0.01) };
        assert_ne!(generate_synthetic_corpus(&cfg(0.01)), generate_synthetic_corpus(&other));
    }

    #[test]
    fn roles_alternate_within_each_motif() {
        let clips = generate_synthetic_corpus(&cfg(0.01));
        for m in 0..4 {
            let hosts = clips
                .iter()
                .skip(m)
                .step_by(4)
                .filter(|c| c.speaker_role == Role::Host)
                .count();
            assert_eq!(hosts, 4);
        }
    }

    #[test]
    fn shoulders_are_level() {
        for c in generate_synthetic_corpus(&cfg(0.05)) {
            assert_eq!(validate_shoulder_hypothesis(&c.speaker_frames).unwrap(), 1.0);
            assert_eq!(validate_shoulder_hypothesis(&c.listener_frames).unwrap(), 1.0);
        }
    }

    fn mean_bone_angle(a: &[KeypointFrame], b: &[KeypointFrame]) -> f64 {
        let topo = SkeletonTopology::default();
        let mut sum = 0.0;
        let mut n = 0;
        for (fa, fb) in a.iter().zip(b) {
            let va = normalize_vector(&rotate_frame(fa), &topo).unwrap();
            let vb = normalize_vector(&rotate_frame(fb), &topo).unwrap();
            for bone in KeypointId::BONES {
                sum += dot(va.get(bone), vb.get(bone)).clamp(-1.0, 1.0).acos();
                n += 1;
            }
        }
        sum / n as f64
    }

    #[test]
    fn motifs_are_separated_beyond_noise() {
        let noise = 0.01;
        let clips = generate_synthetic_corpus(&cfg(noise));
        for i in 0..4 {
            for j in i + 1..4 {
                let d = mean_bone_angle(&clips[i].speaker_frames, &clips[j].speaker_frames);
                assert!(d > 10.0 * noise, "motifs {i} and {j}: {d}");
            }
            let same = mean_bone_angle(&clips[i].speaker_frames, &clips[i + 4].speaker_frames);
            assert!(same < 10.0 * noise, "motif {i} against itself: {same}");
        }
    }

    #[test]
    fn phrases_are_distinct() {
        let phrases: std::collections::BTreeSet<_> = (0..100).map(motif_phrase).collect();
        assert_eq!(phrases.len(), 100);
    }
}
