//! Rotation about the vertical axis and the three keypoint normalizations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::skeleton::{KeypointFrame, KeypointId, SkeletonTopology, Vec3, NUM_KEYPOINTS};

/// Projections shorter than this have no usable direction.
pub const DEGENERACY_EPS: f64 = 1e-12;
/// Tolerance on unit norms and other geometric postconditions.
pub const GEOMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("shoulder difference has no extent in the XOY plane")]
    DegenerateShoulders,
    #[error("empty frame collection")]
    EmptyInput,
    #[error("frame {0} has zero vertical extent")]
    ZeroHeight(usize),
    #[error("axis {axis} has zero range")]
    DegenerateAxis { axis: usize },
    #[error("bone {0} has zero length")]
    ZeroBone(KeypointId),
    #[error("bone {bone} is not unit length (norm {norm})")]
    NotUnit { bone: KeypointId, norm: f64 },
    #[error("belly entry of a bone frame must be zero")]
    NonZeroOrigin,
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Anticlockwise rotation about +z, kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct RotationAngle(f64);

impl RotationAngle {
    pub fn new(theta: f64) -> Self {
        let mut t = theta % (2.0 * PI);
        if t <= -PI {
            t += 2.0 * PI;
        } else if t > PI {
            t -= 2.0 * PI;
        }
        Self(t)
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

/// The basic rotation matrix about z.
pub fn rotation_matrix_z(alpha: f64) -> [[f64; 3]; 3] {
    let (s, c) = alpha.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Left-multiplies every keypoint column by `R_z(theta)`. The z row is the
/// identity, so z-coordinates are copied rather than recomputed.
pub fn apply_rotation(frame: &KeypointFrame, theta: RotationAngle) -> KeypointFrame {
    let r = rotation_matrix_z(theta.radians());
    let mut points = *frame.points();
    for p in points.iter_mut() {
        let [x, y, z] = *p;
        *p = [r[0][0] * x + r[0][1] * y, r[1][0] * x + r[1][1] * y, z];
    }
    KeypointFrame::from_points_unchecked(points)
}

/// Angle that brings the left shoulder level with the right one (equal y)
/// and on the +x side.
pub fn rotation_angle(frame: &KeypointFrame) -> Result<RotationAngle, GeometryError> {
    let diff = sub(frame.get(KeypointId::LShoulder), frame.get(KeypointId::RShoulder));
    if diff[0].hypot(diff[1]) < DEGENERACY_EPS {
        return Err(GeometryError::DegenerateShoulders);
    }
    Ok(RotationAngle::new(-diff[1].atan2(diff[0])))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    /// Leave the frame unrotated and flag it.
    #[default]
    Flag,
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotated {
    pub frame: KeypointFrame,
    pub angle: RotationAngle,
    /// Set when the shoulders were vertical and no rotation was applied.
    pub degenerate: bool,
}

pub fn rotate_frame_with(
    frame: &KeypointFrame,
    policy: DegeneratePolicy,
) -> Result<Rotated, GeometryError> {
    match rotation_angle(frame) {
        Ok(angle) => Ok(Rotated {
            frame: apply_rotation(frame, angle),
            angle,
            degenerate: false,
        }),
        Err(e) if policy == DegeneratePolicy::Strict => Err(e),
        Err(_) => Ok(Rotated {
            frame: *frame,
            angle: RotationAngle(0.0),
            degenerate: true,
        }),
    }
}

/// Rotates with the default policy (degenerate frames pass through unrotated).
pub fn rotate_frame(frame: &KeypointFrame) -> KeypointFrame {
    match rotate_frame_with(frame, DegeneratePolicy::Flag) {
        Ok(r) => r.frame,
        Err(_) => unreachable!("flag policy never fails"),
    }
}

/// Fraction of frames whose shoulder height difference is below a tenth of
/// the frame's vertical extent.
pub fn validate_shoulder_hypothesis(frames: &[KeypointFrame]) -> Result<f64, GeometryError> {
    if frames.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let mut level = 0usize;
    for (i, f) in frames.iter().enumerate() {
        let (lo, hi) = f
            .points()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[2]), hi.max(p[2]))
            });
        let height = hi - lo;
        if height <= 0.0 {
            return Err(GeometryError::ZeroHeight(i));
        }
        let dz = (f.get(KeypointId::LShoulder)[2] - f.get(KeypointId::RShoulder)[2]).abs();
        if dz < 0.1 * height {
            level += 1;
        }
    }
    Ok(level as f64 / frames.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedFrame {
    pub frame: KeypointFrame,
    /// Axes whose range was too small to scale; they were mapped to 0.5.
    pub degenerate_axes: [bool; 3],
}

impl NormalizedFrame {
    pub fn flagged(&self) -> bool {
        self.degenerate_axes.iter().any(|&d| d)
    }
}

fn axis_extents<'a>(frames: impl IntoIterator<Item = &'a KeypointFrame>) -> Option<(Vec3, Vec3)> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for f in frames {
        any = true;
        for p in f.points() {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    any.then_some((lo, hi))
}

/// Per-frame min-max scaling of each axis into `[0, 1]`.
pub fn normalize_individual(frame: &KeypointFrame) -> NormalizedFrame {
    let (lo, hi) = axis_extents([frame]).expect("one frame");
    let mut degenerate_axes = [false; 3];
    for a in 0..3 {
        degenerate_axes[a] = hi[a] - lo[a] < DEGENERACY_EPS;
    }
    let mut points = *frame.points();
    for p in points.iter_mut() {
        for a in 0..3 {
            p[a] = if degenerate_axes[a] {
                0.5
            } else {
                (p[a] - lo[a]) / (hi[a] - lo[a])
            };
        }
    }
    NormalizedFrame {
        frame: KeypointFrame::from_points_unchecked(points),
        degenerate_axes,
    }
}

/// Per-axis extrema over a whole frame collection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalStats {
    pub min: Vec3,
    pub max: Vec3,
}

impl GlobalStats {
    pub fn check(&self) -> Result<(), GeometryError> {
        for axis in 0..3 {
            if !(self.max[axis] - self.min[axis] >= DEGENERACY_EPS) {
                return Err(GeometryError::DegenerateAxis { axis });
            }
        }
        Ok(())
    }
}

pub fn compute_global_stats<'a>(
    frames: impl IntoIterator<Item = &'a KeypointFrame>,
) -> Result<GlobalStats, GeometryError> {
    axis_extents(frames)
        .map(|(min, max)| GlobalStats { min, max })
        .ok_or(GeometryError::EmptyInput)
}

/// Min-max scaling with collection-wide extrema. Each output coordinate
/// depends only on the matching input coordinate.
pub fn normalize_global(
    frame: &KeypointFrame,
    stats: &GlobalStats,
) -> Result<KeypointFrame, GeometryError> {
    stats.check()?;
    let mut points = *frame.points();
    for p in points.iter_mut() {
        for a in 0..3 {
            p[a] = (p[a] - stats.min[a]) / (stats.max[a] - stats.min[a]);
        }
    }
    Ok(KeypointFrame::from_points_unchecked(points))
}

/// Belly-rooted unit bone directions, indexed by child keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoneFrame {
    dirs: [Vec3; NUM_KEYPOINTS],
}

impl BoneFrame {
    pub fn new(dirs: [Vec3; NUM_KEYPOINTS]) -> Result<Self, GeometryError> {
        if dirs[KeypointId::Belly.index()] != [0.0; 3] {
            return Err(GeometryError::NonZeroOrigin);
        }
        for bone in KeypointId::BONES {
            let n = norm(dirs[bone.index()]);
            if !((n - 1.0).abs() <= GEOMETRY_TOL) {
                return Err(GeometryError::NotUnit { bone, norm: n });
            }
        }
        Ok(Self { dirs })
    }

    /// Normalizes each bone; fails on bones shorter than `min_norm`.
    pub fn from_raw(mut dirs: [Vec3; NUM_KEYPOINTS], min_norm: f64) -> Result<Self, GeometryError> {
        dirs[KeypointId::Belly.index()] = [0.0; 3];
        for bone in KeypointId::BONES {
            let v = dirs[bone.index()];
            let n = norm(v);
            if !(n >= min_norm) {
                return Err(GeometryError::ZeroBone(bone));
            }
            dirs[bone.index()] = scale(v, 1.0 / n);
        }
        Ok(Self { dirs })
    }

    #[inline]
    pub fn get(&self, id: KeypointId) -> Vec3 {
        self.dirs[id.index()]
    }

    #[inline]
    pub fn dirs(&self) -> &[Vec3; NUM_KEYPOINTS] {
        &self.dirs
    }

    /// Same directions with every bone pointing along `dir`.
    pub fn uniform(dir: Vec3) -> Result<Self, GeometryError> {
        let mut dirs = [dir; NUM_KEYPOINTS];
        dirs[KeypointId::Belly.index()] = [0.0; 3];
        Self::new(dirs)
    }
}

/// Converts coordinates into unit parent-to-child directions with the belly
/// as the origin.
pub fn normalize_vector(
    frame: &KeypointFrame,
    topology: &SkeletonTopology,
) -> Result<BoneFrame, GeometryError> {
    let mut dirs = [[0.0; 3]; NUM_KEYPOINTS];
    for (parent, child) in topology.edges() {
        let v = sub(frame.get(child), frame.get(parent));
        let n = norm(v);
        if n < DEGENERACY_EPS {
            return Err(GeometryError::ZeroBone(child));
        }
        dirs[child.index()] = [v[0] / n, v[1] / n, v[2] / n];
    }
    Ok(BoneFrame { dirs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn frame_with_shoulders(l: Vec3, r: Vec3) -> KeypointFrame {
        let mut points = [[0.0, 0.0, 0.0]; NUM_KEYPOINTS];
        for (i, p) in points.iter_mut().enumerate() {
            *p = [0.1 * i as f64, -0.05 * i as f64, 0.2 * i as f64];
        }
        points[KeypointId::LShoulder.index()] = l;
        points[KeypointId::RShoulder.index()] = r;
        KeypointFrame::new(points).unwrap()
    }

    fn random_frame(rng: &mut ChaCha8Rng) -> KeypointFrame {
        let mut points = [[0.0; 3]; NUM_KEYPOINTS];
        for p in points.iter_mut() {
            for v in p.iter_mut() {
                *v = rng.gen_range(-5.0..5.0);
            }
        }
        KeypointFrame::new(points).unwrap()
    }

    #[test]
    fn aligned_shoulders_give_zero_angle() {
        let f = frame_with_shoulders([1.0, 0.0, 1.5], [-1.0, 0.0, 1.5]);
        assert_eq!(rotation_angle(&f).unwrap().radians(), 0.0);
        let r = rotate_frame(&f);
        for (a, b) in f.points().iter().zip(r.points()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_shoulders_rotate_by_minus_quarter_turn() {
        let f = frame_with_shoulders([1.0, 1.0, 1.5], [-1.0, -1.0, 1.5]);
        let theta = rotation_angle(&f).unwrap().radians();
        // direct arctangent of the XOY projection of (2, 2)
        assert!((theta + FRAC_PI_4).abs() < 1e-15);

        // explicit 3x3 product with R_z(-pi/4)
        let (s, c) = (-FRAC_PI_4).sin_cos();
        let m = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let mul = |p: Vec3| -> Vec3 {
            let mut out = [0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    out[i] += m[i][j] * p[j];
                }
            }
            out
        };
        let r = rotate_frame(&f);
        let l = r.get(KeypointId::LShoulder);
        let rr = r.get(KeypointId::RShoulder);
        let sqrt2 = 2f64.sqrt();
        for (got, want) in [(l, [sqrt2, 0.0, 1.5]), (rr, [-sqrt2, 0.0, 1.5])] {
            for k in 0..3 {
                assert!((got[k] - want[k]).abs() < 1e-12, "{got:?} vs {want:?}");
            }
        }
        for (orig, rot) in f.points().iter().zip(r.points()) {
            let want = mul(*orig);
            for k in 0..3 {
                assert!((rot[k] - want[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vertical_shoulders_are_degenerate() {
        let f = frame_with_shoulders([0.0, 0.0, 2.0], [0.0, 0.0, 1.0]);
        assert_eq!(rotation_angle(&f), Err(GeometryError::DegenerateShoulders));
        assert_eq!(
            rotate_frame_with(&f, DegeneratePolicy::Strict),
            Err(GeometryError::DegenerateShoulders)
        );
        let lenient = rotate_frame_with(&f, DegeneratePolicy::Flag).unwrap();
        assert!(lenient.degenerate);
        assert_eq!(lenient.frame, f);
    }

    #[test]
    fn angle_stays_in_half_open_interval() {
        // shoulders reversed along x: atan2 gives +pi, negation must wrap back
        let f = frame_with_shoulders([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        let theta = rotation_angle(&f).unwrap().radians();
        assert!(theta > -PI && theta <= PI);
        assert_eq!(theta, PI);
        assert_eq!(RotationAngle::new(-PI).radians(), PI);
        assert_eq!(RotationAngle::new(3.0 * PI).radians(), PI);
    }

    #[test]
    fn rotation_is_rigid_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let f = random_frame(&mut rng);
            let r = rotate_frame(&f);
            let l = r.get(KeypointId::LShoulder);
            let rr = r.get(KeypointId::RShoulder);
            assert!((l[1] - rr[1]).abs() < 1e-9);
            assert!(l[0] >= rr[0]);
            for i in 0..NUM_KEYPOINTS {
                assert_eq!(f.points()[i][2], r.points()[i][2]);
                for j in 0..NUM_KEYPOINTS {
                    let d0 = norm(sub(f.points()[i], f.points()[j]));
                    let d1 = norm(sub(r.points()[i], r.points()[j]));
                    assert!((d0 - d1).abs() < 1e-9);
                }
            }
            assert!(rotation_angle(&r).unwrap().radians().abs() < 1e-9);
            let rr2 = rotate_frame(&r);
            for (a, b) in r.points().iter().zip(rr2.points()) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() < 1e-9);
                }
            }
            // R_z(theta) with the reported angle reproduces rotate_frame
            let theta = rotation_angle(&f).unwrap();
            assert_eq!(apply_rotation(&f, theta), r);
        }
    }

    fn frame_with_z(shoulder_dz: f64, height: f64) -> KeypointFrame {
        let mut points = [[0.0, 0.0, 0.5 * height]; NUM_KEYPOINTS];
        points[KeypointId::HeadTop.index()][2] = height;
        points[KeypointId::RHip.index()][2] = 0.0;
        points[KeypointId::LShoulder.index()] = [1.0, 0.0, 0.5 * height + shoulder_dz];
        points[KeypointId::RShoulder.index()] = [-1.0, 0.0, 0.5 * height];
        KeypointFrame::new(points).unwrap()
    }

    #[test]
    fn shoulder_hypothesis_counts() {
        let level: Vec<_> = (0..5).map(|_| frame_with_z(0.0, 2.0)).collect();
        assert_eq!(validate_shoulder_hypothesis(&level).unwrap(), 1.0);
        let mixed = [frame_with_z(1.0, 2.0), frame_with_z(0.0, 2.0)];
        assert_eq!(validate_shoulder_hypothesis(&mixed).unwrap(), 0.5);
        assert_eq!(validate_shoulder_hypothesis(&[]), Err(GeometryError::EmptyInput));
        let flat = [frame_with_z(0.0, 2.0), KeypointFrame::zeros()];
        assert_eq!(validate_shoulder_hypothesis(&flat), Err(GeometryError::ZeroHeight(1)));
    }

    #[test]
    fn shoulder_hypothesis_generator_controlled_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut violators: Vec<usize> = (0..1000).collect();
        // choose exactly 73 violating frames
        for i in 0..73 {
            let j = rng.gen_range(i..1000);
            violators.swap(i, j);
        }
        let bad: std::collections::HashSet<_> = violators[..73].iter().copied().collect();
        let frames: Vec<_> = (0..1000)
            .map(|i| {
                let dz = if bad.contains(&i) {
                    rng.gen_range(0.11..0.4) * 2.0
                } else {
                    rng.gen_range(-0.09..0.09) * 2.0
                };
                frame_with_z(dz, 2.0)
            })
            .collect();
        let frac = validate_shoulder_hypothesis(&frames).unwrap();
        assert!((frac - 0.927).abs() < 1e-12);
    }

    #[test]
    fn individual_midpoint_and_degenerate_policy() {
        let mut points = [[2.0, 0.0, 0.0]; NUM_KEYPOINTS];
        points[0] = [4.0, 1.0, 1.0];
        points[1] = [3.0, 0.5, 0.25];
        let f = KeypointFrame::new(points).unwrap();
        let n = normalize_individual(&f);
        assert!(!n.flagged());
        assert_eq!(n.frame.points()[1], [0.5, 0.5, 0.25]);

        let same = KeypointFrame::new([[1.0, 2.0, 3.0]; NUM_KEYPOINTS]).unwrap();
        let n = normalize_individual(&same);
        assert_eq!(n.degenerate_axes, [true; 3]);
        assert!(n.frame.points().iter().all(|p| *p == [0.5; 3]));
    }

    #[test]
    fn individual_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let f = random_frame(&mut rng);
            let n = normalize_individual(&f).frame;
            let flat: Vec<f64> = f.points().iter().flatten().copied().collect();
            for idx in 0..36 {
                let axis = idx % 3;
                let vals: Vec<f64> = (0..12).map(|k| flat[3 * k + axis]).collect();
                let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
                let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
                let want = (flat[idx] - lo) * (1.0 / (hi - lo));
                let got = n.points()[idx / 3][axis];
                assert!((got - want).abs() < 1e-12);
                assert!((0.0..=1.0).contains(&got));
            }
        }
    }

    #[test]
    fn global_stats_envelope() {
        let a = KeypointFrame::new([[0.0, 0.0, 0.0]; NUM_KEYPOINTS])
            .unwrap()
            .with(KeypointId::Neck, [1.0, 2.0, 3.0])
            .unwrap();
        let b = KeypointFrame::new([[5.0, 1.0, 1.0]; NUM_KEYPOINTS])
            .unwrap()
            .with(KeypointId::Neck, [6.0, 1.0, 1.0])
            .unwrap();
        let s = compute_global_stats([&a]).unwrap();
        assert_eq!(s.min, [0.0; 3]);
        assert_eq!(s.max, [1.0, 2.0, 3.0]);
        let s = compute_global_stats([&a, &b]).unwrap();
        assert_eq!((s.min[0], s.max[0]), (0.0, 6.0));
        assert_eq!(
            compute_global_stats(std::iter::empty()),
            Err(GeometryError::EmptyInput)
        );
    }

    #[test]
    fn global_lower_corner_and_degenerate_stats() {
        let stats = GlobalStats {
            min: [-1.0, 2.0, 0.5],
            max: [1.0, 3.0, 4.0],
        };
        let corner = KeypointFrame::new([stats.min; NUM_KEYPOINTS]).unwrap();
        let n = normalize_global(&corner, &stats).unwrap();
        assert!(n.points().iter().flatten().all(|&v| v == 0.0));
        let bad = GlobalStats {
            min: [0.0; 3],
            max: [1.0, 0.0, 1.0],
        };
        assert_eq!(
            normalize_global(&corner, &bad),
            Err(GeometryError::DegenerateAxis { axis: 1 })
        );
    }

    #[test]
    fn vector_normalization_basics() {
        let mut points = [[0.0; 3]; NUM_KEYPOINTS];
        for (i, p) in points.iter_mut().enumerate() {
            *p = [i as f64, (i * i) as f64 * 0.1, 1.0 + i as f64];
        }
        points[KeypointId::Belly.index()] = [1.0, 2.0, 3.0];
        points[KeypointId::Chest.index()] = [1.0, 2.0, 5.0];
        let f = KeypointFrame::new(points).unwrap();
        let topo = SkeletonTopology::default();
        let b = normalize_vector(&f, &topo).unwrap();
        assert_eq!(b.get(KeypointId::Chest), [0.0, 0.0, 1.0]);
        assert_eq!(b.get(KeypointId::Belly), [0.0; 3]);
        assert!(BoneFrame::new(*b.dirs()).is_ok());

        let collapsed = f.with(KeypointId::Chest, [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            normalize_vector(&collapsed, &topo),
            Err(GeometryError::ZeroBone(KeypointId::Chest))
        );
    }

    #[test]
    fn bone_frame_invariants_are_enforced() {
        let mut dirs = [[0.0, 0.0, 1.0]; NUM_KEYPOINTS];
        assert_eq!(BoneFrame::new(dirs), Err(GeometryError::NonZeroOrigin));
        dirs[KeypointId::Belly.index()] = [0.0; 3];
        assert!(BoneFrame::new(dirs).is_ok());
        dirs[KeypointId::LWrist.index()] = [0.0, 0.0, 1.1];
        assert!(matches!(
            BoneFrame::new(dirs),
            Err(GeometryError::NotUnit { bone: KeypointId::LWrist, .. })
        ));
    }
}
