//! Dissimilarity-consensus pipeline over motion trajectories.
//!
//! Stages: preprocess captured skeleton data ([`preprocess`]), measure
//! pairwise dissimilarity with DTW ([`dtw_distance`]), collect the values
//! into a [`DissimilarityMatrix`], then sweep the similarity threshold to get
//! a consensus curve with a fitted logistic ([`sweep_tau`], [`fit_logistic`])
//! and extract consensus clusters from the binary pair matrix
//! ([`extract_cluster`]).

mod consensus;
mod logistic;

pub use consensus::{
    extract_cluster, extract_cluster_multi, extract_cluster_with, production_consensus_at,
    sweep_tau, ConsensusCluster, ConsensusCurve, CurveSample, DissimilarityMatrix, SweepMode,
    TrajectoryKey, Zeta, DEFAULT_ACCEPTANCE_RATIO,
};
pub use consensus::consensus_at;
pub use logistic::{fit_logistic, lack_of_fit_test, FitAssessment, LogisticFit};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Frame, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("degenerate skeleton: vertical extent is zero, cannot normalize height")]
    DegenerateSkeleton,
    #[error("reference joint {joint} out of range for {joints} joints")]
    ReferenceJointOutOfRange { joint: usize, joints: usize },
    #[error("joint count mismatch: {left} vs {right}")]
    JointCountMismatch { left: usize, right: usize },
    #[error("need at least {needed} trajectories, found {found}")]
    InsufficientTrajectories { needed: usize, found: usize },
    #[error("participant group `{participant}` has no trajectories")]
    EmptyParticipantGroup { participant: String },
    #[error("tau grid must be strictly increasing with at least {needed} points")]
    InvalidTauGrid { needed: usize },
    #[error("logistic fit needs at least 4 samples, found {found}")]
    InsufficientSamples { found: usize },
    #[error("dissimilarity values must be finite, non-negative, and symmetric with a zero diagonal")]
    MalformedMatrix,
    #[error("matrix keys must be unique (participant, trial) pairs")]
    DuplicateKey,
}

/// Preprocessing recipe applied to captured skeleton data before comparison:
/// resample to a common frame rate, translate each skeleton to the origin,
/// and scale to unit height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub target_fps: f64,
    pub normalize_height: bool,
    pub translate_to_origin: bool,
    /// Joint translated onto the origin in every frame (e.g. the hip).
    pub reference_joint: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_fps: 25.0,
            normalize_height: true,
            translate_to_origin: true,
            reference_joint: 0,
        }
    }
}

/// Vertical axis index inside a joint triple. Capture rigs in this domain
/// report y-up.
const VERTICAL_AXIS: usize = 1;

/// Resamples, translates, and height-normalizes a trajectory.
///
/// Resampling is linear in index space: the output has
/// `round(frames · target/source)` frames (at least 2) evenly spaced over the
/// original time span, so the first and last frames are preserved exactly.
/// Height is the max−min vertical extent over the whole trajectory, not per
/// frame.
pub fn preprocess(
    traj: &Trajectory,
    cfg: &PreprocessConfig,
) -> Result<Trajectory, TrajectoryError> {
    let joints = traj.joint_count();
    if cfg.translate_to_origin && cfg.reference_joint >= joints {
        return Err(TrajectoryError::ReferenceJointOutOfRange {
            joint: cfg.reference_joint,
            joints,
        });
    }

    let mut frames = resample(&traj.frames, traj.frame_rate, cfg.target_fps);

    if cfg.translate_to_origin {
        for frame in &mut frames {
            let origin = frame.joints[cfg.reference_joint];
            for joint in &mut frame.joints {
                for axis in 0..3 {
                    joint[axis] -= origin[axis];
                }
            }
        }
    }

    if cfg.normalize_height {
        let mut min_y = f64::INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for frame in &frames {
            for joint in &frame.joints {
                min_y = min_y.min(joint[VERTICAL_AXIS]);
                max_y = max_y.max(joint[VERTICAL_AXIS]);
            }
        }
        let extent = max_y - min_y;
        if extent <= 0.0 {
            return Err(TrajectoryError::DegenerateSkeleton);
        }
        let scale = 1.0 / extent;
        for frame in &mut frames {
            for joint in &mut frame.joints {
                for axis in 0..3 {
                    joint[axis] *= scale;
                }
            }
        }
    }

    Ok(Trajectory {
        participant: traj.participant.clone(),
        referent: traj.referent.clone(),
        trial: traj.trial,
        frames,
        frame_rate: cfg.target_fps,
    })
}

fn resample(frames: &[Frame], source_fps: f64, target_fps: f64) -> Vec<Frame> {
    let n = frames.len();
    let new_len = ((n as f64 * target_fps / source_fps).round() as usize).max(2);
    if new_len == n {
        return frames.to_vec();
    }
    let joints = frames[0].joint_count();
    let last = (n - 1) as f64;
    (0..new_len)
        .map(|j| {
            let pos = j as f64 * last / (new_len - 1) as f64;
            let i0 = (pos.floor() as usize).min(n - 2);
            let t = pos - i0 as f64;
            let a = &frames[i0];
            let b = &frames[i0 + 1];
            let mut joints_out = Vec::with_capacity(joints);
            for k in 0..joints {
                let mut point = [0.0; 3];
                for axis in 0..3 {
                    point[axis] = a.joints[k][axis] + t * (b.joints[k][axis] - a.joints[k][axis]);
                }
                joints_out.push(point);
            }
            Frame::new(joints_out)
        })
        .collect()
}

fn frame_cost(a: &Frame, b: &Frame) -> f64 {
    a.joints
        .iter()
        .zip(&b.joints)
        .map(|(ja, jb)| {
            let dx = ja[0] - jb[0];
            let dy = ja[1] - jb[1];
            let dz = ja[2] - jb[2];
            (dx * dx + dy * dy + dz * dz).sqrt()
        })
        .sum()
}

fn dtw_table(a: &Trajectory, b: &Trajectory) -> Result<Vec<Vec<f64>>, TrajectoryError> {
    if a.joint_count() != b.joint_count() {
        return Err(TrajectoryError::JointCountMismatch {
            left: a.joint_count(),
            right: b.joint_count(),
        });
    }
    let n = a.frame_count();
    let m = b.frame_count();
    let mut acc = vec![vec![f64::INFINITY; m + 1]; n + 1];
    acc[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let cost = frame_cost(&a.frames[i - 1], &b.frames[j - 1]);
            let best = acc[i - 1][j - 1].min(acc[i - 1][j]).min(acc[i][j - 1]);
            acc[i][j] = cost + best;
        }
    }
    Ok(acc)
}

/// Classic DTW dissimilarity: accumulated per-frame cost along the optimal
/// warping path with steps (1,0), (0,1), (1,1). Per-frame cost is the sum
/// over joints of the Euclidean distance between corresponding joints. The
/// value is unnormalized; see [`dtw_distance_normalized`] for the
/// path-length-normalized variant.
pub fn dtw_distance(a: &Trajectory, b: &Trajectory) -> Result<f64, TrajectoryError> {
    let acc = dtw_table(a, b)?;
    Ok(acc[a.frame_count()][b.frame_count()])
}

/// DTW cost divided by the length (cell count) of the optimal warping path,
/// which makes values comparable across trajectory lengths.
pub fn dtw_distance_normalized(a: &Trajectory, b: &Trajectory) -> Result<f64, TrajectoryError> {
    let acc = dtw_table(a, b)?;
    let cost = acc[a.frame_count()][b.frame_count()];

    // Backtrack counting path cells; prefer the diagonal on ties so the
    // count is deterministic.
    let mut i = a.frame_count();
    let mut j = b.frame_count();
    let mut cells = 1usize;
    while i > 1 || j > 1 {
        let diag = acc[i - 1][j - 1];
        let up = acc[i - 1][j];
        let left = acc[i][j - 1];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        cells += 1;
    }
    Ok(cost / cells as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParticipantId, ReferentId};

    fn traj(frames: Vec<Frame>, fps: f64) -> Trajectory {
        Trajectory::new(
            ParticipantId("p".into()),
            ReferentId("r".into()),
            0,
            frames,
            fps,
        )
        .unwrap()
    }

    /// A two-joint stick figure ramping upward over `n` frames.
    fn ramp(n: usize, fps: f64) -> Trajectory {
        let frames = (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                Frame::new(vec![[0.0, 0.0, 0.0], [t, 1.0 + t, 0.0]])
            })
            .collect();
        traj(frames, fps)
    }

    fn max_coord_diff(a: &Trajectory, b: &Trajectory) -> f64 {
        a.frames
            .iter()
            .zip(&b.frames)
            .flat_map(|(fa, fb)| fa.joints.iter().zip(&fb.joints))
            .flat_map(|(ja, jb)| (0..3).map(move |axis| (ja[axis] - jb[axis]).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn resample_halves_frame_count_and_keeps_endpoints() {
        let input = ramp(50, 50.0);
        let out = preprocess(&input, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.frame_count(), 25);
        assert_eq!(out.frame_rate, 25.0);
        // Endpoints: translated/scaled copies of the original first and last
        // frames. First frame moving joint at (0,1,0) scaled to height 1.
        let first = &out.frames[0];
        let last = &out.frames[24];
        assert!((first.joints[0][0]).abs() < 1e-12);
        assert!((last.joints[1][0] - first.joints[1][0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn preprocess_is_idempotent() {
        let input = ramp(40, 30.0);
        let cfg = PreprocessConfig::default();
        let once = preprocess(&input, &cfg).unwrap();
        let twice = preprocess(&once, &cfg).unwrap();
        assert_eq!(once.frame_count(), twice.frame_count());
        assert!(max_coord_diff(&once, &twice) < 1e-9);
    }

    #[test]
    fn preprocess_cancels_uniform_scaling() {
        let input = ramp(40, 25.0);
        let mut scaled = input.clone();
        for frame in &mut scaled.frames {
            for joint in &mut frame.joints {
                for axis in 0..3 {
                    joint[axis] *= 2.0;
                }
            }
        }
        let cfg = PreprocessConfig::default();
        let a = preprocess(&input, &cfg).unwrap();
        let b = preprocess(&scaled, &cfg).unwrap();
        assert!(max_coord_diff(&a, &b) < 1e-9);
    }

    #[test]
    fn zero_height_extent_is_degenerate() {
        let flat = traj(
            vec![
                Frame::new(vec![[0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]),
                Frame::new(vec![[0.0, 1.0, 0.0], [2.0, 1.0, 0.0]]),
            ],
            30.0,
        );
        assert_eq!(
            preprocess(&flat, &PreprocessConfig::default()),
            Err(TrajectoryError::DegenerateSkeleton)
        );
    }

    #[test]
    fn reference_joint_bounds_checked() {
        let input = ramp(10, 25.0);
        let cfg = PreprocessConfig {
            reference_joint: 5,
            ..Default::default()
        };
        assert!(matches!(
            preprocess(&input, &cfg),
            Err(TrajectoryError::ReferenceJointOutOfRange { .. })
        ));
    }

    #[test]
    fn dtw_self_distance_is_zero() {
        let g = ramp(20, 25.0);
        assert_eq!(dtw_distance(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn dtw_constant_offset_example() {
        // Single joint, two frames, second trajectory offset by d = (3,4,0):
        // the optimal path is the diagonal, so the cost is 2·|d| = 10.
        let a = traj(
            vec![
                Frame::new(vec![[0.0, 0.0, 0.0]]),
                Frame::new(vec![[1.0, 0.0, 0.0]]),
            ],
            10.0,
        );
        let b = traj(
            vec![
                Frame::new(vec![[3.0, 4.0, 0.0]]),
                Frame::new(vec![[4.0, 4.0, 0.0]]),
            ],
            10.0,
        );
        let d = dtw_distance(&a, &b).unwrap();
        assert!((d - 10.0).abs() < 1e-12);
        // Path length 2 on the diagonal.
        let dn = dtw_distance_normalized(&a, &b).unwrap();
        assert!((dn - 5.0).abs() < 1e-12);
    }

    #[test]
    fn dtw_joint_count_mismatch_errors() {
        let a = ramp(5, 25.0);
        let b = traj(
            vec![Frame::new(vec![[0.0; 3]]), Frame::new(vec![[1.0; 3]])],
            25.0,
        );
        assert!(matches!(
            dtw_distance(&a, &b),
            Err(TrajectoryError::JointCountMismatch { left: 2, right: 1 })
        ));
    }

    #[test]
    fn dtw_handles_unequal_lengths() {
        let a = ramp(10, 25.0);
        let b = ramp(17, 25.0);
        let d = dtw_distance(&a, &b).unwrap();
        assert!(d.is_finite() && d >= 0.0);
        let e = dtw_distance(&b, &a).unwrap();
        assert!((d - e).abs() < 1e-12);
    }
}
