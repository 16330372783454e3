//! Consensus over a pairwise dissimilarity matrix: the percent of
//! participant pairs whose gestures sit within a similarity threshold, plus
//! cluster extraction from the induced binary pair matrix.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::logistic::{fit_logistic, LogisticFit};
use super::TrajectoryError;
use crate::model::{ParticipantId, ReferentId, Trajectory};

/// Identifies one row of a dissimilarity matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrajectoryKey {
    pub participant: ParticipantId,
    pub trial: u32,
}

/// Pairwise dissimilarity values Δ between the gesture proposals recorded
/// for one referent. Symmetric, zero diagonal, all values finite and ≥ 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityMatrix {
    pub referent: ReferentId,
    pub keys: Vec<TrajectoryKey>,
    values: Vec<f64>,
}

impl DissimilarityMatrix {
    /// Validates and wraps a full row-major n×n matrix.
    pub fn new(
        referent: ReferentId,
        keys: Vec<TrajectoryKey>,
        values: Vec<f64>,
    ) -> Result<Self, TrajectoryError> {
        let n = keys.len();
        if values.len() != n * n {
            return Err(TrajectoryError::MalformedMatrix);
        }
        {
            let mut sorted = keys.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != n {
                return Err(TrajectoryError::DuplicateKey);
            }
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(TrajectoryError::MalformedMatrix);
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() || v < 0.0 || v != values[j * n + i] {
                    return Err(TrajectoryError::MalformedMatrix);
                }
            }
        }
        Ok(DissimilarityMatrix {
            referent,
            keys,
            values,
        })
    }

    /// Computes the matrix for a set of trajectories under a pluggable
    /// dissimilarity function (DTW in practice).
    pub fn from_trajectories<F>(
        referent: ReferentId,
        trajectories: &[Trajectory],
        mut delta: F,
    ) -> Result<Self, TrajectoryError>
    where
        F: FnMut(&Trajectory, &Trajectory) -> Result<f64, TrajectoryError>,
    {
        let n = trajectories.len();
        let keys: Vec<TrajectoryKey> = trajectories
            .iter()
            .map(|t| TrajectoryKey {
                participant: t.participant.clone(),
                trial: t.trial,
            })
            .collect();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = delta(&trajectories[i], &trajectories[j])?;
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        DissimilarityMatrix::new(referent, keys, values)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    /// Largest dissimilarity in the matrix (0 for matrices smaller than 2).
    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Upper-triangle entries as (i, j, Δ) with i < j.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.len();
        (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j, self.get(i, j))))
    }
}

/// Aggregator collapsing the cross-trial dissimilarities of one participant
/// pair into a single value (production studies).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zeta {
    Min,
    Max,
    Avg,
}

impl Zeta {
    pub fn aggregate(&self, values: &[f64]) -> f64 {
        debug_assert!(!values.is_empty());
        match self {
            Zeta::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Zeta::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Zeta::Avg => values.iter().sum::<f64>() / values.len() as f64,
        }
    }
}

impl std::str::FromStr for Zeta {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "min" => Ok(Zeta::Min),
            "max" => Ok(Zeta::Max),
            "avg" | "mean" => Ok(Zeta::Avg),
            other => Err(format!("unknown zeta `{other}` (expected min, max, or avg)")),
        }
    }
}

/// Classic consensus: percent of trajectory pairs with Δ ≤ τ, over
/// N(N−1)/2 pairs. Expects one trajectory per participant.
pub fn consensus_at(matrix: &DissimilarityMatrix, tau: f64) -> Result<f64, TrajectoryError> {
    let n = matrix.len();
    if n < 2 {
        return Err(TrajectoryError::InsufficientTrajectories { needed: 2, found: n });
    }
    let total = n * (n - 1) / 2;
    let hits = matrix.pairs().filter(|&(_, _, d)| d <= tau).count();
    Ok(100.0 * hits as f64 / total as f64)
}

fn participant_groups(matrix: &DissimilarityMatrix) -> Vec<(ParticipantId, Vec<usize>)> {
    let mut groups: BTreeMap<&ParticipantId, Vec<usize>> = BTreeMap::new();
    for (i, key) in matrix.keys.iter().enumerate() {
        groups.entry(&key.participant).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(p, rows)| (p.clone(), rows))
        .collect()
}

/// Production consensus: for each participant pair, ζ collapses the
/// dissimilarities over all trial combinations into one value, and the pair
/// counts when that value is ≤ τ. With one trial per participant this
/// reduces exactly to [`consensus_at`] for every ζ.
pub fn production_consensus_at(
    matrix: &DissimilarityMatrix,
    tau: f64,
    zeta: Zeta,
) -> Result<f64, TrajectoryError> {
    let groups = participant_groups(matrix);
    let n = groups.len();
    if n < 2 {
        return Err(TrajectoryError::InsufficientTrajectories { needed: 2, found: n });
    }
    for (participant, rows) in &groups {
        if rows.is_empty() {
            return Err(TrajectoryError::EmptyParticipantGroup {
                participant: participant.to_string(),
            });
        }
    }

    let total = n * (n - 1) / 2;
    let mut hits = 0usize;
    let mut cross = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            cross.clear();
            for &i in &groups[a].1 {
                for &j in &groups[b].1 {
                    cross.push(matrix.get(i, j));
                }
            }
            if zeta.aggregate(&cross) <= tau {
                hits += 1;
            }
        }
    }
    Ok(100.0 * hits as f64 / total as f64)
}

/// Whether a sweep treats the matrix rows as one proposal per participant or
/// aggregates production trials with ζ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SweepMode {
    Classic,
    Production(Zeta),
}

/// One point of a consensus curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub tau: f64,
    pub consensus: f64,
}

/// C_R as a function of τ, with the fitted logistic when the grid has
/// enough points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusCurve {
    pub referent: ReferentId,
    pub samples: Vec<CurveSample>,
    /// Aggregator used, production sweeps only.
    pub zeta: Option<Zeta>,
    /// Present when the grid has at least 4 points.
    pub fit: Option<LogisticFit>,
}

/// Evaluates consensus over a strictly increasing τ grid (≥ 3 points) and
/// attaches a logistic fit.
pub fn sweep_tau(
    matrix: &DissimilarityMatrix,
    tau_grid: &[f64],
    mode: SweepMode,
) -> Result<ConsensusCurve, TrajectoryError> {
    if tau_grid.len() < 3 || tau_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TrajectoryError::InvalidTauGrid { needed: 3 });
    }
    let samples: Vec<CurveSample> = tau_grid
        .iter()
        .map(|&tau| {
            let consensus = match mode {
                SweepMode::Classic => consensus_at(matrix, tau)?,
                SweepMode::Production(zeta) => production_consensus_at(matrix, tau, zeta)?,
            };
            Ok(CurveSample { tau, consensus })
        })
        .collect::<Result<_, TrajectoryError>>()?;

    // Thresholding can only gain pairs as tau grows.
    assert!(
        samples.windows(2).all(|w| w[0].consensus <= w[1].consensus),
        "consensus curve must be non-decreasing in tau"
    );

    let fit = if samples.len() >= 4 {
        let points: Vec<(f64, f64)> = samples.iter().map(|s| (s.tau, s.consensus)).collect();
        Some(fit_logistic(&points)?)
    } else {
        None
    };

    Ok(ConsensusCurve {
        referent: matrix.referent.clone(),
        samples,
        zeta: match mode {
            SweepMode::Classic => None,
            SweepMode::Production(z) => Some(z),
        },
        fit,
    })
}

/// 50 evenly spaced τ values from 0 to the observed maximum Δ (or to 1 when
/// the matrix is all zeros).
pub fn default_tau_grid(matrix: &DissimilarityMatrix, points: usize) -> Vec<f64> {
    let points = points.max(3);
    let top = match matrix.max_value() {
        v if v > 0.0 => v,
        _ => 1.0,
    };
    (0..points)
        .map(|i| i as f64 * top / (points - 1) as f64)
        .collect()
}

/// Every member pair must be similar for the default clique-like reading of
/// a consensus cluster.
pub const DEFAULT_ACCEPTANCE_RATIO: f64 = 1.0;

/// The largest separable group of mutually similar gesture proposals at a
/// given τ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusCluster {
    pub referent: ReferentId,
    pub tau: f64,
    pub members: Vec<TrajectoryKey>,
    /// Members over matrix rows, in percent.
    pub coverage: f64,
}

/// Greedy hill-climbing cluster extraction on the binary pair matrix
/// [Δ(g_i,g_j) ≤ τ] at the default acceptance ratio 1.0 (every member pair
/// similar).
pub fn extract_cluster(matrix: &DissimilarityMatrix, tau: f64) -> ConsensusCluster {
    extract_cluster_with(matrix, tau, DEFAULT_ACCEPTANCE_RATIO)
}

/// Like [`extract_cluster`] but with a configurable acceptance ratio in
/// (0, 1]: a candidate joins only while the within-cluster fraction of
/// similar pairs stays at or above the ratio.
pub fn extract_cluster_with(
    matrix: &DissimilarityMatrix,
    tau: f64,
    acceptance_ratio: f64,
) -> ConsensusCluster {
    let n = matrix.len();
    let mut weights = vec![0.0f64; n * n];
    for (i, j, d) in matrix.pairs() {
        let w = if d <= tau { 1.0 } else { 0.0 };
        weights[i * n + j] = w;
        weights[j * n + i] = w;
    }
    let members = grow_best_cluster(&weights, n, acceptance_ratio);
    cluster_from_members(matrix, tau, members)
}

/// Stacks the binary pair matrices of several τ samples, averages them, and
/// clusters on the mean weights. Off the default path; single-τ extraction
/// is [`extract_cluster`].
pub fn extract_cluster_multi(
    matrix: &DissimilarityMatrix,
    taus: &[f64],
    acceptance_ratio: f64,
) -> ConsensusCluster {
    let n = matrix.len();
    let mut weights = vec![0.0f64; n * n];
    if !taus.is_empty() {
        for (i, j, d) in matrix.pairs() {
            let w = taus.iter().filter(|&&tau| d <= tau).count() as f64 / taus.len() as f64;
            weights[i * n + j] = w;
            weights[j * n + i] = w;
        }
    }
    let members = grow_best_cluster(&weights, n, acceptance_ratio);
    let tau = taus.iter().copied().fold(0.0, f64::max);
    cluster_from_members(matrix, tau, members)
}

fn cluster_from_members(
    matrix: &DissimilarityMatrix,
    tau: f64,
    members: Vec<usize>,
) -> ConsensusCluster {
    let coverage = if matrix.is_empty() {
        0.0
    } else {
        100.0 * members.len() as f64 / matrix.len() as f64
    };
    ConsensusCluster {
        referent: matrix.referent.clone(),
        tau,
        members: members.into_iter().map(|i| matrix.keys[i].clone()).collect(),
        coverage,
    }
}

/// Greedy growth from every positive pair seed; pairs are tried in
/// descending order of combined similarity degree. Returns the best member
/// set: largest first, then highest within-cluster weight, then
/// lexicographically smallest.
fn grow_best_cluster(weights: &[f64], n: usize, acceptance_ratio: f64) -> Vec<usize> {
    let degree: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| weights[i * n + j]).sum())
        .collect();

    let mut seeds: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|&(i, j)| weights[i * n + j] > 0.0)
        .collect();
    seeds.sort_by(|&(a1, b1), &(a2, b2)| {
        let d1 = degree[a1] + degree[b1];
        let d2 = degree[a2] + degree[b2];
        d2.partial_cmp(&d1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a1, b1).cmp(&(a2, b2)))
    });

    let mut best: Vec<usize> = Vec::new();
    let mut best_ratio = 0.0f64;

    for &(a, b) in &seeds {
        let mut members = vec![a, b];
        let mut weight_sum = weights[a * n + b];
        let mut in_cluster = vec![false; n];
        in_cluster[a] = true;
        in_cluster[b] = true;

        loop {
            let mut candidate: Option<(usize, f64, f64)> = None;
            for v in 0..n {
                if in_cluster[v] {
                    continue;
                }
                let gain: f64 = members.iter().map(|&u| weights[u * n + v]).sum();
                let new_sum = weight_sum + gain;
                let size = members.len() + 1;
                let ratio = new_sum / (size * (size - 1) / 2) as f64;
                let better = match candidate {
                    None => true,
                    Some((cv, cr, _)) => ratio > cr || (ratio == cr && v < cv),
                };
                if better {
                    candidate = Some((v, ratio, new_sum));
                }
            }
            match candidate {
                Some((v, ratio, new_sum)) if ratio >= acceptance_ratio => {
                    members.push(v);
                    in_cluster[v] = true;
                    weight_sum = new_sum;
                }
                _ => break,
            }
        }

        members.sort_unstable();
        let pairs = members.len() * (members.len() - 1) / 2;
        let ratio = weight_sum / pairs as f64;
        let better = members.len() > best.len()
            || (members.len() == best.len() && ratio > best_ratio)
            || (members.len() == best.len() && ratio == best_ratio && !best.is_empty() && members < best);
        if better {
            best = members;
            best_ratio = ratio;
        }
    }

    best
}
