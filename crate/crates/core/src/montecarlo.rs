//! Null distribution of the agreement rate under random proposal
//! assignment.
//!
//! Each draw assigns N proposals to q categories and scores the resulting
//! table with the same AR formula the real analysis uses, yielding empirical
//! significance thresholds and p-values for observed agreement. Per-draw RNG
//! streams are derived from (seed, draw index), so results are reproducible
//! and draws could run in any order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::agreement_rate_from_class_sizes;

#[derive(Debug, Error, PartialEq)]
pub enum SimulationError {
    #[error("null model needs at least 2 participants, got {found}")]
    TooFewParticipants { found: usize },
    #[error("null model needs at least 1 category, got {found}")]
    NoCategories { found: usize },
    #[error("empirical weights must be non-empty, non-negative, with a positive sum")]
    BadWeights,
    #[error("zipf exponent must be finite and non-negative, got {value}")]
    BadZipfExponent { value: f64 },
    #[error("need at least 1 draw")]
    NoDraws,
}

/// How category probabilities are shaped under the null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProposalDistribution {
    /// Every category equally likely.
    Uniform,
    /// P(category k) ∝ 1/(k+1)^s: participants cluster around a few
    /// favorite proposals.
    Zipf { exponent: f64 },
    /// Caller-supplied weights, normalized to sum to 1.
    Empirical { weights: Vec<f64> },
}

/// Null model for random proposal assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullModel {
    pub participant_count: usize,
    pub category_count: usize,
    pub distribution: ProposalDistribution,
    pub seed: u64,
}

impl NullModel {
    pub fn uniform(participant_count: usize, category_count: usize, seed: u64) -> Self {
        NullModel {
            participant_count,
            category_count,
            distribution: ProposalDistribution::Uniform,
            seed,
        }
    }

    /// Category probabilities in category order; they sum to 1.
    pub fn probabilities(&self) -> Result<Vec<f64>, SimulationError> {
        let q = self.category_count;
        if q == 0 {
            return Err(SimulationError::NoCategories { found: 0 });
        }
        let weights = match &self.distribution {
            ProposalDistribution::Uniform => vec![1.0; q],
            ProposalDistribution::Zipf { exponent } => {
                if !exponent.is_finite() || *exponent < 0.0 {
                    return Err(SimulationError::BadZipfExponent { value: *exponent });
                }
                (0..q).map(|k| 1.0 / ((k + 1) as f64).powf(*exponent)).collect()
            }
            ProposalDistribution::Empirical { weights } => {
                if weights.len() != q
                    || weights.iter().any(|w| !w.is_finite() || *w < 0.0)
                    || weights.iter().sum::<f64>() <= 0.0
                {
                    return Err(SimulationError::BadWeights);
                }
                weights.clone()
            }
        };
        let total: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / total).collect())
    }
}

/// Empirical null distribution of AR values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Sample variance (n−1 denominator).
    pub variance: f64,
    pub q90: f64,
    pub q95: f64,
    pub q99: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // Nearest-rank: the smallest sample with at least a q fraction at or
    // below it.
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Draws `draws` random proposal tables from the model and scores each with
/// the agreement rate. Deterministic for a fixed (model, draws) pair.
pub fn simulate_null(
    model: &NullModel,
    draws: usize,
) -> Result<NullDistribution, SimulationError> {
    if model.participant_count < 2 {
        return Err(SimulationError::TooFewParticipants {
            found: model.participant_count,
        });
    }
    if draws == 0 {
        return Err(SimulationError::NoDraws);
    }
    let probabilities = model.probabilities()?;
    let mut cumulative = Vec::with_capacity(probabilities.len());
    let mut acc = 0.0;
    for p in &probabilities {
        acc += p;
        cumulative.push(acc);
    }

    let q = model.category_count;
    let n = model.participant_count;
    let mut samples = Vec::with_capacity(draws);
    let mut counts = vec![0usize; q];
    for draw in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        rng.set_stream(draw as u64);
        counts.fill(0);
        for _ in 0..n {
            let x: f64 = rng.gen();
            let k = cumulative.partition_point(|&c| c < x).min(q - 1);
            counts[k] += 1;
        }
        let ar = agreement_rate_from_class_sizes(&counts)
            .expect("participant count checked above");
        samples.push(ar);
    }

    let mean = samples.iter().sum::<f64>() / draws as f64;
    let variance = if draws > 1 {
        samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (draws - 1) as f64
    } else {
        0.0
    };
    let mut sorted = samples.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    Ok(NullDistribution {
        q90: quantile(&sorted, 0.90),
        q95: quantile(&sorted, 0.95),
        q99: quantile(&sorted, 0.99),
        samples,
        mean,
        variance,
    })
}

/// Upper-tail add-one p-value: (count of samples ≥ observed + 1)/(draws + 1).
pub fn p_value(observed_ar: f64, dist: &NullDistribution) -> f64 {
    let exceed = dist.samples.iter().filter(|&&s| s >= observed_ar).count();
    (exceed + 1) as f64 / (dist.samples.len() + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_category_always_agrees() {
        let model = NullModel::uniform(10, 1, 1);
        let dist = simulate_null(&model, 100).unwrap();
        assert!(dist.samples.iter().all(|&ar| ar == 1.0));
        assert_eq!(dist.mean, 1.0);
        assert_eq!(dist.q99, 1.0);
    }

    #[test]
    fn fixed_seed_reproduces_samples() {
        let model = NullModel::uniform(20, 4, 99);
        let a = simulate_null(&model, 500).unwrap();
        let b = simulate_null(&model, 500).unwrap();
        assert_eq!(a.samples, b.samples);

        let other = NullModel::uniform(20, 4, 100);
        let c = simulate_null(&other, 500).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn extending_draws_keeps_prefix() {
        // Per-draw streams: the first k draws do not depend on the total.
        let model = NullModel::uniform(20, 4, 7);
        let short = simulate_null(&model, 100).unwrap();
        let long = simulate_null(&model, 200).unwrap();
        assert_eq!(short.samples[..], long.samples[..100]);
    }

    #[test]
    fn p_value_bounds_and_monotonicity() {
        let model = NullModel::uniform(20, 4, 5);
        let dist = simulate_null(&model, 1000).unwrap();
        assert_eq!(p_value(0.0, &dist), 1.0);
        let ties = dist.samples.iter().filter(|&&s| s >= 1.0).count();
        assert_eq!(p_value(1.0, &dist), (ties + 1) as f64 / 1001.0);
        let mut last = 1.0;
        for observed in [0.0, 0.1, 0.2, 0.4, 0.8, 1.0] {
            let p = p_value(observed, &dist);
            assert!(p <= last);
            last = p;
        }
    }

    #[test]
    fn zipf_and_empirical_probabilities() {
        let zipf = NullModel {
            participant_count: 10,
            category_count: 3,
            distribution: ProposalDistribution::Zipf { exponent: 1.0 },
            seed: 1,
        };
        let p = zipf.probabilities().unwrap();
        let z = 1.0 + 0.5 + 1.0 / 3.0;
        assert!((p[0] - 1.0 / z).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let emp = NullModel {
            participant_count: 10,
            category_count: 2,
            distribution: ProposalDistribution::Empirical {
                weights: vec![3.0, 1.0],
            },
            seed: 1,
        };
        assert_eq!(emp.probabilities().unwrap(), vec![0.75, 0.25]);

        let bad = NullModel {
            participant_count: 10,
            category_count: 2,
            distribution: ProposalDistribution::Empirical {
                weights: vec![-1.0, 2.0],
            },
            seed: 1,
        };
        assert_eq!(bad.probabilities(), Err(SimulationError::BadWeights));
    }

    #[test]
    fn quantiles_are_ordered() {
        let model = NullModel::uniform(20, 6, 3);
        let dist = simulate_null(&model, 2000).unwrap();
        assert!(dist.q90 <= dist.q95);
        assert!(dist.q95 <= dist.q99);
        assert!(dist.samples.iter().all(|&s| (0.0..=1.0).contains(&s)));
    }

    #[test]
    fn model_validation() {
        assert_eq!(
            simulate_null(&NullModel::uniform(1, 4, 0), 10),
            Err(SimulationError::TooFewParticipants { found: 1 })
        );
        assert_eq!(
            simulate_null(&NullModel::uniform(5, 0, 0), 10),
            Err(SimulationError::NoCategories { found: 0 })
        );
        assert_eq!(
            simulate_null(&NullModel::uniform(5, 2, 0), 0),
            Err(SimulationError::NoDraws)
        );
    }
}
