//! Least-squares logistic growth fitting for consensus curves.
//!
//! Model: c(τ) = lower + (upper − lower) / (1 + exp(−k·(τ − midpoint))).
//! Initialization scans a coarse (midpoint, steepness) grid, solving the two
//! asymptotes exactly by linear least squares at each grid point, then a
//! damped Gauss–Newton loop refines all four parameters.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::TrajectoryError;

/// Fitted logistic growth parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Lower asymptote.
    pub lower: f64,
    /// Upper asymptote.
    pub upper: f64,
    /// τ at the inflection point.
    pub midpoint: f64,
    /// Growth steepness; positive when converged.
    pub steepness: f64,
    /// Residual sum of squares at the solution.
    pub rss: f64,
    /// False for degenerate data (flat curves) or a stalled refinement; the
    /// parameters then hold the best value found so far.
    pub converged: bool,
}

impl LogisticFit {
    pub fn evaluate(&self, tau: f64) -> f64 {
        self.lower + (self.upper - self.lower) * sigmoid(self.steepness * (tau - self.midpoint))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn rss_of(params: &[f64; 4], samples: &[(f64, f64)]) -> f64 {
    samples
        .iter()
        .map(|&(tau, y)| {
            let s = sigmoid(params[3] * (tau - params[2]));
            let r = params[0] + (params[1] - params[0]) * s - y;
            r * r
        })
        .sum()
}

/// For fixed (midpoint, steepness) the model is linear in the asymptotes:
/// solve the 2×2 normal equations exactly and return (lower, upper, rss).
fn solve_asymptotes(midpoint: f64, steepness: f64, samples: &[(f64, f64)]) -> ([f64; 4], f64) {
    // model = lower·(1−s) + upper·s
    let mut a00 = 0.0;
    let mut a01 = 0.0;
    let mut a11 = 0.0;
    let mut b0 = 0.0;
    let mut b1 = 0.0;
    for &(tau, y) in samples {
        let s = sigmoid(steepness * (tau - midpoint));
        let u = 1.0 - s;
        a00 += u * u;
        a01 += u * s;
        a11 += s * s;
        b0 += u * y;
        b1 += s * y;
    }
    let det = a00 * a11 - a01 * a01;
    let (lower, upper) = if det.abs() > 1e-12 {
        (
            (b0 * a11 - b1 * a01) / det,
            (a00 * b1 - a01 * b0) / det,
        )
    } else {
        // s is effectively constant: any split works, use the mean level.
        let mean = samples.iter().map(|&(_, y)| y).sum::<f64>() / samples.len() as f64;
        (mean, mean)
    };
    let params = [lower, upper, midpoint, steepness];
    let rss = rss_of(&params, samples);
    (params, rss)
}

/// Solves A·x = b for a small dense system via Gaussian elimination with
/// partial pivoting. Returns None for a singular system.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in (col + 1)..n {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// Fits the four-parameter logistic to (τ, consensus) samples.
///
/// Needs at least 4 samples. Never panics on hard data: a flat curve or a
/// stalled refinement comes back with `converged = false` and the
/// best-so-far parameters.
pub fn fit_logistic(samples: &[(f64, f64)]) -> Result<LogisticFit, TrajectoryError> {
    if samples.len() < 4 {
        return Err(TrajectoryError::InsufficientSamples {
            found: samples.len(),
        });
    }

    let y_min = samples.iter().map(|&(_, y)| y).fold(f64::INFINITY, f64::min);
    let y_max = samples
        .iter()
        .map(|&(_, y)| y)
        .fold(f64::NEG_INFINITY, f64::max);
    let t_min = samples.iter().map(|&(t, _)| t).fold(f64::INFINITY, f64::min);
    let t_max = samples
        .iter()
        .map(|&(t, _)| t)
        .fold(f64::NEG_INFINITY, f64::max);

    if y_max - y_min < 1e-9 {
        // Flat data: asymptotes coincide, steepness is unidentifiable.
        let mean = samples.iter().map(|&(_, y)| y).sum::<f64>() / samples.len() as f64;
        let params = [mean, mean, 0.5 * (t_min + t_max), 0.0];
        return Ok(LogisticFit {
            lower: mean,
            upper: mean,
            midpoint: params[2],
            steepness: 0.0,
            rss: rss_of(&params, samples),
            converged: false,
        });
    }

    let span = (t_max - t_min).max(1e-9);

    // Coarse grid initialization.
    let mut best_params = [y_min, y_max, 0.5 * (t_min + t_max), 4.0 / span];
    let mut best_rss = rss_of(&best_params, samples);
    for mi in 0..21 {
        let midpoint = t_min + span * mi as f64 / 20.0;
        for e in -2..=7 {
            let steepness = 2f64.powi(e) / span;
            let (params, rss) = solve_asymptotes(midpoint, steepness, samples);
            if rss < best_rss {
                best_rss = rss;
                best_params = params;
            }
        }
    }

    // Damped Gauss–Newton refinement on all four parameters.
    let mut params = best_params;
    let mut rss = best_rss;
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..200 {
        let [lower, upper, midpoint, steepness] = params;
        let mut jtj = vec![vec![0.0f64; 4]; 4];
        let mut jtr = vec![0.0f64; 4];
        for &(tau, y) in samples {
            let s = sigmoid(steepness * (tau - midpoint));
            let ds = s * (1.0 - s);
            let jac = [
                1.0 - s,
                s,
                -(upper - lower) * ds * steepness,
                (upper - lower) * ds * (tau - midpoint),
            ];
            let r = lower + (upper - lower) * s - y;
            for i in 0..4 {
                for j in 0..4 {
                    jtj[i][j] += jac[i] * jac[j];
                }
                jtr[i] += jac[i] * r;
            }
        }

        let grad_norm = jtr.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < 1e-10 * (1.0 + rss) {
            converged = true;
            break;
        }

        let mut damped = jtj.clone();
        for i in 0..4 {
            damped[i][i] += lambda * (1.0 + jtj[i][i]);
        }
        let Some(step) = solve_dense(damped, jtr.clone()) else {
            break;
        };
        let trial = [
            params[0] - step[0],
            params[1] - step[1],
            params[2] - step[2],
            params[3] - step[3],
        ];
        let trial_rss = rss_of(&trial, samples);
        if trial_rss < rss {
            let improvement = rss - trial_rss;
            params = trial;
            rss = trial_rss;
            lambda = (lambda / 10.0).max(1e-12);
            if improvement < 1e-14 * (1.0 + rss) {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                converged = true; // stuck at a (local) minimum
                break;
            }
        }
    }

    // Canonical orientation: positive steepness.
    let [mut lower, mut upper, midpoint, mut steepness] = params;
    if steepness < 0.0 {
        std::mem::swap(&mut lower, &mut upper);
        steepness = -steepness;
    }
    if steepness == 0.0 {
        converged = false;
    }

    Ok(LogisticFit {
        lower,
        upper,
        midpoint,
        steepness,
        rss,
        converged,
    })
}

/// Lack-of-fit assessment of a logistic fit at significance level `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitAssessment {
    pub f_statistic: f64,
    pub p_value: f64,
    pub accepted: bool,
}

/// Compares the residual mean square of the fit against the sample variance
/// of the consensus values with an F-test: F = (rss/(n−4)) / s², upper-tail
/// p from F(n−4, n−1). The fit is accepted when p ≥ alpha, i.e. the
/// residuals are not significantly large relative to the data's own spread.
pub fn lack_of_fit_test(
    samples: &[(f64, f64)],
    fit: &LogisticFit,
    alpha: f64,
) -> Result<FitAssessment, TrajectoryError> {
    let n = samples.len();
    if n < 5 {
        // Need residual degrees of freedom beyond the 4 parameters.
        return Err(TrajectoryError::InsufficientSamples { found: n });
    }
    let mean = samples.iter().map(|&(_, y)| y).sum::<f64>() / n as f64;
    let ss_total: f64 = samples.iter().map(|&(_, y)| (y - mean) * (y - mean)).sum();
    let variance = ss_total / (n - 1) as f64;

    if variance < 1e-12 {
        let accepted = fit.rss < 1e-9;
        return Ok(FitAssessment {
            f_statistic: 0.0,
            p_value: if accepted { 1.0 } else { 0.0 },
            accepted,
        });
    }

    let residual_ms = fit.rss / (n - 4) as f64;
    let f_statistic = residual_ms / variance;
    let dist = FisherSnedecor::new((n - 4) as f64, (n - 1) as f64)
        .expect("degrees of freedom are positive");
    let p_value = 1.0 - dist.cdf(f_statistic);
    Ok(FitAssessment {
        f_statistic,
        p_value,
        accepted: p_value >= alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logistic_samples(
        lower: f64,
        upper: f64,
        midpoint: f64,
        steepness: f64,
        grid: &[f64],
    ) -> Vec<(f64, f64)> {
        grid.iter()
            .map(|&t| {
                (
                    t,
                    lower + (upper - lower) * sigmoid(steepness * (t - midpoint)),
                )
            })
            .collect()
    }

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn noiseless_roundtrip_recovers_parameters() {
        let samples = logistic_samples(0.0, 100.0, 1.0, 2.0, &grid(50, 0.0, 3.0));
        let fit = fit_logistic(&samples).unwrap();
        assert!(fit.converged);
        assert!((fit.lower - 0.0).abs() < 1e-3);
        assert!((fit.upper - 100.0).abs() / 100.0 < 1e-3);
        assert!((fit.midpoint - 1.0).abs() < 1e-3);
        assert!((fit.steepness - 2.0).abs() / 2.0 < 1e-3);
        assert!(fit.rss < 1e-6);
    }

    #[test]
    fn constant_curve_is_flagged_degenerate() {
        let samples: Vec<(f64, f64)> = grid(10, 0.0, 5.0).into_iter().map(|t| (t, 100.0)).collect();
        let fit = fit_logistic(&samples).unwrap();
        assert!(!fit.converged);
        assert!((fit.lower - 100.0).abs() < 1e-9);
        assert!((fit.upper - 100.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_samples_error() {
        let samples = vec![(0.0, 0.0), (1.0, 50.0), (2.0, 100.0)];
        assert_eq!(
            fit_logistic(&samples),
            Err(TrajectoryError::InsufficientSamples { found: 3 })
        );
    }

    #[test]
    fn noisy_fit_rss_stays_small() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let clean = logistic_samples(5.0, 95.0, 2.0, 3.0, &grid(50, 0.0, 4.0));
        let noisy: Vec<(f64, f64)> = clean
            .iter()
            .map(|&(t, y)| (t, y + rng.gen_range(-1.0..1.0)))
            .collect();
        let fit = fit_logistic(&noisy).unwrap();
        assert!(fit.rss <= noisy.len() as f64 * 4.0, "rss = {}", fit.rss);
    }

    #[test]
    fn decreasing_data_canonicalizes_to_positive_steepness() {
        let samples = logistic_samples(80.0, 10.0, 1.5, 2.5, &grid(40, 0.0, 3.0));
        let fit = fit_logistic(&samples).unwrap();
        assert!(fit.steepness > 0.0);
        assert!(fit.lower > fit.upper); // decreasing curve: asymptotes swap
        assert!((fit.evaluate(0.0) - samples[0].1).abs() < 1e-3);
    }

    #[test]
    fn good_fit_is_accepted_poor_fit_rejected() {
        let samples = logistic_samples(0.0, 100.0, 1.0, 2.0, &grid(30, 0.0, 3.0));
        let fit = fit_logistic(&samples).unwrap();
        let assessment = lack_of_fit_test(&samples, &fit, 0.05).unwrap();
        assert!(assessment.accepted);
        assert!(assessment.p_value > 0.95);

        // Force a terrible "fit": a flat line through rising data.
        let bad = LogisticFit {
            lower: 50.0,
            upper: 50.0,
            midpoint: 1.0,
            steepness: 1.0,
            rss: samples
                .iter()
                .map(|&(_, y)| (y - 50.0) * (y - 50.0))
                .sum::<f64>()
                * 3.0,
            converged: true,
        };
        let assessment = lack_of_fit_test(&samples, &bad, 0.05).unwrap();
        assert!(!assessment.accepted);
    }
}
