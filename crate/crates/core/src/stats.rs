//! Benchmark statistics: improvement ratios over the random baseline, a
//! one-sample Student t-test, and empirical CDFs.
//!
//! The t-distribution CDF is computed from the regularized incomplete
//! beta function (Lentz continued fraction over a Lanczos log-gamma), so
//! no external statistics dependency is needed. Statistics are computed
//! in `f64` regardless of the scalar type used by the search itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative gain of an optimizer over the random baseline:
/// `(acc_algo - acc_random) / acc_random`.
pub fn improvement_ratio(acc_algo: f64, acc_random: f64) -> Result<f64> {
    if !(acc_random > 0.0) {
        return Err(Error::Stats(format!(
            "improvement ratio undefined for baseline {acc_random}"
        )));
    }
    Ok((acc_algo - acc_random) / acc_random)
}

/// ln Γ(z) for z > 0 (Lanczos approximation, Numerical Recipes
/// coefficients).
pub fn ln_gamma(z: f64) -> f64 {
    debug_assert!(z > 0.0);
    const C: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut sum = 1.000000000190015;
    for (i, &c) in C.iter().enumerate() {
        sum += c / (z + i as f64 + 1.0);
    }
    let tmp = z + 5.5;
    let tmp = (z + 0.5) * tmp.ln() - tmp;
    tmp + (2.5066282746310005 * sum / z).ln()
}

/// Regularized incomplete beta function I_x(a, b), evaluated with the
/// modified Lentz continued fraction.
pub fn inc_beta(x: f64, a: f64, b: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    // Use the symmetry relation where the fraction converges fastest.
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - inc_beta(1.0 - x, b, a);
    }

    let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta).exp();

    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let mut f = 1.0;
    let mut c = 1.0;
    let mut d = 0.0;
    let step = |num: f64, f: &mut f64, c: &mut f64, d: &mut f64| -> f64 {
        *d = 1.0 + num * *d;
        if d.abs() < TINY {
            *d = TINY;
        }
        *d = 1.0 / *d;
        *c = 1.0 + num / *c;
        if c.abs() < TINY {
            *c = TINY;
        }
        let delta = *c * *d;
        *f *= delta;
        delta
    };

    for m in 0..MAX_ITER {
        let mf = m as f64;
        let odd = -(a + mf) * (a + b + mf) * x / ((a + 2.0 * mf) * (a + 2.0 * mf + 1.0));
        let delta = step(odd, &mut f, &mut c, &mut d);
        if (delta - 1.0).abs() < EPS {
            break;
        }
        let even = (mf + 1.0) * (b - mf - 1.0) * x / ((a + 2.0 * mf + 1.0) * (a + 2.0 * mf + 2.0));
        let delta = step(even, &mut f, &mut c, &mut d);
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    front / (f * a)
}

/// CDF of Student's t-distribution with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    debug_assert!(df > 0.0);
    let x = df / (df + t * t);
    let p = 0.5 * inc_beta(x, 0.5 * df, 0.5);
    if t >= 0.0 {
        1.0 - p
    } else {
        p
    }
}

/// One-sample t-test result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t_statistic: f64,
    pub df: f64,
    /// Two-sided p-value for H0: mean equals the hypothesized mean.
    pub p_two_sided: f64,
    /// One-sided p-value for H1: mean greater than the hypothesized mean.
    pub p_greater: f64,
}

/// Sample mean and (n-1)-normalized standard deviation.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One-sample Student t-test of the hypothesis that the population mean
/// equals `h0_mean`. Requires at least two samples with positive variance.
pub fn one_sample_ttest(samples: &[f64], h0_mean: f64) -> Result<TTest> {
    if samples.len() < 2 {
        return Err(Error::Stats(format!(
            "t-test needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let (mean, std) = mean_std(samples);
    if !(std > 0.0) {
        return Err(Error::Stats("t-test sample variance is zero".into()));
    }
    let t = (mean - h0_mean) / (std / n.sqrt());
    let df = n - 1.0;
    let p_two_sided = 2.0 * (1.0 - student_t_cdf(t.abs(), df));
    let p_greater = 1.0 - student_t_cdf(t, df);
    Ok(TTest {
        t_statistic: t,
        df,
        p_two_sided,
        p_greater,
    })
}

/// Empirical CDF: sorted sample values with cumulative fractions
/// `i / n`, one step per sample.
pub fn empirical_cdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, (i + 1) as f64 / n))
        .collect()
}

/// Benchmark comparison of one optimizer against the random baseline over
/// matched-budget trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub algorithm: String,
    /// Per-trial improvement ratios over the random baseline.
    pub ratios: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    pub t_statistic: Option<f64>,
    pub p_two_sided: Option<f64>,
    pub p_greater: Option<f64>,
    /// Set when the t-test is degenerate (fewer than 2 trials or zero
    /// variance).
    pub note: Option<String>,
    pub cdf: Vec<(f64, f64)>,
}

impl ComparisonReport {
    /// Build from per-trial best values of an algorithm and of the random
    /// baseline (same trial order, same budgets).
    pub fn from_trials(algorithm: &str, algo: &[f64], random: &[f64]) -> Result<Self> {
        if algo.len() != random.len() || algo.is_empty() {
            return Err(Error::Stats(format!(
                "mismatched trial counts: {} vs {}",
                algo.len(),
                random.len()
            )));
        }
        let ratios: Result<Vec<f64>> = algo
            .iter()
            .zip(random)
            .map(|(&a, &r)| improvement_ratio(a, r))
            .collect();
        let ratios = ratios?;
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let std_dev = if ratios.len() >= 2 {
            mean_std(&ratios).1
        } else {
            0.0
        };
        let (t_statistic, p_two_sided, p_greater, note) = match one_sample_ttest(&ratios, 0.0) {
            Ok(tt) => (
                Some(tt.t_statistic),
                Some(tt.p_two_sided),
                Some(tt.p_greater),
                None,
            ),
            Err(e) => (None, None, None, Some(e.to_string())),
        };
        Ok(ComparisonReport {
            algorithm: algorithm.to_string(),
            cdf: empirical_cdf(&ratios),
            ratios,
            mean,
            std_dev,
            t_statistic,
            p_two_sided,
            p_greater,
            note,
        })
    }
}
