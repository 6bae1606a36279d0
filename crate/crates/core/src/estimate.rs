//! Monte Carlo bookkeeping: binomial estimates with Wilson intervals,
//! chi-square tests, Poisson survival comparisons, and the JSON result
//! record written by every experiment.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};

/// Confidence level used for every reported interval.
pub const CONFIDENCE: f64 = 0.95;

/// Normal quantile for a two-sided interval at `confidence`.
pub fn z_for(confidence: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - (1.0 - confidence) / 2.0)
}

/// Wilson score interval for `hits` successes out of `trials` at the given
/// two-sided confidence.
pub fn wilson_ci(hits: u64, trials: u64, confidence: f64) -> Result<(f64, f64)> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(invalid(format!("confidence must lie in (0,1), got {confidence}")));
    }
    wilson_ci_z(hits, trials, z_for(confidence))
}

/// Wilson score interval for a given normal quantile `z`.
pub fn wilson_ci_z(hits: u64, trials: u64, z: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(invalid("Wilson interval needs at least one trial"));
    }
    if hits > trials {
        return Err(invalid(format!("hits ({hits}) exceed trials ({trials})")));
    }
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let low = if hits == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let high = if hits == trials {
        1.0
    } else {
        (center + half).clamp(p, 1.0)
    };
    Ok((low, high))
}

/// A binomial Monte Carlo estimate. Trials that hit the step cap are
/// excluded from `p_hat`: `p_hat = hits / (trials − cap_count)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub trials: u64,
    pub hits: u64,
    pub cap_count: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub master_seed: u64,
    pub metadata: BTreeMap<String, Value>,
}

impl McEstimate {
    pub fn from_counts(trials: u64, hits: u64, cap_count: u64, master_seed: u64) -> Result<Self> {
        if hits + cap_count > trials {
            return Err(invalid(format!(
                "hits ({hits}) + cap_count ({cap_count}) exceed trials ({trials})"
            )));
        }
        let decided = trials - cap_count;
        if decided == 0 {
            return Err(Error::InsufficientData("no decided trials".into()));
        }
        let (ci_low, ci_high) = wilson_ci(hits, decided, CONFIDENCE)?;
        Ok(Self {
            trials,
            hits,
            cap_count,
            p_hat: hits as f64 / decided as f64,
            ci_low,
            ci_high,
            master_seed,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn decided(&self) -> u64 {
        self.trials - self.cap_count
    }

    /// Normal-approximation standard error of `p_hat`.
    pub fn sigma(&self) -> f64 {
        (self.p_hat * (1.0 - self.p_hat) / self.decided() as f64).sqrt()
    }

    /// Wilson interval at normal quantile `z` (e.g. `z = 3` for "3σ").
    pub fn interval_z(&self, z: f64) -> (f64, f64) {
        wilson_ci_z(self.hits, self.decided(), z).expect("counts validated at construction")
    }

    /// Whether `p` lies inside the Wilson interval at quantile `z`.
    pub fn agrees_with(&self, p: f64, z: f64) -> bool {
        let (lo, hi) = self.interval_z(z);
        lo <= p && p <= hi
    }

    /// Pools the counts of two estimates of the same quantity.
    pub fn merge(&self, other: &McEstimate) -> Result<McEstimate> {
        if self.master_seed != other.master_seed || self.metadata != other.metadata {
            return Err(invalid("merging estimates with different parameters"));
        }
        let mut m = McEstimate::from_counts(
            self.trials + other.trials,
            self.hits + other.hits,
            self.cap_count + other.cap_count,
            self.master_seed,
        )?;
        m.metadata = self.metadata.clone();
        Ok(m)
    }
}

/// Least-squares fit of `log p = log C − κ·x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kappa_hat: f64,
    pub c_hat: f64,
    /// `log p_i − (log Ĉ − κ̂ x_i)` for every point used.
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    /// Points whose `p_hat` was zero and were replaced by the CI upper bound.
    pub substituted: Vec<usize>,
    /// Points left out because `p_hat` was zero.
    pub excluded: Vec<usize>,
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, r²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InsufficientData("linear fit needs ≥ 2 paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all x values coincide".into()));
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok((a, b, r2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub categories: usize,
}

fn chi_square_p(statistic: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("df > 0");
    (1.0 - dist.cdf(statistic)).clamp(0.0, 1.0)
}

/// Two-sample chi-square homogeneity test over the union of categories.
/// Every expected cell count must be at least 5.
pub fn chi_square_homogeneity<K: Ord + Clone>(
    counts_a: &BTreeMap<K, u64>,
    counts_b: &BTreeMap<K, u64>,
) -> Result<ChiSquareReport> {
    let na: u64 = counts_a.values().sum();
    let nb: u64 = counts_b.values().sum();
    if na == 0 || nb == 0 {
        return Err(Error::InsufficientData(
            "chi-square homogeneity needs two nonempty samples".into(),
        ));
    }
    let cats: BTreeSet<&K> = counts_a.keys().chain(counts_b.keys()).collect();
    let total = (na + nb) as f64;
    let mut stat = 0.0;
    for k in &cats {
        let oa = *counts_a.get(k).unwrap_or(&0) as f64;
        let ob = *counts_b.get(k).unwrap_or(&0) as f64;
        let col = oa + ob;
        let ea = na as f64 * col / total;
        let eb = nb as f64 * col / total;
        if ea < 5.0 || eb < 5.0 {
            return Err(Error::InsufficientData(format!(
                "expected cell count {:.2} below 5; run more trials",
                ea.min(eb)
            )));
        }
        stat += (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb;
    }
    let df = cats.len() - 1;
    Ok(ChiSquareReport {
        statistic: stat,
        df,
        p_value: chi_square_p(stat, df),
        categories: cats.len(),
    })
}

/// One-sample chi-square goodness of fit against category probabilities.
pub fn chi_square_goodness_of_fit(observed: &[u64], probs: &[f64]) -> Result<ChiSquareReport> {
    if observed.len() != probs.len() || observed.is_empty() {
        return Err(invalid("observed and probability vectors must match and be nonempty"));
    }
    let psum: f64 = probs.iter().sum();
    if (psum - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("probabilities sum to {psum}, not 1")));
    }
    let n: u64 = observed.iter().sum();
    let mut stat = 0.0;
    for (&o, &p) in observed.iter().zip(probs) {
        let e = n as f64 * p;
        if e < 5.0 {
            return Err(Error::InsufficientData(format!("expected cell count {e:.2} below 5")));
        }
        stat += (o as f64 - e).powi(2) / e;
    }
    let df = observed.len() - 1;
    Ok(ChiSquareReport {
        statistic: stat,
        df,
        p_value: chi_square_p(stat, df),
        categories: observed.len(),
    })
}

/// `P(X > t)` for `X ~ Poisson(λ)`, by direct summation of the mass
/// function.
pub fn poisson_sf(t: u64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    // log pmf(k) = −λ + k log λ − log k!
    let log_pmf = |k: u64| -> f64 { -lambda + k as f64 * lambda.ln() - ln_factorial(k) };
    if (t as f64) < lambda {
        let cdf: f64 = (0..=t).map(|k| log_pmf(k).exp()).sum();
        (1.0 - cdf).max(0.0)
    } else {
        let mut sum = 0.0;
        let mut k = t + 1;
        let mut term = log_pmf(k).exp();
        while term > 0.0 && term > sum * 1e-17 {
            sum += term;
            k += 1;
            term *= lambda / k as f64;
        }
        sum
    }
}

pub(crate) fn ln_factorial(k: u64) -> f64 {
    statrs::function::factorial::ln_factorial(k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub t: u64,
    pub empirical: f64,
    pub theoretical: f64,
    pub slack: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub pass: bool,
    pub lambda: f64,
    pub n_runs: usize,
    pub points: Vec<SurvivalPoint>,
}

/// Pointwise check that the empirical survival function of `samples` lies
/// below the `Poisson(λ)` survival function plus a 3σ binomial slack,
/// `σ = sqrt(S(t)(1 − S(t))/n)`. Points run over `0..=⌈eλ⌉` and up to the
/// largest observation.
pub fn survival_domination(samples: &[u64], lambda: f64) -> Result<DominationReport> {
    const MIN_RUNS: usize = 100;
    if samples.len() < MIN_RUNS {
        return Err(Error::InsufficientData(format!(
            "survival domination needs ≥ {MIN_RUNS} runs, got {}",
            samples.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(invalid(format!("λ must be ≥ 0, got {lambda}")));
    }
    let n = samples.len();
    let max_obs = samples.iter().copied().max().unwrap_or(0);
    let t_max = ((std::f64::consts::E * lambda).ceil() as u64).max(max_obs);
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let mut points = Vec::with_capacity(t_max as usize + 1);
    for t in 0..=t_max {
        let above = n - sorted.partition_point(|&x| x <= t);
        let empirical = above as f64 / n as f64;
        let theoretical = poisson_sf(t, lambda);
        let slack = 3.0 * (theoretical * (1.0 - theoretical) / n as f64).sqrt();
        points.push(SurvivalPoint {
            t,
            empirical,
            theoretical,
            slack,
            ok: empirical <= theoretical + slack,
        });
    }
    Ok(DominationReport {
        pass: points.iter().all(|p| p.ok),
        lambda,
        n_runs: n,
        points,
    })
}

/// The JSON summary written next to every CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub params: Value,
    pub seed: u64,
    pub trials: Option<u64>,
    pub hits: Option<u64>,
    pub cap_count: Option<u64>,
    pub p_hat: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub extra: BTreeMap<String, Value>,
}

impl ResultRecord {
    pub fn new(experiment: &str, params: Value, seed: u64) -> Self {
        Self {
            experiment: experiment.to_string(),
            params,
            seed,
            trials: None,
            hits: None,
            cap_count: None,
            p_hat: None,
            ci: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_estimate(mut self, est: &McEstimate) -> Self {
        self.trials = Some(est.trials);
        self.hits = Some(est.hits);
        self.cap_count = Some(est.cap_count);
        self.p_hat = Some(est.p_hat);
        self.ci = Some([est.ci_low, est.ci_high]);
        self
    }

    pub fn extra(mut self, key: &str, value: impl Serialize) -> Self {
        self.extra.insert(
            key.to_string(),
            serde_json::to_value(value).expect("serializable extra value"),
        );
        self
    }
}
