//! Γ-sensitivity bounds for the weighted set-difference statistic.
//!
//! Two units in the same set may differ in their odds of treatment by at most
//! a factor Γ. For each set the lone treated unit (or the lone control) is
//! chosen with probabilities proportional to Γ on `k` positions and 1 on the
//! rest. The worst case for a large statistic puts Γ on the `k` largest
//! scores; `k` is searched over `1..n-1`, keeping the largest mean (ties go to
//! the larger variance). Set means and variances are combined into a normal
//! deviate, giving an upper bound on the one-sided P-value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{interval_family_with, IntervalSet, InvertOptions, PValueSource, VersionData};
use crate::randtest::{normal_tails, score, NullSpec, Scored, StatisticSpec, TestResult};
use crate::strata::FullMatch;

/// Bound on the odds ratio of treatment between matched units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSpec {
    gamma: f64,
}

impl GammaSpec {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be finite and >= 1, got {gamma}")));
        }
        Ok(GammaSpec { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Odds multipliers of an unobserved covariate: `lambda` on treatment,
/// `delta` on a worse outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplifyPair {
    pub lambda: f64,
    pub delta: f64,
}

impl AmplifyPair {
    pub fn new(lambda: f64, delta: f64) -> Result<Self> {
        if !(lambda > 1.0 && delta > 1.0 && lambda.is_finite() && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda and delta must both exceed 1, got ({lambda}, {delta})"
            )));
        }
        Ok(AmplifyPair { lambda, delta })
    }
}

/// The Γ equivalent to a `(lambda, delta)` pair in a matched pair.
pub fn amplify(p: AmplifyPair) -> f64 {
    (p.lambda * p.delta + 1.0) / (p.lambda + p.delta)
}

/// Worst-case moments of one set's treated-minus-control difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetBound {
    pub k: usize,
    pub mean: f64,
    pub variance: f64,
}

/// Values of the singleton's selection score, sorted descending. The
/// difference is `(n * v_sel - sum v) / (n - 1)` in either orientation.
fn selection_values(scores: &[f64], singleton_treated: bool) -> Vec<f64> {
    let mut v: Vec<f64> = if singleton_treated {
        scores.to_vec()
    } else {
        scores.iter().map(|q| -q).collect()
    };
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn moments_for_k(v: &[f64], gamma: f64, k: usize) -> (f64, f64) {
    let n = v.len() as f64;
    let denom = k as f64 * gamma + (n - k as f64);
    let p = |j: usize| if j < k { gamma / denom } else { 1.0 / denom };
    let mu_v: f64 = v.iter().enumerate().map(|(j, x)| p(j) * x).sum();
    let nu_v: f64 = v.iter().enumerate().map(|(j, x)| p(j) * (x - mu_v).powi(2)).sum();
    let sum: f64 = v.iter().sum();
    let a = n / (n - 1.0);
    ((n * mu_v - sum) / (n - 1.0), a * a * nu_v)
}

/// Searches `k = 1..n-1` for the largest mean of the set difference.
pub fn set_worst_case(scores: &[f64], singleton_treated: bool, gamma: f64) -> SetBound {
    let v = selection_values(scores, singleton_treated);
    let mut best = SetBound {
        k: 0,
        mean: f64::NEG_INFINITY,
        variance: 0.0,
    };
    for k in 1..v.len() {
        let (mean, variance) = moments_for_k(&v, gamma, k);
        let tol = 1e-12 * mean.abs().max(1.0);
        if mean > best.mean + tol || ((mean - best.mean).abs() <= tol && variance > best.variance) {
            best = SetBound { k, mean, variance };
        }
    }
    best
}

/// Exact distribution of one set's difference when the `k` largest
/// selection scores carry odds Γ: `(difference, probability)` per member.
pub fn biased_set_distribution(scores: &[f64], singleton_treated: bool, gamma: f64, k: usize) -> Vec<(f64, f64)> {
    let v = selection_values(scores, singleton_treated);
    let n = v.len() as f64;
    let denom = k as f64 * gamma + (n - k as f64);
    let sum: f64 = v.iter().sum();
    v.iter()
        .enumerate()
        .map(|(j, x)| {
            let p = if j < k { gamma / denom } else { 1.0 / denom };
            ((n * x - sum) / (n - 1.0), p)
        })
        .collect()
}

fn bound_moments(scored: &Scored, gamma: f64, negate: bool) -> (f64, f64, f64) {
    let mut expectation = 0.0;
    let mut variance = 0.0;
    for (s, w) in scored.sets.iter().zip(&scored.weights) {
        let bound = if negate {
            let neg: Vec<f64> = s.scores.iter().map(|q| -q).collect();
            set_worst_case(&neg, s.singleton_treated, gamma)
        } else {
            set_worst_case(&s.scores, s.singleton_treated, gamma)
        };
        expectation += w * bound.mean;
        variance += w * w * bound.variance;
    }
    let t = scored.observed();
    (if negate { -t } else { t }, expectation, variance)
}

/// Upper bounds on both one-sided P-values of `H(tau0)` when assignment
/// bias is at most Γ. At Γ = 1 these equal the normal-approximation
/// randomization P-values.
pub fn gamma_pvalue_bound(fm: &FullMatch, tau0: f64, g: GammaSpec, spec: &StatisticSpec) -> Result<TestResult> {
    let scored = score(fm, tau0, spec);
    let (t, e_up, v_up) = bound_moments(&scored, g.gamma(), false);
    let (neg_t, e_low, v_low) = bound_moments(&scored, g.gamma(), true);
    let p_upper = normal_tails(t, e_up, v_up).0;
    let p_lower = normal_tails(neg_t, e_low, v_low).0;
    Ok(TestResult::from_one_sided(tau0, t, p_upper, p_lower, NullSpec::Normal, g.gamma()))
}

/// The interval family with Γ-bounded P-values in place of randomization
/// P-values.
pub fn sensitivity_interval(v: &VersionData, alpha: f64, g: GammaSpec, spec: &StatisticSpec) -> Result<IntervalSet> {
    interval_family_with(v, alpha, spec, &PValueSource::Sensitivity(g), &InvertOptions::default())
}
