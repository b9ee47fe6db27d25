//! Randomization tests of constant-shift hypotheses in a full match.
//!
//! Under `H(tau0)` the adjusted responses `Y - tau0 * Z` are fixed, and the
//! only randomness is which members of each set are treated. The statistic
//! is a weighted sum of per-set treated-minus-control score differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::strata::FullMatch;

/// Largest `prod_i C(n_i, m_i)` that exact enumeration accepts.
pub const EXACT_CAP: u128 = 10_000_000;

/// Minimum number of Monte Carlo draws.
pub const MIN_DRAWS: usize = 1000;

const MC_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatisticKind {
    MeanDiff,
    HuberM,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScalePolicy {
    /// Median absolute within-set residual, pooled over all units.
    Mad,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticSpec {
    pub kind: StatisticKind,
    pub huber_scale: ScalePolicy,
}

impl StatisticSpec {
    pub fn mean_diff() -> Self {
        StatisticSpec {
            kind: StatisticKind::MeanDiff,
            huber_scale: ScalePolicy::Mad,
        }
    }

    pub fn huber() -> Self {
        StatisticSpec {
            kind: StatisticKind::HuberM,
            huber_scale: ScalePolicy::Mad,
        }
    }

    pub fn huber_fixed(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("huber scale must be positive, got {scale}")));
        }
        Ok(StatisticSpec {
            kind: StatisticKind::HuberM,
            huber_scale: ScalePolicy::Fixed(scale),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum NullSpec {
    Exact,
    MonteCarlo { draws: usize, seed: u64 },
    Normal,
}

impl NullSpec {
    pub fn monte_carlo(draws: usize, seed: u64) -> Result<Self> {
        if draws < MIN_DRAWS {
            return Err(Error::InvalidArgument(format!(
                "monte carlo needs at least {MIN_DRAWS} draws, got {draws}"
            )));
        }
        Ok(NullSpec::MonteCarlo { draws, seed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub tau0: f64,
    pub statistic: f64,
    /// Tests against `tau > tau0`.
    pub p_upper: f64,
    /// Tests against `tau < tau0`.
    pub p_lower: f64,
    pub p_two_sided: f64,
    pub method: NullSpec,
    /// Sensitivity parameter; 1 for randomization inference.
    pub gamma: f64,
}

impl TestResult {
    pub(crate) fn from_one_sided(
        tau0: f64,
        statistic: f64,
        p_upper: f64,
        p_lower: f64,
        method: NullSpec,
        gamma: f64,
    ) -> Self {
        let p_upper = p_upper.clamp(0.0, 1.0);
        let p_lower = p_lower.clamp(0.0, 1.0);
        TestResult {
            tau0,
            statistic,
            p_upper,
            p_lower,
            p_two_sided: (2.0 * p_upper.min(p_lower)).min(1.0),
            method,
            gamma,
        }
    }
}

/// Scores of one matched set at a given `tau0`.
#[derive(Debug, Clone)]
pub(crate) struct ScoredSet {
    pub scores: Vec<f64>,
    pub sum: f64,
    /// True when the set has one treated member, false when it has one control.
    pub singleton_treated: bool,
    /// Position of the observed singleton.
    pub observed: usize,
}

impl ScoredSet {
    /// Treated-minus-control mean score when member `j` is the singleton.
    pub fn diff(&self, j: usize) -> f64 {
        let n = self.scores.len() as f64;
        let others = (self.sum - self.scores[j]) / (n - 1.0);
        if self.singleton_treated {
            self.scores[j] - others
        } else {
            others - self.scores[j]
        }
    }

    /// Permutation variance of [`ScoredSet::diff`] under uniform assignment.
    pub fn null_variance(&self) -> f64 {
        let n = self.scores.len() as f64;
        let mean = self.sum / n;
        let ss: f64 = self.scores.iter().map(|q| (q - mean).powi(2)).sum();
        n * ss / ((n - 1.0) * (n - 1.0))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Scored {
    pub sets: Vec<ScoredSet>,
    pub weights: Vec<f64>,
}

impl Scored {
    pub fn observed(&self) -> f64 {
        self.sets
            .iter()
            .zip(&self.weights)
            .fold(0.0, |acc, (s, w)| acc + w * s.diff(s.observed))
    }
}

/// Set weights `w_i` proportional to `m_i (n_i - m_i) / n_i`, summing to one.
pub fn set_weights(fm: &FullMatch) -> Vec<f64> {
    let raw: Vec<f64> = fm
        .strata()
        .iter()
        .map(|s| {
            let (m, n) = (s.treated_count() as f64, s.size() as f64);
            m * (n - m) / n
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn psi(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub(crate) fn score(fm: &FullMatch, tau0: f64, spec: &StatisticSpec) -> Scored {
    let adjusted: Vec<Vec<f64>> = fm
        .strata()
        .iter()
        .map(|s| {
            s.members
                .iter()
                .map(|u| if u.treated { u.outcome - tau0 } else { u.outcome })
                .collect()
        })
        .collect();
    let scores: Vec<Vec<f64>> = match spec.kind {
        StatisticKind::MeanDiff => adjusted,
        StatisticKind::HuberM => {
            let residuals: Vec<Vec<f64>> = adjusted
                .iter()
                .map(|a| {
                    let center = a.iter().sum::<f64>() / a.len() as f64;
                    a.iter().map(|x| x - center).collect()
                })
                .collect();
            let scale = match spec.huber_scale {
                ScalePolicy::Fixed(s) => s,
                ScalePolicy::Mad => median(residuals.iter().flatten().map(|r| r.abs()).collect()),
            };
            residuals
                .into_iter()
                .map(|r| {
                    r.into_iter()
                        .map(|x| if scale > 0.0 { psi(x / scale) } else { x.signum() * f64::from(u8::from(x != 0.0)) })
                        .collect()
                })
                .collect()
        }
    };
    let sets = fm
        .strata()
        .iter()
        .zip(scores)
        .map(|(s, scores)| {
            let m = s.treated_count();
            let singleton_treated = m == 1;
            let observed = s
                .members
                .iter()
                .position(|u| u.treated == singleton_treated)
                .expect("full match invariant");
            ScoredSet {
                sum: scores.iter().sum(),
                scores,
                singleton_treated,
                observed,
            }
        })
        .collect();
    Scored {
        sets,
        weights: set_weights(fm),
    }
}

/// The statistic `T = sum_i w_i D_i` at `tau0`.
pub fn statistic(fm: &FullMatch, tau0: f64, spec: &StatisticSpec) -> f64 {
    score(fm, tau0, spec).observed()
}

/// Summary of the randomization distribution of `T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullDistribution {
    pub method: NullSpec,
    pub mean: f64,
    pub variance: f64,
    /// Sorted `(value, probability)` atoms; empty for the normal approximation.
    pub support: Vec<(f64, f64)>,
}

impl NullDistribution {
    pub fn cdf(&self, x: f64) -> f64 {
        match self.method {
            NullSpec::Normal => {
                if self.variance <= 0.0 {
                    f64::from(u8::from(x >= self.mean))
                } else {
                    std_normal().cdf((x - self.mean) / self.variance.sqrt())
                }
            }
            _ => {
                let k = self.support.partition_point(|&(v, _)| v <= x);
                self.support[..k].iter().map(|&(_, p)| p).sum::<f64>().min(1.0)
            }
        }
    }

    fn upper_count(&self, t: f64) -> f64 {
        let k = self.support.partition_point(|&(v, _)| v < t - tie_tol(t));
        self.support[k..].iter().map(|&(_, p)| p).sum()
    }

    fn lower_count(&self, t: f64) -> f64 {
        let k = self.support.partition_point(|&(v, _)| v <= t + tie_tol(t));
        self.support[..k].iter().map(|&(_, p)| p).sum()
    }
}

fn tie_tol(t: f64) -> f64 {
    1e-9 * t.abs().max(1.0)
}

pub(crate) fn std_normal() -> Normal {
    Normal::standard()
}

pub fn null_distribution(
    fm: &FullMatch,
    tau0: f64,
    spec: &StatisticSpec,
    null: NullSpec,
) -> Result<NullDistribution> {
    let scored = score(fm, tau0, spec);
    null_of_scored(&scored, null)
}

fn null_of_scored(scored: &Scored, null: NullSpec) -> Result<NullDistribution> {
    match null {
        NullSpec::Normal => Ok(NullDistribution {
            method: null,
            mean: 0.0,
            variance: scored
                .sets
                .iter()
                .zip(&scored.weights)
                .map(|(s, w)| w * w * s.null_variance())
                .sum(),
            support: Vec::new(),
        }),
        NullSpec::Exact => {
            let count = scored
                .sets
                .iter()
                .fold(1u128, |acc, s| acc.saturating_mul(s.scores.len() as u128));
            if count > EXACT_CAP {
                return Err(Error::EnumerationTooLarge { count, cap: EXACT_CAP });
            }
            let mut atoms: Vec<(f64, u64)> = vec![(0.0, 1)];
            for (s, w) in scored.sets.iter().zip(&scored.weights) {
                let diffs: Vec<f64> = (0..s.scores.len()).map(|j| w * s.diff(j)).collect();
                let mut next: Vec<(f64, u64)> = atoms
                    .iter()
                    .flat_map(|&(v, c)| diffs.iter().map(move |&d| (v + d, c)))
                    .collect();
                next.sort_by(|a, b| a.0.total_cmp(&b.0));
                next.dedup_by(|b, a| {
                    if a.0 == b.0 {
                        a.1 += b.1;
                        true
                    } else {
                        false
                    }
                });
                atoms = next;
            }
            let total = count as f64;
            let support: Vec<(f64, f64)> = atoms.into_iter().map(|(v, c)| (v, c as f64 / total)).collect();
            Ok(moments(null, support))
        }
        NullSpec::MonteCarlo { draws, seed } => {
            if draws < MIN_DRAWS {
                return Err(Error::InvalidArgument(format!("monte carlo needs at least {MIN_DRAWS} draws")));
            }
            let mut values = monte_carlo_draws(scored, draws, seed);
            values.sort_by(f64::total_cmp);
            let p = 1.0 / draws as f64;
            Ok(moments(null, values.into_iter().map(|v| (v, p)).collect()))
        }
    }
}

fn moments(method: NullSpec, support: Vec<(f64, f64)>) -> NullDistribution {
    let mean: f64 = support.iter().map(|(v, p)| v * p).sum();
    let variance = support.iter().map(|(v, p)| p * (v - mean).powi(2)).sum();
    NullDistribution {
        method,
        mean,
        variance,
        support,
    }
}

/// Draws of `T` under random assignment. Draws are generated in fixed
/// chunks; chunk `c` and set `i` use ChaCha stream `(c << 32) | i` of the
/// master seed, so the output does not depend on the number of threads.
fn monte_carlo_draws(scored: &Scored, draws: usize, seed: u64) -> Vec<f64> {
    let chunks = draws.div_ceil(MC_CHUNK);
    let per_chunk: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = MC_CHUNK.min(draws - c * MC_CHUNK);
            let mut acc = vec![0.0; len];
            for (i, (s, w)) in scored.sets.iter().zip(&scored.weights).enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((c as u64) << 32) | i as u64);
                let n = s.scores.len();
                for a in acc.iter_mut() {
                    *a += w * s.diff(rng.random_range(0..n));
                }
            }
            acc
        })
        .collect();
    per_chunk.into_iter().flatten().collect()
}

/// Tests `H(tau0)` and returns one- and two-sided P-values. Tail
/// probabilities count ties with the observed value, so they are
/// conservative under discreteness; Monte Carlo P-values use `(1 + k) / (1 + B)`.
pub fn test(fm: &FullMatch, tau0: f64, spec: &StatisticSpec, null: NullSpec) -> Result<TestResult> {
    let scored = score(fm, tau0, spec);
    let t = scored.observed();
    let dist = null_of_scored(&scored, null)?;
    let (p_upper, p_lower) = match null {
        NullSpec::Normal => normal_tails(t, dist.mean, dist.variance),
        NullSpec::Exact => (dist.upper_count(t), dist.lower_count(t)),
        NullSpec::MonteCarlo { draws, .. } => {
            let b = draws as f64;
            (
                (1.0 + dist.upper_count(t) * b) / (1.0 + b),
                (1.0 + dist.lower_count(t) * b) / (1.0 + b),
            )
        }
    };
    Ok(TestResult::from_one_sided(tau0, t, p_upper, p_lower, null, 1.0))
}

/// Upper and lower normal tail probabilities of `t`.
/// A spread below the tie tolerance is treated as a point mass.
pub(crate) fn normal_tails(t: f64, mean: f64, variance: f64) -> (f64, f64) {
    if variance.max(0.0).sqrt() <= tie_tol(t) {
        let tol = tie_tol(t);
        let upper = f64::from(u8::from(t >= mean - tol));
        let lower = f64::from(u8::from(t <= mean + tol));
        return (upper, lower);
    }
    let z = (t - mean) / variance.sqrt();
    let n = std_normal();
    (n.sf(z), n.cdf(z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(t: f64, c: f64) -> FullMatch {
        FullMatch::from_pairs([vec![(true, t), (false, c)]]).unwrap()
    }

    #[test]
    fn weights() {
        let fm = FullMatch::from_pairs([
            vec![(true, 0.0), (false, 0.0)],
            vec![(true, 0.0), (false, 0.0), (false, 0.0), (false, 0.0)],
        ])
        .unwrap();
        let w = set_weights(&fm);
        assert!((w[0] - 0.4).abs() < 1e-15 && (w[1] - 0.6).abs() < 1e-15);

        let pairs = FullMatch::from_pairs((0..5).map(|_| vec![(true, 1.0), (false, 0.0)])).unwrap();
        assert!(set_weights(&pairs).iter().all(|&w| (w - 0.2).abs() < 1e-15));
    }

    #[test]
    fn single_pair_statistic() {
        let fm = pair(2.0, 1.0);
        let spec = StatisticSpec::mean_diff();
        assert_eq!(statistic(&fm, 0.0, &spec), 1.0);
        assert_eq!(statistic(&fm, 1.0, &spec), 0.0);
    }

    #[test]
    fn two_set_statistic() {
        // D = 2 in the pair and D = 0 in the 1-3 set
        let fm = FullMatch::from_pairs([
            vec![(true, 2.0), (false, 0.0)],
            vec![(true, 1.0), (false, 0.0), (false, 1.0), (false, 2.0)],
        ])
        .unwrap();
        assert!((statistic(&fm, 0.0, &StatisticSpec::mean_diff()) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn exact_single_pair() {
        let fm = pair(1.0, 0.0);
        let dist = null_distribution(&fm, 0.0, &StatisticSpec::mean_diff(), NullSpec::Exact).unwrap();
        assert_eq!(dist.support, vec![(-1.0, 0.5), (1.0, 0.5)]);

        let r = test(&pair(2.0, 1.0), 0.0, &StatisticSpec::mean_diff(), NullSpec::Exact).unwrap();
        assert_eq!((r.statistic, r.p_upper, r.p_lower), (1.0, 0.5, 1.0));
    }

    #[test]
    fn null_exactly_satisfied() {
        for null in [NullSpec::Exact, NullSpec::Normal] {
            let r = test(&pair(2.0, 1.0), 1.0, &StatisticSpec::mean_diff(), null).unwrap();
            assert_eq!(r.statistic, 0.0);
            assert_eq!(r.p_two_sided, 1.0);
        }
    }

    #[test]
    fn exact_cap_enforced() {
        let fm = FullMatch::from_pairs((0..8).map(|_| {
            let mut s = vec![(true, 1.0)];
            s.extend((0..7).map(|k| (false, k as f64)));
            s
        }))
        .unwrap();
        // 8^8 = 16.7M assignments
        assert!(matches!(
            null_distribution(&fm, 0.0, &StatisticSpec::mean_diff(), NullSpec::Exact),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn monte_carlo_needs_enough_draws() {
        assert!(NullSpec::monte_carlo(999, 1).is_err());
        assert!(NullSpec::monte_carlo(1000, 1).is_ok());
    }

    #[test]
    fn huber_fixed_scale_must_be_positive() {
        assert!(StatisticSpec::huber_fixed(0.0).is_err());
        assert!(StatisticSpec::huber_fixed(-1.0).is_err());
    }

    #[test]
    fn huber_scores_are_clipped() {
        // residuals +-5 around the set mean with scale 1 clip to +-1
        let fm = pair(10.0, 0.0);
        let spec = StatisticSpec::huber_fixed(1.0).unwrap();
        assert_eq!(statistic(&fm, 0.0, &spec), 2.0);
    }

    #[test]
    fn monte_carlo_is_reproducible_across_pools() {
        let fm = FullMatch::from_pairs((0..6).map(|i| vec![(true, i as f64), (false, 0.5), (false, -0.25 * i as f64)]))
            .unwrap();
        let null = NullSpec::monte_carlo(5000, 42).unwrap();
        let spec = StatisticSpec::mean_diff();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| null_distribution(&fm, 0.0, &spec, null).unwrap());
        let b = four.install(|| null_distribution(&fm, 0.0, &spec, null).unwrap());
        assert_eq!(a, b);
    }
}
