mod common;

use common::*;
use proptest::prelude::*;
use ve_core::randtest::{null_distribution, statistic, test};
use ve_core::{FullMatch, NullSpec, StatisticSpec, Stratum};

fn small_match_strategy() -> impl Strategy<Value = FullMatch> {
    prop::collection::vec((2usize..=4, any::<bool>(), prop::collection::vec(-16i32..16, 4)), 1..=5).prop_map(|sets| {
        let sets = sets.into_iter().map(|(n, many, y)| {
            let many = many && n > 2;
            (0..n)
                .map(|j| (if many { j != 0 } else { j == 0 }, y[j] as f64 / 8.0))
                .collect::<Vec<_>>()
        });
        FullMatch::from_pairs(sets).unwrap()
    })
}

fn reversed(fm: &FullMatch) -> FullMatch {
    let strata = fm
        .strata()
        .iter()
        .rev()
        .map(|s| Stratum {
            set_id: s.set_id,
            members: s.members.iter().rev().cloned().collect(),
        })
        .collect();
    FullMatch::new(strata).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn exact_null_matches_enumeration(fm in small_match_strategy(), tau0 in -2.0f64..2.0) {
        let spec = StatisticSpec::mean_diff();
        let dist = null_distribution(&fm, tau0, &spec, NullSpec::Exact).unwrap();
        let mut all = enumerate_null(&fm, tau0);
        all.sort_by(f64::total_cmp);
        let total: f64 = dist.support.iter().map(|a| a.1).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        // compare away from atoms, where rounding cannot move mass across x
        for w in all.windows(2) {
            if w[1] - w[0] > 1e-6 {
                let x = (w[0] + w[1]) / 2.0;
                prop_assert!((dist.cdf(x) - empirical_cdf(&all, x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normal_moments_match_enumeration(fm in small_match_strategy(), tau0 in -2.0f64..2.0) {
        let spec = StatisticSpec::mean_diff();
        let all = enumerate_null(&fm, tau0);
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let normal = null_distribution(&fm, tau0, &spec, NullSpec::Normal).unwrap();
        prop_assert!(mean.abs() < 1e-10);
        prop_assert!((normal.mean - mean).abs() < 1e-10);
        prop_assert!((normal.variance - var).abs() < 1e-10 * var.max(1.0));
    }

    #[test]
    fn exact_p_counts_enumerated_values(fm in small_match_strategy(), tau0 in -2.0f64..2.0) {
        let spec = StatisticSpec::mean_diff();
        let t = statistic(&fm, tau0, &spec);
        let all = enumerate_null(&fm, tau0);
        let tol = 1e-9 * t.abs().max(1.0);
        let n = all.len() as f64;
        let upper = all.iter().filter(|&&v| v >= t - tol).count() as f64 / n;
        let lower = all.iter().filter(|&&v| v <= t + tol).count() as f64 / n;
        let r = test(&fm, tau0, &spec, NullSpec::Exact).unwrap();
        prop_assert!((r.p_upper - upper).abs() < 1e-12);
        prop_assert!((r.p_lower - lower).abs() < 1e-12);
        prop_assert_eq!(r.p_two_sided, (2.0 * r.p_upper.min(r.p_lower)).min(1.0));
    }

    #[test]
    fn shift_equivariance(fm in small_match_strategy(), k in -16i32..16, c in -16i32..16, huber in any::<bool>()) {
        // eighths keep every subtraction exact
        let (tau0, c) = (k as f64 / 8.0, c as f64 / 8.0);
        let spec = if huber { StatisticSpec::huber() } else { StatisticSpec::mean_diff() };
        let shifted = fm.shift_treated(c);
        for null in [NullSpec::Exact, NullSpec::Normal] {
            let a = test(&fm, tau0, &spec, null).unwrap();
            let b = test(&shifted, tau0 + c, &spec, null).unwrap();
            prop_assert_eq!((a.statistic, a.p_upper, a.p_lower), (b.statistic, b.p_upper, b.p_lower));
        }
    }

    #[test]
    fn order_equivariance(fm in small_match_strategy(), tau0 in -2.0f64..2.0, huber in any::<bool>()) {
        let spec = if huber { StatisticSpec::huber() } else { StatisticSpec::mean_diff() };
        let rev = reversed(&fm);
        for null in [NullSpec::Exact, NullSpec::Normal] {
            let a = test(&fm, tau0, &spec, null).unwrap();
            let b = test(&rev, tau0, &spec, null).unwrap();
            prop_assert!((a.statistic - b.statistic).abs() < 1e-12);
            prop_assert!((a.p_upper - b.p_upper).abs() < 1e-9);
            prop_assert!((a.p_lower - b.p_lower).abs() < 1e-9);
        }
    }

    #[test]
    fn p_values_are_probabilities(fm in small_match_strategy(), tau0 in -4.0f64..4.0, seed in any::<u64>()) {
        for null in [NullSpec::Exact, NullSpec::Normal, NullSpec::monte_carlo(1000, seed).unwrap()] {
            let r = test(&fm, tau0, &StatisticSpec::huber(), null).unwrap();
            for p in [r.p_upper, r.p_lower, r.p_two_sided] {
                prop_assert!((0.0..=1.0).contains(&p));
            }
            // every tail includes the observed value
            prop_assert!(r.p_upper + r.p_lower >= 1.0 - 1e-12);
        }
    }
}

#[test]
fn monte_carlo_tracks_exact_cdf() {
    let mut r = rng(11);
    let spec = StatisticSpec::mean_diff();
    for seed in 0..5 {
        let fm = small_match(&mut r, 5);
        let mut all = enumerate_null(&fm, 0.0);
        all.sort_by(f64::total_cmp);
        let mc = null_distribution(&fm, 0.0, &spec, NullSpec::monte_carlo(100_000, seed).unwrap()).unwrap();
        let sup = all
            .iter()
            .map(|&x| (mc.cdf(x) - empirical_cdf(&all, x)).abs())
            .fold(0.0, f64::max);
        assert!(sup <= 0.02, "sup {sup}");
    }
}

#[test]
fn exact_test_has_level_under_the_null() {
    // sharp null of no effect: rejections at level 0.05 stay below 0.05 plus noise
    let mut r = rng(5);
    let spec = StatisticSpec::mean_diff();
    let reps = 400;
    let mut rejects = 0;
    for _ in 0..reps {
        let fm = random_match(&mut r, 8, 0.0);
        rejects += usize::from(test(&fm, 0.0, &spec, NullSpec::Exact).unwrap().p_upper <= 0.05);
    }
    let rate = rejects as f64 / reps as f64;
    assert!(rate <= 0.05 + 3.0 * (0.05f64 * 0.95 / reps as f64).sqrt(), "rate {rate}");
}
