//! Independent oracles and random fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ve_core::matching::{plan_cost, PlannedSet};
use ve_core::{DistanceMatrix, FullMatch, Member, RatioConstraint, Stratum, Version, VersionData};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Set differences `D_i(j)` and weights for a mean-difference statistic,
/// written out directly from the definitions.
pub fn set_differences(fm: &FullMatch, tau0: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut diffs = Vec::new();
    let mut raw = Vec::new();
    for s in fm.strata() {
        let y: Vec<f64> = s
            .members
            .iter()
            .map(|u| if u.treated { u.outcome - tau0 } else { u.outcome })
            .collect();
        let n = y.len();
        let m = s.members.iter().filter(|u| u.treated).count();
        let total: f64 = y.iter().sum();
        let d: Vec<f64> = (0..n)
            .map(|j| {
                let others = (total - y[j]) / (n as f64 - 1.0);
                if m == 1 {
                    y[j] - others
                } else {
                    others - y[j]
                }
            })
            .collect();
        diffs.push(d);
        raw.push((m * (n - m)) as f64 / n as f64);
    }
    let sum: f64 = raw.iter().sum();
    (diffs, raw.into_iter().map(|w| w / sum).collect())
}

/// Every equally likely value of the statistic, by brute-force enumeration.
pub fn enumerate_null(fm: &FullMatch, tau0: f64) -> Vec<f64> {
    let (diffs, w) = set_differences(fm, tau0);
    let mut values = vec![0.0];
    for (d, wi) in diffs.iter().zip(&w) {
        values = values.iter().flat_map(|v| d.iter().map(move |x| v + wi * x)).collect();
    }
    values
}

pub fn empirical_cdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

/// Small random full match with unit-level noise; `sets` sets of size 2..=4.
pub fn small_match(rng: &mut ChaCha8Rng, sets: usize) -> FullMatch {
    let sets: Vec<Vec<(bool, f64)>> = (0..sets)
        .map(|_| {
            let n = rng.random_range(2..=4);
            let many_treated = n > 2 && rng.random_bool(0.4);
            (0..n)
                .map(|j| {
                    let treated = if many_treated { j != 0 } else { j == 0 };
                    (treated, (normal(rng) * 4.0).round() / 4.0 + if treated { 0.5 } else { 0.0 })
                })
                .collect()
        })
        .collect();
    FullMatch::from_pairs(sets).unwrap()
}

/// Random full match mixing 1:k and k:1 sets, continuous outcomes.
pub fn random_match(rng: &mut ChaCha8Rng, sets: usize, effect: f64) -> FullMatch {
    let sets: Vec<Vec<(bool, f64)>> = (0..sets)
        .map(|_| {
            let n = rng.random_range(2..=6);
            let many_treated = n > 2 && rng.random_bool(0.3);
            let x = normal(rng);
            (0..n)
                .map(|j| {
                    let treated = if many_treated { j != 0 } else { j == 0 };
                    let y = x + normal(rng) + if treated { effect } else { 0.0 };
                    (treated, y)
                })
                .collect()
        })
        .collect();
    FullMatch::from_pairs(sets).unwrap()
}

/// Random version data: every set has one treated unit and 1..=3 controls of
/// each version; the per-version matches filter controls within sets.
pub fn random_versions(rng: &mut ChaCha8Rng, sets: usize, tau_b: f64, delta: f64) -> VersionData {
    let strata: Vec<Stratum> = (0..sets)
        .map(|i| {
            let x = normal(rng);
            let mut members = vec![Member {
                id: None,
                treated: true,
                version: None,
                outcome: tau_b + x + normal(rng),
                covariates: vec![x],
            }];
            for (v, shift) in [(Version::A, delta), (Version::B, 0.0)] {
                for _ in 0..rng.random_range(1..=3) {
                    members.push(Member {
                        id: None,
                        treated: false,
                        version: Some(v),
                        outcome: shift + x + normal(rng),
                        covariates: vec![x],
                    });
                }
            }
            Stratum {
                set_id: i as i64 + 1,
                members,
            }
        })
        .collect();
    let keep = |v: Version| {
        let s = strata
            .iter()
            .map(|s| Stratum {
                set_id: s.set_id,
                members: s
                    .members
                    .iter()
                    .filter(|u| u.version.is_none() || u.version == Some(v))
                    .cloned()
                    .collect(),
            })
            .collect();
        FullMatch::new(s).unwrap()
    };
    let (a, b) = (keep(Version::A), keep(Version::B));
    VersionData::new(FullMatch::new(strata).unwrap(), a, b).unwrap()
}

/// Random distance matrix with `nt + nc <= 8`; some entries forbidden.
pub fn random_distances(rng: &mut ChaCha8Rng) -> DistanceMatrix {
    let total = rng.random_range(2..=8);
    let nt = rng.random_range(1..total);
    let nc = total - nt;
    let rows: Vec<Vec<f64>> = (0..nt)
        .map(|_| {
            (0..nc)
                .map(|_| {
                    if rng.random_bool(0.1) {
                        f64::INFINITY
                    } else {
                        (rng.random_range(0.0..10.0f64) * 1000.0).round() / 1000.0
                    }
                })
                .collect()
        })
        .collect();
    DistanceMatrix::from_rows(&rows).unwrap()
}

/// Lowest-cost partition of all units into admissible sets, found by
/// enumerating every set partition. `None` when no partition is admissible.
pub fn brute_force_match(d: &DistanceMatrix, r: RatioConstraint) -> Option<f64> {
    let (nt, nc) = (d.n_treated(), d.n_controls());
    // units 0..nt are treated, nt.. are controls
    let n = nt + nc;
    let mut best: Option<f64> = None;
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    fn recurse(
        i: usize,
        n: usize,
        nt: usize,
        d: &DistanceMatrix,
        r: RatioConstraint,
        blocks: &mut Vec<Vec<usize>>,
        best: &mut Option<f64>,
    ) {
        if i == n {
            let mut sets = Vec::new();
            for b in blocks.iter() {
                let treated: Vec<usize> = b.iter().copied().filter(|&u| u < nt).collect();
                let controls: Vec<usize> = b.iter().copied().filter(|&u| u >= nt).map(|u| u - nt).collect();
                let (m, size) = (treated.len(), b.len());
                if m == 0 || m == size || !r.admits(m, size) {
                    return;
                }
                if treated.iter().any(|&t| controls.iter().any(|&c| d.is_forbidden(t, c))) {
                    return;
                }
                sets.push(PlannedSet { treated, controls });
            }
            let cost = plan_cost(d, &sets);
            if best.is_none_or(|b| cost < b) {
                *best = Some(cost);
            }
            return;
        }
        for k in 0..blocks.len() {
            blocks[k].push(i);
            recurse(i + 1, n, nt, d, r, blocks, best);
            blocks[k].pop();
        }
        blocks.push(vec![i]);
        recurse(i + 1, n, nt, d, r, blocks, best);
        blocks.pop();
    }
    recurse(0, n, nt, d, r, &mut blocks, &mut best);
    best
}

/// Checks the full-match and ratio invariants of a plan covering every unit.
pub fn plan_is_valid(d: &DistanceMatrix, r: RatioConstraint, sets: &[PlannedSet]) -> bool {
    let mut seen_t = vec![0; d.n_treated()];
    let mut seen_c = vec![0; d.n_controls()];
    for s in sets {
        let (m, c) = (s.treated.len(), s.controls.len());
        if m == 0 || c == 0 || !r.admits(m, m + c) {
            return false;
        }
        s.treated.iter().for_each(|&t| seen_t[t] += 1);
        s.controls.iter().for_each(|&j| seen_c[j] += 1);
    }
    seen_t.iter().chain(&seen_c).all(|&k| k == 1)
}

/// Accepted points of a dense scan of `tau0`, as a hull.
pub fn grid_hull(accept: impl Fn(f64) -> bool, lo: f64, hi: f64, step: f64) -> Option<(f64, f64)> {
    let steps = ((hi - lo) / step).round() as usize;
    let mut hull: Option<(f64, f64)> = None;
    for k in 0..=steps {
        let t = lo + k as f64 * step;
        if accept(t) {
            hull = Some(hull.map_or((t, t), |(a, _)| (a, t)));
        }
    }
    hull
}
