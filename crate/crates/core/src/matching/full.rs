//! Optimal full matching as a degree-bounded minimum-cost edge cover.
//!
//! Every full match is a forest of stars on the treated/control bipartite
//! graph, and its cost (the sum of all within-set treated-control distances)
//! is the sum of the star edges. Conversely any edge cover in which treated
//! units have degree at most `max_controls_per_treated` and controls at most
//! `max_treated_per_control` can be pruned to such a star forest without
//! raising the cost: an edge whose two endpoints both have degree two or more
//! is redundant. The cover is found with min-cost flow:
//!
//! ```text
//! source -> treated  (1 unit at -B, then cap-1 units at 0)
//! treated -> control (1 unit at the scaled distance)
//! control -> sink    (1 unit at -B, then cap-1 units at 0)
//! ```
//!
//! where `B` exceeds the cost of any cover, so covering every unit dominates.

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::matching::distance::{mahalanobis_distances, DistanceMatrix};
use crate::matching::flow::{Cost, MinCostFlow};

/// Distances are scaled by this factor and rounded for the integral solver.
pub const COST_SCALE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatioConstraint {
    pub max_controls_per_treated: usize,
    pub max_treated_per_control: usize,
}

impl RatioConstraint {
    pub fn new(max_controls_per_treated: usize, max_treated_per_control: usize) -> Result<Self> {
        if max_controls_per_treated < 1 || max_treated_per_control < 1 {
            return Err(Error::InvalidArgument("ratio bounds must be at least 1".into()));
        }
        Ok(RatioConstraint {
            max_controls_per_treated,
            max_treated_per_control,
        })
    }

    /// Parses `"6:6"` as (controls per treated):(treated per control).
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("ratio {s:?} is not of the form K:L"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        RatioConstraint::new(
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        )
    }

    pub fn admits(&self, m: usize, n: usize) -> bool {
        let controls = n - m;
        (m == 1 && controls <= self.max_controls_per_treated)
            || (controls == 1 && m <= self.max_treated_per_control)
    }
}

impl Default for RatioConstraint {
    fn default() -> Self {
        RatioConstraint {
            max_controls_per_treated: 6,
            max_treated_per_control: 6,
        }
    }
}

/// One matched set as row indices (treated) and column indices (controls)
/// of the distance matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedSet {
    pub treated: Vec<usize>,
    pub controls: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchPlan {
    pub sets: Vec<PlannedSet>,
    /// Sum over sets of all within-set treated-control distances.
    pub total_cost: f64,
}

impl MatchPlan {
    /// `(unit id, set id)` pairs, numbering sets from 1.
    pub fn assignment<'a>(&'a self, d: &'a DistanceMatrix) -> impl Iterator<Item = (&'a str, i64)> + 'a {
        self.sets.iter().enumerate().flat_map(move |(k, s)| {
            let set_id = k as i64 + 1;
            s.treated
                .iter()
                .map(move |&t| (d.treated_ids()[t].as_str(), set_id))
                .chain(s.controls.iter().map(move |&c| (d.control_ids()[c].as_str(), set_id)))
        })
    }
}

/// Sum of treated-control distances inside each set.
pub fn plan_cost(d: &DistanceMatrix, sets: &[PlannedSet]) -> f64 {
    sets.iter()
        .map(|s| {
            s.treated
                .iter()
                .flat_map(|&t| s.controls.iter().map(move |&c| d.get(t, c)))
                .sum::<f64>()
        })
        .sum()
}

pub fn optimal_full_match(d: &DistanceMatrix, r: RatioConstraint) -> Result<MatchPlan> {
    let (nt, nc) = (d.n_treated(), d.n_controls());
    if nt == 0 || nc == 0 {
        return Err(Error::Infeasible("need at least one treated and one control".into()));
    }
    if nc > r.max_controls_per_treated * nt {
        return Err(Error::Infeasible(format!(
            "{nc} controls exceed {} per treated unit for {nt} treated",
            r.max_controls_per_treated
        )));
    }
    if nt > r.max_treated_per_control * nc {
        return Err(Error::Infeasible(format!(
            "{nt} treated exceed {} per control for {nc} controls",
            r.max_treated_per_control
        )));
    }

    let scaled = |t: usize, c: usize| -> Option<Cost> {
        let x = d.get(t, c);
        x.is_finite().then(|| (x * COST_SCALE).round() as Cost)
    };
    let mut bonus: Cost = 1;
    for t in 0..nt {
        for c in 0..nc {
            if let Some(x) = scaled(t, c) {
                bonus = bonus
                    .checked_add(x)
                    .ok_or_else(|| Error::InvalidArgument("distances too large to scale".into()))?;
            }
        }
    }
    bonus
        .checked_mul((nt + nc) as Cost)
        .ok_or_else(|| Error::InvalidArgument("distances too large to scale".into()))?;

    let source = 0;
    let sink = nt + nc + 1;
    let treated_node = |t: usize| 1 + t;
    let control_node = |c: usize| 1 + nt + c;
    let mut g = MinCostFlow::new(nt + nc + 2);
    for t in 0..nt {
        g.add_arc(source, treated_node(t), 1, -bonus);
        if r.max_controls_per_treated > 1 {
            g.add_arc(source, treated_node(t), r.max_controls_per_treated as i64 - 1, 0);
        }
    }
    let mut pair_arcs = Vec::new();
    for t in 0..nt {
        for c in 0..nc {
            if let Some(x) = scaled(t, c) {
                pair_arcs.push((t, c, g.add_arc(treated_node(t), control_node(c), 1, x)));
            }
        }
    }
    for c in 0..nc {
        g.add_arc(control_node(c), sink, 1, -bonus);
        if r.max_treated_per_control > 1 {
            g.add_arc(control_node(c), sink, r.max_treated_per_control as i64 - 1, 0);
        }
    }
    g.min_cost_any_flow(source, sink);

    let mut edges: Vec<(usize, usize)> = pair_arcs
        .iter()
        .filter(|(_, _, a)| g.flow(*a) > 0)
        .map(|&(t, c, _)| (t, c))
        .collect();
    let mut deg_t = vec![0usize; nt];
    let mut deg_c = vec![0usize; nc];
    for &(t, c) in &edges {
        deg_t[t] += 1;
        deg_c[c] += 1;
    }
    if let Some(t) = deg_t.iter().position(|&k| k == 0) {
        return Err(Error::Infeasible(format!(
            "treated unit `{}` cannot be placed in any set (forbidden distances or ratio bounds)",
            d.treated_ids()[t]
        )));
    }
    if let Some(c) = deg_c.iter().position(|&k| k == 0) {
        return Err(Error::Infeasible(format!(
            "control unit `{}` cannot be placed in any set (forbidden distances or ratio bounds)",
            d.control_ids()[c]
        )));
    }

    // prune redundant edges so that every component is a star
    edges.retain(|&(t, c)| {
        if deg_t[t] >= 2 && deg_c[c] >= 2 {
            deg_t[t] -= 1;
            deg_c[c] -= 1;
            false
        } else {
            true
        }
    });

    let mut sets: Vec<PlannedSet> = Vec::new();
    let mut placed_t = vec![false; nt];
    let mut placed_c = vec![false; nc];
    for &(t, c) in &edges {
        if placed_t[t] || placed_c[c] {
            continue;
        }
        let set = if deg_t[t] >= 2 {
            PlannedSet {
                treated: vec![t],
                controls: edges.iter().filter(|e| e.0 == t).map(|e| e.1).collect(),
            }
        } else if deg_c[c] >= 2 {
            PlannedSet {
                treated: edges.iter().filter(|e| e.1 == c).map(|e| e.0).collect(),
                controls: vec![c],
            }
        } else {
            PlannedSet {
                treated: vec![t],
                controls: vec![c],
            }
        };
        set.treated.iter().for_each(|&i| placed_t[i] = true);
        set.controls.iter().for_each(|&j| placed_c[j] = true);
        sets.push(set);
    }
    let total_cost = plan_cost(d, &sets);
    Ok(MatchPlan { sets, total_cost })
}

/// Mahalanobis distances, optional caliper, optimal full match, and the
/// cohort with its matched sets attached.
pub fn match_cohort(c: &Cohort, r: RatioConstraint, caliper: Option<f64>) -> Result<(Cohort, MatchPlan)> {
    let mut d = mahalanobis_distances(c)?;
    if let Some(cal) = caliper {
        d = d.with_caliper(cal);
    }
    let plan = optimal_full_match(&d, r)?;
    let matched = c.clone().with_assignment(plan.assignment(&d))?;
    Ok((matched, plan))
}
