//! Optimal full matching and balance diagnostics.

pub mod balance;
pub mod distance;
pub mod flow;
pub mod full;

pub use balance::{balance_table, BalanceRow};
pub use distance::{mahalanobis_distances, DistanceMatrix};
pub use full::{match_cohort, optimal_full_match, plan_cost, MatchPlan, PlannedSet, RatioConstraint};
