//! Randomization inference for matched observational studies in which the
//! control (or treatment) condition comes in more than one version.
//!
//! The usual workflow: load a [`Cohort`], build an optimal full match with
//! [`match_cohort`], then test shift hypotheses with [`randtest::test`],
//! invert them into intervals with [`interval_family`], and bound the
//! effect of hidden bias with [`sensitivity`].

pub mod cohort;
pub mod error;
pub mod interval;
pub mod matching;
pub mod randtest;
pub mod sensitivity;
pub mod sim;
pub mod strata;

pub use cohort::{Cohort, ColumnSpec, MatchedSet, Unit, Version, VersionArm, VersionLabels};
pub use error::{Error, Result};
pub use interval::{
    bonferroni_family, interval_family, invert, Interval, IntervalLabel, IntervalSet, InversionMethod, InvertOptions,
    PValueSource, VersionData,
};
pub use matching::{balance_table, match_cohort, optimal_full_match, BalanceRow, DistanceMatrix, RatioConstraint};
pub use randtest::{NullSpec, ScalePolicy, StatisticKind, StatisticSpec, TestResult};
pub use sensitivity::{amplify, gamma_pvalue_bound, sensitivity_interval, AmplifyPair, GammaSpec};
pub use sim::{f_test, generate, power_study, SimDesign, SimReport};
pub use strata::{FullMatch, Member, Stratum};
