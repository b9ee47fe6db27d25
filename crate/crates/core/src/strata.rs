//! Inference-ready view of a full match: one stratum per matched set.

use std::collections::HashMap;

use crate::cohort::{Cohort, Version};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub id: Option<String>,
    pub treated: bool,
    pub version: Option<Version>,
    pub outcome: f64,
    pub covariates: Vec<f64>,
}

impl Member {
    pub fn new(treated: bool, outcome: f64) -> Self {
        Member {
            id: None,
            treated,
            version: None,
            outcome,
            covariates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub set_id: i64,
    pub members: Vec<Member>,
}

impl Stratum {
    /// Treated members, `m`.
    pub fn treated_count(&self) -> usize {
        self.members.iter().filter(|u| u.treated).count()
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// A validated full match. Every stratum has at least one treated member and
/// one control, with `min(m, n - m) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullMatch {
    strata: Vec<Stratum>,
}

impl FullMatch {
    pub fn new(strata: Vec<Stratum>) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::InvalidArgument("a full match needs at least one set".into()));
        }
        for s in &strata {
            let (m, n) = (s.treated_count(), s.size());
            if n < 2 || m == 0 || m == n || m.min(n - m) != 1 {
                return Err(Error::SetInvariant { set_id: s.set_id, m, n });
            }
            if let Some(u) = s.members.iter().find(|u| !u.outcome.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite outcome in set {} ({:?})",
                    s.set_id, u.id
                )));
            }
        }
        Ok(FullMatch { strata })
    }

    /// Builds from simple `(treated, outcome)` sets, numbering them from 1.
    pub fn from_pairs<I, S>(sets: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = (bool, f64)>,
    {
        let strata = sets
            .into_iter()
            .enumerate()
            .map(|(i, s)| Stratum {
                set_id: i as i64 + 1,
                members: s.into_iter().map(|(z, y)| Member::new(z, y)).collect(),
            })
            .collect();
        FullMatch::new(strata)
    }

    /// Uses the matched sets recorded on a cohort; unmatched units are ignored.
    pub fn from_cohort(c: &Cohort) -> Result<Self> {
        let sets = c
            .sets()
            .ok_or_else(|| Error::InvalidArgument("cohort has no matched sets".into()))?;
        let by_id: HashMap<&str, usize> = c
            .units()
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id.as_str(), i))
            .collect();
        let strata = sets
            .iter()
            .map(|s| Stratum {
                set_id: s.set_id,
                members: s
                    .member_ids
                    .iter()
                    .map(|id| {
                        let u = &c.units()[by_id[id.as_str()]];
                        Member {
                            id: Some(u.id.clone()),
                            treated: u.treated,
                            version: u.version,
                            outcome: u.outcome,
                            covariates: u.covariates.clone(),
                        }
                    })
                    .collect(),
            })
            .collect();
        FullMatch::new(strata)
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn num_sets(&self) -> usize {
        self.strata.len()
    }

    pub fn num_units(&self) -> usize {
        self.strata.iter().map(Stratum::size).sum()
    }

    pub fn num_treated(&self) -> usize {
        self.strata.iter().map(Stratum::treated_count).sum()
    }

    /// Smallest and largest outcome across all members.
    pub fn outcome_range(&self) -> (f64, f64) {
        self.members().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| {
            (lo.min(u.outcome), hi.max(u.outcome))
        })
    }

    pub fn members(&self) -> impl Iterator<Item = &Member> {
        self.strata.iter().flat_map(|s| s.members.iter())
    }

    /// Returns a copy with `delta` added to every treated outcome.
    pub fn shift_treated(&self, delta: f64) -> FullMatch {
        let mut out = self.clone();
        for u in out.strata.iter_mut().flat_map(|s| s.members.iter_mut()) {
            if u.treated {
                u.outcome += delta;
            }
        }
        out
    }
}
