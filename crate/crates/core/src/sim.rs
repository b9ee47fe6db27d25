//! Synthetic version designs, the omnibus F-test, and power/coverage studies.
//!
//! Each matched set has one treated unit and `controls_per_version` controls
//! of each version. With `X_i` and `eps_ij` independent standard normals:
//!
//! ```text
//! treated            tau_b + X_i + eps
//! version-a control  delta + X_i + eps     (tau_a = tau_b - delta)
//! version-b control          X_i + eps
//! ```

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::cohort::Version;
use crate::error::{Error, Result};
use crate::interval::{interval_family, VersionData};
use crate::randtest::{NullSpec, StatisticSpec};
use crate::strata::{FullMatch, Member, Stratum};

/// Ratios `tau_a / tau_b` of the standard power table.
pub const TABLE_RATIOS: [f64; 8] = [1.0, 0.95, 0.9, 0.75, 0.65, 0.6, 0.5, 0.25];
/// Values of `tau_b` of the standard power table.
pub const TABLE_TAU_B: [f64; 2] = [0.25, 0.4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimDesign {
    pub sets: usize,
    pub treated_per_set: usize,
    pub controls_per_version: usize,
    pub tau_b: f64,
    /// `tau_a = tau_b - delta`.
    pub delta: f64,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
    /// Null used for the interval inversions.
    pub null: NullSpec,
}

impl Default for SimDesign {
    fn default() -> Self {
        SimDesign {
            sets: 100,
            treated_per_set: 1,
            controls_per_version: 2,
            tau_b: 0.0,
            delta: 0.0,
            alpha: 0.05,
            reps: 1000,
            seed: 0,
            null: NullSpec::Normal,
        }
    }
}

impl SimDesign {
    /// A default design with `tau_a = ratio_a * tau_b`.
    pub fn with_ratio(tau_b: f64, ratio_a: f64) -> Self {
        SimDesign {
            tau_b,
            delta: tau_b * (1.0 - ratio_a),
            ..SimDesign::default()
        }
    }

    pub fn tau_a(&self) -> f64 {
        self.tau_b - self.delta
    }

    pub fn validate(&self) -> Result<()> {
        if self.sets < 1 || self.reps < 1 {
            return Err(Error::InvalidArgument("sets and reps must be at least 1".into()));
        }
        // a set with several treated units must have a single control in
        // each per-version comparison, which two versions cannot provide
        if self.treated_per_set != 1 || self.controls_per_version < 1 {
            return Err(Error::InvalidArgument(
                "designs need one treated unit and at least one control of each version per set".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !(self.tau_b.is_finite() && self.delta.is_finite()) {
            return Err(Error::InvalidArgument("effects must be finite".into()));
        }
        Ok(())
    }
}

fn member(treated: bool, version: Option<Version>, outcome: f64, x: f64) -> Member {
    Member {
        id: None,
        treated,
        version,
        outcome,
        covariates: vec![x],
    }
}

/// Draws replicate `rep` of the design. The stream depends only on
/// `(seed, rep)`.
pub fn generate(d: &SimDesign, rep: u64) -> Result<VersionData> {
    d.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
    rng.set_stream(rep);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut all = Vec::with_capacity(d.sets);
    for i in 0..d.sets {
        let x = normal();
        let mut members = vec![member(true, None, d.tau_b + x + normal(), x)];
        for _ in 0..d.controls_per_version {
            members.push(member(false, Some(Version::A), d.delta + x + normal(), x));
        }
        for _ in 0..d.controls_per_version {
            members.push(member(false, Some(Version::B), x + normal(), x));
        }
        all.push(Stratum {
            set_id: i as i64 + 1,
            members,
        });
    }
    let keep = |v: Version| -> Vec<Stratum> {
        all.iter()
            .map(|s| Stratum {
                set_id: s.set_id,
                members: s
                    .members
                    .iter()
                    .filter(|u| u.version.is_none_or(|w| w == v))
                    .cloned()
                    .collect(),
            })
            .collect()
    };
    let only_a = FullMatch::new(keep(Version::A))?;
    let only_b = FullMatch::new(keep(Version::B))?;
    VersionData::new(FullMatch::new(all)?, only_a, only_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FTest {
    pub f: f64,
    pub df1: usize,
    pub df2: usize,
    pub critical: f64,
    pub reject: bool,
}

fn rss(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let qr = x.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if diag_max == 0.0 || r.diagonal().iter().any(|v| v.abs() <= 1e-10 * diag_max) {
        return Err(Error::RankDeficient);
    }
    let q = qr.q();
    let fitted = &q * (q.transpose() * y);
    Ok((y - fitted).norm_squared())
}

/// Omnibus F-test of equal treated, version-a and version-b means, adjusting
/// linearly for the first covariate. Uses the all-controls match.
pub fn f_test(data: &VersionData, alpha: f64) -> Result<FTest> {
    let units: Vec<&Member> = data.all.members().collect();
    if units.iter().any(|u| !u.treated && u.version.is_none()) {
        return Err(Error::VersionsAbsent);
    }
    if units.iter().any(|u| u.covariates.is_empty()) {
        return Err(Error::NoCovariates);
    }
    let n = units.len();
    if n <= 4 {
        return Err(Error::RankDeficient);
    }
    let full = DMatrix::from_fn(n, 4, |i, j| {
        let u = units[i];
        match j {
            0 => 1.0,
            1 => f64::from(u8::from(u.treated)),
            2 => f64::from(u8::from(u.version == Some(Version::A))),
            _ => u.covariates[0],
        }
    });
    let reduced = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { units[i].covariates[0] });
    let y = DVector::from_iterator(n, units.iter().map(|u| u.outcome));
    let rss_full = rss(&full, &y)?;
    let rss_reduced = rss(&reduced, &y)?;
    let df2 = n - 4;
    let f = if rss_full > 0.0 {
        ((rss_reduced - rss_full) / 2.0 / (rss_full / df2 as f64)).max(0.0)
    } else if rss_reduced - rss_full > 1e-12 * rss_reduced.max(1.0) {
        f64::INFINITY
    } else {
        0.0
    };
    let critical = FisherSnedecor::new(2.0, df2 as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(1.0 - alpha);
    Ok(FTest {
        f,
        df1: 2,
        df2,
        critical,
        reject: f > critical,
    })
}

/// An estimated rate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rate {
    pub estimate: f64,
    pub mc_se: f64,
}

impl Rate {
    fn from_hits(hits: usize, reps: usize) -> Rate {
        let p = hits as f64 / reps as f64;
        Rate {
            estimate: p,
            mc_se: (p * (1.0 - p) / reps as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimReport {
    pub design: SimDesign,
    /// Pr(I_c excludes 0).
    pub power_version: Rate,
    /// Pr(F > critical value).
    pub power_f: Rate,
    /// Pr(tau in I_c); only defined when the versions share one effect.
    pub coverage_ic: Option<Rate>,
    /// Pr(I_v contains I_c and I_c contains tau); only when `delta == 0`.
    pub coverage_joint: Option<Rate>,
    /// Pr(I_v contains [tau_min, tau_max]).
    pub coverage_iv: Rate,
}

struct RepOutcome {
    version_rejects: bool,
    f_rejects: bool,
    ic_covers: bool,
    joint_covers: bool,
    iv_covers: bool,
}

fn run_rep(d: &SimDesign, rep: u64) -> Result<RepOutcome> {
    let data = generate(d, rep)?;
    let fam = interval_family(&data, d.alpha, &StatisticSpec::mean_diff(), d.null)?;
    let f = f_test(&data, d.alpha)?;
    let (lo, hi) = (d.tau_b.min(d.tau_a()), d.tau_b.max(d.tau_a()));
    Ok(RepOutcome {
        version_rejects: !fam.ic.contains(0.0),
        f_rejects: f.reject,
        ic_covers: fam.ic.contains(d.tau_b),
        joint_covers: fam.iv.contains_interval(&fam.ic) && fam.ic.contains(d.tau_b),
        iv_covers: fam.iv.contains(lo) && fam.iv.contains(hi),
    })
}

/// Runs `d.reps` replicates in parallel; results do not depend on the
/// thread count.
pub fn power_study(d: &SimDesign) -> Result<SimReport> {
    d.validate()?;
    let outcomes: Vec<RepOutcome> = (0..d.reps as u64)
        .into_par_iter()
        .map(|rep| run_rep(d, rep))
        .collect::<Result<_>>()?;
    let count = |f: fn(&RepOutcome) -> bool| Rate::from_hits(outcomes.iter().filter(|o| f(o)).count(), d.reps);
    let one_effect = d.delta == 0.0;
    Ok(SimReport {
        design: *d,
        power_version: count(|o| o.version_rejects),
        power_f: count(|o| o.f_rejects),
        coverage_ic: one_effect.then(|| count(|o| o.ic_covers)),
        coverage_joint: one_effect.then(|| count(|o| o.joint_covers)),
        coverage_iv: count(|o| o.iv_covers),
    })
}
