//! Confidence intervals by test inversion and the version interval family.
//!
//! A two-sided interval is the intersection of two one-sided `1 - alpha/2`
//! intervals. The lower endpoint is the infimum of `{tau0 : p_upper > alpha/2}`
//! and the upper endpoint the supremum of `{tau0 : p_lower > alpha/2}`.
//! `I_v` takes the extreme lower and upper endpoints over the all-controls
//! interval and both per-version intervals; `I_*` does the same over the two
//! per-version intervals only.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::randtest::{self, NullSpec, StatisticKind, StatisticSpec, TestResult};
use crate::sensitivity::{gamma_pvalue_bound, GammaSpec};
use crate::strata::FullMatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum IntervalLabel {
    Ic,
    Ia,
    Ib,
    Iv,
    Istar,
    BonferroniAll,
    BonferroniA,
    BonferroniB,
}

impl IntervalLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            IntervalLabel::Ic => "Ic",
            IntervalLabel::Ia => "Ia",
            IntervalLabel::Ib => "Ib",
            IntervalLabel::Iv => "Iv",
            IntervalLabel::Istar => "Istar",
            IntervalLabel::BonferroniAll => "BonferroniAll",
            IntervalLabel::BonferroniA => "BonferroniA",
            IntervalLabel::BonferroniB => "BonferroniB",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    #[serde(serialize_with = "serialize_endpoint")]
    pub lo: f64,
    #[serde(serialize_with = "serialize_endpoint")]
    pub hi: f64,
    pub alpha: f64,
    pub label: IntervalLabel,
}

fn serialize_endpoint<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

impl Interval {
    pub fn new(lo: f64, hi: f64, alpha: f64, label: IntervalLabel) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidArgument(format!("interval [{lo}, {hi}] is empty")));
        }
        check_alpha(alpha)?;
        Ok(Interval { lo, hi, alpha, label })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    /// Smallest interval containing every input.
    pub fn hull<'a>(parts: impl IntoIterator<Item = &'a Interval>, alpha: f64, label: IntervalLabel) -> Interval {
        let (lo, hi) = parts
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| (lo.min(i.lo), hi.max(i.hi)));
        Interval { lo, hi, alpha, label }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Where P-values come from: randomization inference or Γ-sensitivity bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PValueSource {
    Randomization(NullSpec),
    Sensitivity(GammaSpec),
}

impl PValueSource {
    pub fn test(&self, fm: &FullMatch, tau0: f64, spec: &StatisticSpec) -> Result<TestResult> {
        match self {
            PValueSource::Randomization(null) => randtest::test(fm, tau0, spec, *null),
            PValueSource::Sensitivity(g) => gamma_pvalue_bound(fm, tau0, *g, spec),
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            PValueSource::Randomization(_) => 1.0,
            PValueSource::Sensitivity(g) => g.gamma(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InversionMethod {
    /// Bisection from a central estimate outward; fails on non-monotone P paths.
    Bisection,
    /// Accept/reject every point of `lo, lo + step, ..., hi` and take the hull.
    Grid { lo: f64, hi: f64, step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvertOptions {
    pub method: InversionMethod,
    /// Bisection stops once the bracket is this narrow (outcome units).
    pub tol: f64,
    /// Search stops this many outcome ranges away from the estimate.
    pub reach: f64,
}

impl Default for InvertOptions {
    fn default() -> Self {
        InvertOptions {
            method: InversionMethod::Bisection,
            tol: 1e-4,
            reach: 1e3,
        }
    }
}

#[derive(Clone, Copy)]
enum Side {
    Lower,
    Upper,
}

struct Inverter<'a> {
    fm: &'a FullMatch,
    spec: &'a StatisticSpec,
    source: &'a PValueSource,
    level: f64,
}

impl Inverter<'_> {
    fn pvalues(&self, tau0: f64) -> Result<(f64, f64)> {
        let r = self.source.test(self.fm, tau0, self.spec)?;
        Ok((r.p_upper, r.p_lower))
    }

    fn accepted(&self, side: Side, tau0: f64) -> Result<bool> {
        let (up, low) = self.pvalues(tau0)?;
        Ok(match side {
            Side::Lower => up > self.level,
            Side::Upper => low > self.level,
        })
    }

    /// A value where `p_upper` and `p_lower` balance, found by bisection on
    /// their difference around the weighted mean difference.
    fn center(&self, span: f64) -> Result<f64> {
        let start = randtest::statistic(self.fm, 0.0, &StatisticSpec::mean_diff());
        let g = |t: f64| self.pvalues(t).map(|(u, l)| u - l);
        let g0 = g(start)?;
        if g0 == 0.0 {
            return Ok(start);
        }
        let dir = if g0 < 0.0 { 1.0 } else { -1.0 };
        let (mut inside, mut outside) = (start, start);
        let mut step = span / 64.0;
        let mut found = false;
        for _ in 0..40 {
            outside = start + dir * step;
            let v = g(outside)?;
            if v == 0.0 {
                return Ok(outside);
            }
            if v.signum() != g0.signum() {
                found = true;
                break;
            }
            inside = outside;
            step *= 2.0;
        }
        if !found {
            return Ok(start);
        }
        for _ in 0..30 {
            let mid = 0.5 * (inside + outside);
            let v = g(mid)?;
            if v == 0.0 {
                return Ok(mid);
            }
            if v.signum() == g0.signum() {
                inside = mid;
            } else {
                outside = mid;
            }
            if (outside - inside).abs() < span * 1e-6 {
                break;
            }
        }
        Ok(0.5 * (inside + outside))
    }

    fn endpoint(&self, side: Side, center: f64, span: f64, opts: &InvertOptions) -> Result<f64> {
        let dir = match side {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        };
        let far = opts.reach * span;
        let mut ladder = Vec::new();
        let mut step = span / 64.0;
        while step < far {
            ladder.push(center + dir * step);
            step *= 2.0;
        }
        ladder.push(center + dir * far);

        let verdicts = ladder
            .iter()
            .map(|&t| self.accepted(side, t))
            .collect::<Result<Vec<bool>>>()?;
        let first_rejected = match verdicts.iter().position(|&a| !a) {
            None => return Ok(dir * f64::INFINITY),
            Some(k) => k,
        };
        if let Some(k) = verdicts[first_rejected..].iter().position(|&a| a) {
            return Err(Error::NonMonotone {
                side: match side {
                    Side::Lower => "lower",
                    Side::Upper => "upper",
                },
                near: ladder[first_rejected + k],
            });
        }
        let mut accepted = if first_rejected == 0 {
            center
        } else {
            ladder[first_rejected - 1]
        };
        let mut rejected = ladder[first_rejected];
        while (rejected - accepted).abs() > opts.tol {
            let mid = 0.5 * (accepted + rejected);
            if self.accepted(side, mid)? {
                accepted = mid;
            } else {
                rejected = mid;
            }
        }
        Ok(rejected)
    }

    fn grid(&self, lo: f64, hi: f64, step: f64) -> Result<(f64, f64)> {
        if !(step > 0.0 && lo < hi) {
            return Err(Error::InvalidArgument("grid needs lo < hi and a positive step".into()));
        }
        let n = ((hi - lo) / step).floor() as usize;
        let (mut lower, mut upper) = (None::<f64>, None::<f64>);
        for k in 0..=n {
            let t = lo + k as f64 * step;
            let (up, low) = self.pvalues(t)?;
            if up > self.level && lower.is_none() {
                lower = Some(if k == 0 { f64::NEG_INFINITY } else { t });
            }
            if low > self.level {
                upper = Some(if k == n { f64::INFINITY } else { t });
            }
        }
        match (lower, upper) {
            (Some(l), Some(u)) => Ok((l, u)),
            _ => Err(Error::EmptyAcceptance("no grid point is accepted".into())),
        }
    }
}

/// Two-sided `1 - alpha` interval for a constant effect, by randomization
/// inference.
pub fn invert(fm: &FullMatch, alpha: f64, spec: &StatisticSpec, null: NullSpec) -> Result<Interval> {
    invert_with(
        fm,
        alpha,
        spec,
        &PValueSource::Randomization(null),
        &InvertOptions::default(),
        IntervalLabel::Ic,
    )
}

pub fn invert_with(
    fm: &FullMatch,
    alpha: f64,
    spec: &StatisticSpec,
    source: &PValueSource,
    opts: &InvertOptions,
    label: IntervalLabel,
) -> Result<Interval> {
    check_alpha(alpha)?;
    let inv = Inverter {
        fm,
        spec,
        source,
        level: alpha / 2.0,
    };
    let (lo, hi) = match opts.method {
        InversionMethod::Grid { lo, hi, step } => inv.grid(lo, hi, step)?,
        InversionMethod::Bisection => {
            let (min, max) = fm.outcome_range();
            let span = (max - min).max(1e-6);
            let center = inv.center(span)?;
            let (up, low) = inv.pvalues(center)?;
            if up <= inv.level || low <= inv.level {
                return Err(Error::EmptyAcceptance(format!(
                    "central value {center} is rejected (p_upper={up}, p_lower={low})"
                )));
            }
            (
                inv.endpoint(Side::Lower, center, span, opts)?,
                inv.endpoint(Side::Upper, center, span, opts)?,
            )
        }
    };
    Interval::new(lo, hi, alpha, label)
}

/// The three matched comparisons: treated against all controls, against
/// version-a controls only, and against version-b controls only.
#[derive(Debug, Clone, PartialEq)]
pub struct VersionData {
    pub all: FullMatch,
    pub only_a: FullMatch,
    pub only_b: FullMatch,
}

impl VersionData {
    /// Checks that the three matches share the units of the arm without
    /// versions (by id when ids are known, by count otherwise).
    pub fn new(all: FullMatch, only_a: FullMatch, only_b: FullMatch) -> Result<Self> {
        let any_versions = all.members().any(|u| u.version.is_some());
        let key = |fm: &FullMatch| -> (usize, Vec<String>) {
            let base: Vec<_> = fm
                .members()
                .filter(|u| if any_versions { u.version.is_none() } else { u.treated })
                .collect();
            let mut ids: Vec<String> = base.iter().filter_map(|u| u.id.clone()).collect();
            ids.sort();
            (base.len(), ids)
        };
        let k = key(&all);
        if key(&only_a) != k || key(&only_b) != k {
            return Err(Error::InvalidArgument(
                "the three matches must contain the same units of the arm without versions".into(),
            ));
        }
        Ok(VersionData { all, only_a, only_b })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalSet {
    pub alpha: f64,
    pub gamma: f64,
    pub statistic: StatisticKind,
    pub ic: Interval,
    pub ia: Interval,
    pub ib: Interval,
    pub iv: Interval,
    pub istar: Interval,
}

impl IntervalSet {
    /// Assembles `I_v` and `I_*` from the three inverted intervals.
    pub fn assemble(ic: Interval, ia: Interval, ib: Interval, gamma: f64, statistic: StatisticKind) -> Self {
        let alpha = ic.alpha;
        IntervalSet {
            alpha,
            gamma,
            statistic,
            iv: Interval::hull([&ic, &ia, &ib], alpha, IntervalLabel::Iv),
            istar: Interval::hull([&ia, &ib], alpha, IntervalLabel::Istar),
            ic,
            ia,
            ib,
        }
    }

    pub fn intervals(&self) -> [Interval; 5] {
        [self.ic, self.ia, self.ib, self.iv, self.istar]
    }
}

pub fn interval_family(v: &VersionData, alpha: f64, spec: &StatisticSpec, null: NullSpec) -> Result<IntervalSet> {
    interval_family_with(v, alpha, spec, &PValueSource::Randomization(null), &InvertOptions::default())
}

pub fn interval_family_with(
    v: &VersionData,
    alpha: f64,
    spec: &StatisticSpec,
    source: &PValueSource,
    opts: &InvertOptions,
) -> Result<IntervalSet> {
    let run = |fm: &FullMatch, label| invert_with(fm, alpha, spec, source, opts, label);
    let (ic, (ia, ib)) = rayon::join(
        || run(&v.all, IntervalLabel::Ic),
        || rayon::join(|| run(&v.only_a, IntervalLabel::Ia), || run(&v.only_b, IntervalLabel::Ib)),
    );
    Ok(IntervalSet::assemble(ic?, ia?, ib?, source.gamma(), spec.kind))
}

/// The three comparisons each inverted at `alpha / 3`.
pub fn bonferroni_family(v: &VersionData, alpha: f64, spec: &StatisticSpec, null: NullSpec) -> Result<[Interval; 3]> {
    bonferroni_family_with(v, alpha, spec, &PValueSource::Randomization(null), &InvertOptions::default())
}

pub fn bonferroni_family_with(
    v: &VersionData,
    alpha: f64,
    spec: &StatisticSpec,
    source: &PValueSource,
    opts: &InvertOptions,
) -> Result<[Interval; 3]> {
    check_alpha(alpha)?;
    let a3 = alpha / 3.0;
    let run = |fm: &FullMatch, label| -> Result<Interval> {
        let i = invert_with(fm, a3, spec, source, opts, label)?;
        Ok(Interval { alpha, ..i })
    };
    Ok([
        run(&v.all, IntervalLabel::BonferroniAll)?,
        run(&v.only_a, IntervalLabel::BonferroniA)?,
        run(&v.only_b, IntervalLabel::BonferroniB)?,
    ])
}
