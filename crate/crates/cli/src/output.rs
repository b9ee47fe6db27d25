//! Output documents, emission, and the error-to-exit-code mapping.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use ve_core::sim::SimReport;
use ve_core::{BalanceRow, Error, Interval, IntervalSet, TestResult};

use crate::Format;

const SCHEMA: &str = "1";

/// A failed run: exit code, machine-readable kind, and message.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            kind: "usage",
            message: message.into(),
        }
    }

    pub fn input(path: &Path, e: Error) -> Self {
        Failure::from_error(Some(path), e)
    }

    pub fn from_error(path: Option<&Path>, e: Error) -> Self {
        let (code, kind) = match &e {
            Error::InvalidArgument(_) => (2, "usage"),
            Error::Io(_) => (3, "io"),
            Error::Csv(_)
            | Error::Json(_)
            | Error::MissingColumn(_)
            | Error::InvalidValue { .. }
            | Error::DuplicateId(_)
            | Error::SetInvariant { .. }
            | Error::VersionsAbsent
            | Error::NoCovariates => (4, "invalid_input"),
            Error::Infeasible(_) => (5, "infeasible_match"),
            Error::NonMonotone { .. } | Error::EmptyAcceptance(_) => (6, "inversion"),
            Error::EnumerationTooLarge { .. } => (7, "enumeration_too_large"),
            Error::RankDeficient => (8, "rank_deficient"),
        };
        let message = match path {
            Some(p) => format!("{}: {e}", p.display()),
            None => e.to_string(),
        };
        Failure { code, kind, message }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind,
            "exit_code": self.code,
            "message": self.message,
        })
        .to_string()
    }
}

/// Writes to `out`, or to stdout when no path is given.
pub fn emit(out: Option<&PathBuf>, bytes: &[u8]) -> Result<(), Failure> {
    use std::io::Write;
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Failure::input(p, e.into())),
        None => std::io::stdout().write_all(bytes).map_err(|e| Failure::from(Error::from(e))),
    }
}

pub fn json<T: Serialize>(doc: &T) -> Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_string_pretty(doc).map_err(Error::from)?;
    s.push('\n');
    Ok(s.into_bytes())
}

#[derive(Serialize)]
pub struct TestDoc {
    schema: &'static str,
    #[serde(flatten)]
    result: TestResult,
}

impl TestDoc {
    pub fn new(result: TestResult) -> Self {
        TestDoc { schema: SCHEMA, result }
    }
}

#[derive(Serialize)]
pub struct BalanceDoc {
    schema: &'static str,
    rows: Vec<BalanceRow>,
}

impl BalanceDoc {
    pub fn new(rows: Vec<BalanceRow>) -> Self {
        BalanceDoc { schema: SCHEMA, rows }
    }
}

/// Intervals at one gamma, with optional Bonferroni companions.
pub struct Family {
    pub set: IntervalSet,
    pub bonferroni: Vec<Interval>,
}

#[derive(Serialize)]
struct FamilyJson<'a> {
    gamma: f64,
    intervals: [Interval; 5],
    #[serde(skip_serializing_if = "<[Interval]>::is_empty")]
    bonferroni: &'a [Interval],
}

#[derive(Serialize)]
struct IntervalsDoc<'a> {
    schema: &'static str,
    alpha: f64,
    statistic: ve_core::StatisticKind,
    results: Vec<FamilyJson<'a>>,
}

pub fn intervals(families: &[Family], alpha: f64, format: Format) -> Result<Vec<u8>, Failure> {
    match format {
        Format::Json => json(&IntervalsDoc {
            schema: SCHEMA,
            alpha,
            statistic: families[0].set.statistic,
            results: families
                .iter()
                .map(|f| FamilyJson {
                    gamma: f.set.gamma,
                    intervals: f.set.intervals(),
                    bonferroni: &f.bonferroni,
                })
                .collect(),
        }),
        Format::Csv => {
            let mut s = String::from("label,lo,hi,gamma\n");
            for f in families {
                for i in f.set.intervals().iter().chain(&f.bonferroni) {
                    writeln!(s, "{},{},{},{}", i.label.as_str(), i.lo, i.hi, f.set.gamma).unwrap();
                }
            }
            Ok(s.into_bytes())
        }
    }
}

fn opt(r: Option<ve_core::sim::Rate>) -> (String, String) {
    r.map_or((String::new(), String::new()), |r| (r.estimate.to_string(), r.mc_se.to_string()))
}

pub fn simulation_csv(reports: &[(f64, SimReport)]) -> Result<Vec<u8>, Failure> {
    let mut s = String::from(
        "tau_b,ratio_a,tau_a,delta,sets,reps,seed,alpha,power_version,se_version,power_f,se_f,\
         coverage_ic,se_ic,coverage_joint,se_joint,coverage_iv,se_iv\n",
    );
    for (ratio, r) in reports {
        let d = &r.design;
        let (ic, ic_se) = opt(r.coverage_ic);
        let (joint, joint_se) = opt(r.coverage_joint);
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{ic},{ic_se},{joint},{joint_se},{},{}",
            d.tau_b,
            ratio,
            d.tau_a(),
            d.delta,
            d.sets,
            d.reps,
            d.seed,
            d.alpha,
            r.power_version.estimate,
            r.power_version.mc_se,
            r.power_f.estimate,
            r.power_f.mc_se,
            r.coverage_iv.estimate,
            r.coverage_iv.mc_se,
        )
        .unwrap();
    }
    Ok(s.into_bytes())
}
