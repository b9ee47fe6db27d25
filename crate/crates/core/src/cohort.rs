//! Matched observational cohorts: units, matched sets, CSV and JSON I/O.
//!
//! A [`Cohort`] is validated on construction and immutable afterwards. Matched
//! sets, when present, always satisfy the full-match property
//! `min(m, n - m) = 1`; violations are rejected, never repaired.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label of a version of treatment or control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Version {
    A,
    B,
}

/// Which arm carries the version labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VersionArm {
    #[default]
    Control,
    Treatment,
}

impl VersionArm {
    pub fn carries(self, treated: bool) -> bool {
        match self {
            VersionArm::Control => !treated,
            VersionArm::Treatment => treated,
        }
    }
}

/// Domain strings that map onto [`Version::A`] and [`Version::B`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionLabels {
    pub a: String,
    pub b: String,
}

impl VersionLabels {
    pub fn label(&self, v: Version) -> &str {
        match v {
            Version::A => &self.a,
            Version::B => &self.b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: String,
    pub treated: bool,
    pub version: Option<Version>,
    pub outcome: f64,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSet {
    pub set_id: i64,
    pub member_ids: Vec<String>,
    /// Treated members.
    pub m: usize,
    /// All members.
    pub n: usize,
}

impl MatchedSet {
    fn check(&self) -> Result<()> {
        if self.n < 2 || self.m < 1 || self.m >= self.n || self.m.min(self.n - self.m) != 1 {
            return Err(Error::SetInvariant {
                set_id: self.set_id,
                m: self.m,
                n: self.n,
            });
        }
        Ok(())
    }
}

/// Column names used when reading a cohort from CSV.
///
/// `version` and `set_id` are optional: when named but absent from the
/// header they are treated as not supplied. An empty `covariates` list means
/// "every column not otherwise claimed".
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub id: String,
    pub treated: String,
    pub outcome: String,
    pub version: Option<String>,
    pub set_id: Option<String>,
    pub covariates: Vec<String>,
    pub labels: VersionLabels,
    pub version_arm: VersionArm,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            id: "id".into(),
            treated: "treated".into(),
            outcome: "outcome".into(),
            version: Some("version".into()),
            set_id: Some("set_id".into()),
            covariates: Vec::new(),
            labels: VersionLabels {
                a: "A".into(),
                b: "B".into(),
            },
            version_arm: VersionArm::Control,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    units: Vec<Unit>,
    sets: Option<Vec<MatchedSet>>,
    covariate_names: Vec<String>,
    labels: Option<VersionLabels>,
    version_arm: VersionArm,
}

impl Cohort {
    /// Builds a cohort without matched sets. `labels` is `None` when the data
    /// carry no version information.
    pub fn new(
        units: Vec<Unit>,
        covariate_names: Vec<String>,
        labels: Option<VersionLabels>,
        version_arm: VersionArm,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(units.len());
        for (row, u) in units.iter().enumerate() {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::DuplicateId(u.id.clone()));
            }
            if !u.outcome.is_finite() {
                return Err(invalid(row, "outcome", u.outcome, "outcome must be finite"));
            }
            if u.covariates.len() != covariate_names.len() {
                return Err(Error::InvalidArgument(format!(
                    "unit `{}` has {} covariates, expected {}",
                    u.id,
                    u.covariates.len(),
                    covariate_names.len()
                )));
            }
            match (labels.is_some(), version_arm.carries(u.treated), u.version) {
                (_, false, Some(_)) => {
                    return Err(invalid(
                        row,
                        "version",
                        format!("{:?}", u.version),
                        "version label on the arm that does not carry versions",
                    ))
                }
                (true, true, None) => {
                    return Err(invalid(row, "version", "", "missing version on the version arm"))
                }
                (false, _, Some(_)) => {
                    return Err(invalid(row, "version", "", "version given but no labels configured"))
                }
                _ => {}
            }
        }
        Ok(Cohort {
            units,
            sets: None,
            covariate_names,
            labels,
            version_arm,
        })
    }

    /// Attaches matched sets given as `(unit id, set id)` pairs. Units not
    /// listed stay unmatched. Sets are ordered by first appearance in unit
    /// order.
    pub fn with_assignment<I, S>(self, assignment: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, i64)>,
        S: AsRef<str>,
    {
        let index: HashMap<&str, usize> = self
            .units
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id.as_str(), i))
            .collect();
        let mut set_of = vec![None; self.units.len()];
        for (id, set_id) in assignment {
            let id = id.as_ref();
            let &i = index
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown unit id `{id}`")))?;
            if set_of[i].replace(set_id).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "unit `{id}` assigned to more than one matched set"
                )));
            }
        }
        let sets = group_sets(&self.units, &set_of)?;
        Ok(Cohort {
            sets: Some(sets),
            ..self
        })
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn sets(&self) -> Option<&[MatchedSet]> {
        self.sets.as_deref()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn labels(&self) -> Option<&VersionLabels> {
        self.labels.as_ref()
    }

    pub fn version_arm(&self) -> VersionArm {
        self.version_arm
    }

    pub fn has_versions(&self) -> bool {
        self.labels.is_some()
    }

    /// Number of matched sets, `I`.
    pub fn num_sets(&self) -> usize {
        self.sets.as_ref().map_or(0, Vec::len)
    }

    /// Units inside matched sets, `N`.
    pub fn num_matched_units(&self) -> usize {
        self.sets.iter().flatten().map(|s| s.n).sum()
    }

    /// Treated units inside matched sets, `M`.
    pub fn num_matched_treated(&self) -> usize {
        self.sets.iter().flatten().map(|s| s.m).sum()
    }

    pub fn treated(&self) -> impl Iterator<Item = &Unit> {
        self.units.iter().filter(|u| u.treated)
    }

    pub fn controls(&self) -> impl Iterator<Item = &Unit> {
        self.units.iter().filter(|u| !u.treated)
    }

    pub fn unit(&self, id: &str) -> Option<&Unit> {
        self.units.iter().find(|u| u.id == id)
    }

    /// Set id for every unit, in unit order.
    pub fn set_ids(&self) -> Vec<Option<i64>> {
        let mut by_id: HashMap<&str, i64> = HashMap::new();
        for s in self.sets.iter().flatten() {
            for id in &s.member_ids {
                by_id.insert(id.as_str(), s.set_id);
            }
        }
        self.units
            .iter()
            .map(|u| by_id.get(u.id.as_str()).copied())
            .collect()
    }

    /// All units of the arm without versions plus the version-`v` units of
    /// the version arm. Matched sets are dropped; re-match the result.
    pub fn subset_by_version(&self, v: Version) -> Result<Cohort> {
        if self.labels.is_none() {
            return Err(Error::VersionsAbsent);
        }
        let arm = self.version_arm;
        let units = self
            .units
            .iter()
            .filter(|u| !arm.carries(u.treated) || u.version == Some(v))
            .cloned()
            .collect();
        Ok(Cohort {
            units,
            sets: None,
            covariate_names: self.covariate_names.clone(),
            labels: self.labels.clone(),
            version_arm: arm,
        })
    }

    pub fn load_csv(path: impl AsRef<Path>, spec: &ColumnSpec) -> Result<Cohort> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, spec)
    }

    pub fn read_csv<R: Read>(reader: R, spec: &ColumnSpec) -> Result<Cohort> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let need = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

        let id_col = need(&spec.id)?;
        let treated_col = need(&spec.treated)?;
        let outcome_col = need(&spec.outcome)?;
        let version_col = spec.version.as_deref().and_then(find);
        let set_col = spec.set_id.as_deref().and_then(find);

        let claimed: Vec<usize> = [Some(id_col), Some(treated_col), Some(outcome_col), version_col, set_col]
            .into_iter()
            .flatten()
            .collect();
        let (cov_cols, covariate_names): (Vec<usize>, Vec<String>) = if spec.covariates.is_empty() {
            headers
                .iter()
                .enumerate()
                .filter(|(i, _)| !claimed.contains(i))
                .map(|(i, h)| (i, h.trim().to_string()))
                .unzip()
        } else {
            spec.covariates
                .iter()
                .map(|c| need(c).map(|i| (i, c.clone())))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip()
        };

        let mut units = Vec::new();
        let mut set_of = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let row = row + 1;
            let field = |col: usize| record.get(col).unwrap_or("").trim();

            let treated = match field(treated_col) {
                "1" => true,
                "0" => false,
                other => return Err(invalid(row, &spec.treated, other, "treated must be 0 or 1")),
            };
            let raw_outcome = field(outcome_col);
            if raw_outcome.is_empty() {
                return Err(invalid(row, &spec.outcome, raw_outcome, "missing outcome"));
            }
            let outcome = parse_f64(row, &spec.outcome, raw_outcome)?;
            let covariates = cov_cols
                .iter()
                .zip(&covariate_names)
                .map(|(&c, name)| parse_f64(row, name, field(c)))
                .collect::<Result<Vec<_>>>()?;
            let version = version_col.and_then(|c| {
                let v = field(c);
                if v == spec.labels.a {
                    Some(Version::A)
                } else if v == spec.labels.b {
                    Some(Version::B)
                } else {
                    None
                }
            });
            if let Some(c) = version_col {
                let v = field(c);
                if spec.version_arm.carries(treated) && version.is_none() {
                    return Err(invalid(
                        row,
                        spec.version.as_deref().unwrap_or("version"),
                        v,
                        "expected one of the two version labels",
                    ));
                }
            }
            let set_id = match set_col.map(field) {
                None | Some("") => None,
                Some(s) => Some(s.parse::<i64>().map_err(|_| {
                    invalid(row, spec.set_id.as_deref().unwrap_or("set_id"), s, "set id must be an integer")
                })?),
            };
            units.push(Unit {
                id: field(id_col).to_string(),
                treated,
                version,
                outcome,
                covariates,
            });
            set_of.push(set_id);
        }

        let labels = version_col.map(|_| spec.labels.clone());
        let cohort = Cohort::new(units, covariate_names, labels, spec.version_arm)?;
        if set_col.is_some() {
            let sets = group_sets(&cohort.units, &set_of)?;
            Ok(Cohort {
                sets: Some(sets),
                ..cohort
            })
        } else {
            Ok(cohort)
        }
    }

    /// Writes the canonical CSV layout: `id,treated,[version],outcome,<covariates>,[set_id]`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "treated".to_string()];
        if self.labels.is_some() {
            header.push("version".into());
        }
        header.push("outcome".into());
        header.extend(self.covariate_names.iter().cloned());
        if self.sets.is_some() {
            header.push("set_id".into());
        }
        wtr.write_record(&header)?;
        let set_ids = self.set_ids();
        for (u, set_id) in self.units.iter().zip(set_ids) {
            let mut rec = vec![u.id.clone(), if u.treated { "1" } else { "0" }.to_string()];
            if let Some(labels) = &self.labels {
                rec.push(u.version.map_or(String::new(), |v| labels.label(v).to_string()));
            }
            rec.push(u.outcome.to_string());
            rec.extend(u.covariates.iter().map(f64::to_string));
            if self.sets.is_some() {
                rec.push(set_id.map_or(String::new(), |s| s.to_string()));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Column spec that reads back what [`Cohort::write_csv`] produced.
    pub fn canonical_spec(&self) -> ColumnSpec {
        ColumnSpec {
            covariates: self.covariate_names.clone(),
            labels: self.labels.clone().unwrap_or(ColumnSpec::default().labels),
            version_arm: self.version_arm,
            ..ColumnSpec::default()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let set_ids = self.set_ids();
        let doc = CohortJson {
            schema: "1".into(),
            version_arm: self.version_arm,
            labels: self.labels.clone(),
            covariate_names: self.covariate_names.clone(),
            has_sets: self.sets.is_some(),
            units: self
                .units
                .iter()
                .zip(set_ids)
                .map(|(u, set_id)| UnitJson {
                    id: u.id.clone(),
                    treated: u.treated,
                    version: u.version,
                    outcome: u.outcome,
                    covariates: u.covariates.clone(),
                    set_id,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Cohort> {
        let doc: CohortJson = serde_json::from_str(s)?;
        if doc.schema != "1" {
            return Err(Error::InvalidArgument(format!("unsupported schema {:?}", doc.schema)));
        }
        let set_of: Vec<Option<i64>> = doc.units.iter().map(|u| u.set_id).collect();
        let units = doc
            .units
            .into_iter()
            .map(|u| Unit {
                id: u.id,
                treated: u.treated,
                version: u.version,
                outcome: u.outcome,
                covariates: u.covariates,
            })
            .collect();
        let cohort = Cohort::new(units, doc.covariate_names, doc.labels, doc.version_arm)?;
        if doc.has_sets {
            let sets = group_sets(&cohort.units, &set_of)?;
            Ok(Cohort {
                sets: Some(sets),
                ..cohort
            })
        } else {
            Ok(cohort)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CohortJson {
    schema: String,
    version_arm: VersionArm,
    labels: Option<VersionLabels>,
    covariate_names: Vec<String>,
    has_sets: bool,
    units: Vec<UnitJson>,
}

#[derive(Serialize, Deserialize)]
struct UnitJson {
    id: String,
    treated: bool,
    version: Option<Version>,
    outcome: f64,
    covariates: Vec<f64>,
    set_id: Option<i64>,
}

fn group_sets(units: &[Unit], set_of: &[Option<i64>]) -> Result<Vec<MatchedSet>> {
    let mut order: Vec<i64> = Vec::new();
    let mut by_set: HashMap<i64, MatchedSet> = HashMap::new();
    for (u, set_id) in units.iter().zip(set_of) {
        let Some(set_id) = *set_id else { continue };
        let entry = by_set.entry(set_id).or_insert_with(|| {
            order.push(set_id);
            MatchedSet {
                set_id,
                member_ids: Vec::new(),
                m: 0,
                n: 0,
            }
        });
        entry.member_ids.push(u.id.clone());
        entry.n += 1;
        entry.m += usize::from(u.treated);
    }
    order
        .into_iter()
        .map(|id| {
            let set = by_set.remove(&id).expect("set recorded in order");
            set.check().map(|_| set)
        })
        .collect()
}

fn parse_f64(row: usize, column: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| invalid(row, column, raw, "not a number"))?;
    if !v.is_finite() {
        return Err(invalid(row, column, raw, "value must be finite"));
    }
    Ok(v)
}

fn invalid(row: usize, column: &str, value: impl ToString, reason: &str) -> Error {
    Error::InvalidValue {
        row,
        column: column.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}
