use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cohort::Cohort;
use crate::error::{Error, Result};

/// Treated-by-control distances. `f64::INFINITY` marks a forbidden pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: Vec<String>,
    cols: Vec<String>,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(rows: Vec<String>, cols: Vec<String>, d: Vec<f64>) -> Result<Self> {
        if d.len() != rows.len() * cols.len() {
            return Err(Error::InvalidArgument(format!(
                "distance matrix has {} entries, expected {}x{}",
                d.len(),
                rows.len(),
                cols.len()
            )));
        }
        if let Some(bad) = d.iter().find(|x| x.is_nan() || **x < 0.0 || **x == f64::NEG_INFINITY) {
            return Err(Error::InvalidArgument(format!("invalid distance {bad}")));
        }
        Ok(DistanceMatrix { rows, cols, d })
    }

    /// Builds from a dense row-major table, naming rows `t1..` and columns `c1..`.
    pub fn from_rows(table: &[Vec<f64>]) -> Result<Self> {
        let n_cols = table.first().map_or(0, Vec::len);
        if table.iter().any(|r| r.len() != n_cols) {
            return Err(Error::InvalidArgument("ragged distance table".into()));
        }
        DistanceMatrix::new(
            (1..=table.len()).map(|i| format!("t{i}")).collect(),
            (1..=n_cols).map(|j| format!("c{j}")).collect(),
            table.iter().flatten().copied().collect(),
        )
    }

    pub fn treated_ids(&self) -> &[String] {
        &self.rows
    }

    pub fn control_ids(&self) -> &[String] {
        &self.cols
    }

    pub fn n_treated(&self) -> usize {
        self.rows.len()
    }

    pub fn n_controls(&self) -> usize {
        self.cols.len()
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.d[t * self.cols.len() + c]
    }

    pub fn is_forbidden(&self, t: usize, c: usize) -> bool {
        self.get(t, c).is_infinite()
    }

    /// Forbids every pairing farther apart than `caliper`.
    pub fn with_caliper(mut self, caliper: f64) -> Self {
        for x in &mut self.d {
            if *x > caliper {
                *x = f64::INFINITY;
            }
        }
        self
    }
}

/// Mahalanobis distance between every treated and control unit, using the
/// pooled within-group covariance of the covariates.
pub fn mahalanobis_distances(c: &Cohort) -> Result<DistanceMatrix> {
    let k = c.covariate_names().len();
    if k == 0 {
        return Err(Error::NoCovariates);
    }
    let treated: Vec<_> = c.treated().collect();
    let controls: Vec<_> = c.controls().collect();
    if treated.is_empty() || controls.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one treated and one control unit".into(),
        ));
    }
    let xt: Vec<&[f64]> = treated.iter().map(|u| u.covariates.as_slice()).collect();
    let xc: Vec<&[f64]> = controls.iter().map(|u| u.covariates.as_slice()).collect();
    let cov = pooled_covariance(&xt, &xc, k);
    let d = mahalanobis_with_covariance(&xt, &xc, cov)?;
    DistanceMatrix::new(
        treated.iter().map(|u| u.id.clone()).collect(),
        controls.iter().map(|u| u.id.clone()).collect(),
        d,
    )
}

fn pooled_covariance(xt: &[&[f64]], xc: &[&[f64]], k: usize) -> DMatrix<f64> {
    let dof = xt.len() + xc.len();
    if dof <= 2 {
        log::warn!("too few units for a pooled covariance; using the identity");
        return DMatrix::identity(k, k);
    }
    let mut scatter = DMatrix::<f64>::zeros(k, k);
    for group in [xt, xc] {
        let mean = DVector::from_fn(k, |j, _| {
            group.iter().map(|x| x[j]).sum::<f64>() / group.len() as f64
        });
        for x in group {
            let dev = DVector::from_column_slice(x) - &mean;
            scatter += &dev * dev.transpose();
        }
    }
    scatter / (dof - 2) as f64
}

/// Distances `sqrt((x - y)' S^-1 (x - y))` for a given covariance `S`,
/// row-major over `xt` by `xc`. A singular `S` gets `1e-8 * trace / k` added
/// to its diagonal.
pub fn mahalanobis_with_covariance(
    xt: &[&[f64]],
    xc: &[&[f64]],
    cov: DMatrix<f64>,
) -> Result<Vec<f64>> {
    let k = cov.nrows();
    let precision = match cov.clone().cholesky() {
        Some(ch) if ch.l().diagonal().iter().all(|&l| l > 1e-12) => ch.inverse(),
        _ => {
            let trace = cov.trace();
            let ridge = if trace > 0.0 { 1e-8 * trace / k as f64 } else { 1e-8 };
            log::warn!("singular covariate covariance; adding {ridge:e} to the diagonal");
            let reg = cov + DMatrix::identity(k, k) * ridge;
            reg.cholesky()
                .ok_or_else(|| Error::InvalidArgument("covariance not positive semidefinite".into()))?
                .inverse()
        }
    };
    let rows: Vec<Vec<f64>> = xt
        .par_iter()
        .map(|t| {
            xc.iter()
                .map(|c| {
                    let diff = DVector::from_iterator(k, t.iter().zip(c.iter()).map(|(a, b)| a - b));
                    (diff.transpose() * &precision * &diff)[(0, 0)].max(0.0).sqrt()
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}
