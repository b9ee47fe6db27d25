use serde::Serialize;

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::randtest::set_weights;
use crate::strata::FullMatch;

/// Standardized differences for one covariate. `None` marks a covariate
/// that is constant in both groups of the unmatched cohort.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub std_diff_before: Option<f64>,
    pub std_diff_after: Option<f64>,
}

/// Standardized differences before and after matching. The scale is
/// `sqrt((s_T^2 + s_C^2) / 2)` on the unmatched cohort in both columns;
/// after matching, within-set mean differences are combined with the set
/// weights used by the test statistic.
pub fn balance_table(before: &Cohort, after: &FullMatch) -> Result<Vec<BalanceRow>> {
    let names = before.covariate_names();
    let k = names.len();
    if let Some(s) = after
        .strata()
        .iter()
        .find(|s| s.members.iter().any(|u| u.covariates.len() != k))
    {
        return Err(Error::InvalidArgument(format!(
            "set {} has members with a different covariate count",
            s.set_id
        )));
    }
    let weights = set_weights(after);
    let rows = (0..k)
        .map(|j| {
            let xt: Vec<f64> = before.treated().map(|u| u.covariates[j]).collect();
            let xc: Vec<f64> = before.controls().map(|u| u.covariates[j]).collect();
            let scale = ((variance(&xt) + variance(&xc)) / 2.0).sqrt();
            let defined = scale > 0.0 && scale.is_finite();
            let diff_before = mean(&xt) - mean(&xc);
            let diff_after: f64 = after
                .strata()
                .iter()
                .zip(&weights)
                .map(|(s, w)| {
                    let t: Vec<f64> = s.members.iter().filter(|u| u.treated).map(|u| u.covariates[j]).collect();
                    let c: Vec<f64> = s.members.iter().filter(|u| !u.treated).map(|u| u.covariates[j]).collect();
                    w * (mean(&t) - mean(&c))
                })
                .sum();
            BalanceRow {
                covariate: names[j].clone(),
                std_diff_before: defined.then(|| diff_before / scale),
                std_diff_after: defined.then(|| diff_after / scale),
            }
        })
        .collect();
    Ok(rows)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}
