//! Evaluation metrics: accuracy and the concordance correlation
//! coefficient, CCC = 2*rho*sx*sy / (sx^2 + sy^2 + (mx - my)^2).
//!
//! Variances use the population convention (divide by n). A degenerate
//! denominator below 1e-12 (e.g. both sequences equal constants) yields 0.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CccComponents {
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub pearson: f64,
}

pub fn ccc_components(x: &[f64], y: &[f64]) -> Result<CccComponents> {
    if x.len() != y.len() {
        return Err(Error::Data(format!(
            "ccc length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Data("ccc needs at least 2 samples".into()));
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    let mut cov = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mean_x, b - mean_y);
        var_x += dx * dx;
        var_y += dy * dy;
        cov += dx * dy;
    }
    var_x /= n;
    var_y /= n;
    cov /= n;
    let denom = (var_x * var_y).sqrt();
    let pearson = if denom > 0.0 { cov / denom } else { 0.0 };
    Ok(CccComponents {
        mean_x,
        mean_y,
        var_x,
        var_y,
        pearson,
    })
}

pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    let c = ccc_components(x, y)?;
    let mean_diff = c.mean_x - c.mean_y;
    let denom = c.var_x + c.var_y + mean_diff * mean_diff;
    if denom < 1e-12 {
        return Ok(0.0);
    }
    Ok(2.0 * c.pearson * c.var_x.sqrt() * c.var_y.sqrt() / denom)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(ccc_components(x, y)?.pearson)
}

/// Evaluation summary; fields absent for the other head kind stay None.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ccc_arousal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ccc_valence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class: Option<BTreeMap<String, f64>>,
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
