//! Seeded experiment drivers producing [`ExperimentReport`] tables.
//!
//! Every driver is a pure function of its config: randomness is drawn from
//! streams derived from `(seed, tag, cell)` so grid cells can run in any
//! order, or in parallel, and still produce identical rows.

mod alpha;
mod gauge;
mod linearity;
mod rank;

use std::collections::BTreeMap;

use rand::RngCore;
use serde::Serialize;
use serde_json::Value;

use crate::linalg::random::{rng_stream, stream_id};
use crate::linalg::pearson;

pub use alpha::{angles_vs_alpha, exp4_alpha_vs_rank, parametric_sim, Exp4Config, SimConfig};
pub use gauge::{exp3_gauge_sweep, Exp3Config};
pub use linearity::{local_linearity_check, LinearityConfig};
pub use rank::{
    exp1_rank_neutrality, exp2_residual_ablation, generic_rank_increase_check, ln_rank_trials,
    Exp1Config, Exp2Config, GenericRankConfig, LnTrialsConfig,
};

/// Prefix of summary keys that carry a pass/fail assertion.
pub const PASS_PREFIX: &str = "pass_";

/// A table of numeric rows plus a summary, tagged with the config that made it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config_echo: Value,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Sorted by key; `null` marks an absent statistic.
    pub summary: BTreeMap<String, Value>,
}

impl ExperimentReport {
    pub fn new(name: &str, config: &impl Serialize, columns: &[&str]) -> Self {
        ExperimentReport {
            name: name.to_string(),
            config_echo: serde_json::to_value(config).expect("configs serialize"),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            summary: BTreeMap::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width for {}", self.name);
        self.rows.push(row);
    }

    /// Stores a number; NaN and infinities become `null`.
    pub fn set_number(&mut self, key: impl Into<String>, value: f64) {
        let v = serde_json::Number::from_f64(value).map_or(Value::Null, Value::Number);
        self.summary.insert(key.into(), v);
    }

    pub fn set_optional(&mut self, key: impl Into<String>, value: Option<f64>) {
        match value {
            Some(v) => self.set_number(key, v),
            None => {
                self.summary.insert(key.into(), Value::Null);
            }
        }
    }

    pub fn set_count(&mut self, key: impl Into<String>, value: usize) {
        self.summary.insert(key.into(), Value::from(value as u64));
    }

    pub fn set_flag(&mut self, key: impl Into<String>, value: bool) {
        self.summary.insert(key.into(), Value::Bool(value));
    }

    pub fn set_text(&mut self, key: impl Into<String>, value: &str) {
        self.summary.insert(key.into(), Value::from(value));
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.summary.get(key).and_then(Value::as_f64)
    }

    pub fn flag(&self, key: &str) -> Option<bool> {
        self.summary.get(key).and_then(Value::as_bool)
    }

    /// Every `pass_*` flag in key order.
    pub fn checks(&self) -> Vec<(&str, bool)> {
        self.summary
            .iter()
            .filter(|(k, _)| k.starts_with(PASS_PREFIX))
            .map(|(k, v)| (k.as_str(), v.as_bool().unwrap_or(false)))
            .collect()
    }

    pub fn all_passed(&self) -> bool {
        self.checks().iter().all(|(_, ok)| *ok)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Seed for replicate `index` of experiment `tag`.
pub(crate) fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    rng_stream(seed, stream_id(tag, index)).next_u64()
}

/// Pearson correlation, `None` on zero variance or too few points.
pub(crate) fn correlation(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson(xs, ys).ok()
}

/// Least-squares slope of `ln y` against `ln x`.
pub(crate) fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || ys.iter().any(|y| !(*y > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
