use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::harness::{loglog_slope, ExperimentReport};
use crate::linalg::random::{gaussian, rng_stream};
use crate::linalg::Matrix;
use crate::model::{apply_jacobian, forward, jacobian_finite_diff, AttentionMode, ModelConfig, ModelWeights};

const STREAM_INPUT: u64 = u64::MAX;
const STREAM_DIRECTION: u64 = u64::MAX - 1;

/// First-order Taylor remainder of the depth-`L` map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearityConfig {
    pub n: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub seed: u64,
    /// Perturbation sizes, decreasing.
    pub steps: Vec<f64>,
    /// Central-difference step for the Jacobian.
    pub jacobian_step: f64,
}

impl Default for LinearityConfig {
    fn default() -> Self {
        LinearityConfig {
            n: 6,
            d_model: 8,
            heads: 2,
            d_k: 4,
            d_ff: 16,
            layers: 2,
            seed: 0,
            steps: vec![0.02, 0.01, 0.005, 0.0025, 0.00125],
            jacobian_step: 1e-5,
        }
    }
}

impl LinearityConfig {
    fn arm(&self, use_mlp: bool, mode: AttentionMode) -> ModelConfig {
        ModelConfig {
            n: self.n,
            d_model: self.d_model,
            heads: self.heads,
            d_k: self.d_k,
            d_ff: self.d_ff,
            layers: self.layers,
            use_mlp,
            use_layernorm: false,
            attention_mode: mode,
            ..ModelConfig::default()
        }
        .resolved()
    }

    /// Residual softmax attention, no MLP.
    pub fn attention_arm(&self) -> ModelConfig {
        self.arm(false, AttentionMode::Softmax)
    }

    /// Residual softmax attention with MLP.
    pub fn mlp_arm(&self) -> ModelConfig {
        self.arm(true, AttentionMode::Softmax)
    }

    /// Uniform attention without MLP: an exactly linear map.
    pub fn linear_arm(&self) -> ModelConfig {
        self.arm(false, AttentionMode::Uniform)
    }
}

/// `‖f(X⁰ + tD) − f(X⁰) − t·J·D‖_F` for each step `t`.
fn remainders(cfg: &LinearityConfig, model: &ModelConfig, x0: &Matrix, dir: &Matrix) -> Result<Vec<f64>> {
    let weights = ModelWeights::random(model, cfg.seed);
    let f = |x: &Matrix| forward(x, &weights, model).map(|t| t.final_state().clone());
    let base = f(x0)?;
    let jac = jacobian_finite_diff(f, x0, cfg.jacobian_step)?;
    let slope = apply_jacobian(&jac, dir, cfg.n)?;
    cfg.steps
        .iter()
        .map(|&t| {
            let moved = f(&x0.try_add(&dir.scale(t))?)?;
            Ok(moved.try_sub(&base)?.try_sub(&slope.scale(t))?.frobenius_norm())
        })
        .collect()
}

/// Remainder per step for the attention arm, the MLP arm and the linear
/// control, with log-log convergence orders in the summary.
pub fn local_linearity_check(cfg: &LinearityConfig) -> Result<ExperimentReport> {
    if cfg.steps.len() < 3 || cfg.steps.windows(2).any(|w| !(w[1] < w[0])) || cfg.steps[0] <= 0.0 {
        return Err(LabError::InvalidArgument("need at least 3 positive, decreasing steps".into()));
    }
    let arms = [cfg.attention_arm(), cfg.mlp_arm(), cfg.linear_arm()];
    for a in &arms {
        a.validate()?;
    }
    let echo = serde_json::json!({
        "experiment": cfg,
        "arm_attention": arms[0],
        "arm_mlp": arms[1],
        "arm_linear": arms[2],
    });
    let mut report = ExperimentReport::new("local_linearity", &echo, &["arm", "step", "remainder"]);
    let x0 = gaussian(&mut rng_stream(cfg.seed, STREAM_INPUT), cfg.n, cfg.d_model, 1.0);
    let dir = gaussian(&mut rng_stream(cfg.seed, STREAM_DIRECTION), cfg.n, cfg.d_model, 1.0);
    let dir = dir.scale(1.0 / dir.frobenius_norm());

    let mut all = Vec::new();
    for (i, model) in arms.iter().enumerate() {
        let rem = remainders(cfg, model, &x0, &dir)?;
        for (t, r) in cfg.steps.iter().zip(&rem) {
            report.push_row(vec![i as f64, *t, *r]);
        }
        all.push(rem);
    }
    let order = loglog_slope(&cfg.steps, &all[0]);
    report.set_optional("order_attention", order);
    report.set_optional("order_mlp", loglog_slope(&cfg.steps, &all[1]));
    report.set_number("linear_control_max_remainder", all[2].iter().copied().fold(0.0, f64::max));
    report.set_text("arm_codes", "0 attention, 1 attention+mlp, 2 linear control");
    report.set_flag("pass_order_two", order.is_some_and(|o| (o - 2.0).abs() <= 0.3));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_orders() {
        let r = local_linearity_check(&LinearityConfig::default()).unwrap();
        assert_eq!(r.rows.len(), 15);
        assert!(r.all_passed(), "{:?}", r.summary);
        assert!(r.number("linear_control_max_remainder").unwrap() < 1e-9);
    }

    #[test]
    fn rejects_short_or_unsorted_steps() {
        let mut cfg = LinearityConfig::default();
        cfg.steps = vec![0.1, 0.05];
        assert!(local_linearity_check(&cfg).is_err());
        cfg.steps = vec![0.1, 0.2, 0.05];
        assert!(local_linearity_check(&cfg).is_err());
    }
}
