use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{head_subspace_dim, mha_rank, subspace_angles_of};
use crate::error::{LabError, Result};
use crate::harness::{correlation, derive_seed, ExperimentReport};
use crate::linalg::random::{gaussian, planted_rank, rng_stream, stream_id};
use crate::linalg::{mean, numerical_rank, Matrix, DEFAULT_REL_TOL};
use crate::model::{forward, mha, scores_with_asymmetry, LayerWeights, ModelConfig, ModelWeights};

const TAG_EXP4: u64 = 6;
const TAG_SIM: u64 = 7;
const TAG_QK: u64 = 8;
const STREAM_INPUT: u64 = u64::MAX;

/// Replaces every head's `W_Q, W_K` with a prescribed-asymmetry pair. The
/// draws for head `(l, h)` come from a fixed stream, so two calls with
/// different `alpha` share the underlying `S`, `K` and frame.
fn with_asymmetry(
    base: &ModelWeights,
    cfg: &ModelConfig,
    alpha: f64,
    scale: f64,
    seed: u64,
) -> Result<(ModelWeights, Vec<f64>)> {
    let mut weights = base.clone();
    let mut measured = Vec::with_capacity(cfg.layers * cfg.heads);
    for (l, layer) in weights.layers.iter_mut().enumerate() {
        for (h, head) in layer.heads.iter_mut().enumerate() {
            let mut rng = rng_stream(seed, stream_id(TAG_QK, (l * cfg.heads + h) as u64));
            let s = scores_with_asymmetry(cfg.d_model, cfg.d_k, alpha, scale, &mut rng)?;
            head.w_q = s.w_q;
            head.w_k = s.w_k;
            measured.push(s.measured);
        }
    }
    Ok((weights, measured))
}

fn check_alpha_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(LabError::InvalidArgument("alpha grid must be a non-empty subset of [0, 1]".into()));
    }
    Ok(())
}

/// Residual attention stack without MLP or LayerNorm.
fn residual_attention(n: usize, d_model: usize, heads: usize, d_k: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        n,
        d_model,
        heads,
        d_k,
        layers,
        use_mlp: false,
        use_layernorm: false,
        ..ModelConfig::default()
    }
    .resolved()
}

/// Asymmetry of each head against the rank of the MHA output it feeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp4Config {
    pub n: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub layers: usize,
    pub seeds: usize,
    pub seed: u64,
    pub alpha_grid: Vec<f64>,
    /// Frobenius norm of each `W_Q W_Kᵀ`; `None` means `√d_k`, the expected
    /// norm under the default N(0, 1/d_model) initialization.
    pub score_scale: Option<f64>,
    /// Planted rank of `X^(0)`, drawn per seed from `min_rank..=max_rank`.
    pub min_rank: usize,
    pub max_rank: usize,
    pub rel_tol: f64,
}

impl Default for Exp4Config {
    fn default() -> Self {
        Exp4Config {
            n: 48,
            d_model: 64,
            heads: 4,
            d_k: 16,
            layers: 3,
            seeds: 10,
            seed: 0,
            alpha_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            score_scale: None,
            min_rank: 2,
            max_rank: 12,
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

impl Exp4Config {
    pub fn model(&self) -> ModelConfig {
        residual_attention(self.n, self.d_model, self.heads, self.d_k, self.layers)
    }

    pub fn resolved(&self) -> Self {
        Exp4Config {
            score_scale: Some(resolve_scale(self.score_scale, self.d_k)),
            ..self.clone()
        }
    }
}

fn resolve_scale(scale: Option<f64>, d_k: usize) -> f64 {
    scale.unwrap_or((d_k as f64).sqrt())
}

/// Scatter of `(α_h^(l), rank MHA(X^(l)))`. Per seed the non-score weights
/// and `X^(0)` are fixed while `α` sweeps the grid, so any correlation must
/// come from the asymmetry itself.
pub fn exp4_alpha_vs_rank(cfg: &Exp4Config) -> Result<ExperimentReport> {
    let cfg = &cfg.resolved();
    let scale = resolve_scale(cfg.score_scale, cfg.d_k);
    let model = cfg.model();
    model.validate()?;
    check_alpha_grid(&cfg.alpha_grid)?;
    if cfg.min_rank == 0 || cfg.min_rank > cfg.max_rank || cfg.max_rank > cfg.n.min(cfg.d_model) {
        return Err(LabError::InvalidArgument("exp4 planted-rank range is empty or too large".into()));
    }
    let echo = serde_json::json!({ "experiment": cfg, "model": model });
    let mut report = ExperimentReport::new(
        "exp4_alpha_vs_rank",
        &echo,
        &["seed", "alpha_target", "layer", "head", "alpha", "mha_rank"],
    );
    let cells: Vec<(usize, usize)> = (0..cfg.seeds)
        .flat_map(|s| (0..cfg.alpha_grid.len()).map(move |a| (s, a)))
        .collect();
    let results: Vec<Result<Vec<Vec<f64>>>> = cells
        .par_iter()
        .map(|&(s, a)| {
            let seed = derive_seed(cfg.seed, TAG_EXP4, s as u64);
            let mut rng = rng_stream(seed, STREAM_INPUT);
            let r = rng.random_range(cfg.min_rank..=cfg.max_rank);
            let x0 = planted_rank(&mut rng, cfg.n, cfg.d_model, r);
            let base = ModelWeights::random(&model, seed);
            let alpha = cfg.alpha_grid[a];
            let (weights, measured) = with_asymmetry(&base, &model, alpha, scale, seed)?;
            let trace = forward(&x0, &weights, &model)?;
            let mut rows = Vec::new();
            for l in 0..cfg.layers {
                let rank = mha_rank(&trace, l, cfg.rel_tol)?;
                for h in 0..cfg.heads {
                    let m = measured[l * cfg.heads + h];
                    rows.push(vec![s as f64, alpha, l as f64, h as f64, m, rank as f64]);
                }
            }
            Ok(rows)
        })
        .collect();
    for rows in results {
        rows?.into_iter().for_each(|r| report.push_row(r));
    }
    let xs = report.column("alpha").unwrap_or_default();
    let ys = report.column("mha_rank").unwrap_or_default();
    let r = correlation(&xs, &ys);
    report.set_optional("pearson_r", r);
    report.set_flag("pearson_r_absent", r.is_none());
    report.set_number("reference_full_scale_pearson_r", 0.152);
    report.set_flag("pass_no_strong_correlation", r.is_none_or(|r| r.abs() < 0.3));
    Ok(report)
}

/// Rank dynamics under prescribed head asymmetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub layers: usize,
    pub realizations: usize,
    pub seed: u64,
    pub alpha_grid: Vec<f64>,
    /// Frobenius norm of each `W_Q W_Kᵀ`; `None` means `√d_k`, the expected
    /// norm under the default N(0, 1/d_model) initialization.
    pub score_scale: Option<f64>,
    /// Layer whose head contributions define `dim R_h`.
    pub subspace_layer: usize,
    pub rel_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 32,
            d_model: 64,
            heads: 4,
            d_k: 16,
            layers: 6,
            realizations: 20,
            seed: 0,
            alpha_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            score_scale: None,
            subspace_layer: 0,
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

impl SimConfig {
    /// Residual connections on, MLP and LayerNorm off.
    pub fn residual_arm(&self) -> ModelConfig {
        residual_attention(self.n, self.d_model, self.heads, self.d_k, self.layers)
    }

    pub fn plain_arm(&self) -> ModelConfig {
        self.residual_arm().pure_attention()
    }

    pub fn scale(&self) -> f64 {
        resolve_scale(self.score_scale, self.d_k)
    }

    pub fn resolved(&self) -> Self {
        SimConfig {
            score_scale: Some(self.scale()),
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        self.residual_arm().validate()?;
        check_alpha_grid(&self.alpha_grid)?;
        if self.subspace_layer >= self.layers {
            return Err(LabError::InvalidArgument(format!(
                "subspace_layer {} must be below layers = {}",
                self.subspace_layer, self.layers
            )));
        }
        Ok(())
    }

    /// `X^(0)` and the shared non-score weights of one realization.
    fn realization(&self, r: usize) -> (u64, Matrix, ModelWeights) {
        let seed = derive_seed(self.seed, TAG_SIM, r as u64);
        let x0 = gaussian(&mut rng_stream(seed, STREAM_INPUT), self.n, self.d_model, 1.0);
        (seed, x0, ModelWeights::random(&self.residual_arm(), seed))
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        (0..self.alpha_grid.len())
            .flat_map(|a| (0..self.realizations).map(move |r| (a, r)))
            .collect()
    }

    fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "experiment": self.resolved(),
            "arm_residual": self.residual_arm(),
            "arm_plain": self.plain_arm(),
        })
    }
}

fn alpha_key(alpha: f64) -> String {
    format!("alpha_{alpha}")
}

/// Per `(α, realization)`: final rank with and without residual, their
/// difference, and `dim R_h` of every head.
pub fn parametric_sim(cfg: &SimConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let on = cfg.residual_arm();
    let off = cfg.plain_arm();
    let mut columns = vec![
        "alpha_target".to_string(),
        "realization".into(),
        "rank_residual".into(),
        "rank_plain".into(),
        "rank_difference".into(),
        "alpha_mean".into(),
        "alpha_max_deviation".into(),
    ];
    columns.extend((0..cfg.heads).map(|h| format!("dim_r_head_{h}")));
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut report = ExperimentReport::new("parametric_sim", &cfg.echo(), &cols);

    let cells = cfg.cells();
    let results: Vec<Result<Vec<f64>>> = cells
        .par_iter()
        .map(|&(a, r)| {
            let alpha = cfg.alpha_grid[a];
            let (seed, x0, base) = cfg.realization(r);
            let (weights, measured) = with_asymmetry(&base, &on, alpha, cfg.scale(), seed)?;
            let t_on = forward(&x0, &weights, &on)?;
            let t_off = forward(&x0, &weights, &off)?;
            let rank_on = numerical_rank(t_on.final_state(), cfg.rel_tol)?;
            let rank_off = numerical_rank(t_off.final_state(), cfg.rel_tol)?;
            let deviation = measured.iter().map(|m| (m - alpha).abs()).fold(0.0, f64::max);
            let mut row = vec![
                alpha,
                r as f64,
                rank_on as f64,
                rank_off as f64,
                rank_on as f64 - rank_off as f64,
                mean(&measured),
                deviation,
            ];
            for c in &t_on.head_contributions[cfg.subspace_layer] {
                row.push(head_subspace_dim(c, cfg.rel_tol)? as f64);
            }
            Ok(row)
        })
        .collect();
    for row in results {
        report.push_row(row?);
    }

    let need = cfg.realizations.saturating_sub(1);
    let (mut pass_a, mut pass_b, mut pass_d) = (true, true, true);
    let mut worst_dev: f64 = 0.0;
    for (a, &alpha) in cfg.alpha_grid.iter().enumerate() {
        let rows = report.rows[a * cfg.realizations..(a + 1) * cfg.realizations].to_vec();
        let full = rows.iter().filter(|r| r[2] as usize == cfg.n.min(cfg.d_model)).count();
        let collapsed = rows.iter().filter(|r| r[3] == 1.0).count();
        let dims_ok = rows
            .iter()
            .filter(|r| r[7..].iter().all(|&d| d as usize == cfg.d_k.min(cfg.n)))
            .count();
        worst_dev = rows.iter().map(|r| r[6]).fold(worst_dev, f64::max);
        let key = alpha_key(alpha);
        report.set_count(format!("{key}_residual_full_rank"), full);
        report.set_count(format!("{key}_plain_rank_one"), collapsed);
        report.set_count(format!("{key}_dim_r_equals_d_k"), dims_ok);
        report.set_number(format!("{key}_mean_rank_difference"), mean(&rows.iter().map(|r| r[4]).collect::<Vec<_>>()));
        pass_a &= full >= need;
        pass_b &= collapsed >= need;
        pass_d &= dims_ok >= need;
    }
    report.set_number("alpha_max_deviation", worst_dev);
    report.set_flag("pass_a_residual_full_rank", pass_a);
    report.set_flag("pass_b_plain_rank_one", pass_b);
    report.set_flag("pass_d_dim_r_equals_d_k", pass_d);
    report.set_flag("pass_alpha_construction", worst_dev <= crate::model::ASYMMETRY_TOLERANCE);
    Ok(report)
}

fn mean_cos2(contributions: &[Matrix], rel_tol: f64) -> Result<Option<f64>> {
    let table = subspace_angles_of(contributions, rel_tol)?;
    let cos2: Vec<f64> = table.off_diagonal().iter().map(|t| t.cos().powi(2)).collect();
    Ok((!cos2.is_empty()).then(|| mean(&cos2)))
}

/// Pairwise minimal principal angles between head output subspaces as `α`
/// varies. Recorded only; no pass/fail.
pub fn angles_vs_alpha(cfg: &SimConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let on = cfg.residual_arm();
    let mut report = ExperimentReport::new(
        "angles_vs_alpha",
        &cfg.echo(),
        &["alpha_target", "realization", "head_a", "head_b", "theta_1", "cos2_theta_1"],
    );
    let layer = cfg.subspace_layer;
    let cells = cfg.cells();
    let results: Vec<Result<Vec<Vec<f64>>>> = cells
        .par_iter()
        .map(|&(a, r)| {
            let alpha = cfg.alpha_grid[a];
            let (seed, x0, base) = cfg.realization(r);
            let (weights, _) = with_asymmetry(&base, &on, alpha, cfg.scale(), seed)?;
            let trace = forward(&x0, &weights, &on)?;
            let table = subspace_angles_of(&trace.head_contributions[layer], cfg.rel_tol)?;
            let mut rows = Vec::new();
            for i in 0..cfg.heads {
                for j in (i + 1)..cfg.heads {
                    if let Some(t) = table.minimal[i][j] {
                        rows.push(vec![alpha, r as f64, i as f64, j as f64, t, t.cos().powi(2)]);
                    }
                }
            }
            Ok(rows)
        })
        .collect();
    for rows in results {
        rows?.into_iter().for_each(|r| report.push_row(r));
    }
    for &alpha in &cfg.alpha_grid {
        let c: Vec<f64> = report.rows.iter().filter(|r| r[0] == alpha).map(|r| r[5]).collect();
        report.set_optional(format!("{}_mean_cos2", alpha_key(alpha)), (!c.is_empty()).then(|| mean(&c)));
    }
    let xs = report.column("alpha_target").unwrap_or_default();
    let ys = report.column("cos2_theta_1").unwrap_or_default();
    report.set_optional("pearson_alpha_cos2", correlation(&xs, &ys));

    // Controls on the first realization's input.
    let (_, x0, base) = cfg.realization(0);
    let first = &base.layers[0];
    let random = mha(&x0, first, &on)?.contributions;
    report.set_optional("control_random_mean_cos2", mean_cos2(&random, cfg.rel_tol)?);
    let mut same = first.clone();
    same.heads = vec![first.heads[0].clone(); cfg.heads];
    let identical = mha(&x0, &same, &on)?.contributions;
    report.set_optional("control_identical_mean_cos2", mean_cos2(&identical, cfg.rel_tol)?);
    let disjoint = mha(&x0, &block_disjoint(first, &on), &on)?.contributions;
    report.set_optional("control_block_disjoint_mean_cos2", mean_cos2(&disjoint, cfg.rel_tol)?);
    Ok(report)
}

/// Zeroes every column of head `h`'s `W_O` outside block `h`.
pub(crate) fn block_disjoint(layer: &LayerWeights, cfg: &ModelConfig) -> LayerWeights {
    let mut out = layer.clone();
    let width = cfg.d_model / cfg.heads;
    for (h, head) in out.heads.iter_mut().enumerate() {
        let w = &head.w_o;
        head.w_o = Matrix::from_fn(w.rows(), w.cols(), |i, j| {
            if j / width == h {
                w.get(i, j)
            } else {
                0.0
            }
        });
    }
    out
}
