//! Scalar and table measurements on weights and forward traces.

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::linalg::{
    antisymmetric_part, column_space_basis, numerical_rank, principal_angles, projection_residual,
    row_space_basis, Matrix, DEFAULT_REL_TOL,
};
use crate::model::{gate_value, positional_encoding, ForwardTrace, ModelConfig, ModelWeights};

/// Default residual threshold for the H2/H4 membership tests.
pub const HYPOTHESIS_TOL: f64 = 1e-8;

/// Outcome of the LayerNorm non-degeneracy checks H1–H4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HypothesisReport {
    /// No row is constant.
    pub h1: bool,
    /// `1 ∉ rowspace(X)`.
    pub h2: bool,
    /// Every `γ_j ≠ 0`.
    pub h3: bool,
    /// `σ ∉ colspace(X P)`.
    pub h4: bool,
    /// Smallest row standard deviation.
    pub min_row_std: f64,
    /// Relative residual of fitting `1` by the rows of `X`.
    pub ones_residual: f64,
    /// Smallest `|γ_j|`.
    pub min_abs_gamma: f64,
    /// Relative residual of fitting `σ` by the columns of the row-centred `X`.
    pub sigma_residual: f64,
}

impl HypothesisReport {
    pub fn all(&self) -> bool {
        self.h1 && self.h2 && self.h3 && self.h4
    }
}

fn row_std(row: &[f64]) -> f64 {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    (row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d).sqrt()
}

/// Checks H1–H4 for `X` and the LayerNorm scale `gamma`. Never fails; a
/// degenerate input shows up as a false flag.
pub fn check_hypotheses(x: &Matrix, gamma: &[f64], tol: f64) -> HypothesisReport {
    let (n, d) = x.shape();
    let stds: Vec<f64> = x.row_iter().map(row_std).collect();
    let min_row_std = stds.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = x.frobenius_norm() / ((n * d) as f64).sqrt();

    let ones_residual = row_space_basis(x, DEFAULT_REL_TOL)
        .and_then(|b| projection_residual(&b, &vec![1.0; d]))
        .unwrap_or(0.0);

    let min_abs_gamma = gamma.iter().fold(f64::INFINITY, |m, g| m.min(g.abs()));

    let mut centred = x.clone();
    for i in 0..n {
        let row = centred.row_mut(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    let sigma_residual = column_space_basis(&centred, DEFAULT_REL_TOL)
        .and_then(|b| projection_residual(&b, &stds))
        .unwrap_or(0.0);

    HypothesisReport {
        h1: min_row_std > tol * scale,
        h2: ones_residual > tol,
        h3: gamma.len() == d && min_abs_gamma > tol,
        h4: sigma_residual > tol,
        min_row_std,
        ones_residual,
        min_abs_gamma,
        sigma_residual,
    }
}

/// `‖M_a‖_F / ‖M‖_F` for `M = W_Q W_Kᵀ`; 0 is a reciprocal head, 1 a
/// purely directional one.
pub fn directional_asymmetry(w_q: &Matrix, w_k: &Matrix) -> Result<f64> {
    if w_q.shape() != w_k.shape() {
        return Err(LabError::shape(
            "directional_asymmetry",
            "W_Q and W_K differ in shape",
        ));
    }
    let m = w_q.matmul_t(w_k)?;
    let total = m.frobenius_norm();
    if total == 0.0 {
        return Err(LabError::Undefined("score matrix W_Q W_Kᵀ is zero".into()));
    }
    Ok((antisymmetric_part(&m)?.frobenius_norm() / total).clamp(0.0, 1.0))
}

/// `dim R_h`, the numerical rank of one head's contribution.
pub fn head_subspace_dim(contribution: &Matrix, rel_tol: f64) -> Result<usize> {
    numerical_rank(contribution, rel_tol)
}

pub fn mha_rank(trace: &ForwardTrace, layer: usize, rel_tol: f64) -> Result<usize> {
    trace.check_layer(layer)?;
    numerical_rank(&trace.mha[layer], rel_tol)
}

/// `1 − rank(MHA) / (H · max_h rank(Y^(h) W_O^(h)))`, clamped to
/// `[0, 1 − 1/H]`.
pub fn alignment_index(trace: &ForwardTrace, layer: usize, rel_tol: f64) -> Result<f64> {
    trace.check_layer(layer)?;
    let heads = &trace.head_contributions[layer];
    let h = heads.len();
    let mut max_dim = 0;
    for c in heads {
        max_dim = max_dim.max(head_subspace_dim(c, rel_tol)?);
    }
    if max_dim == 0 {
        return Err(LabError::Undefined(format!(
            "alignment index: every head contribution at layer {layer} is zero"
        )));
    }
    let rank = mha_rank(trace, layer, rel_tol)?;
    let value = 1.0 - rank as f64 / (h * max_dim) as f64;
    Ok(value.clamp(0.0, 1.0 - 1.0 / h as f64))
}

/// Principal angles between every pair of head output subspaces at a layer.
#[derive(Debug, Clone, Serialize)]
pub struct SubspaceAngles {
    /// `θ₁` for each pair; `None` where either subspace is zero-dimensional.
    pub minimal: Vec<Vec<Option<f64>>>,
    /// Full angle vectors, empty where either subspace is zero-dimensional.
    pub full: Vec<Vec<Vec<f64>>>,
}

impl SubspaceAngles {
    /// Off-diagonal minimal angles (each unordered pair once).
    pub fn off_diagonal(&self) -> Vec<f64> {
        let h = self.minimal.len();
        (0..h)
            .flat_map(|a| ((a + 1)..h).map(move |b| (a, b)))
            .filter_map(|(a, b)| self.minimal[a][b])
            .collect()
    }
}

/// Principal angles between the row spaces of a set of contributions.
pub fn subspace_angles_of(contributions: &[Matrix], rel_tol: f64) -> Result<SubspaceAngles> {
    let bases = contributions
        .iter()
        .map(|c| row_space_basis(c, rel_tol))
        .collect::<Result<Vec<_>>>()?;
    let h = bases.len();
    let mut minimal = vec![vec![None; h]; h];
    let mut full = vec![vec![Vec::new(); h]; h];
    for a in 0..h {
        for b in a..h {
            if bases[a].cols() == 0 || bases[b].cols() == 0 {
                continue;
            }
            let angles = if a == b {
                vec![0.0; bases[a].cols()]
            } else {
                principal_angles(&bases[a], &bases[b], rel_tol)?
            };
            minimal[a][b] = angles.first().copied();
            minimal[b][a] = minimal[a][b];
            full[b][a] = angles.clone();
            full[a][b] = angles;
        }
    }
    Ok(SubspaceAngles { minimal, full })
}

pub fn pairwise_subspace_angles(
    trace: &ForwardTrace,
    layer: usize,
    rel_tol: f64,
) -> Result<SubspaceAngles> {
    trace.check_layer(layer)?;
    subspace_angles_of(&trace.head_contributions[layer], rel_tol)
}

/// `n (H − 1) d_k`: free dimensions when recovering one head from the sum.
pub fn recovery_ambiguity_dim(n: u64, heads: u64, d_k: u64) -> u64 {
    n * heads.saturating_sub(1) * d_k
}

/// `(H − 1) d_k`, the per-token ambiguity.
pub fn per_token_ambiguity_dim(heads: u64, d_k: u64) -> u64 {
    recovery_ambiguity_dim(1, heads, d_k)
}

/// `2 d_model − r`, the rank-contraction lower bound on the MLP width.
pub fn dff_lower_bound(d_model: u64, mha_rank: u64) -> Result<u64> {
    if mha_rank > d_model {
        return Err(LabError::InvalidArgument(format!(
            "mha rank {mha_rank} exceeds d_model {d_model}"
        )));
    }
    Ok(2 * d_model - mha_rank)
}

/// `H (d_model + d_pe + 1)` extra parameters of the position gate.
pub fn pgop_param_overhead(heads: u64, d_model: u64, d_pe: u64) -> u64 {
    heads * (d_model + d_pe + 1)
}

/// Gate overhead as a fraction of the `d_model²` output-projection parameters.
pub fn pgop_overhead_fraction(heads: u64, d_model: u64, d_pe: u64) -> f64 {
    pgop_param_overhead(heads, d_model, d_pe) as f64 / (d_model * d_model) as f64
}

/// Mean over positions of `|g_h(x_i, i+1) − g_h(x_i, i)|` with the content
/// row `x_i` held fixed.
pub fn gate_position_sensitivity(
    trace: &ForwardTrace,
    weights: &ModelWeights,
    cfg: &ModelConfig,
    layer: usize,
    head: usize,
) -> Result<f64> {
    let gates = trace.gates.as_ref().ok_or_else(|| {
        LabError::InvalidArgument("gate sensitivity needs a PG-OP trace".into())
    })?;
    trace.check_layer(layer)?;
    if head >= cfg.heads {
        return Err(LabError::OutOfRange {
            index: head,
            len: cfg.heads,
        });
    }
    let gate = &weights.layers[layer].heads[head].gate;
    let x = &trace.states[layer];
    let g = &gates[layer];
    let total: f64 = (0..x.rows())
        .map(|i| {
            let shifted = gate_value(x.row(i), &positional_encoding(i + 1, cfg.pe_dim()), gate);
            (shifted - g.get(i, head)).abs()
        })
        .sum();
    Ok(total / x.rows() as f64)
}
