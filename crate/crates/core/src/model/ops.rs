use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{LabError, Result};
use crate::linalg::Matrix;
use crate::model::{AttentionMode, LayerWeights, ModelConfig};

/// Row-wise LayerNorm: `((x_i − mean_i) / sqrt(var_i + eps)) ⊙ γ + β` with
/// the population variance over the row.
pub fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64], eps: f64) -> Result<Matrix> {
    let d = x.cols();
    if gamma.len() != d || beta.len() != d {
        return Err(LabError::shape(
            "layer_norm",
            format!("gamma/beta lengths {}/{} for {d} columns", gamma.len(), beta.len()),
        ));
    }
    if !(eps >= 0.0) {
        return Err(LabError::InvalidArgument("layer_norm eps must be >= 0".into()));
    }
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let denom = (var + eps).sqrt();
        if denom == 0.0 {
            return Err(LabError::ConstantRow { row: i });
        }
        for ((v, g), b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = (*v - mean) / denom * g + b;
        }
    }
    Ok(out)
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(s: &Matrix) -> Matrix {
    let mut out = s.clone();
    for i in 0..s.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Exact GeLU, `x · Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Attention weights and head output of one head.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// `n × n`, row-stochastic.
    pub attention: Matrix,
    /// `Y = A X W_V`, `n × d_k`.
    pub values: Matrix,
}

pub fn attention_head(
    x: &Matrix,
    w_q: &Matrix,
    w_k: &Matrix,
    w_v: &Matrix,
    mode: AttentionMode,
) -> Result<HeadOutput> {
    let d = x.cols();
    if w_q.rows() != d || w_k.rows() != d || w_v.rows() != d || w_q.cols() != w_k.cols() {
        return Err(LabError::shape(
            "attention_head",
            format!(
                "x is {}x{d}, W_Q {:?}, W_K {:?}, W_V {:?}",
                x.rows(),
                w_q.shape(),
                w_k.shape(),
                w_v.shape()
            ),
        ));
    }
    let n = x.rows();
    let attention = match mode {
        AttentionMode::Uniform => Matrix::filled(n, n, 1.0 / n as f64),
        AttentionMode::Softmax => {
            let q = x.matmul_unchecked(w_q);
            let k = x.matmul_unchecked(w_k);
            let scores = q.matmul_t(&k)?.scale(1.0 / (w_q.cols() as f64).sqrt());
            softmax_rows(&scores)
        }
    };
    let values = attention.matmul_unchecked(&x.matmul_unchecked(w_v));
    Ok(HeadOutput { attention, values })
}

/// Result of a multi-head attention sub-layer.
#[derive(Debug, Clone)]
pub struct MhaOutput {
    /// `Σ_h` of `contributions`.
    pub output: Matrix,
    /// Per-head `Y^(h) W_O^(h)` (gated in PG-OP mode), each `n × d_model`.
    pub contributions: Vec<Matrix>,
    pub heads: Vec<HeadOutput>,
    /// `n × H` gate values in PG-OP mode.
    pub gates: Option<Matrix>,
}

fn head_outputs(x: &Matrix, layer: &LayerWeights, cfg: &ModelConfig) -> Result<Vec<HeadOutput>> {
    if x.cols() != cfg.d_model {
        return Err(LabError::shape(
            "mha",
            format!("input has {} columns, d_model = {}", x.cols(), cfg.d_model),
        ));
    }
    layer.check_shapes(cfg)?;
    layer
        .heads
        .iter()
        .map(|h| attention_head(x, &h.w_q, &h.w_k, &h.w_v, cfg.attention_mode))
        .collect()
}

fn sum_matrices(parts: &[Matrix], rows: usize, cols: usize) -> Matrix {
    let mut acc = Matrix::zeros(rows, cols);
    for p in parts {
        acc.add_assign(p).expect("equal shapes");
    }
    acc
}

/// Standard multi-head attention `Σ_h Y^(h) W_O^(h)`.
pub fn mha(x: &Matrix, layer: &LayerWeights, cfg: &ModelConfig) -> Result<MhaOutput> {
    let heads = head_outputs(x, layer, cfg)?;
    let contributions: Vec<Matrix> = heads
        .iter()
        .zip(&layer.heads)
        .map(|(out, w)| out.values.matmul_unchecked(&w.w_o))
        .collect();
    let output = sum_matrices(&contributions, x.rows(), cfg.d_model);
    Ok(MhaOutput {
        output,
        contributions,
        heads,
        gates: None,
    })
}

/// Gate value `σ(x · W_g + p · w_p + b_g)`.
pub fn gate_value(content: &[f64], position: &[f64], gate: &crate::model::GateWeights) -> f64 {
    let c: f64 = content.iter().zip(&gate.w_g).map(|(a, b)| a * b).sum();
    let p: f64 = position.iter().zip(&gate.w_p).map(|(a, b)| a * b).sum();
    sigmoid(c + p + gate.b_g)
}

/// Position-gated multi-head attention: row `i` of the output is
/// `Σ_h g_h(x_i, i) · (Y^(h) W_O^(h))_i`.
pub fn mha_pgop(
    x: &Matrix,
    layer: &LayerWeights,
    cfg: &ModelConfig,
    positional: &Matrix,
) -> Result<MhaOutput> {
    if positional.rows() != x.rows() || positional.cols() != cfg.pe_dim() {
        return Err(LabError::shape(
            "mha_pgop",
            format!(
                "positional encodings {:?}, expected {}x{}",
                positional.shape(),
                x.rows(),
                cfg.pe_dim()
            ),
        ));
    }
    let heads = head_outputs(x, layer, cfg)?;
    let n = x.rows();
    let gates = Matrix::from_fn(n, cfg.heads, |i, h| {
        gate_value(x.row(i), positional.row(i), &layer.heads[h].gate)
    });
    let contributions: Vec<Matrix> = heads
        .iter()
        .zip(&layer.heads)
        .enumerate()
        .map(|(h, (out, w))| {
            out.values
                .matmul_unchecked(&w.w_o)
                .scale_rows(&gates.col(h))
                .expect("n gates per head")
        })
        .collect();
    let output = sum_matrices(&contributions, n, cfg.d_model);
    Ok(MhaOutput {
        output,
        contributions,
        heads,
        gates: Some(gates),
    })
}

/// `GeLU(X W1 + b1) W2 + b2`.
pub fn mlp(x: &Matrix, w1: &Matrix, b1: &[f64], w2: &Matrix, b2: &[f64]) -> Result<Matrix> {
    if b1.len() != w1.cols() || w2.rows() != w1.cols() || b2.len() != w2.cols() {
        return Err(LabError::shape("mlp", "weight/bias shapes disagree"));
    }
    let hidden = x.matmul(w1)?.add_row_broadcast(b1)?.map(gelu);
    hidden.matmul(w2)?.add_row_broadcast(b2)
}
