use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::directional_asymmetry;
use crate::error::{LabError, Result};
use crate::linalg::random::{gaussian, gaussian_vec, random_orthogonal, rng_stream, LabRng};
use crate::linalg::{svd, Matrix};
use crate::model::ModelConfig;

/// Sigmoid gate parameters of one head in PG-OP mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateWeights {
    /// Content weights, length `d_model`.
    pub w_g: Vec<f64>,
    /// Positional weights, length `d_pe`.
    pub w_p: Vec<f64>,
    pub b_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    /// `d_model × d_k`
    pub w_q: Matrix,
    /// `d_model × d_k`
    pub w_k: Matrix,
    /// `d_model × d_k`
    pub w_v: Matrix,
    /// `d_k × d_model`
    pub w_o: Matrix,
    pub gate: GateWeights,
}

impl HeadWeights {
    /// Score matrix `M = W_Q W_Kᵀ`.
    pub fn score_matrix(&self) -> Matrix {
        self.w_q.matmul_t(&self.w_k).expect("w_q and w_k share d_k")
    }

    pub fn asymmetry(&self) -> Result<f64> {
        directional_asymmetry(&self.w_q, &self.w_k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LnParams {
    pub fn identity(d: usize) -> Self {
        LnParams {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    /// `d_model × d_ff`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `d_ff × d_model`
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub heads: Vec<HeadWeights>,
    /// LayerNorm after the attention sub-layer.
    pub ln_attn: LnParams,
    /// LayerNorm after the feed-forward sub-layer.
    pub ln_ffn: LnParams,
    pub mlp: MlpWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub layers: Vec<LayerWeights>,
}

fn random_gate(cfg: &ModelConfig, rng: &mut LabRng) -> GateWeights {
    let std = 1.0 / (cfg.d_model as f64).sqrt();
    GateWeights {
        w_g: gaussian_vec(rng, cfg.d_model, std),
        w_p: gaussian_vec(rng, cfg.pe_dim(), std),
        b_g: 0.0,
    }
}

impl HeadWeights {
    /// All four projections i.i.d. N(0, 1/d_model).
    pub fn random(cfg: &ModelConfig, rng: &mut LabRng) -> Self {
        let std = 1.0 / (cfg.d_model as f64).sqrt();
        HeadWeights {
            w_q: gaussian(rng, cfg.d_model, cfg.d_k, std),
            w_k: gaussian(rng, cfg.d_model, cfg.d_k, std),
            w_v: gaussian(rng, cfg.d_model, cfg.d_k, std),
            w_o: gaussian(rng, cfg.d_k, cfg.d_model, std),
            gate: random_gate(cfg, rng),
        }
    }
}

impl LayerWeights {
    /// N(0, 1/d_model) projections, γ = 1, β = 0, zero biases.
    pub fn random(cfg: &ModelConfig, rng: &mut LabRng) -> Self {
        let std = 1.0 / (cfg.d_model as f64).sqrt();
        let heads = (0..cfg.heads).map(|_| HeadWeights::random(cfg, rng)).collect();
        let mlp = MlpWeights {
            w1: gaussian(rng, cfg.d_model, cfg.d_ff, std),
            b1: vec![0.0; cfg.d_ff],
            w2: gaussian(rng, cfg.d_ff, cfg.d_model, std),
            b2: vec![0.0; cfg.d_model],
        };
        LayerWeights {
            heads,
            ln_attn: LnParams::identity(cfg.d_model),
            ln_ffn: LnParams::identity(cfg.d_model),
            mlp,
        }
    }

    /// Every parameter zero except γ = 1.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let head = HeadWeights {
            w_q: Matrix::zeros(cfg.d_model, cfg.d_k),
            w_k: Matrix::zeros(cfg.d_model, cfg.d_k),
            w_v: Matrix::zeros(cfg.d_model, cfg.d_k),
            w_o: Matrix::zeros(cfg.d_k, cfg.d_model),
            gate: GateWeights {
                w_g: vec![0.0; cfg.d_model],
                w_p: vec![0.0; cfg.pe_dim()],
                b_g: 0.0,
            },
        };
        LayerWeights {
            heads: vec![head; cfg.heads],
            ln_attn: LnParams::identity(cfg.d_model),
            ln_ffn: LnParams::identity(cfg.d_model),
            mlp: MlpWeights {
                w1: Matrix::zeros(cfg.d_model, cfg.d_ff),
                b1: vec![0.0; cfg.d_ff],
                w2: Matrix::zeros(cfg.d_ff, cfg.d_model),
                b2: vec![0.0; cfg.d_model],
            },
        }
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let (d, dk) = (cfg.d_model, cfg.d_k);
        if self.heads.len() != cfg.heads {
            return Err(LabError::shape(
                "layer weights",
                format!("{} heads, config says {}", self.heads.len(), cfg.heads),
            ));
        }
        for (h, w) in self.heads.iter().enumerate() {
            let ok = w.w_q.shape() == (d, dk)
                && w.w_k.shape() == (d, dk)
                && w.w_v.shape() == (d, dk)
                && w.w_o.shape() == (dk, d)
                && w.gate.w_g.len() == d
                && w.gate.w_p.len() == cfg.pe_dim();
            if !ok {
                return Err(LabError::shape("layer weights", format!("head {h} has wrong shapes")));
            }
        }
        let ln_ok = [&self.ln_attn, &self.ln_ffn]
            .iter()
            .all(|p| p.gamma.len() == d && p.beta.len() == d);
        let m = &self.mlp;
        let mlp_ok = m.w1.shape() == (d, cfg.d_ff)
            && m.b1.len() == cfg.d_ff
            && m.w2.shape() == (cfg.d_ff, d)
            && m.b2.len() == d;
        if !ln_ok || !mlp_ok {
            return Err(LabError::shape("layer weights", "layer norm or mlp shapes"));
        }
        Ok(())
    }
}

impl ModelWeights {
    /// Seeded random weights; layer `l` draws from stream `l` of `seed`.
    pub fn random(cfg: &ModelConfig, seed: u64) -> Self {
        let layers = (0..cfg.layers)
            .map(|l| LayerWeights::random(cfg, &mut rng_stream(seed, l as u64)))
            .collect();
        ModelWeights { layers }
    }

    /// SHA-256 over every parameter's bit pattern, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        let mut feed = |vals: &[f64]| {
            for v in vals {
                hasher.update(v.to_bits().to_le_bytes());
            }
        };
        for layer in &self.layers {
            for h in &layer.heads {
                feed(h.w_q.as_slice());
                feed(h.w_k.as_slice());
                feed(h.w_v.as_slice());
                feed(h.w_o.as_slice());
                feed(&h.gate.w_g);
                feed(&h.gate.w_p);
                feed(&[h.gate.b_g]);
            }
            for ln in [&layer.ln_attn, &layer.ln_ffn] {
                feed(&ln.gamma);
                feed(&ln.beta);
            }
            feed(layer.mlp.w1.as_slice());
            feed(&layer.mlp.b1);
            feed(layer.mlp.w2.as_slice());
            feed(&layer.mlp.b2);
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Maximum redraws when a prescribed-asymmetry head misses its target.
pub const ASYMMETRY_MAX_RETRIES: usize = 100;
/// Accepted distance between measured and target asymmetry.
pub const ASYMMETRY_TOLERANCE: f64 = 0.05;

/// Query/key factors with a prescribed directional asymmetry.
#[derive(Debug, Clone)]
pub struct AsymmetricScores {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub target: f64,
    pub measured: f64,
    /// Draws rejected before acceptance.
    pub rejected: usize,
}

/// Draws `W_Q, W_K` (each `d_model × d_k`) with `W_Q W_Kᵀ = M(α)` where
/// `M(α) = √(1−α²)·S + α·K`, `S` symmetric and `K` antisymmetric with unit
/// Frobenius norm each.
///
/// `S` and `K` are drawn inside a random `d_k`-dimensional subspace so that
/// `M(α)` has rank ≤ `d_k` and the truncated-SVD factorization is lossless.
/// `scale` multiplies `M`. A draw whose measured index misses `alpha` by more
/// than [`ASYMMETRY_TOLERANCE`] is redrawn, at most
/// [`ASYMMETRY_MAX_RETRIES`] times.
pub fn scores_with_asymmetry(
    d_model: usize,
    d_k: usize,
    alpha: f64,
    scale: f64,
    rng: &mut LabRng,
) -> Result<AsymmetricScores> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(LabError::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if d_k > d_model {
        return Err(LabError::InvalidArgument("d_k exceeds d_model".into()));
    }
    for attempt in 0..=ASYMMETRY_MAX_RETRIES {
        let Some((w_q, w_k)) = draw_asymmetric_factors(d_model, d_k, alpha, scale, rng)? else {
            continue;
        };
        let measured = directional_asymmetry(&w_q, &w_k)?;
        if (measured - alpha).abs() <= ASYMMETRY_TOLERANCE {
            return Ok(AsymmetricScores {
                w_q,
                w_k,
                target: alpha,
                measured,
                rejected: attempt,
            });
        }
    }
    Err(LabError::InvalidArgument(format!(
        "no head with asymmetry within {ASYMMETRY_TOLERANCE} of {alpha} after {ASYMMETRY_MAX_RETRIES} retries"
    )))
}

fn draw_asymmetric_factors(
    d_model: usize,
    d_k: usize,
    alpha: f64,
    scale: f64,
    rng: &mut LabRng,
) -> Result<Option<(Matrix, Matrix)>> {
    let frame = random_orthogonal(rng, d_model).col_block(0, d_k);
    let g_sym = gaussian(rng, d_k, d_k, 1.0);
    let g_anti = gaussian(rng, d_k, d_k, 1.0);
    let sym = crate::linalg::symmetric_part(&g_sym)?;
    let anti = crate::linalg::antisymmetric_part(&g_anti)?;
    let (ns, na) = (sym.frobenius_norm(), anti.frobenius_norm());
    // d_k = 1 has no antisymmetric part; only α = 0 is reachable there.
    let sym_w = (1.0 - alpha * alpha).sqrt();
    if (sym_w > 0.0 && ns == 0.0) || (alpha > 0.0 && na == 0.0) {
        return Ok(None);
    }
    let mut core = Matrix::zeros(d_k, d_k);
    if sym_w > 0.0 {
        core.add_assign(&sym.scale(sym_w / ns))?;
    }
    if alpha > 0.0 {
        core.add_assign(&anti.scale(alpha / na))?;
    }
    let m = frame.matmul(&core.scale(scale))?.matmul_t(&frame)?;
    let dec = svd(&m)?;
    let roots: Vec<f64> = dec.singular_values[..d_k].iter().map(|s| s.sqrt()).collect();
    let w_q = dec.left_basis.col_block(0, d_k).scale_cols(&roots)?;
    let w_k = dec.right_basis.col_block(0, d_k).scale_cols(&roots)?;
    Ok(Some((w_q, w_k)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_weights_have_config_shapes() {
        let cfg = ModelConfig::default();
        let w = ModelWeights::random(&cfg, 3);
        assert_eq!(w.layers.len(), cfg.layers);
        for l in &w.layers {
            l.check_shapes(&cfg).unwrap();
        }
        assert_eq!(w, ModelWeights::random(&cfg, 3));
        assert_ne!(w.fingerprint(), ModelWeights::random(&cfg, 4).fingerprint());
    }

    #[test]
    fn prescribed_asymmetry_hits_target() {
        let mut rng = rng_stream(7, 0);
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let s = scores_with_asymmetry(32, 8, alpha, 1.0, &mut rng).unwrap();
            assert!((s.measured - alpha).abs() < 1e-8, "{alpha} -> {}", s.measured);
            assert_eq!(s.rejected, 0);
            let m = s.w_q.matmul_t(&s.w_k).unwrap();
            assert!((m.frobenius_norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn prescribed_asymmetry_rejects_bad_alpha() {
        let mut rng = rng_stream(7, 0);
        assert!(scores_with_asymmetry(8, 4, 1.5, 1.0, &mut rng).is_err());
        // A 1-dimensional head cannot be directional.
        assert!(scores_with_asymmetry(8, 1, 1.0, 1.0, &mut rng).is_err());
        assert!(scores_with_asymmetry(8, 1, 0.0, 1.0, &mut rng).is_ok());
    }
}
