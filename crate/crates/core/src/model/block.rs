use crate::error::{LabError, Result};
use crate::linalg::Matrix;
use crate::model::ops::{layer_norm, mha, mha_pgop, mlp, MhaOutput};
use crate::model::{LayerWeights, ModelConfig, ModelWeights, OutputProjection};

/// Sinusoidal encoding of a single position: even columns `sin(pos / 10000^{2k/d})`,
/// odd columns the matching cosine.
pub fn positional_encoding(position: usize, d_pe: usize) -> Vec<f64> {
    (0..d_pe)
        .map(|j| {
            let k = (j / 2) as f64;
            let angle = position as f64 / 10_000f64.powf(2.0 * k / d_pe as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// `n × d_pe` table of sinusoidal encodings for positions `0..n`.
pub fn sinusoidal_encodings(n: usize, d_pe: usize) -> Matrix {
    let rows: Vec<f64> = (0..n).flat_map(|i| positional_encoding(i, d_pe)).collect();
    Matrix::from_raw(n, d_pe, rows)
}

/// Attention sub-layer selected by the output-projection flag.
pub fn attention_sublayer(
    x: &Matrix,
    layer: &LayerWeights,
    cfg: &ModelConfig,
    positional: Option<&Matrix>,
) -> Result<MhaOutput> {
    match cfg.output_projection {
        OutputProjection::Standard => mha(x, layer, cfg),
        OutputProjection::Pgop => {
            let owned;
            let pe = match positional {
                Some(p) => p,
                None => {
                    owned = sinusoidal_encodings(x.rows(), cfg.pe_dim());
                    &owned
                }
            };
            mha_pgop(x, layer, cfg, pe)
        }
    }
}

/// Output of one encoder block.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub output: Matrix,
    pub attention: MhaOutput,
}

/// Post-LN encoder block:
///
/// ```text
/// Z   = LN_attn(X + MHA(X))
/// out = LN_ffn(Z + FFN(Z))
/// ```
///
/// `use_residual = false` drops the `X +` and `Z +` terms, `use_layernorm =
/// false` drops both LN sites, and `use_mlp = false` skips the whole
/// feed-forward sub-layer so that `out = Z`.
pub fn encoder_block(
    x: &Matrix,
    layer: &LayerWeights,
    cfg: &ModelConfig,
    positional: Option<&Matrix>,
) -> Result<BlockOutput> {
    let attention = attention_sublayer(x, layer, cfg, positional)?;
    let mut z = if cfg.use_residual {
        x.try_add(&attention.output)?
    } else {
        attention.output.clone()
    };
    if cfg.use_layernorm {
        z = layer_norm(&z, &layer.ln_attn.gamma, &layer.ln_attn.beta, cfg.ln_eps)?;
    }
    if !cfg.use_mlp {
        return Ok(BlockOutput {
            output: z,
            attention,
        });
    }
    let m = &layer.mlp;
    let ffn = mlp(&z, &m.w1, &m.b1, &m.w2, &m.b2)?;
    let mut out = if cfg.use_residual { z.try_add(&ffn)? } else { ffn };
    if cfg.use_layernorm {
        out = layer_norm(&out, &layer.ln_ffn.gamma, &layer.ln_ffn.beta, cfg.ln_eps)?;
    }
    Ok(BlockOutput {
        output: out,
        attention,
    })
}

/// Every intermediate of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `X^(0) … X^(L)`.
    pub states: Vec<Matrix>,
    /// Per layer, the `H` head contributions.
    pub head_contributions: Vec<Vec<Matrix>>,
    /// Per layer, the attention sub-layer output.
    pub mha: Vec<Matrix>,
    /// Per layer `n × H` gates, present only in PG-OP mode.
    pub gates: Option<Vec<Matrix>>,
}

impl ForwardTrace {
    pub fn layers(&self) -> usize {
        self.mha.len()
    }

    pub fn final_state(&self) -> &Matrix {
        self.states.last().expect("trace holds X^(0)")
    }

    pub(crate) fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.layers() {
            return Err(LabError::OutOfRange {
                index: layer,
                len: self.layers(),
            });
        }
        Ok(())
    }
}

pub fn forward(x0: &Matrix, weights: &ModelWeights, cfg: &ModelConfig) -> Result<ForwardTrace> {
    cfg.validate()?;
    if x0.shape() != (cfg.n, cfg.d_model) {
        return Err(LabError::shape(
            "forward",
            format!("X0 is {:?}, expected {}x{}", x0.shape(), cfg.n, cfg.d_model),
        ));
    }
    if weights.layers.len() != cfg.layers {
        return Err(LabError::shape(
            "forward",
            format!("{} weight layers for L = {}", weights.layers.len(), cfg.layers),
        ));
    }
    let positional = match cfg.output_projection {
        OutputProjection::Pgop => Some(sinusoidal_encodings(cfg.n, cfg.pe_dim())),
        OutputProjection::Standard => None,
    };
    let mut states = vec![x0.clone()];
    let mut head_contributions = Vec::with_capacity(cfg.layers);
    let mut mha_out = Vec::with_capacity(cfg.layers);
    let mut gates = positional.as_ref().map(|_| Vec::with_capacity(cfg.layers));
    for layer in &weights.layers {
        let block = encoder_block(states.last().unwrap(), layer, cfg, positional.as_ref())?;
        states.push(block.output);
        head_contributions.push(block.attention.contributions);
        mha_out.push(block.attention.output);
        if let (Some(all), Some(g)) = (gates.as_mut(), block.attention.gates) {
            all.push(g);
        }
    }
    Ok(ForwardTrace {
        states,
        head_contributions,
        mha: mha_out,
        gates,
    })
}
