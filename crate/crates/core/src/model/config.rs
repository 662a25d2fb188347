use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Softmax,
    /// Every attention row is `1/n`; `W_Q`, `W_K` are ignored.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputProjection {
    Standard,
    /// Position-gated output projection.
    Pgop,
}

/// Architecture shape plus ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Sequence length.
    pub n: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_ff: usize,
    /// Positional-encoding width; `None` means `d_model`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_pe: Option<usize>,
    pub layers: usize,
    pub use_residual: bool,
    pub use_mlp: bool,
    pub use_layernorm: bool,
    pub attention_mode: AttentionMode,
    pub output_projection: OutputProjection,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n: 32,
            d_model: 64,
            heads: 4,
            d_k: 16,
            d_ff: 256,
            d_pe: None,
            layers: 6,
            use_residual: true,
            use_mlp: true,
            use_layernorm: true,
            attention_mode: AttentionMode::Softmax,
            output_projection: OutputProjection::Standard,
            ln_eps: 1e-12,
        }
    }
}

impl ModelConfig {
    /// BERT-Base shape (L = 12, H = 12, d_model = 768, d_k = 64, d_ff = 3072).
    pub fn bert_base(n: usize) -> Self {
        ModelConfig {
            n,
            d_model: 768,
            heads: 12,
            d_k: 64,
            d_ff: 3072,
            layers: 12,
            ..ModelConfig::default()
        }
    }

    /// Attention only: no residual, no MLP, no LayerNorm.
    pub fn pure_attention(mut self) -> Self {
        self.use_residual = false;
        self.use_mlp = false;
        self.use_layernorm = false;
        self
    }

    pub fn pe_dim(&self) -> usize {
        self.d_pe.unwrap_or(self.d_model)
    }

    /// Fills defaulted optional fields so the config echoes every value.
    pub fn resolved(mut self) -> Self {
        self.d_pe = Some(self.pe_dim());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n", self.n),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_k", self.d_k),
            ("d_ff", self.d_ff),
            ("d_pe", self.pe_dim()),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(LabError::InvalidArgument(format!("{name} must be >= 1")));
        }
        if self.heads * self.d_k > self.d_model {
            return Err(LabError::InvalidArgument(format!(
                "heads * d_k = {} exceeds d_model = {}",
                self.heads * self.d_k,
                self.d_model
            )));
        }
        if !(self.ln_eps >= 0.0) {
            return Err(LabError::InvalidArgument("ln_eps must be >= 0".into()));
        }
        Ok(())
    }
}
