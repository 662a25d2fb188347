//! Configurable post-LN Transformer encoder forward pass.

mod block;
mod config;
mod jacobian;
mod ops;
mod weights;

pub use block::{
    attention_sublayer, encoder_block, forward, positional_encoding, sinusoidal_encodings,
    BlockOutput, ForwardTrace,
};
pub use config::{AttentionMode, ModelConfig, OutputProjection};
pub use jacobian::{apply_jacobian, jacobian_finite_diff};
pub use ops::{
    attention_head, gate_value, gelu, layer_norm, mha, mha_pgop, mlp, sigmoid, softmax_rows,
    HeadOutput, MhaOutput,
};
pub use weights::{
    scores_with_asymmetry, AsymmetricScores, GateWeights, HeadWeights, LayerWeights, LnParams,
    MlpWeights, ModelWeights, ASYMMETRY_MAX_RETRIES, ASYMMETRY_TOLERANCE,
};
