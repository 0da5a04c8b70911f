//! Point cloud transformer with adversarial key dropping.

mod config;
mod forward;
mod params;

pub use config::{ModelConfig, STAGES};
pub use forward::{
    argmax, attention_block, attention_block_traced, aux_head, canonical_order, forward, pos_embed, predict, prepare, tokenize,
    ForwardOptions, ForwardOutput, MaskSource, Mode, PreparedCloud, RatePolicy,
};
pub use params::{param_specs, Init, Layout, ModelParams, ParamSpec, MODEL_MAGIC, MODEL_VERSION, PER_BLOCK};
