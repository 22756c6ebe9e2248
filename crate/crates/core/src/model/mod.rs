//! Gated dual-kNN propagation model, GCN and SGC baselines, and the
//! similarity-pruning ablation.

mod forward;
mod params;
mod sanitize;

pub use forward::{
    backward, backward_logits, forward, gates, gcn_forward, nll_logit_grad, nspgnn_layer,
    softmax_rows, ForwardTape, LayerTape, ModelInputs, DEFAULT_SGC_TAU,
};
pub use params::{GateParams, LayerParams, ModelParams, ParamBlock, Variant};
pub use sanitize::{edge_scores, nsp_sanitize, SanitizePolicy};
