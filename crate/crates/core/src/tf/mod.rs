//! An attention-only stack that runs gradient EM inside its forward pass.
//!
//! Each outer loop is an E-step built from exact primitive layers followed
//! by T ReLU-attention layers that take gradient steps on the beta slot and
//! one layer that refreshes the query prediction.

pub mod construct;
pub mod layer;
pub mod primitive;

pub use construct::{
    build_em_transformer, build_estep_layers, build_mstep_layers, clip, icl_loss, read_beta, read_y,
    relu_decompose, tf_forward, tf_forward_trace, tf_norm, ReluSum, Stage, StackMeta, TfStack, MASK_R,
};
pub use layer::{attention_forward, Activation, AttnHead, AttnLayer};
pub use primitive::{apply_primitive, Primitive};
