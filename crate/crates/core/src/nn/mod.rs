//! Minimal differentiable networks: dense affine+activation layers, a
//! single-gate sigmoid recurrent cell, exact reverse-mode gradients, and
//! post-training compression (int8 weights, magnitude pruning).

mod dense;
mod gradcheck;
mod io;
mod mlp;
mod prune;
mod quant;
mod rnn;

pub use dense::{dense_forward, Activation, DenseLayer};
pub use gradcheck::{
    check_gradients, gradcheck_suite, gradient_check, gradient_check_q, gradient_check_rnn,
    GradCheckReport, GradCheckSummary, GRAD_CHECK_FLOOR, GRAD_CHECK_TOLERANCE,
};
pub use io::{load_mlp, mlp_from_json, mlp_to_json, save_mlp, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use mlp::{backward, mlp_forward, squared_error, Gradients, LayerGradients, Mlp, MlpCache};
pub use prune::prune_by_magnitude;
pub use quant::{quantize_int8, QuantizedLayer, QuantizedMlp};
pub use rnn::{rnn_backward, rnn_step, RecurrentCell, RecurrentGradients, RnnCache};
