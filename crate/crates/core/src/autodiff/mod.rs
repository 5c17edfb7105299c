//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Every primitive the sequence models need is a single recorded op with a
//! hand-written backward rule: convolution, pooling, a fused LSTM direction,
//! dropout, activations, affine maps and the masked squared-error loss.
//! Recording a non-finite value, forward or backward, fails with the name of
//! the producing op.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Direction, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pass {
    Forward,
    Backward,
}

impl std::fmt::Display for Pass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pass::Forward => "forward",
            Pass::Backward => "backward",
        })
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value during the {pass} pass")]
    NonFinite { op: &'static str, pass: Pass },
    #[error("function is not deterministic: two evaluations gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },
}
