use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {got} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("variable {index} is not recorded on this tape")]
    NotOnTape { index: usize },
    #[error("non-finite value at tape node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate scene: {0}")]
    DegenerateScene(String),
    #[error("patch {start}..{end} outside image of {len} pixels")]
    PatchOutOfRange { start: usize, end: usize, len: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error(
        "conjugate gradient breakdown at iteration {iter}: curvature {curvature:e} along search direction; increase damping"
    )]
    CgBreakdown { iter: usize, curvature: f64 },
    #[error("replay mismatch for sample {sample}: pass-2 render differs from pass-1 at pixel {pixel}")]
    ReplayMismatch { sample: usize, pixel: usize },
    #[error("sample trace {0} carries no replayable noise")]
    MissingNoise(usize),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
