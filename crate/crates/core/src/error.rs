use thiserror::Error;

use crate::space::GenomeViolation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("slot {slot}: code {code} out of range (slot has {choices} choices)")]
    GeneOutOfRange { slot: usize, code: u32, choices: u32 },

    #[error("genome has {got} slots, expected {expected}")]
    GenomeLength { expected: usize, got: usize },

    #[error("invalid genome: {}", join_violations(.0))]
    InvalidGenome(Vec<GenomeViolation>),

    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} at index {index} out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("row {row} of probability matrix sums to {sum}, not 1")]
    NotNormalized { row: usize, sum: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged (non-finite values)")]
    Diverged,

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[GenomeViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
