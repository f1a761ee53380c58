//! Orchestration behind the `lander` binary.

pub mod pipeline;
pub mod sweep;

use lander_core::error::Error;
use lander_core::learn::Architecture;

/// Process exit code for an error: 2 validation or certificate failure,
/// 3 divergence, 4 I/O, 1 anything else.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Divergence { .. } => 3,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Format(_) => 4,
        e if e.is_validation() => 2,
        _ => 1,
    }
}

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliArch {
    /// Four ReLU hidden layers of width 32.
    #[value(name = "4layer")]
    FourLayer,
    /// `f = Ax + b`.
    #[value(name = "1layer")]
    OneLayer,
    /// `f = b`.
    #[value(name = "0layer")]
    ZeroLayer,
}

impl CliArch {
    pub fn architecture(self) -> Architecture {
        match self {
            CliArch::FourLayer => Architecture::default(),
            CliArch::OneLayer => Architecture::Affine,
            CliArch::ZeroLayer => Architecture::Bias,
        }
    }
}
