//! Failure classes and their process exit codes.

use crate::cube_io::FormatError;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Invalid combination of arguments detected after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// A check that ran to completion but exceeded its tolerance.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ToleranceExceeded(pub String);

/// Maps an error chain to an exit code: 2 for usage and configuration
/// problems, 4 for numerical failures, 3 for everything else (bad or
/// unreadable data).
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<ToleranceExceeded>() {
            return EXIT_NUMERICAL;
        }
        if let Some(e) = cause.downcast_ref::<ftir_unmix_core::Error>() {
            return match e {
                ftir_unmix_core::Error::Numerical(_) => EXIT_NUMERICAL,
                ftir_unmix_core::Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
        if cause.is::<FormatError>() {
            return EXIT_DATA;
        }
    }
    EXIT_DATA
}
