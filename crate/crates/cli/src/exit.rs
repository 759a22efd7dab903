//! Process exit codes, one per error class. Clap uses 2 for usage errors.

use flashmap::Error;

pub const KEY_NOT_FOUND: u8 = 3;
pub const DELETE_MISSING: u8 = 4;
pub const PHASE_ORDER: u8 = 5;
pub const STRAND_FULL: u8 = 6;
pub const CORRUPT: u8 = 7;
pub const IO: u8 = 8;
pub const CONFIG: u8 = 9;
pub const VERIFICATION: u8 = 10;
pub const REPLACE_MISSING: u8 = 11;
pub const OTHER: u8 = 1;

pub fn code(e: &Error) -> u8 {
    match e {
        Error::KeyNotFound => KEY_NOT_FOUND,
        Error::DeleteMissing => DELETE_MISSING,
        Error::ReplaceMissing => REPLACE_MISSING,
        Error::PhaseOrderViolation(_) => PHASE_ORDER,
        Error::StrandFull { .. } => STRAND_FULL,
        Error::CorruptRecord { .. } | Error::CorruptSnapshot(_) | Error::CorruptStore(_) => CORRUPT,
        Error::Io(_) | Error::SpecUnusable { .. } => IO,
        Error::InvalidConfig(_)
        | Error::ConfigMismatch(_)
        | Error::NameMismatch { .. }
        | Error::CapacityMismatch { .. } => CONFIG,
        Error::VerificationFailed(_) => VERIFICATION,
        _ => OTHER,
    }
}
