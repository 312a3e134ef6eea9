use thiserror::Error;

/// Errors raised by table construction, inference and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("finite population needs at least 2 units, got {0}")]
    DegeneratePopulation(u64),

    #[error("observed table needs both arms non-empty (N1 = {n1}, N0 = {n0})")]
    EmptyArm { n1: u64, n0: u64 },

    #[error("variance undefined: each arm needs at least 2 units (N1 = {n1}, N0 = {n0})")]
    VarianceUndefined { n1: u64, n0: u64 },

    #[error("risk difference must lie in [-1, 1], got {0}")]
    TauOutOfRange(f64),

    #[error("number treated must be in 1..={max}, got {got}")]
    TreatedOutOfRange { got: u64, max: u64 },

    #[error("assignment {assignment:?} is inconsistent with science table {science:?}")]
    InconsistentAssignment { assignment: [u64; 4], science: [u64; 4] },

    #[error("enumeration has {count} assignments, over the cap of {cap}")]
    EnumerationTooLarge { count: u64, cap: u64 },

    #[error("invalid table '{input}': {reason}")]
    Parse { input: String, reason: String },

    #[error("sensitivity parameter infeasible at (pi1+ = {pi_treated}, pi+1 = {pi_control}, gamma = {gamma}): {violated}")]
    Infeasible {
        pi_treated: f64,
        pi_control: f64,
        gamma: f64,
        violated: &'static str,
    },

    #[error("posterior draws rejected as infeasible too often (rejection rate {rejection_rate:.3}, retry cap {cap} exhausted)")]
    RetryCapExhausted { rejection_rate: f64, cap: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
