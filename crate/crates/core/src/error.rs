use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid cache configuration: {0}")]
    InvalidCacheConfig(String),

    #[error("address {addr} is outside the configured universe of {universe} lines")]
    AddressOutOfRange { addr: u64, universe: u64 },

    #[error("line locking requires pl_cache to be enabled")]
    LockingDisabled,

    #[error("cannot lock address {0}: the line is not cached")]
    LockAbsent(u64),

    #[error("invalid environment configuration: {0}")]
    InvalidEnvConfig(String),

    #[error("action index {index} out of range (action space has {len} actions)")]
    ActionOutOfRange { index: usize, len: usize },

    #[error("flush actions are disabled in this experiment")]
    FlushDisabled,

    #[error("episode already finished; reset the environment first")]
    EpisodeDone,

    #[error("config line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("trace line {line}: {msg}")]
    TraceParse { line: usize, msg: String },

    #[error(
        "search refused: {sequences:.3e} candidate sequences exceed the guard of {guard:.0e} \
         (expected sequences per prime+probe hit M({ways}) = {expected:.3e})"
    )]
    SearchRefused {
        sequences: f64,
        guard: f64,
        ways: usize,
        expected: f64,
    },

    #[error("policy accuracy {accuracy:.3} is below the extraction threshold {threshold:.2}")]
    AccuracyGate { accuracy: f64, threshold: f64 },

    #[error("trace does not match the configuration: {0}")]
    ConfigMismatch(String),

    #[error("attack tree is inconsistent: {0}")]
    InconsistentTree(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("detector: {0}")]
    Detector(String),
}
