use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("truncation too small: ncut={ncut}, need at least {required}")]
    TruncationTooSmall { ncut: usize, required: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("operator not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
    #[error("step size underflow at t={t}")]
    StepSizeUnderflow { t: f64 },
    #[error("truncation leak: top Fock population {population:.3e} at t={t}")]
    TruncationLeak { t: f64, population: f64 },
    #[error("no dissipative channel")]
    NoDissipation,
    #[error("degenerate model: {0}")]
    DegenerateModel(String),
    #[error("invalid rate input: {0}")]
    InvalidRate(String),
    #[error("exponential fit diverged: {0}")]
    FitDiverged(String),
    #[error("trajectory ends at {t_end} before t_sim={t_sim}")]
    InsufficientCoverage { t_end: f64, t_sim: f64 },
    #[error("band [{lo}, {hi}] excludes omega0={omega0}")]
    BandExcludesResonance { lo: f64, hi: f64, omega0: f64 },
    #[error("composite dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("t_end={t_end} exceeds 0.8 of recurrence time {t_rec}")]
    RecurrenceHorizonExceeded { t_end: f64, t_rec: f64 },
    #[error("zero sideband detuning")]
    ZeroDetuning,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io failure: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::TruncationTooSmall { .. } => "truncation_too_small",
            Error::DimensionMismatch(..) => "dimension_mismatch",
            Error::NotHermitian(_) => "not_hermitian",
            Error::InvalidState(_) => "invalid_state",
            Error::StepSizeUnderflow { .. } => "step_size_underflow",
            Error::TruncationLeak { .. } => "truncation_leak",
            Error::NoDissipation => "no_dissipation",
            Error::DegenerateModel(_) => "degenerate_model",
            Error::InvalidRate(_) => "invalid_rate",
            Error::FitDiverged(_) => "fit_diverged",
            Error::InsufficientCoverage { .. } => "insufficient_coverage",
            Error::BandExcludesResonance { .. } => "band_excludes_resonance",
            Error::DimensionCap { .. } => "dimension_cap",
            Error::RecurrenceHorizonExceeded { .. } => "recurrence_horizon_exceeded",
            Error::ZeroDetuning => "zero_detuning",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Io(_) => "io_failure",
        }
    }
}
