use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schedule is externally driven")]
    ExternallyDrivenSchedule,

    #[error("domain too tight for finite differences (coordinate {coordinate})")]
    DomainTooTight { coordinate: usize },

    #[error("Q-function not available")]
    QFunctionUnavailable,

    #[error("projection vanishes at active detector {detector}")]
    VanishingProjection { detector: usize },

    #[error("pixel unobservable: column {pixel} of the system matrix has no positive entry")]
    UnobservablePixel { pixel: usize },

    #[error("point outside model domain: coordinate {coordinate} = {value} is below floor {floor}")]
    OutsideDomain { coordinate: usize, value: f64, floor: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter vector: {0}")]
    InvalidParameter(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("monotonicity violated: objective went from {before} to {after}")]
    MonotonicityViolated { before: f64, after: f64 },

    #[error("subproblem ill-posed: shifted Hessian is not positive definite")]
    SubproblemIllPosed,

    #[error("root finder failed to bracket the multiplier (last beta {beta:e}, norm {norm:e}, radius {radius:e})")]
    BracketFailure { beta: f64, norm: f64, radius: f64 },

    #[error("model decrease impossible (predicted {predicted:e})")]
    ModelDecrease { predicted: f64 },

    #[error("trust region collapsed after {rejections} consecutive rejections (delta {delta:e}, beta {beta:e})")]
    TrustRegionCollapsed { rejections: usize, delta: f64, beta: f64 },

    #[error("traces come from different instances ({0} vs {1})")]
    InstanceMismatch(String, String),

    #[error("iteration {requested} was not snapshotted; available: {available}")]
    SnapshotMissing { requested: String, available: String },

    #[error("malformed trace file: {0}")]
    MalformedTrace(String),

    #[error("trace has {found} accepted rows, need at least {required}")]
    InsufficientRows { found: usize, required: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
