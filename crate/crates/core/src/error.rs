use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid spacetime: {0}")]
    InvalidSpacetime(String),
    #[error("empty region")]
    EmptyRegion,
    #[error("base must lie on a Cauchy surface")]
    BaseNotOnSurface,
    #[error("perturbation too large: {0}")]
    PerturbationTooLarge(String),
    #[error("support touches the padding rows (n_pad = {n_pad})")]
    SupportInPadding { n_pad: usize },
    #[error("CFL/solvability violated: {0}")]
    Solvability(String),
    #[error("band too thin: need at least 3 time levels inside the padded interior, got {0}")]
    BandTooThin(usize),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("truncation degree exceeded: {degree} > {max}")]
    DegreeOverflow { degree: usize, max: usize },
    #[error("not isometric: {0}")]
    NotIsometric(String),
    #[error("f must be supported in M+ (strictly above the perturbation)")]
    NotAbovePerturbation,
    #[error("ultrastatic required: {0}")]
    NotUltrastatic(String),
    #[error("map is not symplectic (defect {0:.3e})")]
    NotSymplectic(f64),
    #[error("too many points: n = {n} exceeds {max}")]
    TooManyPoints { n: usize, max: usize },
    #[error("worldline is not timelike at step {0}")]
    NotTimelike(usize),
    #[error("regions are not causally disjoint")]
    NotCausallyDisjoint,
    #[error("CFL violated by interpolating metric: {0}")]
    CflViolated(String),
    #[error("state invariant violated: {0}")]
    InvalidState(String),
    #[error("static worldline required")]
    NotStatic,
    #[error("surface index {surface} out of range (n_t = {n_t})")]
    SurfaceOutOfRange { surface: usize, n_t: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
