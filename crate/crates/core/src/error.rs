use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },

    #[error("unknown symbol `{token}` at position {pos}")]
    UnknownSymbol { token: String, pos: usize },

    #[error("`{token}` at position {pos} exceeds the declared dimension {dim}")]
    DimensionViolation { token: String, pos: usize, dim: usize },

    #[error("unbound parameter `{0}`")]
    UnboundParameter(String),

    /// The phase point left the domain of the model (negative square root,
    /// division by zero, violated guard, indefinite metric).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("projective factor is not 1-homogeneous (relative residual {residual:.3e})")]
    HomogeneityViolation { residual: f64 },

    #[error("eigenvalue branch is degenerate: {0}")]
    DegenerateBranch(String),

    #[error("spray is not isotropic (fit residual {residual:.3e})")]
    NotIsotropic { residual: f64 },

    #[error("step size collapsed at t = {t}")]
    StepSizeCollapse { t: f64 },

    #[error("no conjugate point found in [0, {t_max}]")]
    NoConjugatePoint { t_max: f64 },

    #[error("unknown catalog key `{0}`")]
    UnknownCatalogKey(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain(_))
    }
}
