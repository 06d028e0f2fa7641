use thiserror::Error;

#[derive(Debug, Error)]
pub enum BemError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("surfaces of scatterers {0} and {1} intersect")]
    Intersection(usize, usize),
    #[error("unsupported quadrature order {0}")]
    UnsupportedOrder(usize),
    #[error("basis function {dof} is not supported on triangle {triangle}")]
    OutOfSupport { dof: usize, triangle: usize },
    #[error("coincident points in Green's function evaluation")]
    CoincidentPoints,
    #[error("evaluation point is within {0:e} of the surface")]
    PointTooClose(f64),
    #[error("spaces live on different scatterers")]
    SpaceMismatch,
    #[error("assembly produced a non-finite entry at ({0}, {1})")]
    Assembly(usize, usize),
    #[error("mass matrix of scatterer {scatterer} is singular (condition estimate {condition:e})")]
    SingularMass { scatterer: usize, condition: f64 },
    #[error("Mie series failed to converge by order {0}")]
    TruncationFailure(usize),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BemError>;
