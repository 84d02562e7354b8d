use thiserror::Error;

use crate::linalg::LinalgError;
use crate::model::Violation;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid model: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidModel(Vec<Violation>),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("Λ has complex eigenvalues")]
    ComplexEigenvalues,
    #[error("eigenvalue {lambda} appears in more than one Jordan block; aggregate the model first")]
    RepeatedEigenvalueAcrossBlocks { lambda: f64 },
    #[error("b has no component along the generalised eigenspace of {lambda}")]
    UnreachableMode { lambda: f64 },
    #[error("constraint violated: {0}")]
    ConstraintViolation(String),
    #[error("change of measure is singular: μ₁ᵀΛ⁻¹b = 1")]
    SingularTransform,
    #[error("diagonal block A{block}{block} of the moment matrix is singular")]
    SingularA { block: usize },
    #[error("not stationary: {0}")]
    NotStationary(String),
    #[error("window order violated: need h >= r >= 0, got r = {r}, h = {h}")]
    WindowOrder { r: f64, h: f64 },
    #[error("forward-variance slice at s = {s} is not convex (eigenvalue {min_eig:e})")]
    NonConvexSlice { s: f64, min_eig: f64 },
    #[error("forward-variance slice at s = {s} is unbounded below")]
    UnboundedSlice { s: f64 },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("price {price} outside the no-arbitrage bounds ({lower}, {upper})")]
    OutOfBounds { price: f64, lower: f64, upper: f64 },
    #[error("missing smile nodes: {0}")]
    MissingNodes(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
