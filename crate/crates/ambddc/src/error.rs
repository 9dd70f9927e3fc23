//! Error type shared across the solver pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh must have at least 2 elements per axis, got {nx}x{ny}")]
    MeshTooSmall { nx: usize, ny: usize },

    #[error("invalid material: lambda = {lambda}, mu = {mu} (need mu > 0, lambda >= 0)")]
    InvalidMaterial { lambda: f64, mu: f64 },

    #[error("every degree of freedom is constrained; no free system remains")]
    AllDofsConstrained,

    #[error("partition counts ({kx}, {ky}) do not divide the element grid ({ex}, {ey})")]
    NonDividingPartition {
        kx: usize,
        ky: usize,
        ex: usize,
        ey: usize,
    },

    #[error("substructures {s} and {t} are not adjacent along a straight edge")]
    NotAdjacent { s: usize, t: usize },

    #[error("jag amplitude {amplitude} must be smaller than the substructure width {width}")]
    JagTooDeep { amplitude: usize, width: usize },

    #[error("jag would disconnect substructure {sub}")]
    JagDisconnects { sub: usize },

    #[error("partition is not conforming: {reason}")]
    NonConforming { reason: String },

    #[error("matrix is not symmetric (max asymmetry {max_asym:.3e})")]
    NotSymmetric { max_asym: f64 },

    #[error("matrix is not positive definite: pivot {pivot} = {value:.6e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("saddle-point system is singular: null(K) intersects null(C)")]
    SaddleIncompatible,

    #[error("constrained local system for substructure {sub} is singular (insufficient initial constraints)")]
    SingularSubstructure { sub: usize },

    #[error("operator applied in PCG is not positive definite (p'Ap = {curvature:.6e} at iteration {iteration})")]
    IndefiniteOperator { iteration: usize, curvature: f64 },

    #[error("problem dimension {dim} exceeds the dense-oracle limit {limit}")]
    OracleTooLarge { dim: usize, limit: usize },

    #[error("zero stiffness-diagonal sum at interface dof {dof}")]
    ZeroWeightSum { dof: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
