//! Tolerances shared by constructors, algorithms and tests.
//!
//! Every threshold that decides validity lives here so that docs, checks and
//! test assertions agree on one number.

/// Allowed deviation from unit length for normalized directions.
pub const UNIT_NORM: f64 = 1e-12;

/// Allowed deviation from unit length for caller-supplied rotation axes.
pub const AXIS_NORM: f64 = 1e-9;

/// Max-norm of `RᵀR − I` accepted for a rotation matrix.
pub const ORTHONORMAL: f64 = 1e-9;

/// Accepted `|det(R) − 1|` for a rotation matrix.
pub const DETERMINANT: f64 = 1e-6;

/// Two unit normals with `|a·b|` above `1 − PARALLEL` are treated as parallel.
pub const PARALLEL: f64 = 1e-9;

/// Votes with confidence at or below this weight do not count as support.
pub const MIN_EFFECTIVE_WEIGHT: f64 = 1e-6;

/// Minimum number of effectively weighted points for a plane fit.
pub const MIN_PLANE_SUPPORT: usize = 3;

/// Relative eigenvalue gap below which a scatter matrix is rank deficient.
pub const RANK_DEFICIENT: f64 = 1e-12;

/// Maximum angle between an opposite-face normal pair and exact anti-parallelism.
pub const OPPOSITE_FACE_ANGLE_DEG: f64 = 10.0;
