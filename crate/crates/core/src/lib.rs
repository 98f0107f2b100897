//! Geometry-guided category-level pose recovery.
//!
//! The crate covers the geometric side of a point-cloud pose pipeline:
//! confidence-aware rotation recovery from two plane normals, point-wise
//! bounding-box voting with weighted plane fitting, symmetry-aware
//! reconstruction targets, the point-cloud/pose and box/pose consistency
//! losses, a synthetic scene generator that stands in for network
//! predictions, closed-form recovery and loss-driven refinement, and the
//! usual IoU / n°m-cm evaluation metrics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geom;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod rotation;
pub mod solver;
pub mod symmetry;
pub mod synth;
pub mod tol;
pub mod voting;

pub use error::{GeomError, Result};
pub use geom::{CategoryPrior, Mat3, PointCloud, Pose, RotationPrediction, Vec3};
pub use symmetry::SymmetryType;
pub use voting::{FaceId, FacePlanes, FaceVoteSet, PlaneParams, Vote};
