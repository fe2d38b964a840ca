//! Embedding energy-conserving quadratic ODEs `dy/dt = B(y, y)` into the
//! incompressible Euler equations on `SO(n) x T^(n+1)`.
//!
//! The pipeline is: find a conserved inner product ([`certificate`]),
//! change to coordinates where it is Euclidean, build the skew-matrix map
//! `S` and the tower of fields and metrics ([`embedding`]), then check each
//! identity numerically ([`verify`]). [`dynamics`] integrates the ODE and
//! particle paths; [`gates`] holds the example systems.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the default
//! tolerances assume `f64`. The `*64` aliases below fix the scalar type.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod dynamics;
pub mod embedding;
pub mod error;
pub mod gates;
pub mod liegroup;
pub mod model;
pub mod quadode;
pub mod sampling;
pub mod scalar;
pub mod verify;

pub use certificate::{
    euclideanize, find_certificate, parallel_witness, CertificateOptions, CertificateResult, CertificateStatus,
    ParallelWitness,
};
pub use dynamics::{closed_form, integrate_midpoint, integrate_rk4, particle_flow, DynamicsError, Method, Trajectory};
pub use embedding::{build_smap, ChartPoint, Embedding, EmbeddingOptions, FieldEval, Level, SMap};
pub use error::{Error, Result};
pub use gates::{GateId, GateSpec};
pub use liegroup::{Chart, OrthMat, SkewMat};
pub use model::Model;
pub use quadode::{cancellation_residual, InnerProduct, SymBilinearMap};
pub use sampling::SampleSpec;
pub use scalar::Real;
pub use verify::{ResidualReport, VerifyOptions};

pub type SymBilinearMap64 = SymBilinearMap<f64>;
pub type InnerProduct64 = InnerProduct<f64>;
pub type CertificateResult64 = CertificateResult<f64>;
pub type SMap64 = SMap<f64>;
pub type Embedding64 = Embedding<f64>;
pub type ChartPoint64 = ChartPoint<f64>;
pub type FieldEval64 = FieldEval<f64>;
pub type Chart64 = Chart<f64>;
pub type OrthMat64 = OrthMat<f64>;
pub type SkewMat64 = SkewMat<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type GateSpec64 = GateSpec<f64>;
