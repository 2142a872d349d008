//! Joint network-structure exploration and epidemic control on partially
//! observable contact networks.
//!
//! The library provides a ground-truth SEIR simulator over scale-free contact
//! graphs in which edges start hidden, an abnormal-probability estimator that
//! revises its past beliefs as structure is discovered, a hierarchical pair of
//! DQN agents (policy selection and node exploration) built on a small
//! from-scratch GCN/MLP substrate, an analytic greedy removal rule, spectral
//! immunization baselines, and an experiment harness with a deterministic
//! seeding discipline.
//!
//! Numeric kernels are generic over [`scalar::Scalar`]; the harness and the
//! CLI run everything at [`Real`] (`f64`).

pub mod agents;
pub mod baselines;
pub mod belief;
pub mod graph;
pub mod harness;
pub mod neural;
pub mod scalar;
pub mod seeds;
pub mod seir;

mod error;

pub use error::Error;
pub use scalar::Scalar;

/// Scalar type used by the harness, the CLI, and all checkpoints.
pub type Real = f64;

/// Belief estimator instantiated at the harness scalar type.
pub type Beliefs = belief::BeliefState<Real>;
/// Parameter store instantiated at the harness scalar type.
pub type Net = neural::ValueNet<Real>;
/// Policy-selection agent instantiated at the harness scalar type.
pub type Policy = agents::PolicyAgent<Real>;
/// Explore agent instantiated at the harness scalar type.
pub type Explorer = agents::ExploreAgent<Real>;

pub type Result<T> = std::result::Result<T, Error>;
