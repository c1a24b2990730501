//! Random walks in time-inhomogeneous random environments.
//!
//! Quenched laws, the harmonic function `U`, walks conditioned to stay
//! positive and the limit theorems that go with them.

pub mod environment;
pub mod conditioned;
pub mod error;
pub mod harmonic;
pub mod lattice;
pub mod limits;
pub mod rng;
pub mod scalar;
pub mod utable;
pub mod walk;

mod backward;

pub use environment::{
    build_model, realize, validate_assumptions, AssumptionReport, Environment, EnvironmentModel, LawSpec, ModelKind,
    ModelSpec, StepLaw,
};
pub use conditioned::{
    conditioned_sample, h_transform_kernel, meander_sample_dp, meander_sample_rejection, ConditionedKernel, HTransformSampler,
    MeanderSampler,
};
pub use error::{Error, Result};
pub use rng::StreamKey;
pub use scalar::{Exact, Scalar};
pub use utable::{build_utable, UTable};
pub use walk::{first_passage, rescale, sample_path, FirstPassageSample, Passage, Path, RescaledPath};

pub type LatticeDistributionF64 = lattice::LatticeDistribution<f64>;
pub type LatticeDistributionF32 = lattice::LatticeDistribution<f32>;
pub type ExactLatticeDistribution = lattice::LatticeDistribution<Exact>;
