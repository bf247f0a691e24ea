//! Risk estimators and training for learning from complementary labels when
//! the test distribution contains classes never seen during training.
//!
//! Training data consists of two weak sources: instances tagged with one
//! class they do *not* belong to (complementary labels over K known classes),
//! and unlabeled instances drawn from the deployment mixture, which blends
//! the known classes with an augmented-class component of weight 1 - theta.
//! From those two sources the crate builds unbiased estimates of the
//! one-versus-rest risk of a (K+1)-output scorer whose last output flags the
//! augmented class, trains such scorers by mini-batch gradient descent, and
//! ships a verification suite that checks the estimator identities against
//! brute-force oracles on exact finite distributions.
//!
//! Modules follow the data path: [`losses`] defines the margin surrogates,
//! [`dists`] the exact finite joints, generative mixtures, and samplers,
//! [`model`] the linear and MLP scorers, [`risks`] the risk forms and their
//! exact/empirical evaluators, [`train`] the optimizer loop and metrics,
//! [`verify`] the identity/unbiasedness/consistency checks, [`io`] the
//! binary dataset, checkpoint, and IDX formats, and [`experiment`] the
//! config-driven pipeline behind the `cllac` binary.
//!
//! The numeric core is generic over the scalar via [`Real`]; the pipeline,
//! verification suite, and CLI run at [`Scalar`].

mod error;

pub mod config;
pub mod dists;
pub mod experiment;
pub mod io;
pub mod losses;
pub mod model;
pub mod num;
pub mod rng;
pub mod risks;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use num::{Accumulator, Real};

/// Scalar used by the pipeline, verification suite, and CLI.
pub type Scalar = f64;

/// Narrow scalar; every module generic over [`Real`] also works at this width.
pub type Scalar32 = f32;
