//! Class-incremental learning with open-set recognition at desk scale.
//!
//! The crate is organized bottom-up: a minimal dense-tensor library with
//! reverse-mode automatic differentiation ([`tensor`], [`tape`]), the MLP
//! encoder/head/classifier stack ([`model`]), the training objectives
//! ([`losses`]), rehearsal memory with isometric exemplar selection
//! ([`exemplar`]), KNN-cosine outlier scoring ([`osr`]), feature-quality
//! metrics ([`metrics`]), dataset generation and session planning ([`data`]),
//! and the session orchestrator ([`runner`]).

pub mod data;
pub mod exemplar;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod osr;
pub mod runner;
pub mod tape;
pub mod tensor;

pub use data::{generate_blobs, load_csv, plan_sessions, BlobSpec, Dataset, SessionPlan};
pub use exemplar::ExemplarStore;
pub use losses::LossConfig;
pub use model::ModelState;
pub use osr::OsrConfig;
pub use runner::{Method, RunConfig, SessionReport};
pub use tape::{Gradients, Tape};
pub use tensor::{finite_diff_gradient, Tensor, TensorError};
