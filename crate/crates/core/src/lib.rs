//! Desk-scale laboratory for prompt learning on a frozen dual encoder.
//!
//! The crate trains and evaluates the EnPrompt method — an external layer
//! over frozen text embeddings, learnable visual prompt tokens fused with a
//! cross-modal strengthening feature, and classification through entropic
//! optimal transport — against linear-probe and learned-context baselines,
//! on synthetic worlds small enough that every mechanism can be verified
//! with independent oracles.
//!
//! Modules:
//! - [`diffmath`]: matrices, the gradient tape, finite-difference checking
//! - [`ot`]: Sinkhorn solver, exact brute-force oracle, OT classification head
//! - [`encoders`]: the frozen dual encoder and its contrastive pretraining
//! - [`enprompt`]: the method, its ablations and baselines, training
//! - [`harness`]: synthetic worlds, experiment protocols, reports

pub mod diffmath;
pub mod encoders;
pub mod enprompt;
pub mod error;
pub mod harness;
pub mod optim;
pub mod ot;
pub mod rng;

pub use diffmath::{FeatureMatrix, Role};
pub use error::{CoreError, Result};
