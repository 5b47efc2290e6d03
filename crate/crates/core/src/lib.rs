//! Bayesian active differential selection for audiometry.
//!
//! Given a reference exam, the crate decides whether a subject's current
//! psychometric function is the same as before or has changed. Two GP
//! probit models are kept side by side: one shared latent function for both
//! exams, and a two-task model whose task correlation is marginalized over a
//! grid. Tones are chosen to maximize the mutual information between the
//! next response and the model identity.

pub mod acquisition;
pub mod error;
pub mod gp;
pub mod harness;
pub mod math;
pub mod models;
pub mod sim;
pub mod stimulus;

pub use error::{BadsError, Result};
pub use stimulus::{Features, Observation, Task, ToneStimulus};
