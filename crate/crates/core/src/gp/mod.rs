//! Gaussian-process probit regression: kernels, EP inference and MAP
//! hyperparameters.

pub mod ep;
pub mod kernel;
pub mod map;

pub use ep::{ep_fit, ep_fit_f, ep_fit_prior, latent_predict, EpConfig, EpState, LatentPredictive};
pub use kernel::{cross_stationary, gram, kernel_f, kernel_g, kernel_t, Gram, HyperParams, TaskKernel};
pub use map::{map_optimize, HyperPrior, MapConfig, MapResult};
