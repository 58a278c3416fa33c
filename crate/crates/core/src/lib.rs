//! Model checking and local robustness analysis for latent Gaussian models.
//!
//! A Gaussian-response LGM is fitted exactly at given hyperparameters; the
//! Bayes-factor sensitivity `s₀` towards latent NIG noise, its per-residual
//! scores `d_i` and the sensitivities of posterior means are available in
//! closed form. `check::run_workflow` strings these together.

pub mod check;
pub mod data;
pub mod error;
pub mod inference;
pub mod latent;
pub mod mc;
pub mod linalg;
pub mod matern;
pub mod model;
pub mod optim;
pub mod perturbation;
pub mod samplers;
pub mod simstudy;
pub mod special;

pub use error::{Error, Result};
pub use check::{run_workflow, CheckReport, HyperMode, ReferenceMethod, SensitivityReport, WorkflowConfig};
pub use data::ModelSpec;
pub use inference::{HyperGrid, JointPosterior};
pub use latent::{LatentModel, LatentStructure};
pub use model::{GaussianLGM, HyperParams, HyperPrior};
pub use perturbation::PerturbationGeometry;
