//! Gaussian-response latent Gaussian models and their hyperparameters.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{LatentModel, LatentStructure, ParamKind};
use crate::linalg::SparseMatrix;
use crate::special::ln_gamma;

pub const TAU_EPS: &str = "tau_eps";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub tau_eps: f64,
    pub theta2: BTreeMap<String, f64>,
}

impl HyperParams {
    pub fn new(tau_eps: f64) -> Self {
        Self { tau_eps, theta2: BTreeMap::new() }
    }

    pub fn with(mut self, name: &str, v: f64) -> Self {
        self.set(name, v);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        if name == TAU_EPS {
            Some(self.tau_eps)
        } else {
            self.theta2.get(name).copied()
        }
    }

    pub fn set(&mut self, name: &str, v: f64) {
        if name == TAU_EPS {
            self.tau_eps = v;
        } else {
            self.theta2.insert(name.to_string(), v);
        }
    }
}

/// Prior on one hyperparameter. Densities are taken on the internal
/// (transformed) scale, Jacobian included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HyperPrior {
    /// Flat on the transformed scale (improper).
    Flat,
    /// Held at its initial value.
    Fixed,
    /// Gamma(shape, rate) on the precision; for a scale parameter σ the
    /// precision is 1/σ².
    GammaPrecision { shape: f64, rate: f64 },
    /// Uniform on the natural scale.
    Uniform { lower: f64, upper: f64 },
}

impl HyperPrior {
    pub fn log_density(&self, kind: ParamKind, t: f64) -> f64 {
        match *self {
            HyperPrior::Flat | HyperPrior::Fixed => 0.0,
            HyperPrior::GammaPrecision { shape, rate } => {
                let (log_tau, jac) = match kind {
                    ParamKind::Precision => (t, 0.0),
                    ParamKind::Scale => (-2.0 * t, 2f64.ln()),
                    ParamKind::Correlation => return f64::NEG_INFINITY,
                };
                shape * rate.ln() - ln_gamma(shape) + shape * log_tau - rate * log_tau.exp() + jac
            }
            HyperPrior::Uniform { lower, upper } => {
                let v = kind.from_internal(t);
                if v < lower || v > upper {
                    return f64::NEG_INFINITY;
                }
                let jac = match kind {
                    ParamKind::Precision | ParamKind::Scale => t,
                    ParamKind::Correlation => (0.5 * (1.0 - v * v)).ln(),
                };
                jac - (upper - lower).ln()
            }
        }
    }

    /// Draws a natural-scale value.
    pub fn sample<R: Rng + ?Sized>(&self, name: &str, kind: ParamKind, rng: &mut R) -> Result<f64> {
        match *self {
            HyperPrior::Flat | HyperPrior::Fixed => Err(Error::ImproperPrior(name.to_string())),
            HyperPrior::GammaPrecision { shape, rate } => {
                let g = Gamma::new(shape, 1.0 / rate)
                    .map_err(|e| Error::InvalidParameter(format!("gamma prior for {name}: {e}")))?;
                let tau: f64 = g.sample(rng);
                match kind {
                    ParamKind::Precision => Ok(tau),
                    ParamKind::Scale => Ok(tau.powf(-0.5)),
                    ParamKind::Correlation => Err(Error::InvalidParameter(format!(
                        "gamma prior on correlation {name}"
                    ))),
                }
            }
            HyperPrior::Uniform { lower, upper } => Ok(lower + (upper - lower) * rng.random::<f64>()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianLGM {
    pub y: Vec<f64>,
    pub b: DMatrix<f64>,
    pub a: SparseMatrix,
    pub beta_prior_precision: DMatrix<f64>,
    pub latent: LatentModel,
    pub hyper_priors: BTreeMap<String, HyperPrior>,
}

/// Validates dimensions and bundles a model.
pub fn assemble_lgm(
    y: Vec<f64>,
    b: DMatrix<f64>,
    a: SparseMatrix,
    beta_prior_precision: DMatrix<f64>,
    latent: LatentModel,
    hyper_priors: BTreeMap<String, HyperPrior>,
) -> Result<GaussianLGM> {
    let n = y.len();
    if b.nrows() != n {
        return Err(Error::DimensionMismatch(format!("B has {} rows, y has {n}", b.nrows())));
    }
    if a.nrows() != n {
        return Err(Error::DimensionMismatch(format!("A has {} rows, y has {n}", a.nrows())));
    }
    if a.ncols() != latent.n_w() {
        return Err(Error::DimensionMismatch(format!(
            "A has {} columns, latent field has {}",
            a.ncols(),
            latent.n_w()
        )));
    }
    let p = b.ncols();
    if beta_prior_precision.nrows() != p || beta_prior_precision.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "beta prior precision is {}x{}, expected {p}x{p}",
            beta_prior_precision.nrows(),
            beta_prior_precision.ncols()
        )));
    }
    if p > 0 {
        let sym = (&beta_prior_precision - beta_prior_precision.transpose()).amax();
        if sym > 1e-12 * beta_prior_precision.amax().max(1e-300) {
            return Err(Error::InvalidParameter("beta prior precision is not symmetric".into()));
        }
        if beta_prior_precision.symmetric_eigenvalues().min() < -1e-12 {
            return Err(Error::InvalidParameter("beta prior precision is not positive semi-definite".into()));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("response contains non-finite values".into()));
    }
    let names: Vec<String> = std::iter::once(TAU_EPS.to_string())
        .chain(latent.hyper_spec().into_iter().map(|(k, _)| k))
        .collect();
    if let Some(k) = hyper_priors.keys().find(|k| !names.contains(k)) {
        return Err(Error::InvalidParameter(format!("prior given for unknown hyperparameter {k}")));
    }
    Ok(GaussianLGM { y, b, a, beta_prior_precision, latent, hyper_priors })
}

impl GaussianLGM {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_w(&self) -> usize {
        self.a.ncols()
    }

    /// All hyperparameters, response precision first.
    pub fn hyper_spec(&self) -> Vec<(String, ParamKind)> {
        std::iter::once((TAU_EPS.to_string(), ParamKind::Precision)).chain(self.latent.hyper_spec()).collect()
    }

    pub fn prior(&self, name: &str) -> HyperPrior {
        self.hyper_priors.get(name).copied().unwrap_or(HyperPrior::Flat)
    }

    /// Hyperparameters that are optimized or integrated over.
    pub fn free_params(&self) -> Vec<(String, ParamKind)> {
        self.hyper_spec().into_iter().filter(|(k, _)| self.prior(k) != HyperPrior::Fixed).collect()
    }

    /// Free hyperparameters whose prior defaulted to flat.
    pub fn flat_defaults(&self) -> Vec<String> {
        self.free_params().into_iter().filter(|(k, _)| !self.hyper_priors.contains_key(k)).map(|(k, _)| k).collect()
    }

    pub fn to_internal(&self, hp: &HyperParams) -> Result<Vec<f64>> {
        self.free_params()
            .iter()
            .map(|(k, kind)| {
                hp.get(k)
                    .map(|v| kind.to_internal(v))
                    .ok_or_else(|| Error::InvalidParameter(format!("missing hyperparameter {k}")))
            })
            .collect()
    }

    pub fn from_internal(&self, base: &HyperParams, t: &[f64]) -> HyperParams {
        let mut hp = base.clone();
        for ((k, kind), &v) in self.free_params().iter().zip(t) {
            hp.set(k, kind.from_internal(v));
        }
        hp
    }

    pub fn log_prior(&self, hp: &HyperParams) -> Result<f64> {
        let t = self.to_internal(hp)?;
        Ok(self.free_params().iter().zip(&t).map(|((k, kind), &v)| self.prior(k).log_density(*kind, v)).sum())
    }

    pub fn validate_hyper(&self, hp: &HyperParams) -> Result<()> {
        for (k, kind) in self.hyper_spec() {
            let v = hp.get(&k).ok_or_else(|| Error::InvalidParameter(format!("missing hyperparameter {k}")))?;
            match kind {
                ParamKind::Precision | ParamKind::Scale if !(v > 0.0 && v.is_finite()) => {
                    return Err(Error::InvalidParameter(format!("{k} must be positive, got {v}")))
                }
                ParamKind::Correlation if !(v.abs() < 1.0) => return Err(Error::RhoOutOfRange(v)),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn structure(&self, hp: &HyperParams) -> Result<LatentStructure> {
        self.validate_hyper(hp)?;
        self.latent.build(&hp.theta2)
    }

    /// Data-driven starting point: `τ_ε = 2/Var(y)`, scales `SD(y)/2`,
    /// correlations 0.
    pub fn default_hyper(&self) -> HyperParams {
        let n = self.y.len().max(1) as f64;
        let mean = self.y.iter().sum::<f64>() / n;
        let var = (self.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(1e-8);
        let mut hp = HyperParams::new(2.0 / var);
        for (k, kind) in self.latent.hyper_spec() {
            hp.set(
                &k,
                match kind {
                    ParamKind::Precision => 2.0 / var,
                    ParamKind::Scale => 0.5 * var.sqrt(),
                    ParamKind::Correlation => 0.0,
                },
            );
        }
        hp
    }

    /// Same model with a different response vector.
    pub fn with_response(&self, y: Vec<f64>) -> Result<GaussianLGM> {
        if y.len() != self.y.len() {
            return Err(Error::DimensionMismatch("replacement response length".into()));
        }
        Ok(GaussianLGM { y, ..self.clone() })
    }

    /// Linear predictor `Bβ + Aw`.
    pub fn linear_predictor(&self, beta: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let mut eta = self.a.mul_vec(w)?;
        if self.p() > 0 {
            for (i, e) in eta.iter_mut().enumerate() {
                *e += (0..self.p()).map(|j| self.b[(i, j)] * beta[j]).sum::<f64>();
            }
        }
        Ok(eta)
    }
}
