//! Monte Carlo estimators of the perturbation diagnostics from posterior
//! draws, plus finite-difference perturbations for models without closed
//! forms.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::JointPosterior;
use crate::latent::LatentStructure;
use crate::linalg::pairwise_sum;
use crate::perturbation::{local_pert_g, local_pert_p};
use crate::samplers::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_draws: usize,
}

impl McEstimate {
    /// Whether `x` lies within `k` standard errors of the estimate.
    pub fn agrees_with(&self, x: f64, k: f64) -> bool {
        (self.value - x).abs() <= k * self.std_error
    }
}

/// `n` posterior draws of `(β, w)`, drawn in parallel with one stream per draw.
pub fn posterior_draws(post: &JointPosterior, n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..n).into_par_iter().map(|k| post.sample(&mut stream_rng(seed, k as u64))).collect()
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = pairwise_sum(x) / n;
    let dev: Vec<f64> = x.iter().map(|v| (v - m) * (v - m)).collect();
    (m, (pairwise_sum(&dev) / (n - 1.0)).sqrt())
}

/// Per-draw `(Σ p_i, Σ g_i)` at the residuals `D w`.
fn per_draw(draws: &[Vec<f64>], latent: &LatentStructure) -> Result<Vec<(f64, f64)>> {
    draws
        .par_iter()
        .map(|w| {
            let r = latent.d.mul_vec(w)?;
            let p: Vec<f64> = r.iter().zip(&latent.h).map(|(&r, &h)| local_pert_p(r, h)).collect();
            let g: Vec<f64> = r.iter().zip(&latent.h).map(|(&r, &h)| local_pert_g(r, h)).collect();
            Ok((pairwise_sum(&p), pairwise_sum(&g)))
        })
        .collect()
}

pub fn mc_s0(draws: &[Vec<f64>], latent: &LatentStructure) -> Result<McEstimate> {
    if draws.len() < 2 {
        return Err(Error::TooFewDraws { needed: 2, got: draws.len() });
    }
    let p: Vec<f64> = per_draw(draws, latent)?.into_iter().map(|(p, _)| p).collect();
    let (m, sd) = mean_sd(&p);
    Ok(McEstimate { value: m, std_error: sd / (p.len() as f64).sqrt(), n_draws: p.len() })
}

fn i0_of(pg: &[(f64, f64)]) -> f64 {
    let p: Vec<f64> = pg.iter().map(|v| v.0).collect();
    let g: Vec<f64> = pg.iter().map(|v| v.1).collect();
    let (_, sd) = mean_sd(&p);
    -pairwise_sum(&g) / g.len() as f64 - sd * sd
}

/// `−E[Σ g_i] − Var[Σ p_i]` with a batch-means standard error.
pub fn mc_i0(draws: &[Vec<f64>], latent: &LatentStructure) -> Result<McEstimate> {
    if draws.len() < 10 {
        return Err(Error::TooFewDraws { needed: 10, got: draws.len() });
    }
    let pg = per_draw(draws, latent)?;
    let n = pg.len();
    let batches = (n / 2).min(50);
    let size = n / batches;
    let vals: Vec<f64> = (0..batches).map(|k| i0_of(&pg[k * size..(k + 1) * size])).collect();
    let (_, sd) = mean_sd(&vals);
    Ok(McEstimate { value: i0_of(&pg), std_error: sd / (batches as f64).sqrt(), n_draws: n })
}

/// Sample covariance between a target and `Σ p_i`, the posterior-mean
/// sensitivity of that target.
pub fn mc_sensitivity(targets: &[f64], draws: &[Vec<f64>], latent: &LatentStructure) -> Result<McEstimate> {
    if draws.len() < 2 || targets.len() != draws.len() {
        return Err(Error::TooFewDraws { needed: 2.max(draws.len()), got: targets.len().min(draws.len()) });
    }
    let p: Vec<f64> = per_draw(draws, latent)?.into_iter().map(|(p, _)| p).collect();
    let n = p.len() as f64;
    let (mt, _) = mean_sd(targets);
    let (mp, _) = mean_sd(&p);
    let prod: Vec<f64> = targets.iter().zip(&p).map(|(t, q)| (t - mt) * (q - mp)).collect();
    let (m, sd) = mean_sd(&prod);
    Ok(McEstimate { value: m * n / (n - 1.0), std_error: sd / n.sqrt(), n_draws: p.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FdMode {
    Forward,
    Central,
}

/// Default step: `1e-5 · max(1, |x|)`.
pub fn default_fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Finite-difference derivative of `loglik` in parameter `direction`.
pub fn fd_perturbation<F>(loglik: F, at: &BTreeMap<String, f64>, direction: &str, eps: f64, mode: FdMode) -> Result<f64>
where
    F: Fn(&BTreeMap<String, f64>) -> f64,
{
    let x0 = *at.get(direction).ok_or_else(|| Error::InvalidParameter(format!("unknown parameter {direction}")))?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {eps}")));
    }
    let eval = |dx: f64| {
        let mut p = at.clone();
        p.insert(direction.to_string(), x0 + dx);
        let v = loglik(&p);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteLoglik(format!("{direction} = {}", x0 + dx)))
        }
    };
    match mode {
        FdMode::Forward => Ok((eval(eps)? - eval(0.0)?) / eps),
        FdMode::Central => Ok((eval(eps)? - eval(-eps)?) / (2.0 * eps)),
    }
}
