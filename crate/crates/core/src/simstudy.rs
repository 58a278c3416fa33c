//! Simulation harness: detection rates under NIG-driven random walks,
//! detectability curves and the normality of the standardized `s₀`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::check::{workflow_on_grid, HyperMode, ReferenceMethod, WorkflowConfig};
use crate::error::{Error, Result};
use crate::inference::{conditional_posterior_with, empirical_bayes, hyper_grid, HyperGrid, JointPosterior};
use crate::latent::{build_rw1, LatentModel, LatentStructure};
use crate::linalg::{pairwise_sum, SparseMatrix};
use crate::model::{assemble_lgm, GaussianLGM, HyperParams};
use crate::perturbation::{d_scores, i0_analytic, perturb_geometry, Direction, PerturbationGeometry};
use crate::samplers::{stream_rng, LatentSampler, PredictiveSampler};
use crate::special::ks_distance_std_normal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimStudyConfig {
    pub n_values: Vec<usize>,
    pub eta_values: Vec<f64>,
    pub sigma_w_values: Vec<f64>,
    pub sigma_eps: f64,
    pub n_datasets: usize,
    pub seed: u64,
    pub inference: HyperMode,
}

impl Default for SimStudyConfig {
    fn default() -> Self {
        Self {
            n_values: vec![200, 1000],
            eta_values: vec![0.0, 0.5, 2.0, 10.0],
            sigma_w_values: vec![1.0 / 3.0, 1.0, 3.0],
            sigma_eps: 1.0,
            n_datasets: 100,
            seed: 1,
            inference: HyperMode::Mode,
        }
    }
}

impl SimStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.eta_values.is_empty() || self.sigma_w_values.is_empty() {
            return Err(Error::InvalidParameter("simulation grids must be non-empty".into()));
        }
        if self.n_datasets == 0 {
            return Err(Error::InvalidParameter("n_datasets must be at least 1".into()));
        }
        if self.n_values.iter().any(|&n| n < 3) {
            return Err(Error::InvalidParameter("series need at least 3 points".into()));
        }
        if self.eta_values.iter().any(|&e| !(e >= 0.0)) || self.sigma_w_values.iter().any(|&s| !(s > 0.0)) || !(self.sigma_eps > 0.0) {
            return Err(Error::InvalidParameter("eta must be nonnegative and scales positive".into()));
        }
        Ok(())
    }

    /// Cells in output order: N outermost, then σ_w, then η.
    pub fn cells(&self) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::new();
        for &n in &self.n_values {
            for &s in &self.sigma_w_values {
                for &e in &self.eta_values {
                    out.push((n, s, e));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub n: usize,
    pub eta: f64,
    pub sigma_w: f64,
    pub replicate: usize,
    pub s0: Option<f64>,
    pub i0: Option<f64>,
    pub p_value: Option<f64>,
    pub hyper_mode: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyResult {
    pub rows: Vec<SimRow>,
}

impl SimStudyResult {
    /// Median p-value of each `(N, σ_w, η)` cell over successful replicates.
    pub fn median_p(&self) -> BTreeMap<(usize, u64, u64), f64> {
        let mut groups: BTreeMap<(usize, u64, u64), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            if let Some(p) = r.p_value {
                groups.entry((r.n, r.sigma_w.to_bits(), r.eta.to_bits())).or_default().push(p);
            }
        }
        groups.into_iter().map(|(k, v)| (k, median(v))).collect()
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// RW1 smoothing model `y = w + ε` without fixed effects.
pub fn rw1_model(y: Vec<f64>) -> Result<GaussianLGM> {
    let n = y.len();
    assemble_lgm(y, DMatrix::zeros(n, 0), SparseMatrix::identity(n), DMatrix::zeros(0, 0), LatentModel::Rw1 { n }, BTreeMap::new())
}

/// `y = σ_w w + σ_ε ε` with `w` a random walk driven by unit-variance NIG(η) noise.
pub fn simulate_rw1_data<R: Rng + ?Sized>(n: usize, sigma_w: f64, eta: f64, sigma_eps: f64, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    let sampler = LatentSampler::new(&build_rw1(n, sigma_w)?)?;
    let w = sampler.draw(eta, rng)?;
    let y = w.iter().map(|v| v + sigma_eps * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok((w, y))
}

fn mode_label(m: &HyperMode) -> String {
    match m {
        HyperMode::Mode => "mode".into(),
        HyperMode::Grid { .. } => "grid".into(),
        HyperMode::Fixed => "fixed".into(),
    }
}

fn one_replicate(cell: (usize, f64, f64), cfg: &SimStudyConfig, seed: u64, rep: usize, warm: &HyperParams) -> Result<(f64, Option<f64>, f64, HyperParams)> {
    let (n, sigma_w, eta) = cell;
    let mut rng = stream_rng(seed, rep as u64);
    let (_, y) = simulate_rw1_data(n, sigma_w, eta, cfg.sigma_eps, &mut rng)?;
    let m = rw1_model(y)?;
    let mode = empirical_bayes(&m, warm)?.hyper;
    let grid = match &cfg.inference {
        HyperMode::Grid { points_per_dim, span_sd } => hyper_grid(&m, &mode, *points_per_dim, *span_sd)?,
        _ => HyperGrid::single(mode.clone()),
    };
    let wcfg = WorkflowConfig { reference: ReferenceMethod::AnalyticGaussian, compute_i0: true, ..Default::default() };
    let (c, s) = workflow_on_grid(&m, &grid, &wcfg)?;
    Ok((c.s0_obs, s.i0, c.p_value, mode))
}

/// Runs every cell; cell `k` uses seed `seed + k` and replicate `r` stream `r`.
/// Failed replicates are recorded with their error.
pub fn run_sim_study(cfg: &SimStudyConfig) -> Result<SimStudyResult> {
    cfg.validate()?;
    let label = mode_label(&cfg.inference);
    let mut rows = Vec::new();
    for (k, cell) in cfg.cells().into_iter().enumerate() {
        let seed = cfg.seed.wrapping_add(k as u64);
        let (n, sigma_w, eta) = cell;
        let init = HyperParams::new(1.0 / (cfg.sigma_eps * cfg.sigma_eps)).with("sigma_w", sigma_w);
        let first = one_replicate(cell, cfg, seed, 0, &init);
        let warm = first.as_ref().map(|r| r.3.clone()).unwrap_or(init);
        let rest: Vec<_> = (1..cfg.n_datasets).into_par_iter().map(|r| one_replicate(cell, cfg, seed, r, &warm)).collect();
        for (r, res) in std::iter::once(first).chain(rest).enumerate() {
            let row = match res {
                Ok((s0, i0, p, _)) => SimRow { n, eta, sigma_w, replicate: r, s0: Some(s0), i0, p_value: Some(p), hyper_mode: label.clone(), error: None },
                Err(e) => SimRow { n, eta, sigma_w, replicate: r, s0: None, i0: None, p_value: None, hyper_mode: label.clone(), error: Some(e.to_string()) },
            };
            rows.push(row);
        }
    }
    Ok(SimStudyResult { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityPoint {
    pub eta: f64,
    pub mean: f64,
    pub sd: f64,
    /// `mean / sd`.
    pub detectability: f64,
    /// Standard error of `mean / sd`, first order.
    pub std_error: f64,
}

/// `s₀` on a replicate, keeping Γ from the fitted hyperparameters.
fn replicate_s0(m: &GaussianLGM, post: &JointPosterior, d: &SparseMatrix, g: &PerturbationGeometry, y: &[f64]) -> Result<f64> {
    let (_, w) = post.refit_mean(m, y)?;
    Ok(pairwise_sum(&d_scores(&PerturbationGeometry { b: d.mul_vec(&w)?, ..g.clone() })))
}

/// Mean-to-SD ratio of `s₀` over replicates whose latent noise is NIG(η),
/// at fixed hyperparameters.
pub fn estimate_detectability(m: &GaussianLGM, hp: &HyperParams, eta_grid: &[f64], n_rep: usize, seed: u64) -> Result<Vec<DetectabilityPoint>> {
    if n_rep < 1000 {
        return Err(Error::TooFewDraws { needed: 1000, got: n_rep });
    }
    let s = m.structure(hp)?;
    let post = conditional_posterior_with(m, hp, &s)?;
    let g = perturb_geometry(&post, &s)?;
    let d = s.d.select_rows(&g.rows)?;
    let sampler = PredictiveSampler::mixed(m, hp, Some(&post))?;
    eta_grid
        .iter()
        .enumerate()
        .map(|(k, &eta)| {
            if !(eta >= 0.0) {
                return Err(Error::InvalidParameter(format!("eta must be nonnegative, got {eta}")));
            }
            let vals: Vec<f64> = (0..n_rep)
                .into_par_iter()
                .map(|r| {
                    let mut rng = stream_rng(seed.wrapping_add(k as u64), r as u64);
                    replicate_s0(m, &post, &d, &g, &sampler.draw_with_eta(eta, &mut rng)?)
                })
                .collect::<Result<_>>()?;
            let n = vals.len() as f64;
            let mean = pairwise_sum(&vals) / n;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let ratio = mean / sd;
            Ok(DetectabilityPoint { eta, mean, sd, detectability: ratio, std_error: (1.0 + 0.5 * ratio * ratio).sqrt() / n.sqrt() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityCell {
    pub n: usize,
    pub sigma_w: f64,
    pub i0: f64,
    /// KS distance to N(0, 1); `None` when I₀ ≤ 0 and the cell is empty.
    pub ks: Option<f64>,
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityConfig {
    pub cells: Vec<(usize, f64)>,
    pub sigma_eps: f64,
    /// Flexibility of the data-generating latent noise.
    pub eta: f64,
    pub n_rep: usize,
    pub seed: u64,
}

/// For each `(N, σ_w)` cell: simulate data, fit by empirical Bayes and compare
/// `s₀(y_pred)/√I₀(y)` over mixed replicates with the standard normal.
pub fn normality_diagnostic(cfg: &NormalityConfig) -> Result<Vec<NormalityCell>> {
    if cfg.n_rep < 2 {
        return Err(Error::TooFewDraws { needed: 2, got: cfg.n_rep });
    }
    cfg.cells
        .iter()
        .enumerate()
        .map(|(k, &(n, sigma_w))| {
            let seed = cfg.seed.wrapping_add(k as u64);
            let (_, y) = simulate_rw1_data(n, sigma_w, cfg.eta, cfg.sigma_eps, &mut stream_rng(seed, u64::MAX))?;
            let m = rw1_model(y)?;
            let init = HyperParams::new(1.0 / (cfg.sigma_eps * cfg.sigma_eps)).with("sigma_w", sigma_w);
            let hp = empirical_bayes(&m, &init)?.hyper;
            let s: LatentStructure = m.structure(&hp)?;
            let post = conditional_posterior_with(&m, &hp, &s)?;
            let g = perturb_geometry(&post, &s)?;
            let i0 = i0_analytic(&g, Direction::Nig)?;
            if !(i0 > 0.0) {
                return Ok(NormalityCell { n, sigma_w, i0, ks: None, empty: true });
            }
            let d = s.d.select_rows(&g.rows)?;
            let sampler = PredictiveSampler::mixed(&m, &hp, Some(&post))?;
            let z: Vec<f64> = (0..cfg.n_rep)
                .into_par_iter()
                .map(|r| {
                    let y = sampler.draw(&mut stream_rng(seed, r as u64))?;
                    Ok(replicate_s0(&m, &post, &d, &g, &y)? / i0.sqrt())
                })
                .collect::<Result<_>>()?;
            Ok(NormalityCell { n, sigma_w, i0, ks: Some(ks_distance_std_normal(&z)), empty: false })
        })
        .collect()
}
