//! Matérn Gaussian-process regression with fixed smoothness and the
//! finite-difference smoothness check.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, CholFactor, SymMatrix};
use crate::mc::FdMode;
use crate::optim::{grid_design, minimize};
use crate::samplers::stream_rng;
use crate::special::{ln_bessel_k, ln_gamma};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub sigma_w: f64,
    pub rho: f64,
    pub nu: f64,
}

impl MaternParams {
    pub fn new(sigma_w: f64, rho: f64, nu: f64) -> Result<Self> {
        for (name, v) in [("sigma_w", sigma_w), ("rho", rho), ("nu", nu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self { sigma_w, rho, nu })
    }
}

/// Correlation at distance `r`, using closed forms for ν ∈ {1/2, 3/2, 5/2}.
pub fn matern_corr(r: f64, rho: f64, nu: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    let z = (2.0 * nu).sqrt() * r / rho;
    if nu == 0.5 {
        (-z).exp()
    } else if nu == 1.5 {
        (1.0 + z) * (-z).exp()
    } else if nu == 2.5 {
        (1.0 + z + z * z / 3.0) * (-z).exp()
    } else {
        matern_corr_bessel(z, nu)
    }
}

/// General-ν correlation `2^{1−ν}/Γ(ν) z^ν K_ν(z)` at scaled distance `z`.
pub fn matern_corr_bessel(z: f64, nu: f64) -> f64 {
    if z < 1e-12 {
        return 1.0;
    }
    ((1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * z.ln() + ln_bessel_k(nu, z)).exp().min(1.0)
}

pub fn matern_cov(distances: &DMatrix<f64>, p: &MaternParams) -> DMatrix<f64> {
    let s2 = p.sigma_w * p.sigma_w;
    let n = distances.nrows();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = s2 * matern_corr(distances[(i, j)], p.rho, p.nu);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Pairwise absolute differences of one-dimensional inputs.
pub fn distances_1d(x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), x.len(), |i, j| (x[i] - x[j]).abs())
}

/// Response noise SD together with the kernel's scale and range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternHyper {
    pub sigma_eps: f64,
    pub sigma_w: f64,
    pub rho: f64,
}

impl MaternHyper {
    fn to_log(self) -> [f64; 3] {
        [self.sigma_eps.ln(), self.sigma_w.ln(), self.rho.ln()]
    }

    fn from_log(t: &[f64]) -> Self {
        Self { sigma_eps: t[0].exp(), sigma_w: t[1].exp(), rho: t[2].exp() }
    }
}

fn marginal_factor(distances: &DMatrix<f64>, p: &MaternParams, sigma_eps: f64) -> Result<CholFactor> {
    let mut c = matern_cov(distances, p);
    for i in 0..c.nrows() {
        c[(i, i)] += sigma_eps * sigma_eps;
    }
    cholesky(&SymMatrix::Dense(c))
}

fn log_normal_with(f: &CholFactor, y: &[f64]) -> f64 {
    let mut a = y.to_vec();
    f.solve_l_in_place(&mut a);
    let quad: f64 = a.iter().map(|v| v * v).sum();
    -0.5 * quad - 0.5 * f.logdet() - 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// `log N(y | 0, σ_ε² I + Σ(σ_w, ρ, ν))`.
pub fn gp_log_marginal(y: &[f64], distances: &DMatrix<f64>, p: &MaternParams, sigma_eps: f64) -> Result<f64> {
    if y.len() != distances.nrows() || !distances.is_square() {
        return Err(Error::DimensionMismatch("response and distance matrix".into()));
    }
    Ok(log_normal_with(&marginal_factor(distances, p, sigma_eps)?, y))
}

/// Hyperparameter mode at fixed ν under flat priors on the log scale.
pub fn matern_mode(y: &[f64], distances: &DMatrix<f64>, nu: f64, init: &MaternHyper) -> Result<MaternHyper> {
    let obj = |t: &[f64]| -> f64 {
        let h = MaternHyper::from_log(t);
        match MaternParams::new(h.sigma_w, h.rho, nu).and_then(|p| gp_log_marginal(y, distances, &p, h.sigma_eps)) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };
    let r = minimize(&obj, &init.to_log(), 2);
    if !r.converged || !r.value.is_finite() {
        return Err(Error::NoConvergence(format!("Matérn mode search: diameter {:.3e}", r.diameter)));
    }
    Ok(MaternHyper::from_log(&r.x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum HyperSource {
    Mode,
    Grid { points_per_dim: usize, span_sd: f64 },
    /// Externally supplied posterior draws, each with weight `1/len`.
    Draws { draws: Vec<MaternHyper> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub d_obs: f64,
    pub d_rep: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaternCheck {
    pub nu0: f64,
    pub p_value: f64,
    pub mode: Option<MaternHyper>,
    pub scatter: Vec<ScatterPoint>,
}

/// The three factorizations needed for one hyperparameter point.
struct PointFactors {
    lower: DMatrix<f64>,
    base: CholFactor,
    plus: CholFactor,
    /// `None` for forward differences, which reuse `base`.
    minus: Option<CholFactor>,
    span: f64,
}

impl PointFactors {
    fn new(distances: &DMatrix<f64>, h: &MaternHyper, nu0: f64, eps: f64, mode: FdMode) -> Result<Self> {
        let at = |nu: f64| MaternParams::new(h.sigma_w, h.rho, nu).and_then(|p| marginal_factor(distances, &p, h.sigma_eps));
        let base = at(nu0)?;
        let (plus, minus, span) = match mode {
            FdMode::Central => (at(nu0 + eps)?, Some(at(nu0 - eps)?), 2.0 * eps),
            FdMode::Forward => (at(nu0 + eps)?, None, eps),
        };
        Ok(Self { lower: base.lower(), base, plus, minus, span })
    }

    fn discrepancy(&self, y: &[f64]) -> f64 {
        (log_normal_with(&self.plus, y) - log_normal_with(self.minus.as_ref().unwrap_or(&self.base), y)) / self.span
    }

    fn replicate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.lower * z).as_slice().to_vec()
    }
}

/// Finite-difference derivative of the log marginal in ν at `nu0`.
pub fn smoothness_discrepancy(y: &[f64], distances: &DMatrix<f64>, h: &MaternHyper, nu0: f64, eps: f64, mode: FdMode) -> Result<f64> {
    check_step(nu0, eps, mode)?;
    Ok(PointFactors::new(distances, h, nu0, eps, mode)?.discrepancy(y))
}

fn check_step(nu0: f64, eps: f64, mode: FdMode) -> Result<()> {
    if !(nu0 > 0.0) || !(eps > 0.0) || (mode == FdMode::Central && eps >= nu0) {
        return Err(Error::InvalidParameter(format!("need nu0 > eps > 0, got nu0 = {nu0}, eps = {eps}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaternCheckConfig {
    pub nu0: f64,
    pub eps: f64,
    pub fd_mode: FdMode,
    pub source: HyperSource,
    /// Replicates per hyperparameter point.
    pub n_rep: usize,
    pub seed: u64,
    pub init: Option<MaternHyper>,
}

impl Default for MaternCheckConfig {
    fn default() -> Self {
        Self {
            nu0: 1.5,
            eps: 1e-3,
            fd_mode: FdMode::Central,
            source: HyperSource::Grid { points_per_dim: 5, span_sd: 2.0 },
            n_rep: 40,
            seed: 1,
            init: None,
        }
    }
}

/// Compares the smoothness discrepancy of the data against replicates
/// generated at ν₀; `p` is the weighted fraction of replicates above the data.
pub fn matern_smoothness_check(y: &[f64], distances: &DMatrix<f64>, cfg: &MaternCheckConfig) -> Result<MaternCheck> {
    check_step(cfg.nu0, cfg.eps, cfg.fd_mode)?;
    if cfg.n_rep == 0 {
        return Err(Error::InvalidParameter("n_rep must be positive".into()));
    }
    let n = y.len();
    let init = cfg.init.unwrap_or_else(|| {
        let m = y.iter().sum::<f64>() / n as f64;
        let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-8);
        let range = distances.max().max(1e-8);
        MaternHyper { sigma_eps: 0.5 * sd, sigma_w: sd, rho: 0.2 * range }
    });
    let (points, mode): (Vec<(MaternHyper, f64)>, Option<MaternHyper>) = match &cfg.source {
        HyperSource::Mode => {
            let m = matern_mode(y, distances, cfg.nu0, &init)?;
            (vec![(m, 1.0)], Some(m))
        }
        HyperSource::Grid { points_per_dim, span_sd } => {
            let m = matern_mode(y, distances, cfg.nu0, &init)?;
            let logp = |t: &[f64]| {
                let h = MaternHyper::from_log(t);
                MaternParams::new(h.sigma_w, h.rho, cfg.nu0)
                    .and_then(|p| gp_log_marginal(y, distances, &p, h.sigma_eps))
                    .unwrap_or(f64::NEG_INFINITY)
            };
            let g = grid_design(&logp, &m.to_log(), *points_per_dim, *span_sd)?;
            let pts = g.points.iter().zip(&g.weights).filter(|(_, &w)| w > 0.0).map(|(t, &w)| (MaternHyper::from_log(t), w)).collect();
            (pts, Some(m))
        }
        HyperSource::Draws { draws } => {
            if draws.is_empty() {
                return Err(Error::InvalidParameter("no hyperparameter draws".into()));
            }
            let w = 1.0 / draws.len() as f64;
            (draws.iter().map(|d| (*d, w)).collect(), None)
        }
    };
    let per_point: Vec<Vec<ScatterPoint>> = points
        .par_iter()
        .enumerate()
        .map(|(k, (h, w))| {
            let f = PointFactors::new(distances, h, cfg.nu0, cfg.eps, cfg.fd_mode)?;
            let d_obs = f.discrepancy(y);
            let mut rng = stream_rng(cfg.seed, k as u64);
            Ok((0..cfg.n_rep)
                .map(|_| {
                    let yr = f.replicate(n, &mut rng);
                    ScatterPoint { d_obs, d_rep: f.discrepancy(&yr), weight: w / cfg.n_rep as f64 }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let scatter: Vec<ScatterPoint> = per_point.into_iter().flatten().collect();
    let p_value = scatter.iter().filter(|s| s.d_rep > s.d_obs).map(|s| s.weight).sum::<f64>().clamp(0.0, 1.0);
    Ok(MaternCheck { nu0: cfg.nu0, p_value, mode, scatter })
}
