//! Exact Gaussian conditional posterior, marginal likelihood, empirical Bayes
//! and hyperparameter grids.
//!
//! The joint latent vector is ordered `x = (w, β)` so that sparse latent
//! precisions keep a narrow envelope with the dense fixed-effect rows last.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentStructure;
use crate::linalg::{cholesky, posterior_cov_block, quadratic_diag, ridge_for, SparseMatrix, SymMatrix};
use crate::model::{GaussianLGM, HyperParams};
use crate::optim::{grid_design, minimize};

#[derive(Debug, Clone)]
pub struct JointPosterior {
    pub mean_beta: Vec<f64>,
    pub mean_w: Vec<f64>,
    pub precision_factor: Arc<crate::linalg::CholFactor>,
    pub hyper: HyperParams,
    /// Ridge added to the latent prior precision (0 for proper structures).
    pub ridge_used: f64,
}

impl JointPosterior {
    pub fn n_w(&self) -> usize {
        self.mean_w.len()
    }

    pub fn p(&self) -> usize {
        self.mean_beta.len()
    }

    pub fn dim(&self) -> usize {
        self.n_w() + self.p()
    }

    /// Joint mean in `(w, β)` order.
    pub fn mean_x(&self) -> Vec<f64> {
        self.mean_w.iter().chain(&self.mean_beta).copied().collect()
    }

    /// Column of `x` holding `β_j`.
    pub fn beta_index(&self, j: usize) -> usize {
        self.n_w() + j
    }

    /// Lifts a matrix acting on `w` to one acting on `x = (w, β)`.
    pub fn lift_w(&self, m: &SparseMatrix) -> Result<SparseMatrix> {
        m.embed_columns(self.dim(), 0)
    }

    /// `left · Cov(x | y) · rightᵀ` for matrices acting on `x`.
    pub fn cov_block(&self, left: &SparseMatrix, right: &SparseMatrix) -> Result<DMatrix<f64>> {
        posterior_cov_block(&self.precision_factor, left, right)
    }

    /// Diagonal of `left · Cov(x | y) · leftᵀ`.
    pub fn var_diag(&self, left: &SparseMatrix) -> Result<Vec<f64>> {
        quadratic_diag(&self.precision_factor, left)
    }

    /// Draws `(β, w)` from the posterior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let mut z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.precision_factor.solve_lt_in_place(&mut z);
        let nw = self.n_w();
        let w = (0..nw).map(|i| self.mean_w[i] + z[i]).collect();
        let beta = (0..self.p()).map(|j| self.mean_beta[j] + z[nw + j]).collect();
        (beta, w)
    }

    /// Posterior mean for a different response under the same model and
    /// hyperparameters (the precision does not depend on `y`).
    pub fn refit_mean(&self, m: &GaussianLGM, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let rhs = information_vector(m, self.hyper.tau_eps, y)?;
        let x = self.precision_factor.solve_vec(&rhs)?;
        let nw = self.n_w();
        Ok((x[nw..].to_vec(), x[..nw].to_vec()))
    }
}

/// `τ [A B]ᵀ y` in `(w, β)` order.
fn information_vector(m: &GaussianLGM, tau: f64, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != m.n_obs() {
        return Err(Error::DimensionMismatch(format!("response length {} for {} rows", y.len(), m.n_obs())));
    }
    let (nw, p) = (m.n_w(), m.p());
    let mut rhs = vec![0.0; nw + p];
    for (i, &yi) in y.iter().enumerate() {
        for (k, a) in m.a.row(i) {
            rhs[k] += tau * a * yi;
        }
        for j in 0..p {
            rhs[nw + j] += tau * m.b[(i, j)] * yi;
        }
    }
    Ok(rhs)
}

/// Latent prior precision `Dᵀ diag(h)⁻¹ D` plus the ridge used for
/// intrinsic structures.
pub fn latent_prior_precision(s: &LatentStructure) -> Result<(SparseMatrix, f64)> {
    let inv_h: Vec<f64> = s.h.iter().map(|h| 1.0 / h).collect();
    let q = s.d.weighted_gram(Some(&inv_h))?;
    if s.intrinsic {
        let r = ridge_for(&SymMatrix::Sparse(q.clone()));
        Ok((q.add(&SparseMatrix::diagonal(&vec![r; q.nrows()]))?, r))
    } else {
        Ok((q, 0.0))
    }
}

fn posterior_precision(m: &GaussianLGM, tau: f64, q_w: &SparseMatrix) -> Result<SparseMatrix> {
    let (nw, p) = (m.n_w(), m.p());
    let mut trips = q_w.triplets();
    trips.extend(m.a.weighted_gram(None)?.scale(tau).triplets());
    for i in 0..m.n_obs() {
        let arow: Vec<_> = m.a.row(i).collect();
        for j in 0..p {
            let bij = m.b[(i, j)];
            if bij == 0.0 {
                continue;
            }
            for &(k, a) in &arow {
                let v = tau * a * bij;
                trips.push((k, nw + j, v));
                trips.push((nw + j, k, v));
            }
        }
    }
    for j in 0..p {
        for l in 0..p {
            let btb: f64 = (0..m.n_obs()).map(|i| m.b[(i, j)] * m.b[(i, l)]).sum();
            trips.push((nw + j, nw + l, tau * btb + m.beta_prior_precision[(j, l)]));
        }
    }
    SparseMatrix::from_triplets(nw + p, nw + p, &trips)
}

pub fn conditional_posterior(m: &GaussianLGM, hp: &HyperParams) -> Result<JointPosterior> {
    let s = m.structure(hp)?;
    conditional_posterior_with(m, hp, &s)
}

/// As [`conditional_posterior`] with an already built latent structure.
pub fn conditional_posterior_with(m: &GaussianLGM, hp: &HyperParams, s: &LatentStructure) -> Result<JointPosterior> {
    if s.n_w() != m.n_w() {
        return Err(Error::DimensionMismatch("latent structure and A disagree".into()));
    }
    let tau = hp.tau_eps;
    let (q_w, ridge) = latent_prior_precision(s)?;
    let q = posterior_precision(m, tau, &q_w)?;
    let f = cholesky(&SymMatrix::Sparse(q))?;
    let rhs = information_vector(m, tau, &m.y)?;
    let x = f.solve_vec(&rhs)?;
    let nw = m.n_w();
    Ok(JointPosterior {
        mean_beta: x[nw..].to_vec(),
        mean_w: x[..nw].to_vec(),
        precision_factor: Arc::new(f),
        hyper: hp.clone(),
        ridge_used: ridge,
    })
}

/// Log marginal likelihood `log π(y | θ)` through the precision identity
/// `log π(y|x=0) + ½(log|Q_prior| − log|Q_post|) + ½ μᵀ Q_post μ`.
///
/// For intrinsic structures the ridge's null-space contribution
/// `½ k ln(ridge)` is removed, so the value is that of the generalized
/// determinant and does not move with the ridge size.
pub fn log_marginal(m: &GaussianLGM, hp: &HyperParams) -> Result<f64> {
    let s = m.structure(hp)?;
    let post = conditional_posterior_with(m, hp, &s)?;
    log_marginal_with(m, hp, &s, &post)
}

pub fn log_marginal_with(m: &GaussianLGM, hp: &HyperParams, s: &LatentStructure, post: &JointPosterior) -> Result<f64> {
    let (q_w, ridge) = latent_prior_precision(s)?;
    let fw = match cholesky(&SymMatrix::Sparse(q_w)) {
        Ok(f) => f,
        Err(Error::NotPositiveDefinite { .. }) if !s.intrinsic => {
            return Err(Error::SingularStructure("latent prior precision is singular".into()))
        }
        Err(e) => return Err(e),
    };
    let mut logdet_prior = fw.logdet();
    if ridge > 0.0 {
        logdet_prior -= s.rank_deficiency as f64 * ridge.ln();
    }
    if m.p() > 0 {
        logdet_prior += cholesky(&SymMatrix::Dense(m.beta_prior_precision.clone()))?.logdet();
    }
    let tau = hp.tau_eps;
    let n = m.n_obs() as f64;
    let yy: f64 = m.y.iter().map(|v| v * v).sum();
    let rhs = information_vector(m, tau, &m.y)?;
    let quad: f64 = post.mean_x().iter().zip(&rhs).map(|(a, b)| a * b).sum();
    let v = -0.5 * n * (2.0 * std::f64::consts::PI).ln() + 0.5 * n * tau.ln() - 0.5 * tau * yy
        + 0.5 * (logdet_prior - post.precision_factor.logdet())
        + 0.5 * quad;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericalBreakdown(format!("log marginal is {v}")))
    }
}

/// Unnormalized log posterior of the hyperparameters.
pub fn log_hyper_posterior(m: &GaussianLGM, hp: &HyperParams) -> Result<f64> {
    Ok(log_marginal(m, hp)? + m.log_prior(hp)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EbFit {
    pub hyper: HyperParams,
    pub log_posterior: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Final simplex diameter in transformed units.
    pub tolerance: f64,
    pub flat_priors: Vec<String>,
}

/// Posterior mode of the hyperparameters on the transformed scale.
pub fn empirical_bayes(m: &GaussianLGM, init: &HyperParams) -> Result<EbFit> {
    m.validate_hyper(init)?;
    let t0 = m.to_internal(init)?;
    let obj = |t: &[f64]| -> f64 {
        let hp = m.from_internal(init, t);
        match log_hyper_posterior(m, &hp) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };
    let r = minimize(&obj, &t0, 2);
    if !r.value.is_finite() {
        return Err(Error::NoConvergence("objective is not finite at the search result".into()));
    }
    if !r.converged {
        return Err(Error::NoConvergence(format!(
            "simplex diameter {:.3e} after {} iterations",
            r.diameter, r.iterations
        )));
    }
    Ok(EbFit {
        hyper: m.from_internal(init, &r.x),
        log_posterior: -r.value,
        converged: r.converged,
        iterations: r.iterations,
        tolerance: r.diameter,
        flat_priors: m.flat_defaults(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperGrid {
    pub points: Vec<HyperParams>,
    pub weights: Vec<f64>,
    /// True when the numerical Hessian was not positive definite.
    pub fallback: bool,
}

impl HyperGrid {
    pub fn single(hp: HyperParams) -> Self {
        Self { points: vec![hp], weights: vec![1.0], fallback: false }
    }
}

pub fn hyper_grid(m: &GaussianLGM, mode: &HyperParams, points_per_dim: usize, span_sd: f64) -> Result<HyperGrid> {
    let t0 = m.to_internal(mode)?;
    let f = |t: &[f64]| -> f64 {
        let hp = m.from_internal(mode, t);
        log_hyper_posterior(m, &hp).unwrap_or(f64::NEG_INFINITY)
    };
    let g = grid_design(&f, &t0, points_per_dim, span_sd)?;
    let keep: Vec<usize> = (0..g.points.len()).filter(|&i| g.weights[i] > 0.0).collect();
    Ok(HyperGrid {
        points: keep.iter().map(|&i| m.from_internal(mode, &g.points[i])).collect(),
        weights: keep.iter().map(|&i| g.weights[i]).collect(),
        fallback: g.fallback,
    })
}

/// Posterior at each grid point, in parallel.
pub fn posteriors_on_grid(m: &GaussianLGM, grid: &HyperGrid) -> Result<Vec<(LatentStructure, JointPosterior)>> {
    grid.points
        .par_iter()
        .map(|hp| {
            let s = m.structure(hp)?;
            let post = conditional_posterior_with(m, hp, &s)?;
            Ok((s, post))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::LatentModel;
    use crate::model::{assemble_lgm, HyperPrior};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::BTreeMap;

    fn scalar_model(y: Vec<f64>) -> GaussianLGM {
        let n = y.len();
        assemble_lgm(
            y,
            DMatrix::zeros(n, 0),
            SparseMatrix::from_triplets(n, 1, &(0..n).map(|i| (i, 0, 1.0)).collect::<Vec<_>>()).unwrap(),
            DMatrix::zeros(0, 0),
            LatentModel::Iid { n: 1 },
            BTreeMap::new(),
        )
        .unwrap()
    }

    fn rw1_model(y: Vec<f64>, with_beta: bool) -> GaussianLGM {
        let n = y.len();
        let (b, q) = if with_beta {
            (DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i as f64 * 0.37).sin() }), DMatrix::identity(2, 2) * 0.5)
        } else {
            (DMatrix::zeros(n, 0), DMatrix::zeros(0, 0))
        };
        assemble_lgm(y, b, SparseMatrix::identity(n), q, LatentModel::Rw1 { n }, BTreeMap::new()).unwrap()
    }

    fn random_y(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n).map(|i| (i as f64 / 3.0).sin() + rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// Dense joint precision in `(w, β)` order with the same ridge.
    fn dense_system(m: &GaussianLGM, hp: &HyperParams) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let s = m.structure(hp).unwrap();
        let (qw, _) = latent_prior_precision(&s).unwrap();
        let (nw, p) = (m.n_w(), m.p());
        let mut qp = DMatrix::zeros(nw + p, nw + p);
        qp.view_mut((0, 0), (nw, nw)).copy_from(&qw.to_dense());
        if p > 0 {
            qp.view_mut((nw, nw), (p, p)).copy_from(&m.beta_prior_precision);
        }
        let mut x = DMatrix::zeros(m.n_obs(), nw + p);
        x.view_mut((0, 0), (m.n_obs(), nw)).copy_from(&m.a.to_dense());
        if p > 0 {
            x.view_mut((0, nw), (m.n_obs(), p)).copy_from(&m.b);
        }
        let q = &qp + x.transpose() * &x * hp.tau_eps;
        (qp, q, x)
    }

    #[test]
    fn no_data_gives_prior() {
        let m = assemble_lgm(
            vec![],
            DMatrix::zeros(0, 0),
            SparseMatrix::zeros(0, 3),
            DMatrix::zeros(0, 0),
            LatentModel::Iid { n: 3 },
            BTreeMap::new(),
        )
        .unwrap();
        let post = conditional_posterior(&m, &HyperParams::new(1.0).with("sigma_w", 2.0)).unwrap();
        assert_eq!(post.mean_w, vec![0.0; 3]);
        let cov = post.cov_block(&SparseMatrix::identity(3), &SparseMatrix::identity(3)).unwrap();
        assert!((cov - DMatrix::identity(3, 3) * 4.0).amax() < 1e-14);
    }

    #[test]
    fn scalar_conjugate_update() {
        let m = scalar_model(vec![3.0]);
        let hp = HyperParams::new(1.0).with("sigma_w", 1.0);
        let post = conditional_posterior(&m, &hp).unwrap();
        assert!((post.mean_w[0] - 1.5).abs() < 1e-15);
        let v = post.var_diag(&SparseMatrix::identity(1)).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rw1_matches_dense_normal_equations() {
        let m = rw1_model(random_y(5, 1), true);
        let hp = HyperParams::new(1.0).with("sigma_w", 0.8);
        let post = conditional_posterior(&m, &hp).unwrap();
        let (_, q, x) = dense_system(&m, &hp);
        let want = q.clone().try_inverse().unwrap() * x.transpose() * DVector::from_vec(m.y.clone()) * hp.tau_eps;
        for (a, b) in post.mean_x().iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn marginal_trivial_cases() {
        // pure noise: N = 1, no latent signal reaches y
        let m = assemble_lgm(
            vec![0.0],
            DMatrix::zeros(1, 0),
            SparseMatrix::zeros(1, 1),
            DMatrix::zeros(0, 0),
            LatentModel::Iid { n: 1 },
            BTreeMap::new(),
        )
        .unwrap();
        let lm = log_marginal(&m, &HyperParams::new(1.0).with("sigma_w", 1.0)).unwrap();
        assert!((lm + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        let m = scalar_model(vec![1.0]);
        let lm = log_marginal(&m, &HyperParams::new(1.0).with("sigma_w", 1.0)).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - 0.25;
        assert!((lm - want).abs() < 1e-14);
    }

    fn dense_covariance_form(m: &GaussianLGM, hp: &HyperParams) -> f64 {
        let (qp, _, x) = dense_system(m, hp);
        let cov = DMatrix::identity(m.n_obs(), m.n_obs()) / hp.tau_eps + &x * qp.try_inverse().unwrap() * x.transpose();
        let ch = cov.clone().cholesky().unwrap();
        let y = DVector::from_vec(m.y.clone());
        let logdet: f64 = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let quad = y.dot(&ch.solve(&y));
        -0.5 * (m.n_obs() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
    }

    #[test]
    fn rw1_marginal_matches_covariance_form() {
        let m = rw1_model(random_y(20, 2), false);
        let hp = HyperParams::new(2.0).with("sigma_w", 0.6);
        let post = conditional_posterior(&m, &hp).unwrap();
        let want = dense_covariance_form(&m, &hp) - 0.5 * post.ridge_used.ln();
        assert!((log_marginal(&m, &hp).unwrap() - want).abs() < 1e-8);
    }

    #[test]
    fn proper_marginal_identity_random_instances() {
        for seed in 0..10u64 {
            let n = 3 + (seed as usize * 7) % 25;
            let y = random_y(n, 10 + seed);
            let m = assemble_lgm(
                y,
                DMatrix::from_fn(n, 1, |_, _| 1.0),
                SparseMatrix::identity(n),
                DMatrix::identity(1, 1) * 0.1,
                LatentModel::Iid { n },
                BTreeMap::new(),
            )
            .unwrap();
            let hp = HyperParams::new(0.5 + seed as f64).with("sigma_w", 1.0 + 0.1 * seed as f64);
            let got = log_marginal(&m, &hp).unwrap();
            assert!((got - dense_covariance_form(&m, &hp)).abs() < 1e-8, "seed {seed}");
        }
    }

    #[test]
    fn w_marginal_matches_explicit_formula() {
        let m = rw1_model(random_y(12, 3), false);
        let hp = HyperParams::new(1.5).with("sigma_w", 1.1);
        let post = conditional_posterior(&m, &hp).unwrap();
        let s = m.structure(&hp).unwrap();
        let (qw, _) = latent_prior_precision(&s).unwrap();
        let qpost = qw.to_dense() + DMatrix::identity(12, 12) * hp.tau_eps;
        let cov = qpost.try_inverse().unwrap();
        let mean = &cov * DVector::from_vec(m.y.clone()) * hp.tau_eps;
        let got = post.cov_block(&SparseMatrix::identity(12), &SparseMatrix::identity(12)).unwrap();
        assert!((got - &cov).amax() < 1e-10);
        for i in 0..12 {
            assert!((post.mean_w[i] - mean[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn refit_mean_matches_full_fit() {
        let m = rw1_model(random_y(30, 4), true);
        let hp = HyperParams::new(1.0).with("sigma_w", 0.5);
        let post = conditional_posterior(&m, &hp).unwrap();
        let y2 = random_y(30, 5);
        let (b2, w2) = post.refit_mean(&m, &y2).unwrap();
        let full = conditional_posterior(&m.with_response(y2).unwrap(), &hp).unwrap();
        assert!(b2.iter().zip(&full.mean_beta).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(w2.iter().zip(&full.mean_w).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    fn simulate_rw1(n: usize, sigma_w: f64, sigma_eps: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut w = 0.0;
        (0..n)
            .map(|_| {
                w += sigma_w * rng.sample::<f64, _>(StandardNormal);
                w + sigma_eps * rng.sample::<f64, _>(StandardNormal)
            })
            .collect()
    }

    #[test]
    fn empirical_bayes_recovers_truth() {
        let m = rw1_model(simulate_rw1(1000, 3.0, 1.0, 7), false);
        let fit = empirical_bayes(&m, &HyperParams::new(1.0).with("sigma_w", 1.0)).unwrap();
        assert!(fit.converged);
        let sw = fit.hyper.get("sigma_w").unwrap();
        let se = fit.hyper.tau_eps.powf(-0.5);
        assert!((sw / 3.0 - 1.0).abs() < 0.15, "sigma_w = {sw}");
        assert!((se - 1.0).abs() < 0.15, "sigma_eps = {se}");
        let other = empirical_bayes(&m, &HyperParams::new(0.1).with("sigma_w", 10.0)).unwrap();
        let a = m.to_internal(&fit.hyper).unwrap();
        let b = m.to_internal(&other.hyper).unwrap();
        assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-3), "{a:?} vs {b:?}");
    }

    #[test]
    fn empirical_bayes_no_signal_follows_tight_priors() {
        let n = 30;
        let mut pri = BTreeMap::new();
        pri.insert("tau_eps".to_string(), HyperPrior::GammaPrecision { shape: 4000.0, rate: 1000.0 });
        pri.insert("sigma_w".to_string(), HyperPrior::GammaPrecision { shape: 2000.0, rate: 1000.0 });
        let m = assemble_lgm(vec![0.0; n], DMatrix::zeros(n, 0), SparseMatrix::identity(n), DMatrix::zeros(0, 0), LatentModel::Iid { n }, pri)
            .unwrap();
        let fit = empirical_bayes(&m, &HyperParams::new(1.0).with("sigma_w", 1.0)).unwrap();
        // prior mode on the log-precision scale is shape/rate
        assert!((fit.hyper.tau_eps / 4.0 - 1.0).abs() < 0.05, "{}", fit.hyper.tau_eps);
        let tau_w = fit.hyper.get("sigma_w").unwrap().powi(-2);
        assert!((tau_w / 2.0 - 1.0).abs() < 0.05, "{tau_w}");
    }

    #[test]
    fn zero_free_hyperparameters_returns_init() {
        let mut pri = BTreeMap::new();
        pri.insert("tau_eps".to_string(), HyperPrior::Fixed);
        pri.insert("sigma_w".to_string(), HyperPrior::Fixed);
        let mut m = rw1_model(random_y(10, 1), false);
        m.hyper_priors = pri;
        let init = HyperParams::new(2.0).with("sigma_w", 0.3);
        assert_eq!(empirical_bayes(&m, &init).unwrap().hyper, init);
    }

    #[test]
    fn grid_shapes() {
        let m = rw1_model(simulate_rw1(200, 1.0, 1.0, 3), false);
        let fit = empirical_bayes(&m, &HyperParams::new(1.0).with("sigma_w", 1.0)).unwrap();
        let g = hyper_grid(&m, &fit.hyper, 5, 2.0).unwrap();
        assert_eq!(g.points.len(), 25);
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let one = hyper_grid(&m, &fit.hyper, 1, 2.0).unwrap();
        assert_eq!(one.points[0], fit.hyper);
    }
}
