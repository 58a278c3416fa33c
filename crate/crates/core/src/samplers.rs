//! Reproducible random generation: inverse-Gaussian and NIG noise, latent
//! fields and predictive replicates.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::JointPosterior;
use crate::latent::{LatentKind, LatentStructure};
use crate::model::{GaussianLGM, HyperParams};

/// Seed plus stream identifier; each replicate owns one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut r = ChaCha20Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    RngStream::new(seed, stream).rng()
}

/// Inverse-Gaussian draw with mean `mu` and shape `lambda` by the
/// transformation-with-rejection method.
pub fn sample_invgaussian<R: Rng + ?Sized>(mu: f64, lambda: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let a = mu * z * z / (2.0 * lambda);
    // smaller root μ(1 + a − √(a(2+a))), written without cancellation
    let x = mu / (1.0 + a + (a * (2.0 + a)).sqrt());
    let u: f64 = rng.random();
    if u <= mu / (mu + x) {
        x
    } else {
        mu * mu / x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NigNoiseSpec {
    pub h: Vec<f64>,
    pub eta: f64,
}

impl NigNoiseSpec {
    pub fn new(h: Vec<f64>, eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta must be nonnegative, got {eta}")));
        }
        if let Some((index, &value)) = h.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NonPositiveH { index, value });
        }
        Ok(Self { h, eta })
    }

    pub fn gaussian(h: Vec<f64>) -> Self {
        Self { h, eta: 0.0 }
    }
}

pub fn sample_nig_noise<R: Rng + ?Sized>(spec: &NigNoiseSpec, rng: &mut R) -> Vec<f64> {
    spec.h
        .iter()
        .map(|&h| {
            let z: f64 = rng.sample(StandardNormal);
            if spec.eta == 0.0 {
                h.sqrt() * z
            } else {
                sample_invgaussian(h, h * h / spec.eta, rng).sqrt() * z
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
enum BlockSolver {
    /// Random walk: `w_{i+1} − w_i = s · Λ_i`, anchored at 0 then centered.
    Walk { scale: f64 },
    Diagonal { inv: Vec<f64> },
    /// `null` is the null vector of an intrinsic block, used to enforce a zero sum.
    Dense { lu: LU<f64, Dyn, Dyn>, null: Option<Vec<f64>> },
}

/// Solves `D w = Λ` block by block, caching factorizations.
#[derive(Debug, Clone)]
pub struct LatentSampler {
    structure: LatentStructure,
    solvers: Vec<BlockSolver>,
}

impl LatentSampler {
    pub fn new(structure: &LatentStructure) -> Result<Self> {
        let solvers = structure
            .blocks
            .iter()
            .map(|blk| block_solver(structure, blk.rows.clone(), blk.cols.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { structure: structure.clone(), solvers })
    }

    pub fn structure(&self) -> &LatentStructure {
        &self.structure
    }

    /// Latent field for given noise `Λ`.
    pub fn solve(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        let mut w = vec![0.0; self.structure.n_w()];
        for (blk, solver) in self.structure.blocks.iter().zip(&self.solvers) {
            let lam = &lambda[blk.rows.clone()];
            let out = &mut w[blk.cols.clone()];
            match solver {
                BlockSolver::Walk { scale } => {
                    let mut acc = 0.0;
                    out[0] = 0.0;
                    for (i, l) in lam.iter().enumerate() {
                        acc += scale * l;
                        out[i + 1] = acc;
                    }
                    center(out);
                }
                BlockSolver::Diagonal { inv } => {
                    for i in 0..out.len() {
                        out[i] = inv[i] * lam[i];
                    }
                }
                BlockSolver::Dense { lu, null } => {
                    let x = lu
                        .solve(&DVector::from_column_slice(lam))
                        .ok_or_else(|| Error::SingularStructure("latent structure matrix is singular".into()))?;
                    if let Some(null) = null {
                        out[0] = 0.0;
                        out[1..].copy_from_slice(x.as_slice());
                        let sn: f64 = null.iter().sum();
                        if sn.abs() > 1e-12 {
                            let t = out.iter().sum::<f64>() / sn;
                            out.iter_mut().zip(null).for_each(|(v, n)| *v -= t * n);
                        }
                    } else {
                        out.copy_from_slice(x.as_slice());
                    }
                }
            }
        }
        Ok(w)
    }

    pub fn draw<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> Result<Vec<f64>> {
        let spec = NigNoiseSpec { h: self.structure.h.clone(), eta };
        self.solve(&sample_nig_noise(&spec, rng))
    }
}

fn center(w: &mut [f64]) {
    let m = w.iter().sum::<f64>() / w.len() as f64;
    w.iter_mut().for_each(|v| *v -= m);
}

fn block_solver(s: &LatentStructure, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Result<BlockSolver> {
    let (nr, nc) = (rows.len(), cols.len());
    let mut dense = DMatrix::zeros(nr, nc);
    for (bi, i) in rows.clone().enumerate() {
        for (j, v) in s.d.row(i) {
            if !cols.contains(&j) {
                return Err(Error::SingularStructure("latent blocks are coupled".into()));
            }
            dense[(bi, j - cols.start)] = v;
        }
    }
    let is_walk = nr + 1 == nc
        && (0..nr).all(|i| {
            let a = dense[(i, i + 1)];
            a != 0.0 && dense[(i, i)] == -a && (0..nc).filter(|&j| dense[(i, j)] != 0.0).count() == 2
        })
        && (0..nr).all(|i| dense[(i, i + 1)] == dense[(0, 1)]);
    if is_walk || (s.kind == LatentKind::Rw1 && nr + 1 == nc) {
        return Ok(BlockSolver::Walk { scale: 1.0 / dense[(0, 1)] });
    }
    if nr == nc {
        let is_diag = (0..nr).all(|i| (0..nc).all(|j| i == j || dense[(i, j)] == 0.0));
        if is_diag {
            if (0..nr).any(|i| dense[(i, i)] == 0.0) {
                return Err(Error::SingularStructure("zero diagonal in latent structure".into()));
            }
            return Ok(BlockSolver::Diagonal { inv: (0..nr).map(|i| 1.0 / dense[(i, i)]).collect() });
        }
        return dense_solver(dense, None);
    }
    if nr + 1 == nc {
        let first = dense.column(0).clone_owned();
        return dense_solver(dense.remove_column(0), Some(first));
    }
    Err(Error::SingularStructure(format!(
        "cannot draw from a {nr}x{nc} structure with rank deficiency above one"
    )))
}

fn dense_solver(m: DMatrix<f64>, first: Option<DVector<f64>>) -> Result<BlockSolver> {
    let scale = m.amax();
    let lu = m.lu();
    let u = lu.u();
    let min_pivot = u.diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if !(min_pivot > 1e-12 * scale) {
        return Err(Error::SingularStructure("latent structure matrix is singular".into()));
    }
    let null = match first {
        Some(c) => {
            let rest = lu.solve(&(-c)).ok_or_else(|| Error::SingularStructure("latent structure matrix is singular".into()))?;
            Some(std::iter::once(1.0).chain(rest.iter().copied()).collect())
        }
        None => None,
    };
    Ok(BlockSolver::Dense { lu, null })
}

pub fn simulate_latent<R: Rng + ?Sized>(latent: &LatentStructure, spec: &NigNoiseSpec, rng: &mut R) -> Result<Vec<f64>> {
    if spec.h.len() != latent.n_noise() {
        return Err(Error::DimensionMismatch("noise spec length".into()));
    }
    LatentSampler::new(latent)?.solve(&sample_nig_noise(spec, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Prior,
    Mixed,
    Posterior,
}

/// Repeated predictive draws at fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct PredictiveSampler<'a> {
    model: &'a GaussianLGM,
    hp: HyperParams,
    latent: LatentSampler,
    beta: Vec<f64>,
}

impl<'a> PredictiveSampler<'a> {
    /// Mixed-scheme sampler: `w` from its prior, `β` at its posterior mean.
    pub fn mixed(model: &'a GaussianLGM, hp: &HyperParams, post: Option<&JointPosterior>) -> Result<Self> {
        let beta = match post {
            Some(p) => p.mean_beta.clone(),
            None if model.p() == 0 => Vec::new(),
            None => return Err(Error::MissingPosterior),
        };
        let latent = LatentSampler::new(&model.structure(hp)?)?;
        Ok(Self { model, hp: hp.clone(), latent, beta })
    }

    /// Replicate with latent noise of flexibility `eta` (0 for the base model).
    pub fn draw_with_eta<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> Result<Vec<f64>> {
        let w = self.latent.draw(eta, rng)?;
        let mut y = self.model.linear_predictor(&self.beta, &w)?;
        add_noise(&mut y, self.hp.tau_eps, rng);
        Ok(y)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        self.draw_with_eta(0.0, rng)
    }

    /// Replicate together with the latent field that generated it.
    pub fn draw_latent<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        let w = self.latent.draw(eta, rng)?;
        let mut y = self.model.linear_predictor(&self.beta, &w)?;
        add_noise(&mut y, self.hp.tau_eps, rng);
        Ok((w, y))
    }
}

fn add_noise<R: Rng + ?Sized>(y: &mut [f64], tau: f64, rng: &mut R) {
    let sd = tau.powf(-0.5);
    for v in y.iter_mut() {
        *v += sd * rng.sample::<f64, _>(StandardNormal);
    }
}

pub fn predictive_draw<R: Rng + ?Sized>(
    m: &GaussianLGM,
    hp: &HyperParams,
    scheme: Scheme,
    post: Option<&JointPosterior>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match scheme {
        Scheme::Mixed => PredictiveSampler::mixed(m, hp, post)?.draw(rng),
        Scheme::Posterior => {
            let post = post.ok_or(Error::MissingPosterior)?;
            let (beta, w) = post.sample(rng);
            let mut y = m.linear_predictor(&beta, &w)?;
            add_noise(&mut y, post.hyper.tau_eps, rng);
            Ok(y)
        }
        Scheme::Prior => {
            let mut h = hp.clone();
            for (k, kind) in m.free_params() {
                h.set(&k, m.prior(&k).sample(&k, kind, rng)?);
            }
            let beta = if m.p() > 0 {
                let l = m
                    .beta_prior_precision
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::ImproperPrior("beta".into()))?;
                // β = L⁻ᵀ z has covariance (L Lᵀ)⁻¹
                let z = DVector::from_fn(m.p(), |_, _| rng.sample::<f64, _>(StandardNormal));
                l.l().transpose().solve_upper_triangular(&z).expect("triangular factor is nonsingular").as_slice().to_vec()
            } else {
                Vec::new()
            };
            let w = LatentSampler::new(&m.structure(&h)?)?.draw(0.0, rng)?;
            let mut y = m.linear_predictor(&beta, &w)?;
            add_noise(&mut y, h.tau_eps, rng);
            Ok(y)
        }
    }
}
