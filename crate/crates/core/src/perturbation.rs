//! Closed-form local perturbation quantities for the NIG/GAL latent direction.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::JointPosterior;
use crate::latent::LatentStructure;
use crate::linalg::{pairwise_sum, SparseMatrix};
use crate::model::GaussianLGM;
use crate::special::ln_bessel_k_scaled;

/// First derivative in η at η = 0 of the log density of one noise
/// component; shared by the NIG and GAL families.
pub fn local_pert_p(r: f64, h: f64) -> f64 {
    let a = r * r - 3.0 * h;
    (a * a - 6.0 * h * h) / (8.0 * h * h * h)
}

/// Second derivative in η at η = 0 for the NIG family.
pub fn local_pert_g(r: f64, h: f64) -> f64 {
    let (r2, h2) = (r * r, h * h);
    (-3.0 * h2 * h - 3.0 * h2 * r2 + 6.0 * h * r2 * r2 - r2 * r2 * r2) / (8.0 * h2 * h2 * h)
}

pub fn gaussian_logpdf(x: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + x * x / var)
}

/// Log density of the symmetric NIG with variance `h` and flexibility `η`,
/// i.e. the mixture `x | V ~ N(0, V)`, `V ~ IG(h, h²/η)`. Returns the
/// Gaussian log density at `η = 0`.
pub fn nig_logpdf(x: f64, h: f64, eta: f64) -> f64 {
    if eta == 0.0 {
        return gaussian_logpdf(x, h);
    }
    let root = (h * h + eta * x * x).sqrt();
    let z = root / eta;
    (h / (eta * std::f64::consts::PI)).ln() + ln_bessel_k_scaled(1.0, z) - (root / eta.sqrt()).ln() - x * x / (h + root)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Nig,
    Gal,
}

/// Posterior quantities of the latent residuals `r = D w`: `b = D μ_w` and
/// `Γ = diag(h) − D Σ_w Dᵀ`, restricted to `rows` of `D`.
#[derive(Debug, Clone)]
pub struct PerturbationGeometry {
    pub rows: Vec<usize>,
    pub b: Vec<f64>,
    pub gamma: DMatrix<f64>,
    pub h: Vec<f64>,
}

impl PerturbationGeometry {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// Restriction to positions `idx` of this geometry.
    pub fn subset(&self, idx: std::ops::Range<usize>) -> Result<Self> {
        if idx.end > self.len() || idx.start > idx.end {
            return Err(Error::DimensionMismatch(format!("rows {idx:?} outside a geometry of length {}", self.len())));
        }
        let k = idx.len();
        Ok(Self {
            rows: self.rows[idx.clone()].to_vec(),
            b: self.b[idx.clone()].to_vec(),
            gamma: self.gamma.view((idx.start, idx.start), (k, k)).into_owned(),
            h: self.h[idx].to_vec(),
        })
    }

    /// Residual-row factor `b_i (b_i² − 3Γ_ii) / (2 h_i³)` shared by all
    /// linear-target sensitivities.
    pub fn target_weights(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let (b, h) = (self.b[i], self.h[i]);
                b * (b * b - 3.0 * self.gamma[(i, i)]) / (2.0 * h * h * h)
            })
            .collect()
    }
}

pub fn perturb_geometry(post: &JointPosterior, latent: &LatentStructure) -> Result<PerturbationGeometry> {
    let rows: Vec<usize> = (0..latent.n_noise()).collect();
    perturb_geometry_rows(post, latent, &rows)
}

/// Geometry for a subset of residual rows, e.g. one component of a stacked
/// structure.
pub fn perturb_geometry_rows(post: &JointPosterior, latent: &LatentStructure, rows: &[usize]) -> Result<PerturbationGeometry> {
    if latent.n_w() != post.n_w() {
        return Err(Error::DimensionMismatch("posterior and latent structure disagree".into()));
    }
    let d = latent.d.select_rows(rows)?;
    let b = d.mul_vec(&post.mean_w)?;
    let dx = post.lift_w(&d)?;
    let sigma = post.cov_block(&dx, &dx)?;
    let h: Vec<f64> = rows.iter().map(|&i| latent.h[i]).collect();
    let n = rows.len();
    let mut gamma = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            gamma[(i, j)] = -0.5 * (sigma[(i, j)] + sigma[(j, i)]);
        }
        gamma[(i, i)] += h[i];
        let gii = gamma[(i, i)];
        if gii < -1e-10 {
            return Err(Error::NumericalBreakdown(format!("Gamma[{i},{i}] = {gii:e} is negative")));
        }
        if gii < 0.0 {
            gamma[(i, i)] = 0.0;
        }
    }
    Ok(PerturbationGeometry { rows: rows.to_vec(), b, gamma, h })
}

pub fn d_scores(g: &PerturbationGeometry) -> Vec<f64> {
    (0..g.len())
        .map(|i| {
            let (b2, gi, h) = (g.b[i] * g.b[i], g.gamma[(i, i)], g.h[i]);
            (b2 * b2 + 3.0 * gi * gi - 6.0 * b2 * gi) / (8.0 * h * h * h)
        })
        .collect()
}

pub fn s0(g: &PerturbationGeometry) -> f64 {
    pairwise_sum(&d_scores(g))
}

/// `E[g(r_i, h_i)]` for `r_i ~ N(b_i, h_i − Γ_ii)`.
pub fn expected_g(b: f64, gamma: f64, h: f64) -> f64 {
    let (b2, g) = (b * b, gamma);
    let num = b2 * b2 * b2 + b2 * b2 * (-15.0 * g + 9.0 * h) + 3.0 * b2 * (15.0 * g * g - 18.0 * g * h + 4.0 * h * h)
        + 3.0 * (-5.0 * g * g * g + 9.0 * g * g * h - 4.0 * g * h * h + h * h * h);
    -num / (8.0 * h.powi(5))
}

/// `Cov(p_i, p_j)` where `c = −Cov(r_i, r_j)`, i.e. `Γ_ij` off the diagonal
/// and `Γ_ii − h_i` on it.
pub fn cov_p(bi: f64, bj: f64, c: f64, gii: f64, gjj: f64, hi: f64, hj: f64) -> f64 {
    let ti = bi * (bi * bi - 3.0 * gii);
    let tj = bj * (bj * bj - 3.0 * gjj);
    c * (3.0 * c * c * c - 12.0 * c * c * bi * bj + 9.0 * c * (gii - bi * bi) * (gjj - bj * bj) - 2.0 * ti * tj)
        / (8.0 * hi.powi(3) * hj.powi(3))
}

/// `I₀ = −Σ E[g_i] − Σ_ij Cov(p_i, p_j)`.
pub fn i0_analytic(g: &PerturbationGeometry, direction: Direction) -> Result<f64> {
    if direction == Direction::Gal {
        return Err(Error::UnsupportedDirection("I0 is only available for the NIG direction".into()));
    }
    let n = g.len();
    let eg: Vec<f64> = (0..n).map(|i| expected_g(g.b[i], g.gamma[(i, i)], g.h[i])).collect();
    let rows: Vec<f64> = (0..n)
        .map(|i| {
            let terms: Vec<f64> = (0..n)
                .map(|j| {
                    let c = if i == j { g.gamma[(i, i)] - g.h[i] } else { g.gamma[(i, j)] };
                    cov_p(g.b[i], g.b[j], c, g.gamma[(i, i)], g.gamma[(j, j)], g.h[i], g.h[j])
                })
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    Ok(-pairwise_sum(&eg) - pairwise_sum(&rows))
}

/// A linear posterior target `t = cᵀ x` with `x = (w, β)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTarget {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
}

impl LinearTarget {
    pub fn beta(post: &JointPosterior, j: usize) -> Self {
        Self { name: format!("beta[{j}]"), coeffs: vec![(post.beta_index(j), 1.0)] }
    }

    pub fn w(i: usize) -> Self {
        Self { name: format!("w[{i}]"), coeffs: vec![(i, 1.0)] }
    }

    /// Row `i` of the linear predictor `Bβ + Aw`.
    pub fn eta(m: &GaussianLGM, post: &JointPosterior, i: usize) -> Self {
        let mut coeffs: Vec<(usize, f64)> = m.a.row(i).collect();
        coeffs.extend((0..m.p()).filter(|&j| m.b[(i, j)] != 0.0).map(|j| (post.beta_index(j), m.b[(i, j)])));
        Self { name: format!("eta[{i}]"), coeffs }
    }

    /// One target per row of a projector `A_P` acting on `w`.
    pub fn predictions(ap: &SparseMatrix) -> Vec<Self> {
        (0..ap.nrows()).map(|k| Self { name: format!("pred[{k}]"), coeffs: ap.row(k).collect() }).collect()
    }

    /// Parses `beta[j]`, `w[i]` or `eta[i]`; `beta[*]` style wildcards are
    /// expanded by [`resolve_targets`].
    pub fn parse(name: &str, m: &GaussianLGM, post: &JointPosterior) -> Result<Self> {
        let unknown = || Error::UnknownTarget(name.to_string());
        let open = name.find('[').ok_or_else(unknown)?;
        if !name.ends_with(']') {
            return Err(unknown());
        }
        let idx: usize = name[open + 1..name.len() - 1].trim().parse().map_err(|_| unknown())?;
        match &name[..open] {
            "beta" if idx < m.p() => Ok(Self::beta(post, idx)),
            "w" if idx < m.n_w() => Ok(Self::w(idx)),
            "eta" if idx < m.n_obs() => Ok(Self::eta(m, post, idx)),
            _ => Err(unknown()),
        }
    }
}

/// Expands target names, accepting `beta[*]`, `w[*]` and `eta[*]`.
pub fn resolve_targets(names: &[String], m: &GaussianLGM, post: &JointPosterior) -> Result<Vec<LinearTarget>> {
    let mut out = Vec::new();
    for name in names {
        match name.as_str() {
            "beta[*]" => out.extend((0..m.p()).map(|j| LinearTarget::beta(post, j))),
            "w[*]" => out.extend((0..m.n_w()).map(LinearTarget::w)),
            "eta[*]" => out.extend((0..m.n_obs()).map(|i| LinearTarget::eta(m, post, i))),
            _ => out.push(LinearTarget::parse(name, m, post)?),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSensitivity {
    /// Posterior mean of the target.
    pub mean: f64,
    pub raw: f64,
    /// Posterior standard deviation of the target.
    pub sd: f64,
    pub scaled: f64,
}

fn targets_matrix(post: &JointPosterior, targets: &[LinearTarget]) -> Result<SparseMatrix> {
    let trips: Vec<_> = targets
        .iter()
        .enumerate()
        .flat_map(|(k, t)| t.coeffs.iter().map(move |&(j, v)| (k, j, v)))
        .collect();
    SparseMatrix::from_triplets(targets.len(), post.dim(), &trips)
}

/// Sensitivity of each linear target's posterior mean in η at η = 0:
/// `s_t = Σ_i Cov(t, r_i) b_i (b_i² − 3Γ_ii) / (2h_i³)`.
pub fn sens_linear_targets(
    post: &JointPosterior,
    g: &PerturbationGeometry,
    latent: &LatentStructure,
    targets: &[LinearTarget],
) -> Result<BTreeMap<String, TargetSensitivity>> {
    if targets.is_empty() {
        return Ok(BTreeMap::new());
    }
    let c = targets_matrix(post, targets)?;
    let dx = post.lift_w(&latent.d.select_rows(&g.rows)?)?;
    let cross = post.cov_block(&c, &dx)?;
    let var = post.var_diag(&c)?;
    let mean = c.mul_vec(&post.mean_x())?;
    let f = g.target_weights();
    let mut out = BTreeMap::new();
    for (k, t) in targets.iter().enumerate() {
        let terms: Vec<f64> = (0..g.len()).map(|i| cross[(k, i)] * f[i]).collect();
        let raw = pairwise_sum(&terms);
        let sd = var[k].max(0.0).sqrt();
        out.insert(t.name.clone(), TargetSensitivity { mean: mean[k], raw, sd, scaled: raw / sd });
    }
    Ok(out)
}

/// One grid point's contribution to a hyperparameter-averaged sensitivity.
#[derive(Debug, Clone)]
pub struct GridSensitivity {
    pub weight: f64,
    pub s0: f64,
    pub targets: BTreeMap<String, TargetSensitivity>,
}

/// Averages target sensitivities over a hyperparameter grid. The covariance
/// between a target and the summed perturbation under the mixture splits
/// into the weighted within-point sensitivities plus the covariance of the
/// conditional means with the per-point `s₀` values.
pub fn average_sensitivities(points: &[GridSensitivity]) -> BTreeMap<String, TargetSensitivity> {
    let Some(first) = points.first() else { return BTreeMap::new() };
    let s0_bar: f64 = points.iter().map(|p| p.weight * p.s0).sum();
    let mut out = BTreeMap::new();
    for name in first.targets.keys() {
        let mean: f64 = points.iter().map(|p| p.weight * p.targets[name].mean).sum();
        let var: f64 = points
            .iter()
            .map(|p| {
                let t = &p.targets[name];
                p.weight * (t.sd * t.sd + (t.mean - mean).powi(2))
            })
            .sum();
        let raw: f64 = points
            .iter()
            .map(|p| {
                let t = &p.targets[name];
                p.weight * (t.raw + (t.mean - mean) * (p.s0 - s0_bar))
            })
            .sum();
        let sd = var.sqrt();
        out.insert(name.clone(), TargetSensitivity { mean, raw, sd, scaled: raw / sd });
    }
    out
}
