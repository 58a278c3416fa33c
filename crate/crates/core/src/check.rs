//! Reference distributions for `s₀`, upper-tail probabilities and the
//! end-to-end check-then-sensitivity workflow.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{empirical_bayes, hyper_grid, posteriors_on_grid, HyperGrid, JointPosterior};
use crate::latent::LatentStructure;
use crate::linalg::pairwise_sum;
use crate::model::{GaussianLGM, HyperParams};
use crate::perturbation::{
    average_sensitivities, d_scores, i0_analytic, perturb_geometry, resolve_targets, sens_linear_targets, Direction,
    GridSensitivity, PerturbationGeometry, TargetSensitivity,
};
use crate::samplers::{stream_rng, PredictiveSampler};
use crate::special::norm_sf;

pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReferenceMethod {
    AnalyticGaussian,
    McReference,
    I0Approx,
    GridAveraged,
}

/// Reference distribution of `s₀` under replicated data.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Gaussian { mean: f64, sd: f64 },
    Samples(Vec<f64>),
}

impl Reference {
    pub fn mean_sd(&self) -> (f64, f64) {
        match self {
            Reference::Gaussian { mean, sd } => (*mean, *sd),
            Reference::Samples(s) => {
                let n = s.len() as f64;
                let m = pairwise_sum(s) / n;
                let v = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                (m, v.sqrt())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointCheck {
    pub hyper: HyperParams,
    pub weight: f64,
    pub s0: f64,
    pub ref_mean: f64,
    pub ref_sd: f64,
    pub p_value: f64,
}

/// Check of one component of a stacked latent structure, always against the
/// analytic Gaussian reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCheck {
    pub name: String,
    pub s0: f64,
    pub ref_sd: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub s0_obs: f64,
    pub ref_mean: f64,
    pub ref_sd: f64,
    pub p_value: f64,
    pub method: ReferenceMethod,
    /// Per-point reference used when `method` is grid averaged.
    pub base_method: ReferenceMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ref_samples: Option<Vec<f64>>,
    pub dropped_replicates: usize,
    pub theta_eta: Option<f64>,
    /// `s₀ < θ_η`: the Gaussian model is a local maximum under the penalized prior.
    pub robust: Option<bool>,
    pub hyper: HyperParams,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub grid: Vec<GridPointCheck>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<ComponentCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub d: Vec<f64>,
    pub s0: f64,
    pub i0: Option<f64>,
    pub s_l: BTreeMap<String, TargetSensitivity>,
    pub provenance: Provenance,
}

/// Mean and variance of `s₀(y_rep)` when `b ~ N(0, Γ)`.
pub fn ref_gaussian(g: &PerturbationGeometry) -> Result<(f64, f64)> {
    let n = g.len();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let t: Vec<f64> = (0..n).map(|j| 3.0 * g.gamma[(i, j)].powi(4) / (8.0 * g.h[i].powi(3) * g.h[j].powi(3))).collect();
            pairwise_sum(&t)
        })
        .collect();
    let var = pairwise_sum(&rows);
    if !(var >= 1e-300) {
        return Err(Error::DegenerateReference(var));
    }
    Ok((0.0, var))
}

/// `s₀` samples at a fixed Γ for replicates `b = D μ_w(y_rep)`.
#[derive(Debug, Clone, PartialEq)]
pub struct McReference {
    pub samples: Vec<f64>,
    pub dropped: usize,
}

/// Replicates `y_pred` from the mixed predictive at fixed hyperparameters and
/// recomputes `s₀` on each refit. Replicate `k` uses stream `k` of `seed`.
pub fn ref_mc(
    m: &GaussianLGM,
    post: &JointPosterior,
    latent: &LatentStructure,
    g: &PerturbationGeometry,
    n_rep: usize,
    seed: u64,
) -> Result<McReference> {
    if n_rep < MIN_REPLICATES {
        return Err(Error::TooFewDraws { needed: MIN_REPLICATES, got: n_rep });
    }
    let sampler = PredictiveSampler::mixed(m, &post.hyper, Some(post))?;
    let d = latent.d.select_rows(&g.rows)?;
    let results: Vec<Result<f64>> = (0..n_rep)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let y = sampler.draw(&mut rng)?;
            let (_, w) = post.refit_mean(m, &y)?;
            let rep = PerturbationGeometry { b: d.mul_vec(&w)?, ..g.clone() };
            let s = pairwise_sum(&d_scores(&rep));
            if s.is_finite() {
                Ok(s)
            } else {
                Err(Error::NumericalBreakdown("non-finite replicate".into()))
            }
        })
        .collect();
    let samples: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let dropped = n_rep - samples.len();
    if samples.is_empty() {
        return Err(results.into_iter().find_map(|r| r.err()).unwrap_or(Error::DegenerateReference(0.0)));
    }
    Ok(McReference { samples, dropped })
}

/// Gaussian reference `N(0, I₀)`.
pub fn ref_i0_approx(_s0_obs: f64, i0_obs: f64) -> Result<(f64, f64)> {
    if !(i0_obs > 0.0) {
        return Err(Error::NegativeInformation(i0_obs));
    }
    Ok((0.0, i0_obs))
}

/// Upper-tail probability of `s0_obs` under the reference.
pub fn pvalue(s0_obs: f64, reference: &Reference) -> Result<f64> {
    match reference {
        Reference::Gaussian { mean, sd } => {
            if !(*sd > 0.0) {
                return Err(Error::DegenerateReference(*sd));
            }
            Ok(norm_sf((s0_obs - mean) / sd))
        }
        Reference::Samples(s) => {
            if s.is_empty() {
                return Err(Error::DegenerateReference(0.0));
            }
            let r = s.iter().filter(|&&v| v > s0_obs).count();
            Ok((r + 1) as f64 / (s.len() + 1) as f64)
        }
    }
}

/// `Σ_k w_k p_k` over hyperparameter grid points.
pub fn pvalue_grid(per_point: &[(f64, f64)]) -> Result<f64> {
    if per_point.is_empty() {
        return Err(Error::WeightMismatch("no grid points".into()));
    }
    if per_point.iter().any(|&(p, w)| !(w >= 0.0) || !(0.0..=1.0).contains(&p)) {
        return Err(Error::WeightMismatch("weights must be nonnegative and p-values in [0, 1]".into()));
    }
    let total: f64 = per_point.iter().map(|v| v.1).sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::WeightMismatch(format!("weights sum to {total}")));
    }
    Ok(per_point.iter().map(|&(p, w)| p * w).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum HyperMode {
    /// Empirical Bayes at the posterior mode.
    Mode,
    Grid { points_per_dim: usize, span_sd: f64 },
    /// Hyperparameters given by the caller, no optimization.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkflowConfig {
    /// Starting point for the mode search, or the values used by `Fixed`.
    pub init: Option<HyperParams>,
    pub hyper_mode: HyperMode,
    pub reference: ReferenceMethod,
    pub n_rep: usize,
    pub seed: u64,
    pub targets: Vec<String>,
    pub theta_eta: f64,
    pub trigger: f64,
    pub compute_i0: bool,
    pub keep_ref_samples: bool,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            init: None,
            hyper_mode: HyperMode::Mode,
            reference: ReferenceMethod::AnalyticGaussian,
            n_rep: 1000,
            seed: 1,
            targets: Vec::new(),
            theta_eta: 1.0,
            trigger: 0.1,
            compute_i0: true,
            keep_ref_samples: false,
        }
    }
}

struct PointResult {
    check: GridPointCheck,
    samples: Option<McReference>,
    geometry: PerturbationGeometry,
    i0: Option<f64>,
    components: Vec<ComponentCheck>,
}

fn component_checks(latent: &LatentStructure, g: &PerturbationGeometry) -> Result<Vec<ComponentCheck>> {
    if latent.blocks.len() < 2 {
        return Ok(Vec::new());
    }
    latent
        .blocks
        .iter()
        .map(|b| {
            let sub = g.subset(b.rows.clone())?;
            let s0 = pairwise_sum(&d_scores(&sub));
            let (mean, var) = ref_gaussian(&sub)?;
            let reference = Reference::Gaussian { mean, sd: var.sqrt() };
            Ok(ComponentCheck { name: b.name.clone(), s0, ref_sd: var.sqrt(), p_value: pvalue(s0, &reference)? })
        })
        .collect()
}

fn check_point(
    m: &GaussianLGM,
    latent: &LatentStructure,
    post: &JointPosterior,
    weight: f64,
    cfg: &WorkflowConfig,
    seed: u64,
) -> Result<PointResult> {
    let g = perturb_geometry(post, latent)?;
    let s0 = pairwise_sum(&d_scores(&g));
    let i0 = if cfg.compute_i0 || cfg.reference == ReferenceMethod::I0Approx {
        Some(i0_analytic(&g, Direction::Nig)?)
    } else {
        None
    };
    let (reference, samples) = match cfg.reference {
        ReferenceMethod::AnalyticGaussian | ReferenceMethod::GridAveraged => {
            let (mean, var) = ref_gaussian(&g)?;
            (Reference::Gaussian { mean, sd: var.sqrt() }, None)
        }
        ReferenceMethod::I0Approx => {
            let (mean, var) = ref_i0_approx(s0, i0.unwrap_or(f64::NAN))?;
            (Reference::Gaussian { mean, sd: var.sqrt() }, None)
        }
        ReferenceMethod::McReference => {
            let r = ref_mc(m, post, latent, &g, cfg.n_rep, seed)?;
            (Reference::Samples(r.samples.clone()), Some(r))
        }
    };
    let p_value = pvalue(s0, &reference)?;
    let (ref_mean, ref_sd) = reference.mean_sd();
    Ok(PointResult {
        check: GridPointCheck { hyper: post.hyper.clone(), weight, s0, ref_mean, ref_sd, p_value },
        samples,
        components: component_checks(latent, &g)?,
        geometry: g,
        i0,
    })
}

fn combine_components(points: &[PointResult]) -> Vec<ComponentCheck> {
    let Some(first) = points.first() else { return Vec::new() };
    (0..first.components.len())
        .map(|c| {
            let wsum = |f: &dyn Fn(&ComponentCheck) -> f64| points.iter().map(|p| p.check.weight * f(&p.components[c])).sum::<f64>();
            ComponentCheck {
                name: first.components[c].name.clone(),
                s0: wsum(&|x| x.s0),
                ref_sd: wsum(&|x| x.ref_sd * x.ref_sd).sqrt(),
                p_value: wsum(&|x| x.p_value),
            }
        })
        .collect()
}

/// Fit, check and, when the check flags misfit, compute sensitivities of the
/// configured targets.
pub fn run_workflow(m: &GaussianLGM, cfg: &WorkflowConfig) -> Result<(CheckReport, SensitivityReport)> {
    let init = cfg.init.clone().unwrap_or_else(|| m.default_hyper());
    let grid = match &cfg.hyper_mode {
        HyperMode::Fixed => HyperGrid::single(init),
        HyperMode::Mode => HyperGrid::single(empirical_bayes(m, &init)?.hyper),
        HyperMode::Grid { points_per_dim, span_sd } => {
            let mode = empirical_bayes(m, &init)?.hyper;
            hyper_grid(m, &mode, *points_per_dim, *span_sd)?
        }
    };
    workflow_on_grid(m, &grid, cfg)
}

/// Workflow steps after the hyperparameters are settled.
pub fn workflow_on_grid(m: &GaussianLGM, grid: &HyperGrid, cfg: &WorkflowConfig) -> Result<(CheckReport, SensitivityReport)> {
    let posts = posteriors_on_grid(m, grid)?;
    let points: Vec<PointResult> = posts
        .iter()
        .zip(&grid.weights)
        .enumerate()
        .map(|(k, ((s, post), &w))| check_point(m, s, post, w, cfg, cfg.seed.wrapping_add(k as u64)))
        .collect::<Result<_>>()?;
    let single = points.len() == 1;
    let p_value = pvalue_grid(&points.iter().map(|p| (p.check.p_value, p.check.weight)).collect::<Vec<_>>())?;
    let wsum = |f: &dyn Fn(&PointResult) -> f64| points.iter().map(|p| p.check.weight * f(p)).sum::<f64>();
    let s0_obs = wsum(&|p| p.check.s0);
    let ref_mean = wsum(&|p| p.check.ref_mean);
    let ref_sd = (wsum(&|p| p.check.ref_sd.powi(2) + p.check.ref_mean.powi(2)) - ref_mean * ref_mean).max(0.0).sqrt();
    let base = if cfg.reference == ReferenceMethod::GridAveraged { ReferenceMethod::AnalyticGaussian } else { cfg.reference };
    let method = if single && cfg.reference != ReferenceMethod::GridAveraged { base } else { ReferenceMethod::GridAveraged };
    let ref_samples = if single && cfg.keep_ref_samples { points[0].samples.as_ref().map(|r| r.samples.clone()) } else { None };
    let mode_idx = (0..points.len()).max_by(|&a, &b| points[a].check.weight.total_cmp(&points[b].check.weight)).unwrap_or(0);
    let report = CheckReport {
        s0_obs,
        ref_mean,
        ref_sd,
        p_value,
        method,
        base_method: base,
        ref_samples,
        dropped_replicates: points.iter().map(|p| p.samples.as_ref().map_or(0, |r| r.dropped)).sum(),
        theta_eta: Some(cfg.theta_eta),
        robust: Some(s0_obs < cfg.theta_eta),
        hyper: grid.points[mode_idx].clone(),
        grid: if single { Vec::new() } else { points.iter().map(|p| p.check.clone()).collect() },
        components: combine_components(&points),
    };

    let n = points[0].geometry.len();
    let d: Vec<f64> = (0..n).map(|i| points.iter().map(|p| p.check.weight * d_scores(&p.geometry)[i]).sum()).collect();
    let i0 = if points.iter().all(|p| p.i0.is_some()) { Some(wsum(&|p| p.i0.unwrap_or(0.0))) } else { None };
    let s_l = if p_value < cfg.trigger && !cfg.targets.is_empty() {
        let per: Vec<GridSensitivity> = points
            .iter()
            .zip(&posts)
            .map(|(p, (s, post))| {
                let targets = resolve_targets(&cfg.targets, m, post)?;
                Ok(GridSensitivity {
                    weight: p.check.weight,
                    s0: p.check.s0,
                    targets: sens_linear_targets(post, &p.geometry, s, &targets)?,
                })
            })
            .collect::<Result<_>>()?;
        if single {
            per.into_iter().next().map(|g| g.targets).unwrap_or_default()
        } else {
            average_sensitivities(&per)
        }
    } else {
        BTreeMap::new()
    };
    Ok((report, SensitivityReport { d, s0: s0_obs, i0, s_l, provenance: Provenance::Analytic }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::conditional_posterior_with;
    use crate::latent::{build_iid, LatentModel};
    use crate::linalg::SparseMatrix;
    use crate::model::assemble_lgm;
    use crate::special::norm_cdf;
    use nalgebra::DMatrix;

    fn geometry(gamma: f64, h: f64) -> PerturbationGeometry {
        PerturbationGeometry { rows: vec![0], b: vec![1.0], gamma: DMatrix::from_element(1, 1, gamma), h: vec![h] }
    }

    #[test]
    fn gaussian_reference_substitution() {
        let (m, v) = ref_gaussian(&geometry(0.5, 1.0)).unwrap();
        assert_eq!(m, 0.0);
        assert!((v - 0.0234375).abs() < 1e-16);
        assert!(matches!(ref_gaussian(&geometry(0.0, 1.0)), Err(Error::DegenerateReference(_))));
    }

    #[test]
    fn i0_reference() {
        assert_eq!(ref_i0_approx(0.0, 4.0).unwrap().1.sqrt(), 2.0);
        assert!(matches!(ref_i0_approx(0.0, -0.1), Err(Error::NegativeInformation(_))));
    }

    #[test]
    fn pvalues() {
        let r = Reference::Gaussian { mean: 0.0, sd: 2.0 };
        assert_eq!(pvalue(0.0, &r).unwrap(), 0.5);
        assert!((pvalue(1.6449 * 2.0, &r).unwrap() - 0.05).abs() < 1e-4);
        let p = pvalue(0.7, &Reference::Gaussian { mean: 0.2, sd: 0.3 }).unwrap();
        assert!((p - norm_cdf(-(0.7 - 0.2) / 0.3)).abs() < 1e-12);
        let s: Vec<f64> = (0..999).map(|i| i as f64 / 1000.0).collect();
        assert_eq!(pvalue(5.0, &Reference::Samples(s.clone())).unwrap(), 1.0 / 1000.0);
        let mut last = 1.0;
        for k in 0..50 {
            let x = -1.0 + k as f64 * 0.05;
            let pg = pvalue(x, &r).unwrap();
            let pm = pvalue(x, &Reference::Samples(s.clone())).unwrap();
            assert!(pg <= last && pm <= pvalue(x - 0.05, &Reference::Samples(s.clone())).unwrap());
            last = pg;
        }
        assert!(pvalue(0.0, &Reference::Gaussian { mean: 0.0, sd: 0.0 }).is_err());
    }

    #[test]
    fn grid_pvalues() {
        assert_eq!(pvalue_grid(&[(0.37, 1.0)]).unwrap(), 0.37);
        assert!((pvalue_grid(&[(0.2, 0.5), (0.4, 0.5)]).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(pvalue_grid(&[(0.2, 0.5), (0.4, 0.6)]), Err(Error::WeightMismatch(_))));
    }

    fn iid_model(y: Vec<f64>) -> GaussianLGM {
        let n = y.len();
        assemble_lgm(y, DMatrix::zeros(n, 0), SparseMatrix::identity(n), DMatrix::zeros(0, 0), LatentModel::Iid { n }, BTreeMap::new())
            .unwrap()
    }

    #[test]
    fn mc_reference_scalar_variance() {
        let m = iid_model(vec![2.0]);
        let hp = HyperParams::new(1.0).with("sigma_w", 1.0);
        let s = build_iid(1, 1.0).unwrap();
        let post = conditional_posterior_with(&m, &hp, &s).unwrap();
        let g = perturb_geometry(&post, &s).unwrap();
        assert!(matches!(ref_mc(&m, &post, &s, &g, 99, 1), Err(Error::TooFewDraws { .. })));
        let r = ref_mc(&m, &post, &s, &g, 100_000, 3).unwrap();
        assert_eq!(r.dropped, 0);
        let (mean, sd) = Reference::Samples(r.samples.clone()).mean_sd();
        let n = r.samples.len() as f64;
        assert!(mean.abs() < 3.0 * sd / n.sqrt(), "{mean}");
        let (_, var) = ref_gaussian(&g).unwrap();
        // SE of a sample variance from its fourth moment
        let m4 = r.samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        assert!((sd * sd - var).abs() < 3.0 * ((m4 - sd.powi(4)) / n).sqrt(), "{} {var}", sd * sd);
    }

    #[test]
    fn workflow_branches() {
        let y: Vec<f64> = (0..30).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.3).collect();
        let m = iid_model(y);
        let cfg = WorkflowConfig {
            init: Some(HyperParams::new(1.0).with("sigma_w", 1.0)),
            hyper_mode: HyperMode::Fixed,
            targets: vec!["w[0]".into()],
            trigger: 0.0,
            ..Default::default()
        };
        let (c, s) = run_workflow(&m, &cfg).unwrap();
        assert!(s.s_l.is_empty());
        assert_eq!(s.d.len(), 30);
        assert!((pairwise_sum(&s.d) - s.s0).abs() < 1e-10);
        assert!((c.p_value - norm_sf((c.s0_obs - c.ref_mean) / c.ref_sd)).abs() < 1e-12);
        assert_eq!(c.method, ReferenceMethod::AnalyticGaussian);
        assert_eq!(c.robust, Some(c.s0_obs < 1.0));
        let (_, s) = run_workflow(&m, &WorkflowConfig { trigger: 1.1, ..cfg.clone() }).unwrap();
        assert!(s.s_l.contains_key("w[0]"));
        let grid = WorkflowConfig { hyper_mode: HyperMode::Grid { points_per_dim: 3, span_sd: 2.0 }, init: None, ..cfg };
        let (c, _) = run_workflow(&m, &grid).unwrap();
        assert_eq!(c.method, ReferenceMethod::GridAveraged);
        assert!(!c.grid.is_empty());
        assert!((c.grid.iter().map(|g| g.weight).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
