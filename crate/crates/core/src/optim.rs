//! Derivative-free minimization and Hessian-scaled integration grids.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest vertex distance from the best vertex at termination.
    pub diameter: f64,
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Nelder–Mead simplex search with standard coefficients. Stops when the
/// simplex diameter falls below `tol`.
pub fn nelder_mead<F>(f: &F, x0: &[f64], step: f64, tol: f64, max_iter: usize) -> OptimResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return OptimResult { x: Vec::new(), value: finite_or_inf(f(x0)), converged: true, iterations: 0, diameter: 0.0 };
    }
    let eval = |x: &[f64]| finite_or_inf(f(x));
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        simplex.push(x);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();
    let diameter = |s: &[Vec<f64>]| {
        s[1..]
            .iter()
            .map(|x| x.iter().zip(&s[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    };
    let mut iter = 0;
    loop {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        let d = diameter(&simplex);
        if d < tol || iter >= max_iter {
            return OptimResult { x: simplex[0].clone(), value: vals[0], converged: d < tol, iterations: iter, diameter: d };
        }
        iter += 1;
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < vals[n].min(fr) {
            simplex[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            for j in 0..n {
                simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
            }
            vals[i] = eval(&simplex[i]);
        }
    }
}

/// Nelder–Mead followed by `restarts` fresh simplices at the incumbent.
pub fn minimize<F>(f: &F, x0: &[f64], restarts: usize) -> OptimResult
where
    F: Fn(&[f64]) -> f64,
{
    const TOL: f64 = 1e-6;
    let max_iter = 2000 * (x0.len() + 1);
    let mut best = nelder_mead(f, x0, 0.5, TOL, max_iter);
    for _ in 0..restarts {
        let next = nelder_mead(f, &best.x, 0.1, TOL, max_iter);
        let moved = next.x.iter().zip(&best.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let improved = next.value <= best.value;
        if improved {
            best = OptimResult { iterations: best.iterations + next.iterations, ..next };
        }
        if moved < TOL {
            break;
        }
    }
    best
}

/// Central-difference Hessian.
pub fn hessian<F>(f: &F, x: &[f64], h: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x.len();
    let f0 = f(x);
    let shifted = |moves: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, d) in moves {
            y[i] += d;
        }
        f(&y)
    };
    let mut hm = DMatrix::zeros(n, n);
    for i in 0..n {
        hm[(i, i)] = (shifted(&[(i, h)]) - 2.0 * f0 + shifted(&[(i, -h)])) / (h * h);
        for j in 0..i {
            let v = (shifted(&[(i, h), (j, h)]) - shifted(&[(i, h), (j, -h)]) - shifted(&[(i, -h), (j, h)])
                + shifted(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    hm
}

/// Grid points in internal coordinates with normalized weights.
#[derive(Debug, Clone)]
pub struct GridDesign {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub log_density: Vec<f64>,
    /// True when the Hessian was not positive definite and a fixed step was used.
    pub fallback: bool,
}

/// Regular grid of `points_per_dim` values per principal axis, spanning
/// `±span_sd` standard deviations of the Laplace approximation at `mode`.
/// `log_density` is the unnormalized log posterior of the hyperparameters.
pub fn grid_design<F>(log_density: &F, mode: &[f64], points_per_dim: usize, span_sd: f64) -> Result<GridDesign>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if points_per_dim == 0 || points_per_dim % 2 == 0 {
        return Err(Error::InvalidParameter(format!("points per dimension must be odd, got {points_per_dim}")));
    }
    let d = mode.len();
    if points_per_dim == 1 || d == 0 {
        return Ok(GridDesign {
            points: vec![mode.to_vec()],
            weights: vec![1.0],
            log_density: vec![log_density(mode)],
            fallback: false,
        });
    }
    let neg = |x: &[f64]| -log_density(x);
    let h = hessian(&neg, mode, 5e-3);
    let eig = h.clone().symmetric_eigen();
    let pd = eig.eigenvalues.iter().all(|&l| l > 0.0 && l.is_finite());
    let (axes, fallback) = if pd {
        let mut a = eig.eigenvectors.clone();
        for j in 0..d {
            let s = eig.eigenvalues[j].sqrt().recip() * span_sd;
            for i in 0..d {
                a[(i, j)] *= s;
            }
        }
        (a, false)
    } else {
        (DMatrix::identity(d, d) * 0.3 * ((points_per_dim - 1) / 2) as f64, true)
    };
    let half = (points_per_dim - 1) / 2;
    let ticks: Vec<f64> = (0..points_per_dim).map(|k| (k as f64 - half as f64) / half as f64).collect();
    let total = points_per_dim.pow(d as u32);
    let points: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            let mut z = vec![0.0; d];
            for zj in z.iter_mut() {
                *zj = ticks[idx % points_per_dim];
                idx /= points_per_dim;
            }
            (0..d).map(|i| mode[i] + (0..d).map(|j| axes[(i, j)] * z[j]).sum::<f64>()).collect()
        })
        .collect();
    let logs: Vec<f64> = points.par_iter().map(|x| log_density(x)).collect();
    let max = logs.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NumericalBreakdown("hyperparameter grid has no finite density".into()));
    }
    let raw: Vec<f64> = logs.iter().map(|&l| if l.is_finite() { (l - max).exp() } else { 0.0 }).collect();
    let s: f64 = raw.iter().sum();
    Ok(GridDesign { points, weights: raw.iter().map(|r| r / s).collect(), log_density: logs, fallback })
}
