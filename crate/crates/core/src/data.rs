//! CSV tables and JSON model specifications.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{load_custom, read_edges, row_standardized_adjacency, LatentModel};
use crate::linalg::SparseMatrix;
use crate::model::{assemble_lgm, GaussianLGM, HyperParams, HyperPrior, TAU_EPS};

/// A headered CSV table kept as text.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
            csv::ErrorKind::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
            _ => Error::Parse(e.to_string()),
        })?;
        let headers = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let rows = rdr
            .records()
            .map(|r| Ok(r?.iter().map(|v| v.trim().to_string()).collect()))
            .collect::<Result<Vec<Vec<String>>>>()?;
        Ok(Self { headers, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse(format!("no column named {name}")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let j = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[j].as_str()).collect())
    }

    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .into_iter()
            .enumerate()
            .map(|(i, v)| v.parse::<f64>().map_err(|_| Error::Parse(format!("column {name}, row {}: {v:?} is not a number", i + 1))))
            .collect()
    }
}

/// Writes a numeric CSV with the given header.
pub fn write_csv(path: &Path, headers: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    w.write_record(headers)?;
    for r in rows {
        w.write_record(r.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

/// How a latent component enters the model. `index` names a column of group
/// labels (one latent value per distinct label), `weight` a numeric column
/// multiplying the mapping; without `index` each row has its own value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LatentSpec {
    Rw1 {
        #[serde(default)]
        index: Option<String>,
        #[serde(default)]
        weight: Option<String>,
    },
    Iid {
        #[serde(default)]
        index: Option<String>,
        #[serde(default)]
        weight: Option<String>,
    },
    Sar {
        edges: PathBuf,
        #[serde(default)]
        index: Option<String>,
        #[serde(default)]
        weight: Option<String>,
    },
    Custom {
        d_file: PathBuf,
        h_file: PathBuf,
        /// Triplet CSV (row, col, value), 0-based; identity when absent.
        #[serde(default)]
        a_file: Option<PathBuf>,
    },
    Stack { components: Vec<NamedLatent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedLatent {
    pub name: String,
    #[serde(flatten)]
    pub spec: LatentSpec,
}

fn default_true() -> bool {
    true
}

fn default_beta_precision() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Data file, relative to the specification's directory.
    pub data: PathBuf,
    pub response: String,
    #[serde(default)]
    pub standardize_response: bool,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Prior precision of each fixed effect.
    #[serde(default = "default_beta_precision")]
    pub beta_prior_precision: f64,
    pub latent: LatentSpec,
    #[serde(default)]
    pub priors: BTreeMap<String, HyperPrior>,
    #[serde(default)]
    pub init: BTreeMap<String, f64>,
}

/// Group labels to 0-based ids. Numeric labels are ordered by value, others
/// by first appearance.
fn group_ids(labels: &[&str]) -> (Vec<usize>, usize) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.parse::<f64>().ok()).collect();
    let mut order: Vec<String> = Vec::new();
    match &numeric {
        Some(v) => {
            let mut u = v.clone();
            u.sort_by(f64::total_cmp);
            u.dedup();
            let ids = v.iter().map(|x| u.iter().position(|y| y == x).unwrap_or(0)).collect();
            (ids, u.len())
        }
        None => {
            let ids = labels
                .iter()
                .map(|l| match order.iter().position(|o| o == l) {
                    Some(i) => i,
                    None => {
                        order.push(l.to_string());
                        order.len() - 1
                    }
                })
                .collect();
            (ids, order.len())
        }
    }
}

fn mapping(table: &Table, index: &Option<String>, weight: &Option<String>, n_w: Option<usize>) -> Result<SparseMatrix> {
    let n = table.len();
    let (ids, groups) = match index {
        Some(col) => group_ids(&table.column(col)?),
        None => ((0..n).collect(), n),
    };
    let ncols = n_w.unwrap_or(groups);
    if let Some(&bad) = ids.iter().find(|&&i| i >= ncols) {
        return Err(Error::DimensionMismatch(format!("group {bad} outside a latent field of size {ncols}")));
    }
    let w = match weight {
        Some(col) => table.numeric(col)?,
        None => vec![1.0; n],
    };
    SparseMatrix::from_triplets(n, ncols, &ids.iter().zip(&w).enumerate().map(|(i, (&j, &v))| (i, j, v)).collect::<Vec<_>>())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_triplets(path: &Path, nrows: usize, ncols: usize) -> Result<SparseMatrix> {
    let t = Table::read(path)?;
    let cols = |k: usize| -> Result<Vec<f64>> {
        t.rows
            .iter()
            .map(|r| r.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Parse(format!("bad triplet in {}", path.display()))))
            .collect()
    };
    let (r, c, v) = (cols(0)?, cols(1)?, cols(2)?);
    let trips: Vec<(usize, usize, f64)> = (0..t.len()).map(|k| (r[k] as usize, c[k] as usize, v[k])).collect();
    SparseMatrix::from_triplets(nrows, ncols, &trips)
}

fn build_latent(spec: &LatentSpec, table: &Table, base: &Path) -> Result<(LatentModel, SparseMatrix)> {
    match spec {
        LatentSpec::Rw1 { index, weight } => {
            let a = mapping(table, index, weight, None)?;
            Ok((LatentModel::Rw1 { n: a.ncols() }, a))
        }
        LatentSpec::Iid { index, weight } => {
            let a = mapping(table, index, weight, None)?;
            Ok((LatentModel::Iid { n: a.ncols() }, a))
        }
        LatentSpec::Sar { edges, index, weight } => {
            let e = read_edges(&resolve(base, edges))?;
            let n = e.iter().map(|&(a, b)| a.max(b)).max().unwrap_or(0);
            let a = mapping(table, index, weight, Some(n))?;
            Ok((LatentModel::Sar { adjacency: row_standardized_adjacency(n, &e)? }, a))
        }
        LatentSpec::Custom { d_file, h_file, a_file } => {
            let s = load_custom(&resolve(base, d_file), &resolve(base, h_file))?;
            let a = match a_file {
                Some(f) => read_triplets(&resolve(base, f), table.len(), s.n_w())?,
                None if table.len() == s.n_w() => SparseMatrix::identity(s.n_w()),
                None => return Err(Error::DimensionMismatch("custom structure needs an a_file when sizes differ".into())),
            };
            Ok((LatentModel::Custom { structure: s }, a))
        }
        LatentSpec::Stack { components } => {
            let mut parts = Vec::new();
            let mut maps = Vec::new();
            for c in components {
                let (m, a) = build_latent(&c.spec, table, base)?;
                parts.push((c.name.clone(), m));
                maps.push(a);
            }
            let mut a = maps.first().cloned().ok_or_else(|| Error::InvalidParameter("empty stack".into()))?;
            for m in &maps[1..] {
                a = a.hcat(m)?;
            }
            Ok((LatentModel::Stack(parts), a))
        }
    }
}

impl ModelSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Builds the model; relative paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<GaussianLGM> {
        let table = Table::read(&resolve(base, &self.data))?;
        self.build_with_table(&table, base)
    }

    pub fn build_with_table(&self, table: &Table, base: &Path) -> Result<GaussianLGM> {
        let n = table.len();
        let mut y = table.numeric(&self.response)?;
        if self.standardize_response {
            standardize(&mut y);
        }
        let mut cols: Vec<Vec<f64>> = Vec::new();
        if self.intercept {
            cols.push(vec![1.0; n]);
        }
        for c in &self.covariates {
            cols.push(table.numeric(c)?);
        }
        let p = cols.len();
        let b = DMatrix::from_fn(n, p, |i, j| cols[j][i]);
        let (latent, a) = build_latent(&self.latent, table, base)?;
        assemble_lgm(y, b, a, DMatrix::identity(p, p) * self.beta_prior_precision, latent, self.priors.clone())
    }

    /// Model defaults overridden by the specification's `init` values.
    pub fn initial_hyper(&self, m: &GaussianLGM) -> HyperParams {
        let mut hp = m.default_hyper();
        for (k, &v) in &self.init {
            if k == TAU_EPS {
                hp.tau_eps = v;
            } else {
                hp.set(k, v);
            }
        }
        hp
    }
}

/// `(y − mean) / SD` with the sample SD.
pub fn standardize(y: &mut [f64]) {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    y.iter_mut().for_each(|v| *v = (*v - m) / sd);
}
