//! Latent structure matrices `D(θ₂)` and scale vectors `h`.
//!
//! A latent field `w` satisfies `D w = Λ` where the noise `Λ` has independent
//! entries with variance `h`. Hyperparameters enter `D` only, `h` is fixed.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentKind {
    Rw1,
    Iid,
    Sar,
    Custom,
}

/// A contiguous set of noise rows and latent columns belonging to one named
/// component.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct LatentStructure {
    pub kind: LatentKind,
    pub d: SparseMatrix,
    pub h: Vec<f64>,
    pub intrinsic: bool,
    /// Dimension of the null space of `D` (1 for a random walk).
    pub rank_deficiency: usize,
    pub hyper_names: Vec<String>,
    pub blocks: Vec<Block>,
}

impl LatentStructure {
    fn new(kind: LatentKind, d: SparseMatrix, h: Vec<f64>, hyper_names: Vec<String>) -> Result<Self> {
        if d.nrows() != h.len() {
            return Err(Error::DimensionMismatch(format!(
                "D has {} rows but h has length {}",
                d.nrows(),
                h.len()
            )));
        }
        if let Some((index, &value)) = h.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NonPositiveH { index, value });
        }
        let rank_deficiency = d.ncols().saturating_sub(d.nrows());
        let blocks = vec![Block { name: "w".into(), rows: 0..d.nrows(), cols: 0..d.ncols() }];
        Ok(Self { kind, intrinsic: rank_deficiency > 0, rank_deficiency, d, h, hyper_names, blocks })
    }

    pub fn n_w(&self) -> usize {
        self.d.ncols()
    }

    pub fn n_noise(&self) -> usize {
        self.d.nrows()
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::UnknownTarget(format!("component {name}")))
    }

    /// Block-diagonal concatenation of named structures.
    pub fn stack(parts: Vec<(String, LatentStructure)>) -> Result<Self> {
        let mats: Vec<&SparseMatrix> = parts.iter().map(|(_, s)| &s.d).collect();
        let d = SparseMatrix::block_diag(&mats);
        let mut h = Vec::new();
        let mut blocks = Vec::new();
        let mut hyper_names = Vec::new();
        let (mut r0, mut c0) = (0, 0);
        let mut rank_deficiency = 0;
        let mut kinds = Vec::new();
        for (name, s) in &parts {
            h.extend_from_slice(&s.h);
            blocks.push(Block {
                name: name.clone(),
                rows: r0..r0 + s.n_noise(),
                cols: c0..c0 + s.n_w(),
            });
            r0 += s.n_noise();
            c0 += s.n_w();
            hyper_names.extend(s.hyper_names.iter().cloned());
            rank_deficiency += s.rank_deficiency;
            kinds.push(s.kind);
        }
        let kind = if kinds.len() == 1 { kinds[0] } else { LatentKind::Custom };
        Ok(Self { kind, d, h, intrinsic: rank_deficiency > 0, rank_deficiency, hyper_names, blocks })
    }

    /// Writes `D` (dense, first line the column count) and `h` (one value per
    /// line) using shortest round-trip formatting.
    pub fn write_custom(&self, d_file: &Path, h_file: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(d_file)?);
        writeln!(f, "{}", self.n_w())?;
        let dense = self.d.to_dense();
        for i in 0..dense.nrows() {
            let row: Vec<String> = (0..dense.ncols()).map(|j| format!("{:?}", dense[(i, j)])).collect();
            writeln!(f, "{}", row.join(","))?;
        }
        let mut g = std::io::BufWriter::new(std::fs::File::create(h_file)?);
        for v in &self.h {
            writeln!(g, "{v:?}")?;
        }
        Ok(())
    }
}

pub fn build_rw1(n: usize, sigma_w: f64) -> Result<LatentStructure> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!("random walk needs n >= 2, got {n}")));
    }
    check_scale("sigma_w", sigma_w)?;
    let mut trips = Vec::with_capacity(2 * (n - 1));
    for i in 0..n - 1 {
        trips.push((i, i, -1.0 / sigma_w));
        trips.push((i, i + 1, 1.0 / sigma_w));
    }
    let d = SparseMatrix::from_triplets(n - 1, n, &trips)?;
    LatentStructure::new(LatentKind::Rw1, d, vec![1.0; n - 1], vec!["sigma_w".into()])
}

pub fn build_iid(n: usize, sigma: f64) -> Result<LatentStructure> {
    if n < 1 {
        return Err(Error::InvalidDimension("iid block needs n >= 1".into()));
    }
    check_scale("sigma_w", sigma)?;
    let d = SparseMatrix::diagonal(&vec![1.0 / sigma; n]);
    LatentStructure::new(LatentKind::Iid, d, vec![1.0; n], vec!["sigma_w".into()])
}

/// Row-standardized adjacency from a 1-based undirected edge list.
/// Duplicate edges and self loops are ignored.
pub fn row_standardized_adjacency(n: usize, edges: &[(usize, usize)]) -> Result<SparseMatrix> {
    let mut nbrs: Vec<std::collections::BTreeSet<usize>> = vec![Default::default(); n];
    for &(a, b) in edges {
        if a == 0 || b == 0 || a > n || b > n {
            return Err(Error::Parse(format!("edge ({a}, {b}) outside nodes 1..={n}")));
        }
        if a != b {
            nbrs[a - 1].insert(b - 1);
            nbrs[b - 1].insert(a - 1);
        }
    }
    let mut trips = Vec::new();
    for (i, set) in nbrs.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::IsolatedNode(i + 1));
        }
        let w = 1.0 / set.len() as f64;
        trips.extend(set.iter().map(|&j| (i, j, w)));
    }
    SparseMatrix::from_triplets(n, n, &trips)
}

pub fn build_sar(adjacency: &SparseMatrix, rho: f64, sigma_w: f64) -> Result<LatentStructure> {
    if !(rho.abs() < 1.0) {
        return Err(Error::RhoOutOfRange(rho));
    }
    check_scale("sigma_w", sigma_w)?;
    let n = adjacency.nrows();
    let mut trips: Vec<_> = adjacency.triplets().into_iter().map(|(i, j, v)| (i, j, -rho * v / sigma_w)).collect();
    trips.extend((0..n).map(|i| (i, i, 1.0 / sigma_w)));
    let d = SparseMatrix::from_triplets(n, n, &trips)?;
    LatentStructure::new(LatentKind::Sar, d, vec![1.0; n], vec!["sigma_w".into(), "rho".into()])
}

/// Reads a 1-based `node_a,node_b` edge list with a header row.
pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |k: usize| -> Result<usize> {
            rec.get(k)
                .ok_or_else(|| Error::Parse(format!("edge row {:?} has fewer than 2 fields", rec)))?
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("edge id: {e}")))
        };
        out.push((parse(0)?, parse(1)?));
    }
    Ok(out)
}

/// Reads `D` (first line: column count, then comma separated dense rows)
/// and `h` (one value per line).
pub fn load_custom(d_file: &Path, h_file: &Path) -> Result<LatentStructure> {
    let parse_f = |s: &str| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{}`: {e}", s.trim())))
    };
    let mut lines = BufReader::new(std::fs::File::open(d_file)?).lines();
    let ncols: usize = lines
        .next()
        .ok_or_else(|| Error::Parse("empty D file".into()))??
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("D header: {e}")))?;
    let mut trips = Vec::new();
    let mut nrows = 0;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line.split(',').map(parse_f).collect::<Result<Vec<_>>>()?;
        if vals.len() != ncols {
            return Err(Error::Parse(format!("D row {nrows} has {} values, expected {ncols}", vals.len())));
        }
        trips.extend(vals.into_iter().enumerate().map(|(j, v)| (nrows, j, v)));
        nrows += 1;
    }
    let mut h = Vec::new();
    for line in BufReader::new(std::fs::File::open(h_file)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            h.push(parse_f(&line)?);
        }
    }
    let d = SparseMatrix::from_triplets(nrows, ncols, &trips)?;
    if nrows > ncols {
        return Err(Error::InvalidDimension(format!("D has more rows ({nrows}) than columns ({ncols})")));
    }
    if nrows == ncols {
        let sv = d.to_dense().singular_values();
        let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(lo > 1e-12 * hi) {
            return Err(Error::SingularStructure(format!("square D is singular (condition number {:e})", hi / lo)));
        }
    }
    LatentStructure::new(LatentKind::Custom, d, h, Vec::new())
}

fn check_scale(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// How a hyperparameter is transformed for optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Positive precision, optimized on the log scale.
    Precision,
    /// Positive standard deviation, optimized on the log scale.
    Scale,
    /// Correlation in (−1, 1), optimized as `ln((1+ρ)/(1−ρ))`.
    Correlation,
}

impl ParamKind {
    pub fn to_internal(self, v: f64) -> f64 {
        match self {
            ParamKind::Precision | ParamKind::Scale => v.ln(),
            ParamKind::Correlation => ((1.0 + v) / (1.0 - v)).ln(),
        }
    }

    pub fn from_internal(self, t: f64) -> f64 {
        match self {
            ParamKind::Precision | ParamKind::Scale => t.exp(),
            ParamKind::Correlation => (0.5 * t).tanh(),
        }
    }
}

/// A latent model whose structure depends on hyperparameters.
#[derive(Debug, Clone)]
pub enum LatentModel {
    Rw1 { n: usize },
    Iid { n: usize },
    Sar { adjacency: SparseMatrix },
    Custom { structure: LatentStructure },
    /// Independent components; hyperparameter names are prefixed `name.`.
    Stack(Vec<(String, LatentModel)>),
}

impl LatentModel {
    pub fn n_w(&self) -> usize {
        match self {
            LatentModel::Rw1 { n } | LatentModel::Iid { n } => *n,
            LatentModel::Sar { adjacency } => adjacency.nrows(),
            LatentModel::Custom { structure } => structure.n_w(),
            LatentModel::Stack(parts) => parts.iter().map(|(_, m)| m.n_w()).sum(),
        }
    }

    pub fn hyper_spec(&self) -> Vec<(String, ParamKind)> {
        match self {
            LatentModel::Rw1 { .. } | LatentModel::Iid { .. } => vec![("sigma_w".into(), ParamKind::Scale)],
            LatentModel::Sar { .. } => {
                vec![("sigma_w".into(), ParamKind::Scale), ("rho".into(), ParamKind::Correlation)]
            }
            LatentModel::Custom { .. } => Vec::new(),
            LatentModel::Stack(parts) => parts
                .iter()
                .flat_map(|(name, m)| {
                    m.hyper_spec().into_iter().map(move |(k, kind)| (format!("{name}.{k}"), kind))
                })
                .collect(),
        }
    }

    pub fn build(&self, theta2: &BTreeMap<String, f64>) -> Result<LatentStructure> {
        self.build_prefixed(theta2, "")
    }

    fn build_prefixed(&self, theta2: &BTreeMap<String, f64>, prefix: &str) -> Result<LatentStructure> {
        let get = |k: &str| -> Result<f64> {
            let key = format!("{prefix}{k}");
            theta2.get(&key).copied().ok_or_else(|| Error::InvalidParameter(format!("missing hyperparameter {key}")))
        };
        let mut s = match self {
            LatentModel::Rw1 { n } => build_rw1(*n, get("sigma_w")?)?,
            LatentModel::Iid { n } => build_iid(*n, get("sigma_w")?)?,
            LatentModel::Sar { adjacency } => build_sar(adjacency, get("rho")?, get("sigma_w")?)?,
            LatentModel::Custom { structure } => structure.clone(),
            LatentModel::Stack(parts) => {
                let built = parts
                    .iter()
                    .map(|(name, m)| Ok((name.clone(), m.build_prefixed(theta2, &format!("{prefix}{name}."))?)))
                    .collect::<Result<Vec<_>>>()?;
                return LatentStructure::stack(built);
            }
        };
        s.hyper_names = s.hyper_names.iter().map(|k| format!("{prefix}{k}")).collect();
        Ok(s)
    }
}
