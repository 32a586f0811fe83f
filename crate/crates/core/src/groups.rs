//! Factor groups: spectral clustering of the normalized co-activation covariance.
//!
//! ```text
//! σ_j   = (Σ_i f_i α_ij²)^½,   α̂_ij = α_ij / σ_j
//! W     = Σ_i f_i α̂_i α̂_iᵀ − I         (diagonal forced to 0)
//! W_sp  = k_nn largest entries per row of W
//! W_adj = W_sp + W_spᵀ
//! L_sym = I − D^{-½} W_adj D^{-½}
//! ```
//!
//! The bottom `k_clusters` eigenvectors of `L_sym`, row-normalized, are clustered
//! with k-means.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansParams};
use crate::linalg::sorted_symmetric_eigen;
use crate::sparse_code::SparseCodes;

pub const DEFAULT_K_NN: usize = 6;
pub const DEFAULT_K_CLUSTERS: usize = 100;

#[derive(Debug, Clone)]
pub struct CovarianceResult {
    /// `d × d`, symmetric, zero diagonal.
    pub w: DMatrix<f64>,
    /// Second-moment scale of each factor.
    pub sigma: DVector<f64>,
}

/// Frequency-weighted normalized covariance of factor coefficients.
/// Factors that never activate have `σ_j = 0` and an all-zero row and column.
pub fn factor_covariance(codes: &SparseCodes, freq: &[f64]) -> Result<CovarianceResult> {
    let columns = codes.columns().iter().map(|c| c.iter().map(|&(j, v)| (j as usize, v as f64)));
    covariance_from(codes.factors(), codes.len(), columns, freq)
}

/// Same as [`factor_covariance`] for a dense `d × N` coefficient matrix kept in
/// full precision.
pub fn factor_covariance_dense(codes: &DMatrix<f64>, freq: &[f64]) -> Result<CovarianceResult> {
    let columns = codes
        .column_iter()
        .map(|c| c.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect::<Vec<_>>());
    covariance_from(codes.nrows(), codes.ncols(), columns, freq)
}

/// `columns` yields each word's non-zero `(factor, coefficient)` entries in increasing factor order.
fn covariance_from<C, I>(d: usize, n_words: usize, columns: C, freq: &[f64]) -> Result<CovarianceResult>
where
    C: Iterator<Item = I> + Clone,
    I: IntoIterator<Item = (usize, f64)>,
{
    if freq.len() != n_words {
        return Err(Error::Dimension(format!("{} frequencies for {n_words} coded words", freq.len())));
    }
    let mut sigma = DVector::<f64>::zeros(d);
    for (col, &f) in columns.clone().zip(freq) {
        for (j, v) in col {
            sigma[j] += f * v * v;
        }
    }
    sigma.apply(|s| *s = s.sqrt());

    let mut w = DMatrix::<f64>::zeros(d, d);
    let mut scaled: Vec<(usize, f64)> = Vec::new();
    for (col, &f) in columns.zip(freq) {
        if f == 0.0 {
            continue;
        }
        scaled.clear();
        scaled.extend(col.into_iter().filter_map(|(j, v)| {
            let s = sigma[j];
            (s > 0.0).then(|| (j, v / s))
        }));
        for (p, &(a, va)) in scaled.iter().enumerate() {
            for &(b, vb) in &scaled[p + 1..] {
                // indices are increasing, so (a, b) is upper-triangular
                w[(a, b)] += f * va * vb;
            }
        }
    }
    for a in 0..d {
        for b in a + 1..d {
            w[(b, a)] = w[(a, b)];
        }
    }
    Ok(CovarianceResult { w, sigma })
}

/// Indices of the `k` largest entries of `row`, ties to the lower index.
pub fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Keeps the `k` largest entries of `row` and zeroes the rest.
pub fn top_k_row(row: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    for i in top_k_indices(row, k) {
        out[i] = row[i];
    }
    out
}

/// Per row, keeps the `k_nn` largest off-diagonal entries (signed, ties to the
/// lower column) and zeroes everything else.
pub fn sparsify_topk(w: &DMatrix<f64>, k_nn: usize) -> Result<DMatrix<f64>> {
    let d = w.nrows();
    if w.ncols() != d {
        return Err(Error::Dimension(format!("covariance is {}×{}", d, w.ncols())));
    }
    if k_nn == 0 || k_nn >= d {
        return Err(Error::InvalidArgument(format!("k_nn = {k_nn} must be in 1..{d}")));
    }
    let mut out = DMatrix::zeros(d, d);
    let mut row = Vec::with_capacity(d - 1);
    for i in 0..d {
        row.clear();
        row.extend((0..d).filter(|&j| j != i).map(|j| w[(i, j)]));
        for pos in top_k_indices(&row, k_nn) {
            let j = if pos >= i { pos + 1 } else { pos };
            out[(i, j)] = w[(i, j)];
        }
    }
    Ok(out)
}

/// `W_sp + W_spᵀ` with negative entries clamped to 0.
pub fn symmetrize(w_sp: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = w_sp + w_sp.transpose();
    sym.map(|v| v.max(0.0))
}

/// Affinity matrix built from a covariance: top-k sparsification then symmetrization.
pub fn adjacency(w: &DMatrix<f64>, k_nn: usize) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&sparsify_topk(w, k_nn)?))
}

/// `I − D^{-½} W D^{-½}` with isolated nodes given degree 1.
pub fn normalized_laplacian(adj: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = adj.nrows();
    if adj.ncols() != d {
        return Err(Error::Dimension(format!("adjacency is {}×{}", d, adj.ncols())));
    }
    if adj.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument("adjacency entries must be finite and >= 0".into()));
    }
    let inv_sqrt: Vec<f64> = adj
        .row_iter()
        .map(|r| {
            let deg = r.sum();
            if deg > 0.0 {
                1.0 / deg.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut lap = DMatrix::from_fn(d, d, |i, j| -inv_sqrt[i] * adj[(i, j)] * inv_sqrt[j]);
    for i in 0..d {
        lap[(i, i)] += 1.0;
    }
    Ok(lap)
}

/// Row-normalized spectral embedding: bottom `k` eigenvectors of `L_sym`,
/// one row per node. Zero rows stay zero.
pub fn spectral_embedding(adj: &DMatrix<f64>, k: usize) -> Result<Vec<Vec<f64>>> {
    let lap = normalized_laplacian(adj)?;
    let (_, vectors) = sorted_symmetric_eigen(lap)?;
    Ok(vectors
        .row_iter()
        .map(|r| {
            let row: Vec<f64> = r.iter().take(k).copied().collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect())
}

/// Clusters the nodes of `adj` into `k_clusters` groups. Group ids are numbered
/// by first appearance in node order.
pub fn spectral_cluster(adj: &DMatrix<f64>, k_clusters: usize, seed: u64) -> Result<Vec<usize>> {
    spectral_cluster_with(adj, k_clusters, seed, &KMeansParams::default())
}

pub fn spectral_cluster_with(adj: &DMatrix<f64>, k_clusters: usize, seed: u64, params: &KMeansParams) -> Result<Vec<usize>> {
    let d = adj.nrows();
    if k_clusters < 2 || k_clusters > d {
        return Err(Error::InvalidArgument(format!("k_clusters = {k_clusters} must be in 2..={d}")));
    }
    let rows = spectral_embedding(adj, k_clusters)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = kmeans(&rows, k_clusters, params, &mut rng);
    Ok(relabel_by_first_appearance(&result.assignment))
}

fn relabel_by_first_appearance(assignment: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    assignment
        .iter()
        .map(|&a| {
            let next = map.len();
            *map.entry(a).or_insert(next)
        })
        .collect()
}

/// How a group's member coefficients combine into one activation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum GroupAggregate {
    #[default]
    Sum,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGrouping {
    pub k_nn: Option<usize>,
    pub k_clusters: usize,
    /// Affinity used for clustering; absent when loaded from a file.
    pub adjacency: Option<DMatrix<f64>>,
    /// Group id of every factor.
    pub assignment: Vec<usize>,
    pub labels: BTreeMap<usize, String>,
}

impl FactorGrouping {
    pub fn new(assignment: Vec<usize>, k_clusters: usize) -> Result<Self> {
        if let Some(&g) = assignment.iter().find(|&&g| g >= k_clusters) {
            return Err(Error::InvalidArgument(format!("group id {g} >= {k_clusters}")));
        }
        Ok(FactorGrouping { k_nn: None, k_clusters, adjacency: None, assignment, labels: BTreeMap::new() })
    }

    /// Full pipeline from codes: covariance, adjacency, spectral clustering.
    pub fn from_codes(codes: &SparseCodes, freq: &[f64], k_nn: usize, k_clusters: usize, seed: u64) -> Result<Self> {
        let cov = factor_covariance(codes, freq)?;
        let adj = adjacency(&cov.w, k_nn)?;
        let assignment = spectral_cluster(&adj, k_clusters, seed)?;
        Ok(FactorGrouping {
            k_nn: Some(k_nn),
            k_clusters,
            adjacency: Some(adj),
            assignment,
            labels: BTreeMap::new(),
        })
    }

    pub fn factors(&self) -> usize {
        self.assignment.len()
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&j| self.assignment[j] == group).collect()
    }

    pub fn group_of(&self, factor: usize) -> Option<usize> {
        self.assignment.get(factor).copied()
    }

    pub fn label(&self, group: usize) -> Option<&str> {
        self.labels.get(&group).map(String::as_str)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        (|| -> std::io::Result<()> {
            for (j, g) in self.assignment.iter().enumerate() {
                writeln!(w, "{j}\t{g}")?;
            }
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    pub fn save_labels(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for (g, name) in &self.labels {
            text.push_str(&format!("{g}\t{name}\n"));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Reads `factor_id TAB group_id` lines; every factor `0..d` must appear once.
    pub fn load(path: impl AsRef<Path>, labels: Option<&Path>) -> Result<Self> {
        let path = path.as_ref();
        let pairs = read_tab_pairs(path)?;
        let mut by_factor = BTreeMap::new();
        for (line, factor, group) in pairs {
            let factor: usize = factor.parse().map_err(|_| Error::parse(path, line, "bad factor id"))?;
            let group: usize = group.parse().map_err(|_| Error::parse(path, line, "bad group id"))?;
            if by_factor.insert(factor, group).is_some() {
                return Err(Error::parse(path, line, format!("factor {factor} listed twice")));
            }
        }
        if by_factor.keys().enumerate().any(|(i, &f)| i != f) {
            return Err(Error::format("grouping", "factor ids must cover 0..d exactly once"));
        }
        let assignment: Vec<usize> = by_factor.into_values().collect();
        let k_clusters = assignment.iter().max().map_or(0, |&m| m + 1);
        let mut grouping = FactorGrouping::new(assignment, k_clusters)?;
        if let Some(labels) = labels {
            grouping.labels = read_labels(labels)?;
        }
        Ok(grouping)
    }
}

/// Reads `id TAB name` lines.
pub fn read_labels(path: &Path) -> Result<BTreeMap<usize, String>> {
    let mut out = BTreeMap::new();
    for (line, id, name) in read_tab_pairs(path)? {
        let id: usize = id.parse().map_err(|_| Error::parse(path, line, format!("bad id `{id}`")))?;
        out.insert(id, name);
    }
    Ok(out)
}

pub(crate) fn read_tab_pairs(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((a, b)) = line.split_once('\t') else {
            return Err(Error::parse(path, i + 1, "expected two tab-separated fields"));
        };
        out.push((i + 1, a.trim().to_string(), b.trim_end().to_string()));
    }
    Ok(out)
}

/// Activation of `word` on `group`: the sum of its coefficients on the group's factors.
pub fn group_activation(codes: &SparseCodes, grouping: &FactorGrouping, word: usize, group: usize) -> Result<f64> {
    group_activation_with(codes, grouping, word, group, GroupAggregate::Sum)
}

pub fn group_activation_with(
    codes: &SparseCodes,
    grouping: &FactorGrouping,
    word: usize,
    group: usize,
    agg: GroupAggregate,
) -> Result<f64> {
    if word >= codes.len() {
        return Err(Error::InvalidArgument(format!("word index {word} >= {}", codes.len())));
    }
    if group >= grouping.k_clusters {
        return Err(Error::InvalidArgument(format!("group {group} >= {}", grouping.k_clusters)));
    }
    if grouping.factors() != codes.factors() {
        return Err(Error::Dimension(format!(
            "grouping covers {} factors, codes have {}",
            grouping.factors(),
            codes.factors()
        )));
    }
    let members = codes
        .column(word)
        .iter()
        .filter(|&&(j, _)| grouping.assignment[j as usize] == group)
        .map(|&(_, v)| v as f64);
    Ok(match agg {
        GroupAggregate::Sum => members.sum(),
        GroupAggregate::Max => members.fold(0.0, f64::max),
    })
}
