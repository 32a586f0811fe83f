//! Non-negative sparse coding against a fixed dictionary.
//!
//! Each column `x` of a batch is coded by solving
//!
//! ```text
//! min_α  ½‖x − Φα‖² + λ‖α‖₁   s.t. α ⪰ 0
//! ```
//!
//! with FISTA. The proximal map of `λ‖·‖₁` plus the non-negativity constraint is
//! the one-sided soft threshold `max(v − λ/L, 0)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::gram_spectral_radius;

/// Column norms may exceed 1 by this much (f32 storage round-off).
pub const NORM_SLACK: f64 = 1e-6;

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_FISTA_STEPS: usize = 500;
pub const DEFAULT_SPARSIFY_THRESHOLD: f64 = 1e-6;

/// An `n × d` matrix of word factors with `‖Φ_j‖₂ ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    pub lambda: f64,
    /// Training steps taken to produce this dictionary.
    pub steps: u64,
    pub source_tag: String,
}

impl Dictionary {
    pub fn new(atoms: DMatrix<f64>, lambda: f64) -> Result<Self> {
        validate_atoms(&atoms)?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Dictionary { atoms, lambda, steps: 0, source_tag: String::new() })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    /// Replaces the atoms, re-checking the norm and finiteness invariants.
    pub fn set_atoms(&mut self, atoms: DMatrix<f64>) -> Result<()> {
        if atoms.shape() != self.atoms.shape() {
            return Err(Error::Dimension(format!("atoms {:?} vs {:?}", atoms.shape(), self.atoms.shape())));
        }
        validate_atoms(&atoms)?;
        self.atoms = atoms;
        Ok(())
    }

    pub(crate) fn atoms_mut_unchecked(&mut self) -> &mut DMatrix<f64> {
        &mut self.atoms
    }

    /// Embedding dimension `n`.
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Number of factors `d`.
    pub fn factors(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atom(&self, j: usize) -> DVector<f64> {
        self.atoms.column(j).into_owned()
    }

    pub fn max_column_norm(&self) -> f64 {
        self.atoms.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Lipschitz constant of the smooth part's gradient, `λ_max(ΦᵀΦ)`.
    pub fn lipschitz(&self) -> f64 {
        gram_spectral_radius(&self.atoms, 1e-6, 100_000)
    }
}

fn validate_atoms(atoms: &DMatrix<f64>) -> Result<()> {
    if atoms.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dictionary".into()));
    }
    for (j, col) in atoms.column_iter().enumerate() {
        let norm = col.norm();
        if norm > 1.0 + NORM_SLACK {
            return Err(Error::InvalidArgument(format!("factor {j} has norm {norm} > 1")));
        }
    }
    Ok(())
}

/// Per-column objective `½‖x − Φα‖² + λ Σα`.
pub fn column_objectives(dict: &Dictionary, batch: &DMatrix<f64>, codes: &DMatrix<f64>) -> Vec<f64> {
    let residual = dict.atoms() * codes - batch;
    residual
        .column_iter()
        .zip(codes.column_iter())
        .map(|(r, a)| 0.5 * r.norm_squared() + dict.lambda * a.sum())
        .collect()
}

/// Batch objective summed over columns.
pub fn objective(dict: &Dictionary, batch: &DMatrix<f64>, codes: &DMatrix<f64>) -> f64 {
    column_objectives(dict, batch, codes).iter().sum()
}

/// FISTA solver bound to one dictionary; caches the Lipschitz constant.
#[derive(Debug, Clone)]
pub struct SparseCoder<'a> {
    dict: &'a Dictionary,
    lipschitz: f64,
}

/// Result of a FISTA run.
#[derive(Debug, Clone)]
pub struct FistaOutput {
    /// `d × m`, element-wise non-negative.
    pub codes: DMatrix<f64>,
    /// Objective of each returned column.
    pub objectives: Vec<f64>,
    pub iterations: usize,
}

impl<'a> SparseCoder<'a> {
    pub fn new(dict: &'a Dictionary) -> Self {
        SparseCoder { dict, lipschitz: dict.lipschitz() }
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Runs at most `steps` FISTA iterations on every column of `batch`.
    ///
    /// Each column returns its best iterate seen so far (FISTA is not monotone).
    /// With `tol > 0` the run stops once the summed objective changes by less than
    /// `tol` relative to its previous value.
    pub fn infer(&self, batch: &DMatrix<f64>, steps: usize, tol: f64) -> Result<FistaOutput> {
        let phi = self.dict.atoms();
        let (n, d, m) = (phi.nrows(), phi.ncols(), batch.ncols());
        if batch.nrows() != n {
            return Err(Error::Dimension(format!("batch has {} rows, dictionary has {n}", batch.nrows())));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("FISTA needs at least one step".into()));
        }
        if batch.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("FISTA input batch".into()));
        }

        let lambda = self.dict.lambda;
        let mut best = DMatrix::zeros(d, m);
        let mut best_obj: Vec<f64> = batch.column_iter().map(|c| 0.5 * c.norm_squared()).collect();
        if self.lipschitz <= 0.0 || m == 0 {
            return Ok(FistaOutput { codes: best, objectives: best_obj, iterations: 0 });
        }
        let step = 1.0 / self.lipschitz;
        let shrink = lambda * step;

        let phi_t = phi.transpose();
        let phi_t_x = &phi_t * batch;
        // Φx_k is linear in x_k, so Φy_k follows from the two previous products
        // and each iteration needs only two matrix products.
        let mut x = DMatrix::<f64>::zeros(d, m);
        let mut phi_x = DMatrix::<f64>::zeros(n, m);
        let mut y = x.clone();
        let mut phi_y = phi_x.clone();
        let mut t = 1.0f64;
        let mut prev_total = best_obj.iter().sum::<f64>();
        let mut iterations = 0;

        for _ in 0..steps {
            iterations += 1;
            let grad = &phi_t * &phi_y - &phi_t_x;
            let x_next = DMatrix::from_fn(d, m, |r, c| (y[(r, c)] - step * grad[(r, c)] - shrink).max(0.0));
            let phi_x_next = phi * &x_next;

            let mut total = 0.0;
            for c in 0..m {
                let mut sq = 0.0;
                for r in 0..n {
                    let e = phi_x_next[(r, c)] - batch[(r, c)];
                    sq += e * e;
                }
                let obj = 0.5 * sq + lambda * x_next.column(c).sum();
                total += obj;
                if obj < best_obj[c] {
                    best_obj[c] = obj;
                    best.set_column(c, &x_next.column(c));
                }
            }
            if !total.is_finite() {
                return Err(Error::Numeric("FISTA objective became non-finite".into()));
            }

            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = &x_next + (&x_next - &x) * beta;
            phi_y = &phi_x_next + (&phi_x_next - &phi_x) * beta;
            x = x_next;
            phi_x = phi_x_next;
            t = t_next;

            if (prev_total - total).abs() < tol * prev_total.abs() {
                break;
            }
            prev_total = total;
        }
        Ok(FistaOutput { codes: best, objectives: best_obj, iterations })
    }
}

/// Codes a batch (`n × m`) against `dict`; returns the dense `d × m` code matrix.
pub fn fista_infer(dict: &Dictionary, batch: &DMatrix<f64>, steps: usize, tol: f64) -> Result<DMatrix<f64>> {
    Ok(SparseCoder::new(dict).infer(batch, steps, tol)?.codes)
}

/// Optimality residual of a single code: with `g = Φᵀ(Φα − x)`, the largest
/// violation of `g_j + λ = 0` on the support and `g_j + λ ≥ 0` off it.
pub fn kkt_residual(dict: &Dictionary, x: &DVector<f64>, alpha: &DVector<f64>) -> Result<f64> {
    let phi = dict.atoms();
    if x.len() != phi.nrows() || alpha.len() != phi.ncols() {
        return Err(Error::Dimension(format!(
            "x has {}, alpha has {} entries for a {}×{} dictionary",
            x.len(),
            alpha.len(),
            phi.nrows(),
            phi.ncols()
        )));
    }
    if alpha.iter().any(|&a| a < 0.0) {
        return Err(Error::InvalidArgument("alpha has a negative entry".into()));
    }
    let g = phi.transpose() * (phi * alpha - x);
    Ok(g.iter()
        .zip(alpha.iter())
        .map(|(&gj, &aj)| {
            let s = gj + dict.lambda;
            if aj > 0.0 {
                s.abs()
            } else {
                (-s).max(0.0)
            }
        })
        .fold(0.0, f64::max))
}

/// Column-sparse non-negative codes, `d × N`. Values are stored as `f32`, the
/// precision of the on-disk format.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodes {
    factors: usize,
    columns: Vec<Vec<(u32, f32)>>,
}

impl SparseCodes {
    pub fn new(factors: usize, columns: Vec<Vec<(u32, f32)>>) -> Result<Self> {
        if factors > u32::MAX as usize {
            return Err(Error::InvalidArgument("too many factors".into()));
        }
        for (i, col) in columns.iter().enumerate() {
            let mut prev: Option<u32> = None;
            for &(j, v) in col {
                if j as usize >= factors {
                    return Err(Error::InvalidArgument(format!("column {i}: factor {j} >= {factors}")));
                }
                if prev.is_some_and(|p| p >= j) {
                    return Err(Error::InvalidArgument(format!("column {i}: indices not strictly increasing")));
                }
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::InvalidArgument(format!("column {i}: non-positive value {v}")));
                }
                prev = Some(j);
            }
        }
        Ok(SparseCodes { factors, columns })
    }

    pub fn empty(factors: usize, words: usize) -> Self {
        SparseCodes { factors, columns: vec![Vec::new(); words] }
    }

    /// Number of factors `d`.
    pub fn factors(&self) -> usize {
        self.factors
    }

    /// Number of coded words `N`.
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, word: usize) -> &[(u32, f32)] {
        &self.columns[word]
    }

    pub fn columns(&self) -> &[Vec<(u32, f32)>] {
        &self.columns
    }

    /// Coefficient of `factor` in the code of `word` (0 when absent).
    pub fn get(&self, word: usize, factor: usize) -> f64 {
        let col = &self.columns[word];
        match col.binary_search_by_key(&(factor as u32), |&(j, _)| j) {
            Ok(pos) => col[pos].1 as f64,
            Err(_) => 0.0,
        }
    }

    pub fn l1(&self, word: usize) -> f64 {
        self.columns[word].iter().map(|&(_, v)| v as f64).sum()
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    /// Appends the columns of `other` (same factor count).
    pub fn extend(&mut self, other: SparseCodes) -> Result<()> {
        if other.factors != self.factors {
            return Err(Error::Dimension(format!("{} vs {} factors", other.factors, self.factors)));
        }
        self.columns.extend(other.columns);
        Ok(())
    }

    pub fn densify(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.factors, self.columns.len());
        for (i, col) in self.columns.iter().enumerate() {
            for &(j, v) in col {
                out[(j as usize, i)] = v as f64;
            }
        }
        out
    }

    pub fn dense_column(&self, word: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.factors);
        for &(j, v) in &self.columns[word] {
            out[j as usize] = v as f64;
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CODES_MAGIC)?;
        w.write_all(&CODES_VERSION.to_le_bytes())?;
        w.write_all(&(self.factors as u32).to_le_bytes())?;
        w.write_all(&(self.columns.len() as u32).to_le_bytes())?;
        for col in &self.columns {
            w.write_all(&(col.len() as u32).to_le_bytes())?;
            for &(j, v) in col {
                w.write_all(&j.to_le_bytes())?;
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |msg: &str| Error::format("sparse codes", msg);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("missing header"))?;
        if &magic != CODES_MAGIC {
            return Err(bad("wrong magic"));
        }
        let version = read_u32(&mut r).map_err(|_| bad("missing version"))?;
        if version != CODES_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let factors = read_u32(&mut r).map_err(|_| bad("missing d"))? as usize;
        let words = read_u32(&mut r).map_err(|_| bad("missing N"))? as usize;
        let mut columns = Vec::with_capacity(words.min(1 << 24));
        for i in 0..words {
            let nnz = read_u32(&mut r).map_err(|_| bad(&format!("truncated at column {i}")))? as usize;
            if nnz > factors {
                return Err(bad(&format!("column {i} has {nnz} entries for {factors} factors")));
            }
            let mut col = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                let j = read_u32(&mut r).map_err(|_| bad(&format!("truncated at column {i}")))?;
                let v = f32::from_bits(read_u32(&mut r).map_err(|_| bad(&format!("truncated at column {i}")))?);
                col.push((j, v));
            }
            columns.push(col);
        }
        SparseCodes::new(factors, columns)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

const CODES_MAGIC: &[u8; 4] = b"WFSC";
const CODES_VERSION: u32 = 1;

pub(crate) fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Keeps entries strictly above `threshold`. Entries that round to zero in
/// `f32` are dropped too.
pub fn sparsify(dense: &DMatrix<f64>, threshold: f64) -> Result<SparseCodes> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} < 0")));
    }
    let mut columns = Vec::with_capacity(dense.ncols());
    for (c, col) in dense.column_iter().enumerate() {
        let mut out = Vec::new();
        for (j, &v) in col.iter().enumerate() {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("entry ({j}, {c}) = {v} is not a valid code value")));
            }
            let stored = v as f32;
            if v > threshold && stored > 0.0 {
                out.push((j as u32, stored));
            }
        }
        columns.push(out);
    }
    Ok(SparseCodes { factors: dense.nrows(), columns })
}
