//! Dictionary learning by alternating minimization.
//!
//! Every training step samples a frequency-weighted minibatch of word vectors,
//! codes it with FISTA against the current dictionary, then takes one
//! preconditioned gradient step on `½‖X − ΦA‖²_F` followed by projection of each
//! factor onto the unit ball. The preconditioner is the accumulated diagonal of
//! `AAᵀ`, one scalar per factor.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_assignment;
use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::sparse_code::{read_u32, Dictionary, SparseCoder, DEFAULT_FISTA_STEPS, DEFAULT_LAMBDA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of factors `d`.
    pub factors: usize,
    pub lambda: f64,
    pub batch_size: usize,
    pub fista_steps: usize,
    /// Relative objective change that ends FISTA early; 0 runs every step.
    pub fista_tol: f64,
    pub total_steps: u64,
    pub learning_rate: f64,
    pub hessian_epsilon: f64,
    pub seed: u64,
    /// A factor unused for this many consecutive steps is re-initialized.
    pub dead_factor_patience: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            factors: 1000,
            lambda: DEFAULT_LAMBDA,
            batch_size: 100,
            fista_steps: DEFAULT_FISTA_STEPS,
            fista_tol: 0.0,
            total_steps: 200_000,
            learning_rate: 1.0,
            hessian_epsilon: 1e-6,
            seed: 0,
            dead_factor_patience: 5000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.factors == 0 || self.batch_size == 0 || self.fista_steps == 0 {
            return bad("factors, batch size and FISTA steps must be >= 1");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning rate must be > 0");
        }
        if !(self.hessian_epsilon > 0.0) {
            return bad("hessian epsilon must be > 0");
        }
        if !(self.fista_tol >= 0.0) {
            return bad("FISTA tolerance must be >= 0");
        }
        Ok(())
    }
}

/// Unit-norm Gaussian columns, deterministic in `seed`.
pub fn init_dictionary(n: usize, d: usize, seed: u64) -> Result<Dictionary> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!("dictionary shape {n}×{d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut atoms = DMatrix::zeros(n, d);
    for mut col in atoms.column_iter_mut() {
        loop {
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
                break;
            }
        }
    }
    Dictionary::new(atoms, DEFAULT_LAMBDA)
}

/// Draws `m` word indices i.i.d. from the frequency distribution, with replacement.
pub fn sample_indices<R: Rng>(freq: &[f64], m: usize, rng: &mut R) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(freq).map_err(|e| Error::InvalidArgument(format!("frequencies: {e}")))?;
    Ok((0..m).map(|_| dist.sample(rng)).collect())
}

/// An `n × m` minibatch of frequency-weighted word vectors.
pub fn sample_minibatch<R: Rng>(es: &EmbeddingSet, m: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(Error::InvalidArgument("minibatch size must be >= 1".into()));
    }
    Ok(es.gather(&sample_indices(es.freq(), m, rng)?))
}

#[derive(Debug, Clone)]
pub struct TrainerState {
    pub dict: Dictionary,
    /// Accumulated `‖A_j,:‖²` per factor; never decreases.
    pub grad_sq_accum: DVector<f64>,
    pub step: u64,
    pub rng: ChaCha8Rng,
    /// Last step at which each factor had a non-zero coefficient.
    pub last_active: Vec<u64>,
}

impl TrainerState {
    pub fn new(dict: Dictionary, seed: u64) -> Self {
        let d = dict.factors();
        let step = dict.steps;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        TrainerState { dict, grad_sq_accum: DVector::zeros(d), step, rng, last_active: vec![step; d] }
    }

    /// Resumes from a checkpoint. The sampling stream restarts at a position
    /// derived from `(seed, step)`.
    pub fn from_checkpoint(ckpt: Checkpoint, seed: u64) -> Self {
        let mut state = TrainerState::new(ckpt.dict, seed);
        state.rng.set_word_pos(state.step as u128 * 1024);
        state.grad_sq_accum = ckpt.accumulator;
        state
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { dict: self.dict.clone(), accumulator: self.grad_sq_accum.clone() }
    }

    /// One preconditioned, projected gradient step on the dictionary given the
    /// batch and its codes.
    pub fn dictionary_step(&mut self, batch: &DMatrix<f64>, codes: &DMatrix<f64>, cfg: &TrainConfig) -> Result<()> {
        let (n, d) = (self.dict.dim(), self.dict.factors());
        if batch.nrows() != n || codes.nrows() != d || batch.ncols() != codes.ncols() {
            return Err(Error::Dimension(format!(
                "batch {:?} and codes {:?} for a {n}×{d} dictionary",
                batch.shape(),
                codes.shape()
            )));
        }
        let residual = self.dict.atoms() * codes - batch;
        let grad = &residual * codes.transpose();
        if let Some(pos) = grad.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite dictionary gradient at step {} (row {}, factor {}); residual max {:e}",
                self.step,
                pos % n,
                pos / n,
                residual.amax()
            )));
        }
        self.step += 1;
        let atoms = self.dict.atoms_mut_unchecked();
        for j in 0..d {
            let hess = codes.row(j).norm_squared();
            if hess > 0.0 {
                self.last_active[j] = self.step;
            }
            self.grad_sq_accum[j] += hess;
            let scale = cfg.learning_rate / (self.grad_sq_accum[j] + cfg.hessian_epsilon);
            let mut col = atoms.column_mut(j);
            col.axpy(-scale, &grad.column(j), 1.0);
            let norm = col.norm();
            if norm > 1.0 {
                col /= norm;
            }
        }
        self.dict.steps = self.step;
        Ok(())
    }

    /// Re-initializes factors idle for `patience` steps from the worst-reconstructed
    /// batch residuals, one distinct residual per factor. Returns the revived factors.
    pub fn revive_dead_factors(&mut self, batch: &DMatrix<f64>, codes: &DMatrix<f64>, patience: u64) -> Vec<usize> {
        if patience == 0 {
            return Vec::new();
        }
        let dead: Vec<usize> =
            (0..self.dict.factors()).filter(|&j| self.step - self.last_active[j] >= patience).collect();
        if dead.is_empty() {
            return dead;
        }
        let residual = batch - self.dict.atoms() * codes;
        let mut order: Vec<(usize, f64)> = residual.column_iter().map(|c| c.norm()).enumerate().collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut revived = Vec::new();
        let step = self.step;
        let atoms = self.dict.atoms_mut_unchecked();
        for (&j, &(c, norm)) in dead.iter().zip(order.iter()) {
            if norm <= 0.0 {
                break;
            }
            atoms.set_column(j, &(residual.column(c) / norm));
            self.last_active[j] = step;
            revived.push(j);
        }
        revived
    }
}

/// Probe-batch objective at one point of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub step: u64,
    /// Mean per-word objective on the fixed probe batch.
    pub objective: f64,
    pub max_column_norm: f64,
    /// Minimum matched cosine against a planted dictionary, when one is known.
    pub recovery: Option<f64>,
}

pub struct Trainer<'a> {
    es: &'a EmbeddingSet,
    cfg: TrainConfig,
    state: TrainerState,
    probe: DMatrix<f64>,
    pub revived: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(es: &'a EmbeddingSet, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut dict = init_dictionary(es.dim(), cfg.factors, cfg.seed)?;
        dict.lambda = cfg.lambda;
        dict.source_tag = es.source_tag().to_string();
        let state = TrainerState::new(dict, cfg.seed);
        Self::from_state(es, cfg, state)
    }

    pub fn from_state(es: &'a EmbeddingSet, cfg: TrainConfig, state: TrainerState) -> Result<Self> {
        cfg.validate()?;
        if es.dim() != state.dict.dim() {
            return Err(Error::Dimension(format!(
                "embeddings are {}-dimensional, dictionary is {}",
                es.dim(),
                state.dict.dim()
            )));
        }
        let mut probe_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        probe_rng.set_stream(2);
        let probe = sample_minibatch(es, cfg.batch_size, &mut probe_rng)?;
        Ok(Trainer { es, cfg, state, probe, revived: 0 })
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn into_state(self) -> TrainerState {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// sample → code → update. Returns the minibatch objective before the update.
    pub fn step(&mut self) -> Result<f64> {
        let batch = sample_minibatch(self.es, self.cfg.batch_size, &mut self.state.rng)?;
        let coded = SparseCoder::new(&self.state.dict).infer(&batch, self.cfg.fista_steps, self.cfg.fista_tol)?;
        self.state.dictionary_step(&batch, &coded.codes, &self.cfg)?;
        let revived = self.state.revive_dead_factors(&batch, &coded.codes, self.cfg.dead_factor_patience);
        self.revived += revived.len() as u64;
        Ok(coded.objectives.iter().sum::<f64>() / batch.ncols() as f64)
    }

    pub fn probe_objective(&self) -> Result<f64> {
        let out = SparseCoder::new(&self.state.dict).infer(&self.probe, self.cfg.fista_steps, self.cfg.fista_tol)?;
        Ok(out.objectives.iter().sum::<f64>() / self.probe.ncols() as f64)
    }

    pub fn probe_record(&self, truth: Option<&DMatrix<f64>>) -> Result<ProbeRecord> {
        Ok(ProbeRecord {
            step: self.state.step,
            objective: self.probe_objective()?,
            max_column_norm: self.state.dict.max_column_norm(),
            recovery: truth.map(|t| recovery(t, self.state.dict.atoms()).min_cosine),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Probe and checkpoint every this many steps; 0 only probes at start and end.
    pub checkpoint_every: u64,
    pub out_dir: Option<PathBuf>,
    /// Planted dictionary to score recovery against.
    pub truth: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainerState,
    pub log: Vec<ProbeRecord>,
    pub revived: u64,
}

pub const FINAL_CHECKPOINT: &str = "dictionary.wfdl";
pub const PROBE_LOG: &str = "probe.csv";

/// Runs `cfg.total_steps` steps from a fresh dictionary; see [`train_from`].
pub fn train(es: &EmbeddingSet, cfg: &TrainConfig, checkpoint_every: u64, out_dir: Option<&Path>) -> Result<Dictionary> {
    let opts = TrainOptions { checkpoint_every, out_dir: out_dir.map(Path::to_path_buf), truth: None };
    Ok(train_with(es, cfg, &opts)?.state.dict)
}

pub fn train_with(es: &EmbeddingSet, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    train_from(Trainer::new(es, cfg.clone())?, opts)
}

/// Drives a trainer to `total_steps`, writing `checkpoint-<step>.wfdl` files,
/// the final `dictionary.wfdl` and `probe.csv` into `out_dir` when given.
pub fn train_from(mut trainer: Trainer<'_>, opts: &TrainOptions) -> Result<TrainOutcome> {
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let truth = opts.truth.as_ref();
    let total = trainer.cfg.total_steps;
    let mut log = vec![trainer.probe_record(truth)?];
    while trainer.state.step < total {
        trainer.step()?;
        let step = trainer.state.step;
        if opts.checkpoint_every > 0 && step % opts.checkpoint_every == 0 && step < total {
            log.push(trainer.probe_record(truth)?);
            if let Some(dir) = &opts.out_dir {
                trainer.state.checkpoint().save(dir.join(format!("checkpoint-{step:08}.wfdl")))?;
            }
        }
    }
    if log.last().map(|r| r.step) != Some(trainer.state.step) {
        log.push(trainer.probe_record(truth)?);
    }
    if let Some(dir) = &opts.out_dir {
        trainer.state.checkpoint().save(dir.join(FINAL_CHECKPOINT))?;
        write_probe_log(&log, dir.join(PROBE_LOG))?;
    }
    let revived = trainer.revived;
    Ok(TrainOutcome { state: trainer.into_state(), log, revived })
}

pub fn write_probe_log(log: &[ProbeRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for rec in log {
        w.serialize(rec).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// How well a learned dictionary recovers a planted one.
#[derive(Debug, Clone)]
pub struct Recovery {
    /// `(true factor, learned factor, cosine)` under the best one-to-one matching.
    pub matches: Vec<(usize, usize, f64)>,
    pub min_cosine: f64,
    pub mean_cosine: f64,
}

/// Matches every planted factor to a distinct learned factor maximizing total
/// cosine similarity.
pub fn recovery(truth: &DMatrix<f64>, learned: &DMatrix<f64>) -> Recovery {
    let cos = |a: nalgebra::DVectorView<f64>, b: nalgebra::DVectorView<f64>| {
        let denom = a.norm() * b.norm();
        if denom > 0.0 {
            a.dot(&b) / denom
        } else {
            0.0
        }
    };
    let weights: Vec<Vec<f64>> = truth
        .column_iter()
        .map(|t| learned.column_iter().map(|l| cos(t.as_view(), l.as_view())).collect())
        .collect();
    if weights.is_empty() || weights.len() > learned.ncols() {
        return Recovery { matches: Vec::new(), min_cosine: 0.0, mean_cosine: 0.0 };
    }
    let assign = max_weight_assignment(&weights);
    let matches: Vec<(usize, usize, f64)> =
        assign.iter().enumerate().map(|(t, &l)| (t, l, weights[t][l])).collect();
    let min_cosine = matches.iter().map(|m| m.2).fold(f64::INFINITY, f64::min);
    let mean_cosine = matches.iter().map(|m| m.2).sum::<f64>() / matches.len() as f64;
    Recovery { matches, min_cosine, mean_cosine }
}

/// Dictionary plus preconditioner state, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dict: Dictionary,
    pub accumulator: DVector<f64>,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"WFDL";
const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    /// Layout (little-endian): magic, version, n, d, lambda (f32), step (u64),
    /// Φ row-major as f32, accumulator as d f32.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let phi = self.dict.atoms();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(phi.nrows() as u32).to_le_bytes())?;
        w.write_all(&(phi.ncols() as u32).to_le_bytes())?;
        w.write_all(&(self.dict.lambda as f32).to_le_bytes())?;
        w.write_all(&self.dict.steps.to_le_bytes())?;
        for r in 0..phi.nrows() {
            for c in 0..phi.ncols() {
                w.write_all(&(phi[(r, c)] as f32).to_le_bytes())?;
            }
        }
        for v in self.accumulator.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |msg: &str| Error::format("checkpoint", msg);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("missing header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("wrong magic"));
        }
        let version = read_u32(&mut r).map_err(|_| bad("missing version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n = read_u32(&mut r).map_err(|_| bad("missing n"))? as usize;
        let d = read_u32(&mut r).map_err(|_| bad("missing d"))? as usize;
        let lambda = f32::from_bits(read_u32(&mut r).map_err(|_| bad("missing lambda"))?) as f64;
        let mut step = [0u8; 8];
        r.read_exact(&mut step).map_err(|_| bad("missing step"))?;
        let step = u64::from_le_bytes(step);
        let mut f32s = |count: usize, what: &str| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; 4 * count];
            r.read_exact(&mut buf).map_err(|_| bad(&format!("truncated {what}")))?;
            Ok(buf.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect())
        };
        let atoms = DMatrix::from_row_slice(n, d, &f32s(n * d, "dictionary")?);
        let accumulator = DVector::from_vec(f32s(d, "accumulator")?);
        let mut dict = Dictionary::new(atoms, lambda)?;
        dict.steps = step;
        Ok(Checkpoint { dict, accumulator })
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::Vocabulary;

    fn toy_set(freq: Vec<f64>) -> EmbeddingSet {
        let n = freq.len();
        let words = (0..n).map(|i| format!("w{i}")).collect();
        let vectors = DMatrix::from_fn(3, n, |r, c| (r + 3 * c) as f32);
        EmbeddingSet::new(Vocabulary::new(words).unwrap(), vectors, "toy").unwrap().with_raw_weights(freq).unwrap()
    }

    #[test]
    fn init_is_unit_norm_and_seeded() {
        let a = init_dictionary(3, 2, 11).unwrap();
        for c in a.atoms().column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-9);
        }
        assert_eq!(a, init_dictionary(3, 2, 11).unwrap());
        assert_ne!(a.atoms(), init_dictionary(3, 2, 12).unwrap().atoms());
        assert!(init_dictionary(0, 2, 1).is_err());
    }

    #[test]
    fn point_mass_sampling() {
        let es = toy_set(vec![1.0, 0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = sample_minibatch(&es, 20, &mut rng).unwrap();
        for c in batch.column_iter() {
            assert_eq!(c.as_slice(), es.vector(0).as_slice());
        }
    }

    fn proportions(freq: Vec<f64>, draws: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let idx = sample_indices(&freq, draws, &mut rng).unwrap();
        let mut counts = vec![0usize; freq.len()];
        for i in idx {
            counts[i] += 1;
        }
        counts.iter().map(|&c| c as f64 / draws as f64).collect()
    }

    #[test]
    fn sampling_follows_frequencies() {
        for p in proportions(vec![0.25; 4], 1_000_000) {
            assert!((p - 0.25).abs() < 0.01, "{p}");
        }
        let p = proportions(vec![2.0 / 3.0, 1.0 / 3.0], 300_000);
        assert!((p[0] - 2.0 / 3.0).abs() < 0.01 && (p[1] - 1.0 / 3.0).abs() < 0.01, "{p:?}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let es = toy_set(vec![0.1, 0.2, 0.3, 0.4]);
        let a = sample_minibatch(&es, 30, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_minibatch(&es, 30, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    fn cfg() -> TrainConfig {
        TrainConfig { factors: 4, batch_size: 8, fista_steps: 50, total_steps: 10, ..TrainConfig::default() }
    }

    #[test]
    fn zero_codes_leave_dictionary_alone() {
        let dict = init_dictionary(3, 4, 1).unwrap();
        let mut state = TrainerState::new(dict.clone(), 1);
        let batch = DMatrix::from_fn(3, 5, |r, c| (r * c) as f64);
        state.dictionary_step(&batch, &DMatrix::zeros(4, 5), &cfg()).unwrap();
        assert_eq!(state.dict.atoms(), dict.atoms());
        assert!(state.grad_sq_accum.iter().all(|&h| h == 0.0));
        assert_eq!(state.step, 1);
    }

    #[test]
    fn scalar_step_reduces_error() {
        // one factor φ = e1 scaled to 0.5, x = 2φ, α = 1: residual ‖φ − 2φ‖² shrinks
        let phi = DMatrix::from_column_slice(2, 1, &[0.5, 0.0]);
        let mut state = TrainerState::new(Dictionary::new(phi.clone(), 0.0).unwrap(), 0);
        let x = &phi * 2.0;
        let a = DMatrix::from_element(1, 1, 1.0);
        let before = (&phi * &a - &x).norm_squared();
        let cfg = TrainConfig { learning_rate: 0.1, ..cfg() };
        state.dictionary_step(&x, &a, &cfg).unwrap();
        let after = (state.dict.atoms() * &a - &x).norm_squared();
        assert!(after < before, "{after} >= {before}");
        assert_eq!(state.grad_sq_accum[0], 1.0);
    }

    #[test]
    fn step_projects_into_unit_ball() {
        let dict = init_dictionary(3, 4, 2).unwrap();
        let mut state = TrainerState::new(dict, 2);
        let batch = DMatrix::from_fn(3, 6, |r, c| 10.0 * ((r + c) as f64).sin());
        let codes = DMatrix::from_fn(4, 6, |r, c| ((r * 7 + c) % 3) as f64);
        state.dictionary_step(&batch, &codes, &cfg()).unwrap();
        assert!(state.dict.max_column_norm() <= 1.0 + 1e-6);
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let mut state = TrainerState::new(init_dictionary(3, 2, 0).unwrap(), 0);
        let mut batch = DMatrix::zeros(3, 1);
        batch[(0, 0)] = f64::INFINITY;
        let codes = DMatrix::from_element(2, 1, 1.0);
        assert!(matches!(state.dictionary_step(&batch, &codes, &cfg()), Err(Error::Numeric(_))));
    }

    #[test]
    fn zero_steps_returns_initial_dictionary() {
        let es = toy_set(vec![0.25; 4]);
        let cfg = TrainConfig { total_steps: 0, ..cfg() };
        let dict = train(&es, &cfg, 0, None).unwrap();
        let mut init = init_dictionary(3, 4, cfg.seed).unwrap();
        init.lambda = cfg.lambda;
        assert_eq!(dict.atoms(), init.atoms());
        assert_eq!(dict.steps, 0);
    }

    #[test]
    fn training_is_reproducible_and_keeps_invariants() {
        let es = toy_set(vec![0.1, 0.2, 0.3, 0.4]);
        let run = || train_with(&es, &cfg(), &TrainOptions { checkpoint_every: 2, ..Default::default() }).unwrap();
        let a = run();
        let b = run();
        assert_eq!(a.state.dict, b.state.dict);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 6);
        assert!(a.log.iter().all(|r| r.max_column_norm <= 1.0 + 1e-6));
    }

    #[test]
    fn accumulator_never_decreases() {
        let es = toy_set(vec![0.1, 0.2, 0.3, 0.4]);
        let mut trainer = Trainer::new(&es, cfg()).unwrap();
        let mut prev = trainer.state().grad_sq_accum.clone();
        for _ in 0..10 {
            trainer.step().unwrap();
            let cur = &trainer.state().grad_sq_accum;
            assert!(cur.iter().zip(prev.iter()).all(|(c, p)| c >= p));
            prev = cur.clone();
        }
    }

    #[test]
    fn dead_factors_are_revived() {
        let dict = init_dictionary(3, 2, 4).unwrap();
        let mut state = TrainerState::new(dict, 4);
        let batch = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 3.0, 0.0]);
        let codes = DMatrix::zeros(2, 2);
        state.step = 10;
        let revived = state.revive_dead_factors(&batch, &codes, 10);
        assert_eq!(revived, vec![0, 1]);
        // the largest residual (column 1) goes to the first dead factor
        assert_eq!(state.dict.atom(0).as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(state.dict.atom(1).as_slice(), &[1.0, 0.0, 0.0]);
        assert!(state.revive_dead_factors(&batch, &codes, 10).is_empty());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut state = TrainerState::new(init_dictionary(3, 4, 6).unwrap(), 6);
        state.grad_sq_accum = DVector::from_vec(vec![0.5, 1.25, 0.0, 3.0]);
        state.dict.steps = 42;
        let mut bytes = Vec::new();
        state.checkpoint().write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"WFDL");
        assert_eq!(bytes.len(), 4 + 4 * 4 + 8 + 4 * 12 + 4 * 4);
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.dict.steps, 42);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn recovery_of_permuted_copy_is_perfect() {
        let truth = init_dictionary(5, 4, 8).unwrap();
        let perm = [2, 0, 3, 1];
        let mut learned = DMatrix::zeros(5, 6);
        for (t, &p) in perm.iter().enumerate() {
            learned.set_column(p, &(truth.atom(t) * 0.5));
        }
        learned.set_column(4, &init_dictionary(5, 1, 99).unwrap().atom(0));
        let rec = recovery(truth.atoms(), &learned);
        assert!((rec.min_cosine - 1.0).abs() < 1e-12);
        for (t, l, _) in rec.matches {
            assert_eq!(perm[t], l);
        }
    }
}
