//! Planted-structure generators. Each builds data from known factors and codes,
//! so the generator itself is the ground truth for recovery, grouping and
//! analogy experiments.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::analogy::{AnalogyTask, Question};
use crate::embeddings::{EmbeddingSet, Vocabulary};
use crate::error::Result;
use crate::groups::FactorGrouping;
use crate::sparse_code::{Dictionary, SparseCodes};

/// Separate stream so planted data never coincides with a dictionary initialized from the same seed.
fn generator_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    rng
}

fn unit_gaussian_columns(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut c in m.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
    m
}

fn words(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

fn embedding_from(words: Vec<String>, x: &DMatrix<f64>, tag: &str) -> Result<EmbeddingSet> {
    let vectors = x.map(|v| v as f32);
    EmbeddingSet::new(Vocabulary::new(words)?, vectors, tag)
}

/// Words generated as `X = Φ* A*` with a random unit-norm dictionary.
#[derive(Debug, Clone)]
pub struct PlantedDictionary {
    pub embeddings: EmbeddingSet,
    pub truth: DMatrix<f64>,
    pub codes: SparseCodes,
}

/// `words` vectors in ℝⁿ, each a combination of `sparsity` distinct factors out
/// of `factors`, with coefficients uniform in `coef_range`.
pub fn planted_dictionary(
    n: usize,
    factors: usize,
    n_words: usize,
    sparsity: usize,
    coef_range: (f64, f64),
    seed: u64,
) -> Result<PlantedDictionary> {
    let mut rng = generator_rng(seed);
    let truth = unit_gaussian_columns(n, factors, &mut rng);
    let mut pool: Vec<u32> = (0..factors as u32).collect();
    let mut columns = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        pool.shuffle(&mut rng);
        let mut col: Vec<(u32, f32)> = pool[..sparsity]
            .iter()
            .map(|&j| (j, rng.random_range(coef_range.0..coef_range.1) as f32))
            .collect();
        col.sort_by_key(|e| e.0);
        columns.push(col);
    }
    let codes = SparseCodes::new(factors, columns)?;
    let x = &truth * codes.densify();
    let embeddings = embedding_from(words("w", n_words), &x, "planted-dictionary")?;
    Ok(PlantedDictionary { embeddings, truth, codes })
}

/// Codes whose factors co-activate in disjoint blocks.
#[derive(Debug, Clone)]
pub struct PlantedBlocks {
    pub codes: SparseCodes,
    pub freq: Vec<f64>,
    /// Block id of every factor.
    pub blocks: Vec<usize>,
}

/// Each word picks one block and activates between `min_active` and the whole
/// block with positive coefficients; frequencies are random.
pub fn planted_blocks(blocks: usize, block_size: usize, n_words: usize, min_active: usize, seed: u64) -> Result<PlantedBlocks> {
    let mut rng = generator_rng(seed);
    let mut columns = Vec::with_capacity(n_words);
    let mut members: Vec<u32> = Vec::new();
    for i in 0..n_words {
        let b = i % blocks;
        members.clear();
        members.extend((0..block_size as u32).map(|k| (b * block_size) as u32 + k));
        members.shuffle(&mut rng);
        let active = rng.random_range(min_active..=block_size);
        let mut col: Vec<(u32, f32)> =
            members[..active].iter().map(|&j| (j, rng.random_range(0.2..2.0f32))).collect();
        col.sort_by_key(|e| e.0);
        columns.push(col);
    }
    let raw: Vec<f64> = (0..n_words).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let freq = raw.iter().map(|w| w / total).collect();
    let factors = blocks * block_size;
    let codes = SparseCodes::new(factors, columns)?;
    let blocks = (0..factors).map(|j| j / block_size).collect();
    Ok(PlantedBlocks { codes, freq, blocks })
}

/// A benchmark with a known answer for every question, built on the standard
/// basis so each coordinate is one factor and the planted codes are exact.
#[derive(Debug, Clone)]
pub struct PlantedAnalogy {
    pub embeddings: EmbeddingSet,
    pub codes: SparseCodes,
    pub grouping: FactorGrouping,
    pub tasks: Vec<AnalogyTask>,
    /// Task name → direction group id.
    pub bindings: BTreeMap<String, usize>,
    /// `(task index, question index)` of every question with a near-miss distractor.
    pub poisoned: Vec<(usize, usize)>,
}

/// `tasks` tasks of `per_task` questions; `poisoned` questions (spread round-robin
/// over tasks) get a distractor that beats the answer on cosine but lacks the
/// task's direction factors.
///
/// For task `t` the "direction" side carries factors `g_t, g'_t` (one group) and
/// the other side carries `m_t`. A question `(A, B, C, D)` is
///
/// ```text
/// A = 3 e_a + e_m      B = 3 e_a + (0.6 e_g + 0.8 e_g')
/// C = 3 e_c + e_m      D = 3 e_c + (0.6 e_g + 0.8 e_g')  [+ 1.5 e_noise if poisoned]
/// distractor E = 3 e_c
/// ```
///
/// so `B − A + C = 3 e_c + (0.6 e_g + 0.8 e_g')`. Unpoisoned answers match it
/// exactly; poisoned answers have cosine 10/√122.5 ≈ 0.904 while the distractor
/// has 9/√90 ≈ 0.949.
pub fn planted_analogy(tasks: usize, per_task: usize, poisoned: usize, seed: u64) -> Result<PlantedAnalogy> {
    let mut rng = generator_rng(seed);
    let total = tasks * per_task;
    assert!(poisoned <= total, "more poisoned questions than questions");
    // factor layout: per task g, g', m; then 2 content factors per question; then noise
    let shared = 3 * tasks;
    let dim = shared + 2 * total + poisoned;
    let g = |t: usize| 3 * t;
    let g2 = |t: usize| 3 * t + 1;
    let m = |t: usize| 3 * t + 2;

    let mut poisoned_set = Vec::new();
    for k in 0..poisoned {
        poisoned_set.push((k % tasks, k / tasks));
    }

    let mut words_out: Vec<String> = Vec::new();
    let mut cols: Vec<Vec<(u32, f32)>> = Vec::new();
    let mut push = |name: String, mut code: Vec<(u32, f32)>| {
        code.sort_by_key(|e| e.0);
        words_out.push(name);
        cols.push(code);
    };
    let mut task_list = Vec::new();
    let mut noise_next = shared + 2 * total;
    for t in 0..tasks {
        let mut questions = Vec::new();
        for q in 0..per_task {
            let qi = t * per_task + q;
            let (ca, cc) = ((shared + 2 * qi) as u32, (shared + 2 * qi + 1) as u32);
            let tag = format!("t{t}q{q}");
            let dir = [(g(t) as u32, 0.6f32), (g2(t) as u32, 0.8f32)];
            let a = format!("{tag}_a");
            let b = format!("{tag}_b");
            let c = format!("{tag}_c");
            let d = format!("{tag}_d");
            push(a.clone(), vec![(ca, 3.0), (m(t) as u32, 1.0)]);
            push(b.clone(), vec![(ca, 3.0), dir[0], dir[1]]);
            push(c.clone(), vec![(cc, 3.0), (m(t) as u32, 1.0)]);
            let mut dcode = vec![(cc, 3.0), dir[0], dir[1]];
            if poisoned_set.contains(&(t, q)) {
                dcode.push((noise_next as u32, 1.5));
                noise_next += 1;
                push(format!("{tag}_e"), vec![(cc, 3.0)]);
            }
            push(d.clone(), dcode);
            questions.push(Question::new(a, b, c, d));
        }
        task_list.push(AnalogyTask { name: format!("task{t}"), questions, direction_group: Some(t) });
    }

    // shuffle vocabulary order so nothing depends on adjacency
    let mut order: Vec<usize> = (0..words_out.len()).collect();
    order.shuffle(&mut rng);
    let words_sorted: Vec<String> = order.iter().map(|&i| words_out[i].clone()).collect();
    let cols_sorted: Vec<Vec<(u32, f32)>> = order.iter().map(|&i| cols[i].clone()).collect();
    let codes = SparseCodes::new(dim, cols_sorted)?;
    let x = codes.densify();
    let embeddings = embedding_from(words_sorted, &x, "planted-analogy")?;

    // groups: direction pair of task t → t, m_t → tasks + t, everything else → 2·tasks
    let assignment = (0..dim)
        .map(|j| {
            if j < shared {
                let t = j / 3;
                if j % 3 == 2 {
                    tasks + t
                } else {
                    t
                }
            } else {
                2 * tasks
            }
        })
        .collect();
    let mut grouping = FactorGrouping::new(assignment, 2 * tasks + 1)?;
    for t in 0..tasks {
        grouping.labels.insert(t, format!("direction{t}"));
        grouping.labels.insert(tasks + t, format!("other{t}"));
    }
    let bindings = task_list.iter().enumerate().map(|(t, task)| (task.name.clone(), t)).collect();
    let poisoned = poisoned_set.into_iter().collect();
    Ok(PlantedAnalogy { embeddings, codes, grouping, tasks: task_list, bindings, poisoned })
}

/// Base/derived word pairs with `derived = base + coef·φ_g` exactly.
#[derive(Debug, Clone)]
pub struct PlantedPairs {
    pub embeddings: EmbeddingSet,
    pub dictionary: Dictionary,
    pub codes: SparseCodes,
    /// The factor added to every base word.
    pub factor: usize,
    pub pairs: Vec<(String, String)>,
}

/// `pairs` base words (3-sparse codes avoiding factor 0) plus their derived
/// versions with `coef` added on factor 0, and `extra` unrelated words.
pub fn planted_pairs(n: usize, factors: usize, pairs: usize, extra: usize, coef: f64, seed: u64) -> Result<PlantedPairs> {
    let mut rng = generator_rng(seed);
    let phi = unit_gaussian_columns(n, factors, &mut rng);
    let mut pool: Vec<u32> = (1..factors as u32).collect();
    let mut names = Vec::new();
    let mut columns = Vec::new();
    let mut out_pairs = Vec::new();
    let mut random_code = |rng: &mut ChaCha8Rng| {
        pool.shuffle(rng);
        let mut col: Vec<(u32, f32)> = pool[..3].iter().map(|&j| (j, rng.random_range(1.0..3.0f32))).collect();
        col.sort_by_key(|e| e.0);
        col
    };
    for p in 0..pairs {
        let base = random_code(&mut rng);
        let mut derived = base.clone();
        derived.insert(0, (0, coef as f32));
        names.push(format!("base{p}"));
        columns.push(base);
        names.push(format!("derived{p}"));
        columns.push(derived);
        out_pairs.push((format!("base{p}"), format!("derived{p}")));
    }
    for e in 0..extra {
        names.push(format!("other{e}"));
        columns.push(random_code(&mut rng));
    }
    let codes = SparseCodes::new(factors, columns)?;
    // x = Φ a computed per word in f64 then stored as f32
    let x = DMatrix::from_columns(
        &(0..codes.len()).map(|i| &phi * codes.dense_column(i)).collect::<Vec<DVector<f64>>>(),
    );
    let embeddings = embedding_from(names, &x, "planted-pairs")?;
    let dictionary = Dictionary::new(phi, 0.0)?;
    Ok(PlantedPairs { embeddings, dictionary, codes, factor: 0, pairs: out_pairs })
}

/// Four words with `x_D = x_B − x_A + x_C` exactly, as a one-question task.
pub fn toy_analogy() -> Result<(EmbeddingSet, Vec<AnalogyTask>)> {
    let x = DMatrix::from_column_slice(3, 4, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
    let names = ["man", "king", "woman", "queen"].map(String::from).to_vec();
    let es = embedding_from(names, &x, "toy")?;
    let task = AnalogyTask {
        name: "toy".into(),
        questions: vec![Question::new("man", "king", "woman", "queen")],
        direction_group: None,
    };
    Ok((es, vec![task]))
}
