//! Word-analogy benchmark: "A is to B as C is to D".
//!
//! The arithmetic solver answers with the vocabulary word closest (cosine) to
//! `x_B − x_A + x_C`, never one of A, B, C. The grouped solver walks the same
//! ranking and takes the first candidate whose activation on the task's factor
//! group exceeds that of both A and C, falling back to the arithmetic answer
//! when nothing in the candidate horizon qualifies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::groups::{group_activation, read_tab_pairs, FactorGrouping};
use crate::neighbors::{Metric, Neighbor, NeighborIndex};
use crate::sparse_code::{Dictionary, SparseCodes};

/// Candidates inspected by the grouped solver before falling back.
pub const DEFAULT_HORIZON: usize = 100;
/// Tasks `0..SEMANTIC_TASKS` of the standard file are semantic, the rest syntactic.
pub const SEMANTIC_TASKS: usize = 5;
pub const STANDARD_TASKS: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub a: String,
    pub b: String,
    pub c: String,
    pub d: String,
}

impl Question {
    pub fn new(a: impl Into<String>, b: impl Into<String>, c: impl Into<String>, d: impl Into<String>) -> Self {
        Question { a: a.into(), b: b.into(), c: c.into(), d: d.into() }
    }

    fn tokens(&self) -> [&str; 4] {
        [&self.a, &self.b, &self.c, &self.d]
    }

    /// Vocabulary indices of A, B, C, D, or the out-of-vocabulary tokens.
    pub fn resolve(&self, es: &EmbeddingSet) -> std::result::Result<[usize; 4], Vec<String>> {
        let idx = self.tokens().map(|t| es.vocab().get(t));
        let missing: Vec<String> =
            self.tokens().iter().zip(idx).filter(|(_, i)| i.is_none()).map(|(t, _)| t.to_string()).collect();
        if missing.is_empty() {
            Ok(idx.map(Option::unwrap))
        } else {
            Err(missing)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogyTask {
    pub name: String,
    pub questions: Vec<Question>,
    /// Group whose activation separates the B/D side from the A/C side.
    pub direction_group: Option<usize>,
}

/// Reads the `: category` / `A B C D` question format. Questions mentioning
/// unknown words are kept; evaluation skips them.
pub fn load_questions(path: impl AsRef<Path>, lowercase: bool) -> Result<Vec<AnalogyTask>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_questions(BufReader::new(file), path, lowercase)
}

pub fn parse_questions<R: BufRead>(reader: R, path: &Path, lowercase: bool) -> Result<Vec<AnalogyTask>> {
    let mut tasks: Vec<AnalogyTask> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix(':') {
            tasks.push(AnalogyTask { name: name.trim().to_string(), questions: Vec::new(), direction_group: None });
            continue;
        }
        let fields: Vec<String> = line
            .split_whitespace()
            .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
            .collect();
        let [a, b, c, d] = <[String; 4]>::try_from(fields)
            .map_err(|f| Error::parse(path, i + 1, format!("expected 4 tokens, found {}: `{line}`", f.len())))?;
        let q = Question { a, b, c, d };
        if q.tokens().iter().collect::<BTreeSet<_>>().len() < 4 {
            return Err(Error::parse(path, i + 1, format!("repeated token in `{line}`")));
        }
        let Some(task) = tasks.last_mut() else {
            return Err(Error::parse(path, i + 1, "question before any `: category` header"));
        };
        task.questions.push(q);
    }
    Ok(tasks)
}

pub fn write_questions(tasks: &[AnalogyTask], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for t in tasks {
        let _ = writeln!(out, ": {}", t.name);
        for q in &t.questions {
            let _ = writeln!(out, "{} {} {} {}", q.a, q.b, q.c, q.d);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads `task_name TAB group_id` bindings.
pub fn read_bindings(path: impl AsRef<Path>) -> Result<BTreeMap<String, usize>> {
    let path = path.as_ref();
    let mut out = BTreeMap::new();
    for (line, task, group) in read_tab_pairs(path)? {
        let group: usize = group.trim().parse().map_err(|_| Error::parse(path, line, format!("bad group id `{group}`")))?;
        out.insert(task, group);
    }
    Ok(out)
}

pub fn write_bindings(bindings: &BTreeMap<String, usize>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text: String = bindings.iter().map(|(t, g)| format!("{t}\t{g}\n")).collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Shared search state for many questions over one embedding set.
pub struct AnalogySolver<'a> {
    index: NeighborIndex<'a>,
}

impl<'a> AnalogySolver<'a> {
    pub fn new(es: &'a EmbeddingSet) -> Self {
        AnalogySolver { index: NeighborIndex::new(es) }
    }

    fn target(&self, [a, b, c]: [usize; 3]) -> nalgebra::DVector<f64> {
        let es = self.index.embeddings();
        es.vector(b) - es.vector(a) + es.vector(c)
    }

    /// Top `k` candidates for `x_B − x_A + x_C`, excluding A, B, C.
    pub fn candidates(&self, abc: [usize; 3], k: usize) -> Vec<Neighbor> {
        self.index.top_k(&self.target(abc), k, &abc, Metric::Cosine)
    }

    pub fn solve_arithmetic(&self, abc: [usize; 3]) -> usize {
        self.candidates(abc, 1)[0].index
    }

    pub fn solve_with_group(
        &self,
        codes: &SparseCodes,
        grouping: &FactorGrouping,
        abc: [usize; 3],
        group: usize,
        horizon: usize,
    ) -> Result<usize> {
        let act = |w: usize| group_activation(codes, grouping, w, group);
        let bar = act(abc[0])?.max(act(abc[2])?);
        let cands = self.candidates(abc, horizon.max(1));
        for cand in &cands {
            if act(cand.index)? > bar {
                return Ok(cand.index);
            }
        }
        Ok(cands[0].index)
    }
}

fn resolve_query(es: &EmbeddingSet, q: &Question) -> Result<[usize; 3]> {
    let idx = [&q.a, &q.b, &q.c].map(|t| es.vocab().get(t));
    let missing: Vec<String> =
        [&q.a, &q.b, &q.c].iter().zip(idx).filter(|(_, i)| i.is_none()).map(|(t, _)| t.to_string()).collect();
    if !missing.is_empty() {
        return Err(Error::UnknownTokens(missing));
    }
    if es.len() < 4 {
        return Err(Error::InvalidArgument("vocabulary needs at least 4 words".into()));
    }
    Ok(idx.map(Option::unwrap))
}

/// Arithmetic answer for one question (D is not needed).
pub fn solve_arithmetic(es: &EmbeddingSet, q: &Question) -> Result<String> {
    let abc = resolve_query(es, q)?;
    Ok(es.word(AnalogySolver::new(es).solve_arithmetic(abc)).to_string())
}

/// Grouped answer for one question with the default candidate horizon.
pub fn solve_with_group(
    es: &EmbeddingSet,
    codes: &SparseCodes,
    grouping: &FactorGrouping,
    q: &Question,
    group: usize,
) -> Result<String> {
    let abc = resolve_query(es, q)?;
    let w = AnalogySolver::new(es).solve_with_group(codes, grouping, abc, group, DEFAULT_HORIZON)?;
    Ok(es.word(w).to_string())
}

pub enum EvalMode<'a> {
    Arithmetic,
    /// Task name → group. Tasks missing here use their `direction_group`, if any,
    /// else plain arithmetic.
    Grouped {
        codes: &'a SparseCodes,
        grouping: &'a FactorGrouping,
        bindings: &'a BTreeMap<String, usize>,
        horizon: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub attempted: usize,
    /// `None` when nothing was attempted.
    pub accuracy: Option<f64>,
}

impl Tally {
    fn new(correct: usize, attempted: usize) -> Self {
        let accuracy = (attempted > 0).then(|| correct as f64 / attempted as f64);
        Tally { correct, attempted, accuracy }
    }

    fn merge<'t>(items: impl IntoIterator<Item = &'t TaskReport>) -> Self {
        let (c, a) = items.into_iter().fold((0, 0), |(c, a), t| (c + t.tally.correct, a + t.tally.attempted));
        Tally::new(c, a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub name: String,
    pub group: Option<usize>,
    pub tally: Tally,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub task: String,
    pub question: Question,
    pub predicted: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub split_note: String,
    pub tasks: Vec<TaskReport>,
    pub semantic: Tally,
    pub syntactic: Tally,
    pub total: Tally,
    pub skipped: usize,
    pub predictions: Vec<Prediction>,
}

/// Scores every question. Questions with any out-of-vocabulary token are skipped.
pub fn evaluate(es: &EmbeddingSet, tasks: &[AnalogyTask], mode: &EvalMode<'_>) -> Result<EvalReport> {
    let solver = AnalogySolver::new(es);
    let mut bound: Vec<Option<usize>> = Vec::with_capacity(tasks.len());
    for t in tasks {
        let g = match mode {
            EvalMode::Arithmetic => None,
            EvalMode::Grouped { grouping, bindings, .. } => {
                let g = bindings.get(&t.name).copied().or(t.direction_group);
                if let Some(g) = g.filter(|&g| g >= grouping.k_clusters) {
                    return Err(Error::InvalidArgument(format!(
                        "task `{}` is bound to group {g}, but there are {} groups",
                        t.name, grouping.k_clusters
                    )));
                }
                g
            }
        };
        bound.push(g);
    }

    let jobs: Vec<(usize, &Question)> =
        tasks.iter().enumerate().flat_map(|(ti, t)| t.questions.iter().map(move |q| (ti, q))).collect();
    let outcomes: Vec<Option<Prediction>> = jobs
        .par_iter()
        .map(|&(ti, q)| -> Result<Option<Prediction>> {
            let Ok([a, b, c, d]) = q.resolve(es) else {
                return Ok(None);
            };
            let abc = [a, b, c];
            let pred = match (mode, bound[ti]) {
                (EvalMode::Grouped { codes, grouping, horizon, .. }, Some(g)) => {
                    solver.solve_with_group(codes, grouping, abc, g, *horizon)?
                }
                _ => solver.solve_arithmetic(abc),
            };
            Ok(Some(Prediction {
                task: tasks[ti].name.clone(),
                question: q.clone(),
                predicted: es.word(pred).to_string(),
                correct: pred == d,
            }))
        })
        .collect::<Result<_>>()?;

    let mut reports: Vec<TaskReport> = tasks
        .iter()
        .zip(&bound)
        .map(|(t, &g)| TaskReport { name: t.name.clone(), group: g, tally: Tally::default(), skipped: 0 })
        .collect();
    let mut predictions = Vec::new();
    for (&(ti, _), out) in jobs.iter().zip(outcomes) {
        let r = &mut reports[ti];
        match out {
            None => r.skipped += 1,
            Some(p) => {
                r.tally.attempted += 1;
                r.tally.correct += p.correct as usize;
                predictions.push(p);
            }
        }
    }
    for r in &mut reports {
        r.tally = Tally::new(r.tally.correct, r.tally.attempted);
    }
    let semantic = Tally::merge(reports.iter().take(SEMANTIC_TASKS));
    let syntactic = Tally::merge(reports.iter().skip(SEMANTIC_TASKS).take(STANDARD_TASKS - SEMANTIC_TASKS));
    let total = Tally::merge(&reports);
    let skipped = reports.iter().map(|r| r.skipped).sum();
    Ok(EvalReport {
        mode: match mode {
            EvalMode::Arithmetic => "arithmetic".into(),
            EvalMode::Grouped { .. } => "grouped".into(),
        },
        split_note: format!(
            "semantic = tasks 0-{}, syntactic = tasks {}-{} (conventional split of the standard file)",
            SEMANTIC_TASKS - 1,
            SEMANTIC_TASKS,
            STANDARD_TASKS - 1
        ),
        tasks: reports,
        semantic,
        syntactic,
        total,
        skipped,
        predictions,
    })
}

fn pct(t: &Tally) -> String {
    t.accuracy.map_or_else(|| "n/a".to_string(), |a| format!("{:.2}", 100.0 * a))
}

impl EvalReport {
    /// Aligned text table: one row per task, then Sem / Syn / Total.
    pub fn to_table(&self) -> String {
        compare_table(&[self])
    }
}

/// Side-by-side accuracy table (percent) for several reports over the same tasks.
pub fn compare_table(reports: &[&EvalReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let name_w = first.tasks.iter().map(|t| t.name.len()).chain([5]).max().unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(out, "# {}", first.split_note);
    let _ = write!(out, "{:<name_w$}", "task");
    for r in reports {
        let _ = write!(out, "  {:>10}", r.mode);
    }
    out.push('\n');
    let mut row = |label: &str, tallies: Vec<&Tally>| {
        let _ = write!(out, "{label:<name_w$}");
        for t in tallies {
            let _ = write!(out, "  {:>10}", pct(t));
        }
        out.push('\n');
    };
    for (i, t) in first.tasks.iter().enumerate() {
        row(&t.name, reports.iter().map(|r| &r.tasks[i].tally).collect());
    }
    row("Sem", reports.iter().map(|r| &r.semantic).collect());
    row("Syn", reports.iter().map(|r| &r.syntactic).collect());
    row("Total", reports.iter().map(|r| &r.total).collect());
    out
}

/// Proposes (base, derived) word pairs for a factor: for each word active on the
/// factor (strongest first), subtract `coef·Φ_factor`, take the nearest other
/// word `b`, and keep `(b, w)` when `b`'s activation is under a quarter of `w`'s.
pub fn generate_pairs(
    es: &EmbeddingSet,
    dict: &Dictionary,
    codes: &SparseCodes,
    factor: usize,
    coef: f64,
    max_pairs: usize,
) -> Result<Vec<(String, String)>> {
    if factor >= dict.factors() || factor >= codes.factors() {
        return Err(Error::InvalidArgument(format!("factor {factor} >= {}", dict.factors())));
    }
    if es.dim() != dict.dim() || codes.len() != es.len() {
        return Err(Error::Dimension("embeddings, dictionary and codes disagree".into()));
    }
    let mut active: Vec<(usize, f64)> =
        (0..codes.len()).map(|w| (w, codes.get(w, factor))).filter(|&(_, a)| a > 0.0).collect();
    active.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));

    let index = NeighborIndex::new(es);
    let atom = dict.atom(factor);
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::new();
    for (w, act) in active {
        if pairs.len() >= max_pairs {
            break;
        }
        let query = es.vector(w) - &atom * coef;
        let Some(b) = index.nearest(&query, &[w], Metric::Cosine) else {
            continue;
        };
        if codes.get(b.index, factor) < 0.25 * act && seen.insert((b.index, w)) {
            pairs.push((es.word(b.index).to_string(), es.word(w).to_string()));
        }
    }
    Ok(pairs)
}

/// Every ordered combination of two distinct pairs as a question
/// `(base_i, derived_i, base_j, derived_j)`. Combinations that would repeat a
/// token are left out.
pub fn task_from_pairs(name: &str, pairs: &[(String, String)]) -> AnalogyTask {
    let mut questions = Vec::new();
    for (i, (a, b)) in pairs.iter().enumerate() {
        for (j, (c, d)) in pairs.iter().enumerate() {
            if i == j {
                continue;
            }
            let q = Question::new(a, b, c, d);
            if q.tokens().iter().collect::<BTreeSet<_>>().len() == 4 {
                questions.push(q);
            }
        }
    }
    AnalogyTask { name: name.to_string(), questions, direction_group: None }
}

/// Suggests the group whose `top` most activated words overlap most with the
/// task's B/D tokens. Returns `(group, overlap)`; ties go to the lower group.
/// A suggestion, not a binding: callers confirm before use.
pub fn suggest_binding(
    task: &AnalogyTask,
    es: &EmbeddingSet,
    codes: &SparseCodes,
    grouping: &FactorGrouping,
    top: usize,
) -> Result<Option<(usize, usize)>> {
    let targets: BTreeSet<usize> =
        task.questions.iter().flat_map(|q| [&q.b, &q.d]).filter_map(|t| es.vocab().get(t)).collect();
    if targets.is_empty() {
        return Ok(None);
    }
    let mut best: Option<(usize, usize)> = None;
    for g in 0..grouping.k_clusters {
        let mut acts: Vec<(usize, f64)> = (0..codes.len())
            .map(|w| group_activation(codes, grouping, w, g).map(|a| (w, a)))
            .collect::<Result<_>>()?;
        acts.retain(|&(_, a)| a > 0.0);
        acts.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        let overlap = acts.iter().take(top).filter(|(w, _)| targets.contains(w)).count();
        if overlap > 0 && best.is_none_or(|(_, o)| overlap > o) {
            best = Some((g, overlap));
        }
    }
    Ok(best)
}
