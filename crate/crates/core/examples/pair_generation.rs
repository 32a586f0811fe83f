//! Proposes base/derived word pairs for a factor and turns them into an
//! analogy task.
//!
//! ```text
//! cargo run --release --example pair_generation -- [max_pairs]
//! ```

use wordfactors::analogy::{evaluate, generate_pairs, task_from_pairs, EvalMode};
use wordfactors::synthetic::planted_pairs;

fn main() -> wordfactors::Result<()> {
    let max_pairs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let h = planted_pairs(50, 100, 20, 200, 4.0, 1)?;

    let pairs = generate_pairs(&h.embeddings, &h.dictionary, &h.codes, h.factor, 4.0, max_pairs)?;
    let planted: std::collections::BTreeSet<_> = h.pairs.iter().collect();
    for (b, d) in &pairs {
        let mark = if planted.contains(&(b.clone(), d.clone())) { "" } else { "  (not planted)" };
        println!("{b} -> {d}{mark}");
    }

    let task = task_from_pairs("generated", &pairs);
    println!("{} questions from {} pairs", task.questions.len(), pairs.len());
    let report = evaluate(&h.embeddings, &[task], &EvalMode::Arithmetic)?;
    print!("{}", report.to_table());
    Ok(())
}
