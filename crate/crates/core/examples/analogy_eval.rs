//! Scores analogy questions with plain vector arithmetic and with the answer
//! restricted to words active on the task's factor group.
//!
//! Without arguments a planted benchmark with near-miss distractors is used.
//!
//! ```text
//! cargo run --release --example analogy_eval -- [EMBEDDINGS QUESTIONS]
//! ```

use wordfactors::analogy::{compare_table, evaluate, load_questions, EvalMode};
use wordfactors::embeddings::load_embeddings;
use wordfactors::synthetic::planted_analogy;

fn main() -> wordfactors::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [emb, questions] = args.as_slice() {
        let es = load_embeddings(emb, None)?;
        let tasks = load_questions(questions, true)?;
        let report = evaluate(&es, &tasks, &EvalMode::Arithmetic)?;
        print!("{}", report.to_table());
        return Ok(());
    }

    let h = planted_analogy(10, 20, 50, 0)?;
    let arith = evaluate(&h.embeddings, &h.tasks, &EvalMode::Arithmetic)?;
    let grouped = evaluate(
        &h.embeddings,
        &h.tasks,
        &EvalMode::Grouped { codes: &h.codes, grouping: &h.grouping, bindings: &h.bindings, horizon: 100 },
    )?;
    print!("{}", compare_table(&[&arith, &grouped]));
    Ok(())
}
