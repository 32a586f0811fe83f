//! Sparse codes for a handful of words under a known dictionary, compared with
//! the coefficients that generated them.
//!
//! ```text
//! cargo run --release --example sparse_coding -- [lambda] [fista_steps]
//! ```

use wordfactors::sparse_code::{column_objectives, fista_infer, kkt_residual};
use wordfactors::synthetic::planted_dictionary;
use wordfactors::Dictionary;

fn main() -> wordfactors::Result<()> {
    let mut args = std::env::args().skip(1);
    let lambda: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);

    let planted = planted_dictionary(16, 32, 8, 3, (1.0, 4.0), 0)?;
    let dict = Dictionary::new(planted.truth.clone(), lambda)?;
    let words: Vec<usize> = (0..planted.embeddings.len()).collect();
    let x = planted.embeddings.gather(&words);
    let codes = fista_infer(&dict, &x, steps, 0.0)?;
    let objectives = column_objectives(&dict, &x, &codes);

    for w in words {
        let inferred: Vec<String> = codes
            .column(w)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 1e-3)
            .map(|(j, v)| format!("{j}:{v:.2}"))
            .collect();
        let planted_terms: Vec<String> = planted.codes.column(w).iter().map(|(j, v)| format!("{j}:{v:.2}")).collect();
        let kkt = kkt_residual(&dict, &x.column(w).into_owned(), &codes.column(w).into_owned())?;
        println!(
            "{}  F={:.4}  kkt={kkt:.1e}\n  planted  {}\n  inferred {}",
            planted.embeddings.word(w),
            objectives[w],
            planted_terms.join(" "),
            inferred.join(" ")
        );
    }
    Ok(())
}
