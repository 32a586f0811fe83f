//! Adds and removes a factor from a word's vector and lists what lands nearby.
//! The planted pairs differ by exactly that factor.
//!
//! ```text
//! cargo run --release --example manipulate_word -- [coef]
//! ```

use wordfactors::analysis::manipulate;
use wordfactors::neighbors::Metric;
use wordfactors::synthetic::planted_pairs;

fn main() -> wordfactors::Result<()> {
    let coef: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4.0);
    let h = planted_pairs(50, 100, 10, 200, 4.0, 0)?;

    for (base, derived) in h.pairs.iter().take(5) {
        let up = manipulate(&h.embeddings, &h.dictionary, base, &[(h.factor, coef)], Metric::Cosine, false, 3)?;
        let down = manipulate(&h.embeddings, &h.dictionary, derived, &[(h.factor, -coef)], Metric::Cosine, false, 3)?;
        let show = |r: &[wordfactors::analysis::RankedWord]| {
            r.iter().map(|w| format!("{} ({:.3})", w.token, w.score)).collect::<Vec<_>>().join(", ")
        };
        println!("{base} + {coef}·φ{}: {}", h.factor, show(&up));
        println!("{derived} - {coef}·φ{}: {}", h.factor, show(&down));
    }
    Ok(())
}
