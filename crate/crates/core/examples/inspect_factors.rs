//! Infers codes for a planted vocabulary, then lists each factor's top words,
//! decomposes a few words and projects them onto two principal axes.
//!
//! ```text
//! cargo run --release --example inspect_factors -- [mass]
//! ```

use wordfactors::analysis::{decompose_word, factor_profiles, pca_project, FactorNames};
use wordfactors::sparse_code::{fista_infer, sparsify};
use wordfactors::synthetic::planted_dictionary;
use wordfactors::Dictionary;

fn main() -> wordfactors::Result<()> {
    let mass: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.2);

    let planted = planted_dictionary(16, 12, 400, 2, (1.0, 3.0), 3)?;
    let es = &planted.embeddings;
    let dict = Dictionary::new(planted.truth.clone(), 0.05)?;
    let all: Vec<usize> = (0..es.len()).collect();
    let codes = sparsify(&fista_infer(&dict, &es.gather(&all), 300, 0.0)?, 1e-4)?;

    for p in factor_profiles(&codes, es, mass)?.iter().take(6) {
        let words: Vec<&str> = p.top_words.iter().map(|e| e.token.as_str()).collect();
        let flag = if p.unidentifiable { "  (unidentifiable)" } else { "" };
        println!("factor {:>2}: {} of {} active words{flag}: {}", p.factor_id, words.len(), p.active_words, words.join(" "));
    }

    let names = FactorNames::default();
    let tokens: Vec<String> = (0..5).map(|i| es.word(i).to_string()).collect();
    for t in &tokens {
        let d = decompose_word(&codes, es, &names, t, 3, false)?;
        let terms: Vec<String> = d.terms.iter().map(|t| format!("{:.2}·φ{}", t.coefficient, t.factor_id)).collect();
        println!("{t} = {} + others({:.2})", terms.join(" + "), d.residual_mass);
    }
    for (t, [x, y]) in pca_project(es, &tokens)? {
        println!("{t}: ({x:+.3}, {y:+.3})");
    }
    Ok(())
}
