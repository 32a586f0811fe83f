//! Learns a dictionary from vectors generated by a known one and reports how
//! well every planted factor is matched.
//!
//! ```text
//! cargo run --release --example planted_recovery -- [steps] [lambda] [fista_steps] [seed] [learning_rate] [coef_lo] [coef_hi]
//! ```

use std::time::Instant;

use wordfactors::dict_learn::{recovery, train_with, TrainOptions};
use wordfactors::synthetic::planted_dictionary;
use wordfactors::TrainConfig;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> wordfactors::Result<()> {
    let steps: u64 = arg(1, 20_000);
    let lambda: f64 = arg(2, 0.5);
    let fista_steps: usize = arg(3, 100);
    let seed: u64 = arg(4, 0);
    let learning_rate: f64 = arg(5, 100.0);
    let coef = (arg(6, 1.0), arg(7, 4.0));

    let planted = planted_dictionary(16, 32, 2000, 3, coef, seed)?;
    let cfg = TrainConfig {
        factors: 32,
        lambda,
        batch_size: 100,
        fista_steps,
        total_steps: steps,
        seed,
        learning_rate,
        ..TrainConfig::default()
    };
    let opts = TrainOptions { checkpoint_every: steps / 10, out_dir: None, truth: Some(planted.truth.clone()) };
    let start = Instant::now();
    let outcome = train_with(&planted.embeddings, &cfg, &opts)?;
    for r in &outcome.log {
        println!(
            "step {:>6}  objective {:.5}  min cosine {:.4}",
            r.step,
            r.objective,
            r.recovery.unwrap_or(f64::NAN)
        );
    }
    let rec = recovery(&planted.truth, outcome.state.dict.atoms());
    println!(
        "min cosine {:.4}, mean {:.4}, revived {}, {:.1}s",
        rec.min_cosine,
        rec.mean_cosine,
        outcome.revived,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
