//! Converts between the text and word2vec binary formats. Both sides go by the
//! file extension: `.bin` is binary, anything else text.
//!
//! ```text
//! cargo run --release --example convert_embeddings -- INPUT OUTPUT [limit]
//! ```

use wordfactors::embeddings::{load_embeddings, write_text_embeddings, write_word2vec_binary};

fn main() -> wordfactors::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [input, output, rest @ ..] = args.as_slice() else {
        eprintln!("usage: convert_embeddings INPUT OUTPUT [limit]");
        std::process::exit(2);
    };
    let limit = rest.first().and_then(|s| s.parse().ok());
    let es = load_embeddings(input, limit)?;
    if output.ends_with(".bin") {
        write_word2vec_binary(&es, output)?;
    } else {
        write_text_embeddings(&es, output)?;
    }
    println!("{} words x {} dims -> {output}", es.len(), es.dim());
    Ok(())
}
