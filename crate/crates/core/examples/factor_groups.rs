//! Groups factors by co-activation. Codes come from planted blocks, so the
//! recovered groups can be checked against the block each factor was drawn in.
//!
//! ```text
//! cargo run --release --example factor_groups -- [blocks] [block_size] [k_nn] [seed]
//! ```

use wordfactors::groups::FactorGrouping;
use wordfactors::synthetic::planted_blocks;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> wordfactors::Result<()> {
    let blocks: usize = arg(1, 5);
    let block_size: usize = arg(2, 6);
    let k_nn: usize = arg(3, block_size - 1);
    let seed: u64 = arg(4, 0);

    let planted = planted_blocks(blocks, block_size, 3000, 2, seed)?;
    let grouping = FactorGrouping::from_codes(&planted.codes, &planted.freq, k_nn, blocks, seed)?;
    for g in 0..blocks {
        let members = grouping.members(g);
        let planted_of: Vec<usize> = members.iter().map(|&j| planted.blocks[j]).collect();
        println!("group {g}: factors {members:?}  planted blocks {planted_of:?}");
    }
    Ok(())
}
