//! Regenerates `data/synthetic_pool.csv`.
//!
//! cargo run -p irtrel --example gen_synthetic_pool > crates/core/data/synthetic_pool.csv

use std::io::Write;

use irtrel::items::{synthetic_pool_values, SYNTHETIC_POOL_SEED, SYNTHETIC_POOL_SIZE};

fn main() -> std::io::Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "beta")?;
    for v in synthetic_pool_values(SYNTHETIC_POOL_SIZE, SYNTHETIC_POOL_SEED) {
        writeln!(out, "{v}")?;
    }
    Ok(())
}
