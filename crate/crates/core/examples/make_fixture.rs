//! Writes the synthetic three-year fixture and its config to a directory.
//!
//! ```text
//! cargo run --release --example make_fixture -- fixture/
//! cargo run --release -- --config fixture/config.toml refine
//! ```

use std::path::PathBuf;

use loadlens::fixture::{generate, write_fixture, FixtureOptions};

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixture".into()));
    let fixture = generate(&FixtureOptions::default());
    let config = write_fixture(&fixture, &dir)?;
    println!("wrote {} hours to {}", fixture.axis.len(), dir.display());
    println!("config: {}", config.display());
    Ok(())
}
