//! Regenerates the bundled smoke dataset: `cargo run --example make_smoke -- data/smoke.csv`

use std::path::PathBuf;

use forecaster_core::data::write_telemetry;
use forecaster_core::synthetic::{smoke_records, SMOKE_ROWS, SMOKE_SEED};

fn main() {
    let path: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "data/smoke.csv".into()).into();
    write_telemetry(&path, &smoke_records(SMOKE_ROWS, SMOKE_SEED)).expect("write smoke dataset");
    println!("wrote {}", path.display());
}
