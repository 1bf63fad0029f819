//! Writes the monthly return fixture used by the bootstrap tests: 1128 months
//! (1926-01 through 2019-12) of stock and bond returns sampled from the
//! calibrated jump-diffusion model with seed 1926.
//!
//! cargo run --release -p decumulate-core --example monthly_fixture -- tests/fixtures/monthly_returns.csv

use std::fs::File;

use decumulate::data::{parse_month, write_series, ReturnSeries};
use decumulate::market::simulate_paths;
use decumulate::MarketParams;

const SEED: u64 = 1926;

fn main() -> decumulate::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "monthly_returns.csv".into());
    let first = parse_month("1926-01").expect("valid month");
    let last = parse_month("2019-12").expect("valid month");
    let n = (last - first + 1) as usize;
    let months = simulate_paths(&MarketParams::crsp_calibrated(), 1, n, 1.0 / 12.0, SEED)?;
    let (stock, bond) = (0..n).map(|i| months.get(0, i)).unzip();
    let series = ReturnSeries::new((first..=last).collect(), stock, bond)?;
    write_series(&series, File::create(&out)?)?;
    println!("wrote {n} months to {out}");
    Ok(())
}
