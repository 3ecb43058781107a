//! Pilot runs behind the growth thresholds in
//! `crates/cli/tests/fixtures/growth_thresholds.json`.
//!
//! The threshold is the pilot median of the final log10 wealth minus four
//! standard errors of that median (`1.2533 sd / sqrt(R)`).
//!
//!     cargo run --release -p orbitmart --example pilot_growth

use orbitmart::sim::{median, run_scenario, RunOptions, Scenario};

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../cli/tests/fixtures");
    for name in ["changepoint", "dependent_pair"] {
        let text = std::fs::read_to_string(format!("{dir}/{name}.scenario")).unwrap();
        let s: Scenario = text.parse().unwrap();
        let run = run_scenario(&s, &RunOptions::default()).unwrap();
        let finals: Vec<f64> = run
            .log_wealth_at(s.horizon)
            .iter()
            .map(|l| l / std::f64::consts::LN_10)
            .collect();
        let r = finals.len() as f64;
        let mean = finals.iter().sum::<f64>() / r;
        let sd = (finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt();
        let med = median(&finals);
        let threshold = med - 4.0 * 1.2533 * sd / r.sqrt();
        println!(
            "{name}: seed {} median {med:.4} sd {sd:.4} threshold {threshold:.2}",
            s.seed
        );
    }
}
