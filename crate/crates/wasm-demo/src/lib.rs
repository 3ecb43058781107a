//! wasm-bindgen bindings for the browser demo in `www/`.
//!
//! Each export is a thin wrapper over a plain Rust function so the logic can
//! be tested natively.

use wasm_bindgen::prelude::*;

use orbitmart::group::{GroupSpec, Observation};
use orbitmart::independence::JointTest;
use orbitmart::numerics::cap_measure;
use orbitmart::rng::{substream, Substream};
use orbitmart::sim::{run_replication, DataSource, Generator, Scenario};

/// log10 wealth after each step of one changepoint stream.
pub fn trajectory(
    group: &str,
    calibrator: &str,
    shift: f64,
    changepoint: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let group: GroupSpec = group.parse().map_err(|e| format!("{e}"))?;
    let generator = match group.family() {
        orbitmart::group::Family::DesignIsotropy { dim } => {
            // a constant shift is absorbed by the intercept, so this stays null
            let mut beta = vec![0.0; dim];
            beta[0] = shift;
            Generator::LinearModel { beta, noise: 1.0 }
        }
        _ => Generator::Changepoint {
            n0: changepoint,
            shift,
        },
    };
    let mut scenario = Scenario::new(group, generator);
    scenario.calibrator = calibrator.parse().map_err(|e| format!("{e}"))?;
    scenario.horizon = horizon.clamp(1, 100_000);
    scenario.replications = 1;
    scenario.seed = seed;
    scenario.validate().map_err(|e| e.to_string())?;
    let trace = run_replication(&scenario, 0).map_err(|e| e.to_string())?;
    Ok(trace
        .log_wealth
        .iter()
        .map(|l| l / std::f64::consts::LN_10)
        .collect())
}

/// `cap_measure(c, m)` on `points` evenly spaced thresholds in `[-1, 1]`.
pub fn cap_values(m: usize, points: usize) -> Result<Vec<f64>, String> {
    let points = points.clamp(2, 10_000);
    (0..points)
        .map(|i| {
            let c = -1.0 + 2.0 * i as f64 / (points - 1) as f64;
            cap_measure(c, m).map_err(|e| e.to_string())
        })
        .collect()
}

/// Joint ranks of two correlated streams as `[r1, r2, r1, r2, ...]`, followed
/// by the final log10 wealth of the grid test.
pub fn rank_pairs(rho: f64, n: usize, bins: usize, seed: u64) -> Result<Vec<f64>, String> {
    let mut scenario = Scenario::new(
        GroupSpec::full_permutation(),
        Generator::DependentPair { rho },
    );
    scenario.streams = 2;
    scenario.calibrator = format!("histkd:{bins}:1")
        .parse()
        .map_err(|e| format!("{e}"))?;
    scenario.validate().map_err(|e| e.to_string())?;
    let mut source = DataSource::new(&scenario, substream(seed, 0, Substream::Data));
    let calibrator = scenario.calibrator.build(2).map_err(|e| e.to_string())?;
    let mut test = JointTest::new(scenario.group, 2, calibrator, scenario.alpha, seed)
        .map_err(|e| e.to_string())?;
    let n = n.clamp(1, 100_000);
    let mut out = Vec::with_capacity(2 * n + 1);
    for _ in 0..n {
        let obs: Vec<Observation> = source.next_step();
        let step = test.push(&obs).map_err(|e| e.to_string())?;
        out.extend(step.rank.values());
    }
    out.push(test.martingale().log10_wealth());
    Ok(out)
}

fn js(e: String) -> JsValue {
    JsValue::from_str(&e)
}

#[wasm_bindgen]
pub fn wealth_trajectory(
    group: &str,
    calibrator: &str,
    shift: f64,
    changepoint: u32,
    horizon: u32,
    seed: u32,
) -> Result<Vec<f64>, JsValue> {
    trajectory(
        group,
        calibrator,
        shift,
        changepoint as usize,
        horizon as usize,
        seed as u64,
    )
    .map_err(js)
}

#[wasm_bindgen]
pub fn cap_curve(m: u32, points: u32) -> Result<Vec<f64>, JsValue> {
    cap_values(m as usize, points as usize).map_err(js)
}

#[wasm_bindgen]
pub fn joint_ranks(rho: f64, n: u32, bins: u32, seed: u32) -> Result<Vec<f64>, JsValue> {
    rank_pairs(rho, n as usize, bins as usize, seed as u64).map_err(js)
}
