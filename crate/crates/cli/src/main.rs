use std::io::{self, BufRead, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use orbitmart::calibrator::{Calibrator, CalibratorSpec};
use orbitmart::group::{GroupSpec, Observation};
use orbitmart::independence::{JointTest, LARGE_GRID};
use orbitmart::martingale::MartingaleState;
use orbitmart::selfcheck::{self, OracleConfig};
use orbitmart::sim::{fmt17, run_scenario, RunOptions, Scenario};
use orbitmart::stream::SequentialTest;

const EXIT_OK: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_REJECTED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "orbitmart",
    version,
    about = "Anytime-valid sequential tests of group invariance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream JSON-lines observations from stdin and print one record per step.
    Test(TestArgs),
    /// Run a simulation scenario and write its report.
    Simulate(SimulateArgs),
    /// Run the special-function and oracle-agreement checks.
    Selfcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Recompute log10_wealth from recorded output and compare bit for bit.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct TestArgs {
    /// perm | perm-mod:<k> | perm-label:<K> | sphere | isotropy:<d>
    #[arg(long)]
    group: GroupSpec,
    /// power:<kappa> | power-mixture | hist:<B>:<lambda> | histkd:<B>:<lambda>
    #[arg(long, default_value = "power-mixture")]
    calibrator: CalibratorSpec,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, env = "ORBITMART_SEED", default_value_t = 0)]
    seed: u64,
    /// Test independence of K streams; records then carry `values`.
    #[arg(long, value_name = "K")]
    joint: Option<usize>,
    #[arg(long)]
    stop_on_reject: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long, default_value = "power-mixture")]
    calibrator: CalibratorSpec,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_name = "K")]
    joint: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StreamRecord {
    value: Option<f64>,
    values: Option<Vec<f64>>,
    label: Option<usize>,
    covariates: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct ReplayRecord {
    n: usize,
    r: RankField,
    log10_wealth: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RankField {
    One(f64),
    Many(Vec<f64>),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Selfcheck { seed } => cmd_selfcheck(seed),
        Command::Replay(args) => cmd_replay(args),
    };
    ExitCode::from(code)
}

fn fail(msg: impl std::fmt::Display) -> u8 {
    eprintln!("orbitmart: {msg}");
    EXIT_USAGE
}

fn observation(rec: &StreamRecord, value: f64) -> Observation {
    Observation {
        value,
        label: rec.label,
        covariates: rec.covariates.clone(),
    }
}

fn list(values: impl IntoIterator<Item = String>) -> String {
    format!("[{}]", values.into_iter().collect::<Vec<_>>().join(","))
}

enum Driver {
    Single(SequentialTest),
    Joint(JointTest),
}

impl Driver {
    /// Processes one parsed record and returns the output line and the
    /// rejection flag.
    fn push(&mut self, rec: &StreamRecord) -> Result<(String, bool), String> {
        match self {
            Driver::Single(test) => {
                if rec.values.is_some() {
                    return Err("`values` needs --joint".into());
                }
                let value = rec.value.ok_or("missing field `value`")?;
                let step = test
                    .push(&observation(rec, value))
                    .map_err(|e| e.to_string())?;
                let line = format!(
                    "{{\"n\":{},\"r\":{},\"theta\":{},\"log10_wealth\":{},\"rejected\":{},\"degenerate\":{}}}",
                    step.rank.n,
                    fmt17(step.rank.r),
                    fmt17(step.rank.theta),
                    fmt17(step.log10_wealth),
                    step.rejected,
                    step.rank.degenerate
                );
                Ok((line, step.rejected))
            }
            Driver::Joint(test) => {
                if rec.value.is_some() {
                    return Err("joint mode reads `values`, not `value`".into());
                }
                let values = rec.values.as_ref().ok_or("missing field `values`")?;
                let obs: Vec<Observation> = values.iter().map(|&v| observation(rec, v)).collect();
                let step = test.push(&obs).map_err(|e| e.to_string())?;
                let c = &step.rank.components;
                let line = format!(
                    "{{\"n\":{},\"r\":{},\"theta\":{},\"log10_wealth\":{},\"rejected\":{},\"degenerate\":{}}}",
                    step.rank.n,
                    list(c.iter().map(|x| fmt17(x.r))),
                    list(c.iter().map(|x| fmt17(x.theta))),
                    fmt17(step.log10_wealth),
                    step.rejected,
                    c.iter().any(|x| x.degenerate)
                );
                Ok((line, step.rejected))
            }
        }
    }
}

fn build_calibrator(spec: CalibratorSpec, joint: Option<usize>) -> Result<Calibrator, String> {
    let dim = joint.unwrap_or(1);
    if dim == 0 {
        return Err("--joint needs K >= 1".into());
    }
    if let CalibratorSpec::HistogramKD { bins, .. } = spec {
        let cells = (bins as f64).powi(dim as i32);
        if cells > LARGE_GRID as f64 {
            eprintln!(
                "orbitmart: warning: histogram grid has {cells:.0} cells; it will learn slowly"
            );
        }
    }
    spec.build(dim).map_err(|e| e.to_string())
}

fn cmd_test(args: TestArgs) -> u8 {
    let calibrator = match build_calibrator(args.calibrator, args.joint) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let driver = match args.joint {
        None => {
            SequentialTest::new(args.group, calibrator, args.alpha, args.seed).map(Driver::Single)
        }
        Some(k) => {
            JointTest::new(args.group, k, calibrator, args.alpha, args.seed).map(Driver::Joint)
        }
    };
    let mut driver = match driver {
        Ok(d) => d,
        Err(e) => return fail(e),
    };

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut rejected = false;
    for (idx, line) in io::stdin().lock().lines().enumerate() {
        let lineno = idx + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                let _ = out.flush();
                return fail(format!("line {lineno}: {e}"));
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let step = serde_json::from_str::<StreamRecord>(&line)
            .map_err(|e| format!("malformed JSON: {e}"))
            .and_then(|rec| driver.push(&rec));
        match step {
            Ok((record, r)) => {
                rejected = r;
                if writeln!(out, "{record}").is_err() {
                    return EXIT_FAIL;
                }
            }
            Err(e) => {
                let _ = out.flush();
                return fail(format!("line {lineno}: {e}"));
            }
        }
        if rejected && args.stop_on_reject {
            break;
        }
    }
    if out.flush().is_err() {
        return EXIT_FAIL;
    }
    if rejected {
        EXIT_REJECTED
    } else {
        EXIT_OK
    }
}

fn cmd_simulate(args: SimulateArgs) -> u8 {
    let text = match std::fs::read_to_string(&args.scenario) {
        Ok(t) => t,
        Err(e) => return fail(format!("{}: {e}", args.scenario.display())),
    };
    let scenario: Scenario = match text.parse() {
        Ok(s) => s,
        Err(e) => return fail(format!("{}: {e}", args.scenario.display())),
    };
    let run = match run_scenario(
        &scenario,
        &RunOptions {
            threads: args.threads,
        },
    ) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    if let Err(e) = run.write_outputs(&args.out) {
        eprintln!("orbitmart: {}: {e}", args.out.display());
        return EXIT_FAIL;
    }
    let report = run.report();
    println!(
        "ks_p_value {} crossing_frequency {} median_final_log10_wealth {}",
        fmt17(report.ks_p_value),
        fmt17(report.crossing_frequency),
        fmt17(report.median_final_log10_wealth)
    );
    EXIT_OK
}

fn cmd_selfcheck(seed: u64) -> u8 {
    let checks = selfcheck::run(seed, &OracleConfig::quick());
    print!("{}", selfcheck::format_table(&checks));
    if selfcheck::all_passed(&checks) {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}

fn cmd_replay(args: ReplayArgs) -> u8 {
    let mut calibrator = match build_calibrator(args.calibrator, args.joint) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let mut martingale = match MartingaleState::new(args.alpha) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let (mut records, mut mismatches) = (0usize, 0usize);
    for (idx, line) in io::stdin().lock().lines().enumerate() {
        let lineno = idx + 1;
        let Ok(line) = line else {
            return fail(format!("line {lineno}: unreadable input"));
        };
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReplayRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => return fail(format!("line {lineno}: malformed JSON: {e}")),
        };
        let ranks = match rec.r {
            RankField::One(r) => vec![r],
            RankField::Many(rs) => rs,
        };
        if let Err(e) = martingale.step(&mut calibrator, &ranks) {
            return fail(format!("line {lineno}: {e}"));
        }
        records += 1;
        if martingale.log10_wealth().to_bits() != rec.log10_wealth.to_bits() {
            mismatches += 1;
            eprintln!(
                "orbitmart: n = {}: recorded {} recomputed {}",
                rec.n,
                fmt17(rec.log10_wealth),
                fmt17(martingale.log10_wealth())
            );
        }
    }
    println!("records {records} mismatches {mismatches}");
    if mismatches == 0 {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}
