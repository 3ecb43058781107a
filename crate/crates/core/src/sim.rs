//! Simulation harness: null and alternative data generators, replicated
//! sequential tests, and the aggregate checks run on them (uniformity of the
//! pooled ranks, lag-1 correlation, crossing frequency of `1/α`, wealth
//! curves).
//!
//! Replications run in parallel; each one draws from its own `(seed, index)`
//! substreams and the aggregation is a fold in replication order, so results
//! do not depend on the thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::Serialize;

use crate::calibrator::CalibratorSpec;
use crate::error::{Error, Result};
use crate::group::{Family, GroupSpec, Observation};
use crate::independence::JointTest;
use crate::rng::{substream, StreamRng, Substream};
use crate::stream::SequentialTest;

#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    IidGaussian {
        mu: f64,
        sigma: f64,
    },
    /// Standard normal, shifted by `shift` after observation `n0`.
    Changepoint {
        n0: usize,
        shift: f64,
    },
    /// Stationary unit-variance AR(1).
    Ar1 {
        rho: f64,
    },
    HeavyTail {
        df: f64,
    },
    /// Stream `k >= 2` is `rho * X_1 + sqrt(1 - rho²) * noise`.
    DependentPair {
        rho: f64,
    },
    /// `y = zᵀβ + noise * ε` with `z = (1, N(0,1), …)`.
    LinearModel {
        beta: Vec<f64>,
        noise: f64,
    },
}

impl Generator {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        match self {
            Self::IidGaussian { mu, sigma } if !(*sigma > 0.0) || !mu.is_finite() => {
                bad(format!("iid_gaussian needs sigma > 0 (sigma = {sigma})"))
            }
            Self::Changepoint { shift, .. } if !shift.is_finite() => {
                bad("shift must be finite".into())
            }
            Self::Ar1 { rho } | Self::DependentPair { rho } if !(rho.abs() < 1.0) => {
                bad(format!("|rho| must be < 1 (rho = {rho})"))
            }
            Self::HeavyTail { df } if !(*df > 0.0) => bad(format!("df must be > 0 (df = {df})")),
            Self::LinearModel { beta, noise } if beta.is_empty() || !(*noise > 0.0) => {
                bad("linear_model needs a nonempty beta and noise > 0".into())
            }
            _ => Ok(()),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Self::IidGaussian { .. } => "iid_gaussian",
            Self::Changepoint { .. } => "changepoint",
            Self::Ar1 { .. } => "ar1",
            Self::HeavyTail { .. } => "heavy_tail",
            Self::DependentPair { .. } => "dependent_pair",
            Self::LinearModel { .. } => "linear_model",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub group: GroupSpec,
    pub generator: Generator,
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub calibrator: CalibratorSpec,
    pub alpha: f64,
    /// Number of parallel streams; more than one runs the joint-rank test.
    pub streams: usize,
}

impl Scenario {
    pub fn new(group: GroupSpec, generator: Generator) -> Self {
        Self {
            group,
            generator,
            horizon: 1000,
            replications: 100,
            seed: 0,
            calibrator: CalibratorSpec::PowerMixture,
            alpha: 0.05,
            streams: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.horizon == 0 || self.replications == 0 || self.streams == 0 {
            return Err(Error::Scenario(
                "horizon, replications and streams must be >= 1".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Scenario(format!(
                "alpha {} not in (0, 1)",
                self.alpha
            )));
        }
        if matches!(self.generator, Generator::DependentPair { .. }) && self.streams < 2 {
            return Err(Error::Scenario("dependent_pair needs streams >= 2".into()));
        }
        if let (Family::DesignIsotropy { dim }, Generator::LinearModel { beta, .. }) =
            (self.group.family(), &self.generator)
        {
            if beta.len() != dim {
                return Err(Error::Scenario(format!(
                    "beta has {} entries but the design has {dim} columns",
                    beta.len()
                )));
            }
        }
        self.calibrator
            .build(self.streams)
            .map_err(|e| Error::Scenario(e.to_string()))?;
        Ok(())
    }

    /// Serializes back to the key-value scenario format.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "group = {}", self.group);
        let _ = writeln!(s, "generator = {}", self.generator.name());
        match &self.generator {
            Generator::IidGaussian { mu, sigma } => {
                let _ = writeln!(s, "mu = {mu}\nsigma = {sigma}");
            }
            Generator::Changepoint { n0, shift } => {
                let _ = writeln!(s, "n0 = {n0}\nshift = {shift}");
            }
            Generator::Ar1 { rho } | Generator::DependentPair { rho } => {
                let _ = writeln!(s, "rho = {rho}");
            }
            Generator::HeavyTail { df } => {
                let _ = writeln!(s, "df = {df}");
            }
            Generator::LinearModel { beta, noise } => {
                let b: Vec<String> = beta.iter().map(f64::to_string).collect();
                let _ = writeln!(s, "beta = {}\nnoise = {noise}", b.join(","));
            }
        }
        let _ = writeln!(
            s,
            "horizon = {}\nreplications = {}\nseed = {}\ncalibrator = {}\nalpha = {}\nstreams = {}",
            self.horizon, self.replications, self.seed, self.calibrator, self.alpha, self.streams
        );
        s
    }
}

impl FromStr for Scenario {
    type Err = Error;

    /// `key = value` lines; `#` starts a comment.
    fn from_str(text: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Scenario(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            if kv
                .insert(k.trim().to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(Error::Scenario(format!(
                    "line {}: duplicate key `{}`",
                    lineno + 1,
                    k.trim()
                )));
            }
        }
        let mut take = |key: &str| kv.remove(key);
        fn num<T: FromStr>(key: &str, v: Option<String>, default: Option<T>) -> Result<T> {
            match v {
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::Scenario(format!("bad value `{s}` for `{key}`"))),
                None => default.ok_or_else(|| Error::Scenario(format!("missing key `{key}`"))),
            }
        }
        let group: GroupSpec = take("group")
            .ok_or_else(|| Error::Scenario("missing key `group`".into()))?
            .parse()?;
        let generator = match take("generator").as_deref() {
            Some("iid_gaussian") => Generator::IidGaussian {
                mu: num("mu", take("mu"), Some(0.0))?,
                sigma: num("sigma", take("sigma"), Some(1.0))?,
            },
            Some("changepoint") => Generator::Changepoint {
                n0: num("n0", take("n0"), None)?,
                shift: num("shift", take("shift"), None)?,
            },
            Some("ar1") => Generator::Ar1 {
                rho: num("rho", take("rho"), None)?,
            },
            Some("heavy_tail") => Generator::HeavyTail {
                df: num("df", take("df"), None)?,
            },
            Some("dependent_pair") => Generator::DependentPair {
                rho: num("rho", take("rho"), None)?,
            },
            Some("linear_model") => {
                let beta = take("beta")
                    .ok_or_else(|| Error::Scenario("missing key `beta`".into()))?
                    .split(',')
                    .map(|b| {
                        b.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Scenario(format!("bad beta entry `{b}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Generator::LinearModel {
                    beta,
                    noise: num("noise", take("noise"), Some(1.0))?,
                }
            }
            Some(other) => return Err(Error::Scenario(format!("unknown generator `{other}`"))),
            None => return Err(Error::Scenario("missing key `generator`".into())),
        };
        let calibrator = match take("calibrator") {
            Some(c) => c
                .parse()
                .map_err(|e: Error| Error::Scenario(e.to_string()))?,
            None => CalibratorSpec::PowerMixture,
        };
        let scenario = Scenario {
            group,
            generator,
            horizon: num("horizon", take("horizon"), None)?,
            replications: num("replications", take("replications"), Some(100))?,
            seed: num("seed", take("seed"), Some(0))?,
            calibrator,
            alpha: num("alpha", take("alpha"), Some(0.05))?,
            streams: num("streams", take("streams"), Some(1))?,
        };
        if let Some(extra) = kv.keys().next() {
            return Err(Error::Scenario(format!("unknown key `{extra}`")));
        }
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Draws observations for one replication.
pub struct DataSource {
    group: GroupSpec,
    generator: Generator,
    streams: usize,
    rng: StreamRng,
    ar_prev: Vec<f64>,
    n: usize,
}

impl DataSource {
    pub fn new(scenario: &Scenario, rng: StreamRng) -> Self {
        Self {
            group: scenario.group,
            generator: scenario.generator.clone(),
            streams: scenario.streams,
            rng,
            ar_prev: vec![0.0; scenario.streams],
            n: 0,
        }
    }

    fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn covariates(&mut self, len: usize) -> Vec<f64> {
        let mut z = Vec::with_capacity(len);
        z.push(1.0);
        for _ in 1..len {
            z.push(self.gaussian());
        }
        z
    }

    fn scalar(&mut self, stream: usize, first: Option<f64>) -> f64 {
        match self.generator.clone() {
            Generator::IidGaussian { mu, sigma } => mu + sigma * self.gaussian(),
            Generator::Changepoint { n0, shift } => {
                let g = self.gaussian();
                if self.n > n0 {
                    g + shift
                } else {
                    g
                }
            }
            Generator::Ar1 { rho } => {
                let g = self.gaussian();
                let x = if self.n == 1 {
                    g
                } else {
                    rho * self.ar_prev[stream] + (1.0 - rho * rho).sqrt() * g
                };
                self.ar_prev[stream] = x;
                x
            }
            Generator::HeavyTail { df } => StudentT::new(df)
                .expect("validated df")
                .sample(&mut self.rng),
            Generator::DependentPair { rho } => {
                let g = self.gaussian();
                match first {
                    Some(x1) => rho * x1 + (1.0 - rho * rho).sqrt() * g,
                    None => g,
                }
            }
            Generator::LinearModel { beta, noise } => {
                let z = self.covariates(beta.len());
                let mean: f64 = z.iter().zip(&beta).map(|(a, b)| a * b).sum();
                mean + noise * self.gaussian()
            }
        }
    }

    /// One observation per stream for the next time step.
    pub fn next_step(&mut self) -> Vec<Observation> {
        self.n += 1;
        let mut out = Vec::with_capacity(self.streams);
        let mut first = None;
        for k in 0..self.streams {
            let obs = match self.group.family() {
                Family::LabelPermutation { labels } => {
                    let label = self.rng.gen_range(0..labels);
                    Observation::labelled(self.scalar(k, first), label)
                }
                Family::DesignIsotropy { dim } => match self.generator.clone() {
                    Generator::LinearModel { beta, noise } => {
                        let z = self.covariates(dim);
                        let mean: f64 = z.iter().zip(&beta).map(|(a, b)| a * b).sum();
                        Observation::regression(mean + noise * self.gaussian(), z)
                    }
                    _ => {
                        let z = self.covariates(dim);
                        Observation::regression(self.scalar(k, first), z)
                    }
                },
                _ => Observation::scalar(self.scalar(k, first)),
            };
            if k == 0 {
                first = Some(obs.value);
            }
            out.push(obs);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses rayon's global pool.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationTrace {
    /// `ranks[k][i]` is the rank of stream `k` at time `i + 1`.
    pub ranks: Vec<Vec<f64>>,
    /// Natural-log wealth after each step.
    pub log_wealth: Vec<f64>,
    /// First time the wealth reached `1/α`.
    pub rejection_time: Option<usize>,
}

pub fn run_replication(scenario: &Scenario, index: u64) -> Result<ReplicationTrace> {
    let data_rng = substream(scenario.seed, index, Substream::Data);
    let theta_rng = substream(scenario.seed, index, Substream::Theta);
    let mut source = DataSource::new(scenario, data_rng);
    let calibrator = scenario.calibrator.build(scenario.streams)?;
    let n = scenario.horizon;
    let mut ranks = vec![Vec::with_capacity(n); scenario.streams];
    let mut log_wealth = Vec::with_capacity(n);
    let mut rejection_time = None;
    if scenario.streams == 1 {
        let mut test = SequentialTest::with_theta_stream(
            scenario.group,
            calibrator,
            scenario.alpha,
            theta_rng,
        )?;
        for i in 1..=n {
            let obs = source.next_step();
            let step = test.push(&obs[0])?;
            ranks[0].push(step.rank.r);
            log_wealth.push(test.martingale().log_wealth);
            if step.rejected && rejection_time.is_none() {
                rejection_time = Some(i);
            }
        }
    } else {
        let mut test = JointTest::with_theta_stream(
            scenario.group,
            scenario.streams,
            calibrator,
            scenario.alpha,
            theta_rng,
        )?;
        for i in 1..=n {
            let obs = source.next_step();
            let step = test.push(&obs)?;
            for (k, c) in step.rank.components.iter().enumerate() {
                ranks[k].push(c.r);
            }
            log_wealth.push(test.martingale().log_wealth);
            if step.rejected && rejection_time.is_none() {
                rejection_time = Some(i);
            }
        }
    }
    Ok(ReplicationTrace {
        ranks,
        log_wealth,
        rejection_time,
    })
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub traces: Vec<ReplicationTrace>,
}

pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> Result<ScenarioRun> {
    scenario.validate()?;
    let work = || -> Result<Vec<ReplicationTrace>> {
        (0..scenario.replications as u64)
            .into_par_iter()
            .map(|i| run_replication(scenario, i))
            .collect()
    };
    let traces = match options.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::Scenario(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    Ok(ScenarioRun {
        scenario: scenario.clone(),
        traces,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WealthCheckpoint {
    pub n: usize,
    pub mean_wealth: f64,
    pub std_error: f64,
    pub mean_log10_wealth: f64,
    pub median_log10_wealth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub group: String,
    pub generator: String,
    pub calibrator: String,
    pub horizon: usize,
    pub replications: usize,
    pub streams: usize,
    pub seed: u64,
    pub alpha: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub lag1_correlation: f64,
    pub lag1_bound: f64,
    pub crossing_frequency: f64,
    pub crossing_bound: f64,
    pub median_final_log10_wealth: f64,
    pub checkpoints: Vec<WealthCheckpoint>,
}

impl ScenarioRun {
    pub fn pooled_ranks(&self) -> Vec<f64> {
        self.traces
            .iter()
            .flat_map(|t| t.ranks.iter().flatten().copied())
            .collect()
    }

    /// Pearson correlation of consecutive ranks, pooled over replications
    /// and streams.
    pub fn lag1_correlation(&self) -> f64 {
        let pairs = self.traces.iter().flat_map(|t| {
            t.ranks
                .iter()
                .flat_map(|seq| seq.windows(2).map(|w| (w[0], w[1])))
        });
        pearson(pairs)
    }

    pub fn crossing_frequency(&self) -> f64 {
        let hits = self
            .traces
            .iter()
            .filter(|t| t.rejection_time.is_some())
            .count();
        hits as f64 / self.traces.len() as f64
    }

    /// Natural-log wealth of every replication at time `n` (1-based).
    pub fn log_wealth_at(&self, n: usize) -> Vec<f64> {
        self.traces.iter().map(|t| t.log_wealth[n - 1]).collect()
    }

    pub fn checkpoint(&self, n: usize) -> WealthCheckpoint {
        let logs = self.log_wealth_at(n);
        let r = logs.len() as f64;
        let wealth: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
        let mean = wealth.iter().sum::<f64>() / r;
        let var = if logs.len() > 1 {
            wealth.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (r - 1.0)
        } else {
            0.0
        };
        let log10: Vec<f64> = logs.iter().map(|l| l / std::f64::consts::LN_10).collect();
        WealthCheckpoint {
            n,
            mean_wealth: mean,
            std_error: (var / r).sqrt(),
            mean_log10_wealth: log10.iter().sum::<f64>() / r,
            median_log10_wealth: median(&log10),
        }
    }

    /// Mean and median log10 wealth at every time step.
    pub fn wealth_curves(&self) -> Vec<(usize, f64, f64)> {
        (1..=self.scenario.horizon)
            .map(|n| {
                let c = self.log10_at(n);
                (n, c.iter().sum::<f64>() / c.len() as f64, median(&c))
            })
            .collect()
    }

    fn log10_at(&self, n: usize) -> Vec<f64> {
        self.log_wealth_at(n)
            .into_iter()
            .map(|l| l / std::f64::consts::LN_10)
            .collect()
    }

    pub fn report(&self) -> ScenarioReport {
        let s = &self.scenario;
        let mut ranks = self.pooled_ranks();
        let (ks_statistic, ks_p_value) = ks_uniform(&mut ranks);
        let total = (s.horizon * s.replications) as f64;
        let mut points: Vec<usize> = [10, 100, 1000]
            .into_iter()
            .filter(|&n| n < s.horizon)
            .collect();
        points.push(s.horizon);
        ScenarioReport {
            group: s.group.to_string(),
            generator: s.generator.name().to_string(),
            calibrator: s.calibrator.to_string(),
            horizon: s.horizon,
            replications: s.replications,
            streams: s.streams,
            seed: s.seed,
            alpha: s.alpha,
            ks_statistic,
            ks_p_value,
            lag1_correlation: self.lag1_correlation(),
            lag1_bound: 3.0 / total.sqrt(),
            crossing_frequency: self.crossing_frequency(),
            crossing_bound: s.alpha
                + 3.0 * (s.alpha * (1.0 - s.alpha) / s.replications as f64).sqrt(),
            median_final_log10_wealth: median(&self.log10_at(s.horizon)),
            checkpoints: points.into_iter().map(|n| self.checkpoint(n)).collect(),
        }
    }

    /// Writes `report.json`, `trajectories.csv` and `replications.csv`.
    pub fn write_outputs(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let report = serde_json::to_string_pretty(&self.report()).map_err(std::io::Error::other)?;
        fs::write(dir.join("report.json"), report + "\n")?;

        let mut traj = String::from("n,mean_log10_wealth,median_log10_wealth\n");
        for (n, mean, med) in self.wealth_curves() {
            let _ = writeln!(traj, "{n},{},{}", fmt17(mean), fmt17(med));
        }
        fs::write(dir.join("trajectories.csv"), traj)?;

        let mut reps =
            String::from("replication,rejection_time,final_log10_wealth,max_log10_wealth\n");
        for (i, t) in self.traces.iter().enumerate() {
            let last = t.log_wealth.last().copied().unwrap_or(0.0);
            let max = t.log_wealth.iter().copied().fold(0.0, f64::max);
            let _ = writeln!(
                reps,
                "{i},{},{},{}",
                t.rejection_time.map_or(String::new(), |n| n.to_string()),
                fmt17(last / std::f64::consts::LN_10),
                fmt17(max / std::f64::consts::LN_10)
            );
        }
        fs::write(dir.join("replications.csv"), reps)
    }
}

/// Seventeen significant digits, enough to round-trip any f64.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn pearson(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in pairs {
        n += 1.0;
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    if n < 2.0 {
        return 0.0;
    }
    let cov = sxy / n - (sx / n) * (sy / n);
    let vx = sxx / n - (sx / n).powi(2);
    let vy = syy / n - (sy / n).powi(2);
    cov / (vx * vy).sqrt()
}

/// One-sample Kolmogorov–Smirnov test against Uniform(0, 1). Sorts `sample`
/// in place and returns `(D, p)` with the asymptotic p-value.
pub fn ks_uniform(sample: &mut [f64]) -> (f64, f64) {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let d = sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i as f64 + 1.0) / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    (d, kolmogorov_tail((sqrt_n + 0.12 + 0.11 / sqrt_n) * d))
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
