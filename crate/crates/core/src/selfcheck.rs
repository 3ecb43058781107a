//! Fast self-checks: special-function identities and oracle agreement.
//!
//! The special-function suite takes the incomplete-beta routine as a
//! parameter, so a deliberately broken implementation can be run through it
//! as a negative control.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::Result;
use crate::group::{Family, GroupSpec, Observation, OrbitState};
use crate::numerics::{cap_measure_with, ln_gamma, t_upper_tail, BetaFn};
use crate::oracle::{brute_force_rank, reconstruct, BruteForceMode, Orbit, MAX_EXACT_CLASS};
use crate::rank::{rank, rank_spherical, rank_spherical_t, OrbitRank};
use crate::rng::{substream, StreamRng, Substream};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub cases: usize,
    /// Largest discrepancy seen; a z-score for Monte Carlo checks.
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(suite: &'static str, name: &str, cases: usize, max_error: f64, tolerance: f64) -> Self {
        Self {
            suite,
            name: name.to_string(),
            cases,
            max_error,
            tolerance,
            passed: max_error <= tolerance,
        }
    }

    fn failed(suite: &'static str, name: &str, cases: usize) -> Self {
        Self {
            suite,
            name: name.to_string(),
            cases,
            max_error: f64::INFINITY,
            tolerance: 0.0,
            passed: false,
        }
    }
}

/// Sizes for the Monte Carlo part of the oracle suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub exact_cases: usize,
    pub haar_cases: usize,
    pub haar_samples: usize,
    pub reconstruction_cases: usize,
}

impl OracleConfig {
    pub fn quick() -> Self {
        Self {
            exact_cases: 100,
            haar_cases: 12,
            haar_samples: 20_000,
            reconstruction_cases: 100,
        }
    }

    pub fn full() -> Self {
        Self {
            exact_cases: 100,
            haar_cases: 50,
            haar_samples: 100_000,
            reconstruction_cases: 100,
        }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

pub fn format_table(checks: &[Check]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:<34} {:>6} {:>12} {:>10}  result",
        "suite", "check", "cases", "max_error", "tolerance"
    );
    for c in checks {
        let _ = writeln!(
            out,
            "{:<8} {:<34} {:>6} {:>12.3e} {:>10.1e}  {}",
            c.suite,
            c.name,
            c.cases,
            c.max_error,
            c.tolerance,
            if c.passed { "PASS" } else { "FAIL" }
        );
    }
    out
}

/// Runs both suites with the library's own beta routine.
pub fn run(seed: u64, config: &OracleConfig) -> Vec<Check> {
    let mut checks = special_function_suite(crate::numerics::reg_inc_beta);
    checks.extend(oracle_suite(seed, config));
    checks
}

/// Max of `|f(case)|` over cases; any error counts as infinite.
fn max_abs<I: IntoIterator<Item = Result<f64>>>(values: I) -> (usize, f64) {
    let mut count = 0;
    let mut worst: f64 = 0.0;
    for v in values {
        count += 1;
        worst = match v {
            Ok(e) if e.is_nan() => f64::INFINITY,
            Ok(e) => worst.max(e.abs()),
            Err(_) => f64::INFINITY,
        };
        if worst.is_infinite() {
            break;
        }
    }
    (count, worst)
}

/// `Γ(k/2)` for a positive integer `k`, from `Γ(1/2) = √π`, `Γ(1) = 1` and
/// the recurrence; exact up to rounding.
pub fn half_integer_gamma(k: usize) -> f64 {
    assert!(k >= 1);
    let (mut g, mut x) = if k.is_multiple_of(2) {
        (1.0, 1.0)
    } else {
        (std::f64::consts::PI.sqrt(), 0.5)
    };
    while 2.0 * x < k as f64 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Density of Student's t with `nu` degrees of freedom, normalized with
/// [`half_integer_gamma`].
pub fn t_density(x: f64, nu: usize) -> f64 {
    let nu_f = nu as f64;
    let norm = half_integer_gamma(nu + 1)
        / ((nu_f * std::f64::consts::PI).sqrt() * half_integer_gamma(nu));
    norm * (1.0 + x * x / nu_f).powf(-(nu_f + 1.0) / 2.0)
}

/// `P(T > t)` as `1/2 - ∫_0^t f`, integrated by composite 10-point
/// Gauss–Legendre on panels of width at most 1/8.
pub fn t_tail_by_quadrature(t: f64, nu: usize) -> f64 {
    #[allow(clippy::excessive_precision)]
    const NODES: [f64; 5] = [
        0.148_874_338_981_631_2,
        0.433_395_394_129_247_2,
        0.679_409_568_299_024_4,
        0.865_063_366_688_984_5,
        0.973_906_528_517_171_7,
    ];
    #[allow(clippy::excessive_precision)]
    const WEIGHTS: [f64; 5] = [
        0.295_524_224_714_752_9,
        0.269_266_719_309_996_4,
        0.219_086_362_515_982_0,
        0.149_451_349_150_580_6,
        0.066_671_344_308_688_1,
    ];
    let panels = ((t.abs() * 8.0).ceil() as usize).max(1);
    let h = t / panels as f64;
    let mut integral = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            integral += w * half * (t_density(mid - half * x, nu) + t_density(mid + half * x, nu));
        }
    }
    0.5 - integral
}

/// Deterministic quasi-random point in `[lo, hi]`.
fn grid_point(i: usize, j: usize, lo: f64, hi: f64) -> f64 {
    let u = (i as f64 * 0.618_033_988_749_895 + j as f64 * 0.414_213_562_373_095_1).fract();
    lo + (hi - lo) * u
}

/// The cap-versus-t grid: every `n` in `2..=50` with about 205 prefixes each,
/// all entries in `[-5, 5]`. Returns the largest discrepancy.
pub fn spherical_route_agreement() -> (usize, f64) {
    let spec = GroupSpec::full_orthogonal();
    max_abs((2..=50usize).flat_map(|n| {
        (0..205usize).map(move |j| {
            let mut state = OrbitState::new(spec);
            let mut last = Observation::scalar(0.0);
            for i in 0..n {
                let x = if i + 1 == n {
                    -5.0 + 10.0 * j as f64 / 204.0
                } else {
                    grid_point(i + 1, j + 7 * n, -5.0, 5.0)
                };
                last = Observation::scalar(x);
                state.update(&last)?;
            }
            let a = rank_spherical(&state, &last, 0.5)?;
            let b = rank_spherical_t(&state, &last, 0.5)?;
            Ok(a.r - b.r)
        })
    }))
}

pub fn special_function_suite(beta: BetaFn) -> Vec<Check> {
    const S: &str = "special";
    let mut checks = Vec::new();

    // random grid for the reflection identity
    let mut rng = substream(0x5eed, 0, Substream::Data);
    let points: Vec<(f64, f64, f64)> = (0..2000)
        .map(|_| {
            let x: f64 = rng.gen_range(1e-6..1.0 - 1e-6);
            let a: f64 = 10f64.powf(rng.gen_range(-1.0..2.0));
            let b: f64 = 10f64.powf(rng.gen_range(-1.0..2.0));
            (x, a, b)
        })
        .collect();
    let (n, e) = max_abs(
        points
            .iter()
            .map(|&(x, a, b)| Ok(beta(x, a, b)? + beta(1.0 - x, b, a)? - 1.0)),
    );
    checks.push(Check::new(
        S,
        "beta reflection I_x(a,b)+I_1-x(b,a)=1",
        n,
        e,
        1e-12,
    ));

    let (n, e) = max_abs(points.iter().flat_map(|&(x, a, _)| {
        [
            beta(x, 1.0, 1.0).map(|v| v - x),
            beta(x, a, 1.0).map(|v| v - x.powf(a)),
            beta(x, 1.0, a).map(|v| v - (1.0 - (1.0 - x).powf(a))),
        ]
    }));
    checks.push(Check::new(S, "beta closed forms", n, e, 1e-12));

    let cs: Vec<f64> = (0..=200).map(|i| -1.0 + i as f64 / 100.0).collect();
    let (n, e) = max_abs(cs.iter().flat_map(|&c| {
        (1..=60usize)
            .map(move |m| Ok(cap_measure_with(beta, c, m)? + cap_measure_with(beta, -c, m)? - 1.0))
    }));
    checks.push(Check::new(S, "cap symmetry", n, e, 1e-12));

    let (n, e) = max_abs(
        cs.iter()
            .map(|&c| Ok(cap_measure_with(beta, c, 2)? - c.acos() / std::f64::consts::PI)),
    );
    checks.push(Check::new(S, "circle cap = arccos(c)/pi", n, e, 1e-12));

    let ts: Vec<f64> = (0..=48).map(|i| -6.0 + i as f64 * 0.25).collect();
    let (n, e) = max_abs([1usize, 2, 5, 30].into_iter().flat_map(|nu| {
        ts.iter().map(move |&t| {
            let c = t / (nu as f64 + t * t).sqrt();
            Ok(cap_measure_with(beta, c, nu + 1)? - t_tail_by_quadrature(t, nu))
        })
    }));
    checks.push(Check::new(S, "t tail vs quadrature", n, e, 1e-10));

    let (n, e) = max_abs([1usize, 2, 3, 5, 10, 30, 100].into_iter().flat_map(|nu| {
        ts.iter().map(move |&t| {
            let c = t / (nu as f64 + t * t).sqrt();
            Ok(t_upper_tail(t, nu)? - cap_measure_with(beta, c, nu + 1)?)
        })
    }));
    checks.push(Check::new(S, "t tail vs cap substitution", n, e, 1e-12));

    let (n, e) = max_abs((1..=60usize).map(|k| {
        let exact = half_integer_gamma(k).ln();
        Ok((ln_gamma(k as f64 / 2.0) - exact) / exact.abs().max(1.0))
    }));
    checks.push(Check::new(S, "ln_gamma at half integers", n, e, 1e-13));

    let anchors = [
        cap_measure_with(beta, std::f64::consts::FRAC_1_SQRT_2, 2).map(|r| r - 0.25),
        cap_measure_with(beta, 1.0 / 3f64.sqrt(), 3).map(|r| r - (0.5 - 0.5 / 3f64.sqrt())),
    ];
    let (n, e) = max_abs(anchors);
    checks.push(Check::new(S, "closed-form rank anchors", n, e, 1e-12));

    checks
}

fn fold(spec: GroupSpec, prefix: &[Observation]) -> Result<OrbitState> {
    let mut state = OrbitState::new(spec);
    for o in prefix {
        state.update(o)?;
    }
    Ok(state)
}

fn permutation_case(spec: GroupSpec, rng: &mut StreamRng) -> (Vec<Observation>, f64) {
    let tied = rng.gen_bool(0.5);
    let draw = |rng: &mut StreamRng| -> f64 {
        if tied {
            rng.gen_range(0..3) as f64
        } else {
            rng.sample(StandardNormal)
        }
    };
    let prefix = match spec.family() {
        Family::ModularPermutation { period } => {
            let n = rng.gen_range(1..=MAX_EXACT_CLASS * period);
            (0..n).map(|_| Observation::scalar(draw(rng))).collect()
        }
        Family::LabelPermutation { labels } => {
            // keep the newest observation's class within the enumeration limit
            let n = rng.gen_range(1..=2 * MAX_EXACT_CLASS);
            let mut prefix: Vec<Observation> = (0..n)
                .map(|_| Observation::labelled(draw(rng), rng.gen_range(0..labels)))
                .collect();
            let last = prefix[n - 1].label.expect("labelled");
            let mut seen = 0;
            prefix.retain(|o| {
                if o.label == Some(last) {
                    seen += 1;
                }
                o.label != Some(last) || seen <= MAX_EXACT_CLASS
            });
            let tail = prefix
                .iter()
                .rposition(|o| o.label == Some(last))
                .expect("nonempty");
            prefix.truncate(tail + 1);
            prefix
        }
        _ => {
            let n = rng.gen_range(1..=MAX_EXACT_CLASS);
            (0..n).map(|_| Observation::scalar(draw(rng))).collect()
        }
    };
    (prefix, rng.gen())
}

fn gaussian_prefix(spec: GroupSpec, n: usize, rng: &mut StreamRng) -> Vec<Observation> {
    (0..n)
        .map(|_| {
            let y: f64 = rng.sample(StandardNormal);
            match spec.family() {
                Family::DesignIsotropy { dim } => {
                    let mut z = vec![1.0];
                    z.extend((1..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
                    Observation::regression(y, z)
                }
                _ => Observation::scalar(y),
            }
        })
        .collect()
}

/// `|analytic - Monte Carlo|` in units of the binomial standard error at the
/// analytic value.
pub fn haar_z(spec: GroupSpec, case: u64, seed: u64, samples: usize) -> Result<f64> {
    let mut rng = substream(seed, case, Substream::Haar);
    let d = match spec.family() {
        Family::DesignIsotropy { dim } => dim,
        _ => 0,
    };
    let n = rng.gen_range(d + 2..=d + 20);
    let prefix = gaussian_prefix(spec, n, &mut rng);
    let theta: f64 = rng.gen();
    let state = fold(spec, &prefix)?;
    let analytic = rank(&state, &prefix[n - 1], theta)?;
    let mc = brute_force_rank(
        &spec,
        &prefix,
        theta,
        BruteForceMode::MonteCarlo { samples },
        &mut rng,
    )?;
    let p = analytic.upper_mass;
    let se = (p * (1.0 - p) / samples as f64).sqrt();
    let diff = (mc.upper_mass - p).abs();
    Ok(if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    })
}

pub fn oracle_suite(seed: u64, config: &OracleConfig) -> Vec<Check> {
    const S: &str = "oracle";
    let mut checks = Vec::new();

    let specs = [
        GroupSpec::full_permutation(),
        GroupSpec::new(Family::ModularPermutation { period: 3 }).expect("valid"),
        GroupSpec::new(Family::LabelPermutation { labels: 2 }).expect("valid"),
    ];
    let (n, e) = max_abs((0..config.exact_cases).map(|i| {
        let spec = specs[i % specs.len()];
        let mut rng = substream(seed, i as u64, Substream::Data);
        let (prefix, theta) = permutation_case(spec, &mut rng);
        let state = fold(spec, &prefix)?;
        let fast = rank(&state, &prefix[prefix.len() - 1], theta)?;
        let exact = brute_force_rank(&spec, &prefix, theta, BruteForceMode::Exact, &mut rng)?;
        Ok((fast.r - exact.r)
            .abs()
            .max((fast.tie_mass - exact.tie_mass).abs()))
    }));
    checks.push(Check::new(
        S,
        "permutation ranks = enumeration",
        n,
        e,
        1e-15,
    ));

    for (label, spec) in [
        ("sphere ranks ~ Haar MC (z)", GroupSpec::full_orthogonal()),
        (
            "isotropy:1 ranks ~ Haar MC (z)",
            GroupSpec::new(Family::DesignIsotropy { dim: 1 }).expect("valid"),
        ),
        (
            "isotropy:3 ranks ~ Haar MC (z)",
            GroupSpec::new(Family::DesignIsotropy { dim: 3 }).expect("valid"),
        ),
    ] {
        let zs: Vec<Result<f64>> = (0..config.haar_cases as u64)
            .into_par_iter()
            .map(|i| haar_z(spec, i, seed, config.haar_samples))
            .collect();
        let (n, e) = max_abs(zs);
        checks.push(Check::new(S, label, n, e, 3.0));
    }

    let (n, e) = max_abs((0..50u64).map(|i| {
        let spec = if i % 2 == 0 {
            GroupSpec::full_orthogonal()
        } else {
            GroupSpec::new(Family::DesignIsotropy { dim: 2 }).expect("valid")
        };
        let mut rng = substream(seed, 10_000 + i, Substream::Haar);
        let prefix = gaussian_prefix(spec, rng.gen_range(4..30), &mut rng);
        let orbit = Orbit::of(&spec, &prefix)?;
        let y: Vec<f64> = prefix.iter().map(|o| o.value).collect();
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let s = orbit.sample(&mut rng);
            let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
            worst = worst.max((norm2(&s) - norm2(&y)).abs() / norm2(&y));
            if let Family::DesignIsotropy { dim } = spec.family() {
                for j in 0..dim {
                    let col = |v: &[f64]| -> f64 {
                        v.iter()
                            .zip(&prefix)
                            .map(|(a, o)| a * o.covariates.as_ref().expect("design")[j])
                            .sum()
                    };
                    worst = worst.max((col(&s) - col(&y)).abs() / norm2(&y).sqrt());
                }
            }
        }
        Ok(worst)
    }));
    checks.push(Check::new(S, "Haar samples stay on the orbit", n, e, 1e-10));

    let (cases, e) = max_abs((0..config.reconstruction_cases as u64).map(|i| {
        let mut rng = substream(seed, 20_000 + i, Substream::Data);
        let len = rng.gen_range(1..=50);
        let values: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let spec = GroupSpec::full_permutation();
        let mut state = OrbitState::new(spec);
        let mut ranks: Vec<OrbitRank> = Vec::with_capacity(len);
        for &v in &values {
            let o = Observation::scalar(v);
            state.update(&o)?;
            ranks.push(rank(&state, &o, rng.gen())?);
        }
        let rec = reconstruct(&ranks, &state)?;
        if rec.values != values {
            return Ok(f64::INFINITY);
        }
        Ok(rec
            .thetas
            .iter()
            .zip(&ranks)
            .map(|(a, r)| (a - r.theta).abs())
            .fold(0.0, f64::max))
    }));
    if cases == 0 {
        checks.push(Check::failed(S, "rank reconstruction round trip", 0));
    } else {
        checks.push(Check::new(
            S,
            "rank reconstruction round trip",
            cases,
            e,
            1e-9,
        ));
    }

    checks
}
