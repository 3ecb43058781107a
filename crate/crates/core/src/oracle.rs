//! Ground-truth oracles for the orbit ranks.
//!
//! These work from the raw data prefix rather than the online summaries, so
//! they share no code path with [`crate::rank`]: permutation ranks are
//! computed by enumerating the acting group, rotational ranks by sampling
//! the orbit uniformly and counting.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::group::{Family, GroupSpec, Observation, OrbitState, Summary};
use crate::rank::OrbitRank;

/// Largest class that exact enumeration accepts (8! = 40320 elements).
pub const MAX_EXACT_CLASS: usize = 8;

/// Tolerance for the Gram–Schmidt complement construction.
const BASIS_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BruteForceMode {
    Exact,
    MonteCarlo { samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteForceRank {
    pub r: f64,
    pub upper_mass: f64,
    pub tie_mass: f64,
    /// Monte Carlo standard error of `upper_mass` (zero when exact).
    pub std_error: f64,
}

/// The orbit of a data prefix, prepared for repeated uniform sampling.
#[derive(Debug, Clone)]
pub enum Orbit {
    /// Values permuted independently within each class of positions.
    Permutation {
        values: Vec<f64>,
        classes: Vec<Vec<usize>>,
    },
    Sphere {
        radius: f64,
        len: usize,
    },
    /// `center + radius * u` with `u` uniform on the unit sphere of span(basis).
    Flat {
        center: Vec<f64>,
        basis: Vec<Vec<f64>>,
        radius: f64,
    },
}

impl Orbit {
    pub fn of(spec: &GroupSpec, prefix: &[Observation]) -> Result<Self> {
        if prefix.is_empty() {
            return Err(Error::Domain("orbit of an empty prefix".into()));
        }
        for o in prefix {
            spec.validate(o)?;
        }
        let values: Vec<f64> = prefix.iter().map(|o| o.value).collect();
        let n = values.len();
        Ok(match spec.family() {
            Family::FullPermutation => Self::Permutation {
                values,
                classes: vec![(0..n).collect()],
            },
            Family::ModularPermutation { period } => {
                let mut classes = vec![Vec::new(); period];
                for i in 0..n {
                    classes[(i + 1) % period].push(i);
                }
                Self::Permutation { values, classes }
            }
            Family::LabelPermutation { labels } => {
                let mut classes = vec![Vec::new(); labels];
                for (i, o) in prefix.iter().enumerate() {
                    classes[o.label.expect("validated")].push(i);
                }
                Self::Permutation { values, classes }
            }
            Family::FullOrthogonal => Self::Sphere {
                radius: values.iter().map(|v| v * v).sum::<f64>().sqrt(),
                len: n,
            },
            Family::DesignIsotropy { .. } => {
                let columns = design_columns(prefix);
                let q = orthonormalize(&columns, n);
                if q.len() < columns.len() {
                    return Err(Error::DegenerateDesign { n });
                }
                let center = project(&q, &values, n);
                let resid: Vec<f64> = values.iter().zip(&center).map(|(y, c)| y - c).collect();
                let radius = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
                let basis = complement(&q, n);
                Self::Flat {
                    center,
                    basis,
                    radius,
                }
            }
        })
    }

    /// One point drawn from the Haar-induced uniform law on the orbit.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::Permutation { values, classes } => {
                let mut out = values.clone();
                for class in classes {
                    let mut shuffled = class.clone();
                    shuffled.shuffle(rng);
                    for (&to, &from) in class.iter().zip(&shuffled) {
                        out[to] = values[from];
                    }
                }
                out
            }
            Self::Sphere { radius, len } => {
                if *radius == 0.0 {
                    return vec![0.0; *len];
                }
                let g = unit_gaussian_direction(*len, rng);
                g.into_iter().map(|x| x * radius).collect()
            }
            Self::Flat {
                center,
                basis,
                radius,
            } => {
                let mut out = center.clone();
                if *radius == 0.0 || basis.is_empty() {
                    return out;
                }
                let coef = unit_gaussian_direction(basis.len(), rng);
                for (c, b) in coef.iter().zip(basis) {
                    for (o, v) in out.iter_mut().zip(b) {
                        *o += radius * c * v;
                    }
                }
                out
            }
        }
    }
}

fn unit_gaussian_direction<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return g.into_iter().map(|v| v / norm).collect();
        }
    }
}

fn design_columns(prefix: &[Observation]) -> Vec<Vec<f64>> {
    let d = prefix[0].covariates.as_ref().map_or(0, Vec::len);
    (0..d)
        .map(|j| {
            prefix
                .iter()
                .map(|o| o.covariates.as_ref().expect("validated")[j])
                .collect()
        })
        .collect()
}

/// Gram–Schmidt with one re-orthogonalization pass; drops dependent vectors.
fn orthonormalize(vectors: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        if let Some(u) = orthogonal_unit(v, &basis, n) {
            basis.push(u);
        }
    }
    basis
}

fn orthogonal_unit(v: &[f64], basis: &[Vec<f64>], n: usize) -> Option<Vec<f64>> {
    let scale = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return None;
    }
    let mut w = v.to_vec();
    for _ in 0..2 {
        for b in basis {
            let p: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
            for i in 0..n {
                w[i] -= p * b[i];
            }
        }
    }
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= BASIS_TOLERANCE * scale {
        return None;
    }
    Some(w.into_iter().map(|x| x / norm).collect())
}

fn project(q: &[Vec<f64>], y: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for b in q {
        let p: f64 = y.iter().zip(b).map(|(a, c)| a * c).sum();
        for i in 0..n {
            out[i] += p * b[i];
        }
    }
    out
}

/// Orthonormal basis of the orthogonal complement of span(q) in `R^n`.
fn complement(q: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut all = q.to_vec();
    let mut out = Vec::new();
    for i in 0..n {
        if all.len() == n {
            break;
        }
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        if let Some(u) = orthogonal_unit(&e, &all, n) {
            all.push(u.clone());
            out.push(u);
        }
    }
    out
}

/// Uniform draw from the orbit of `prefix`.
pub fn haar_sample<R: Rng + ?Sized>(
    spec: &GroupSpec,
    prefix: &[Observation],
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(Orbit::of(spec, prefix)?.sample(rng))
}

/// Evaluates the defining Haar measure of the rank of the last element of
/// `prefix` directly.
pub fn brute_force_rank<R: Rng + ?Sized>(
    spec: &GroupSpec,
    prefix: &[Observation],
    theta: f64,
    mode: BruteForceMode,
    rng: &mut R,
) -> Result<BruteForceRank> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Domain(format!("theta {theta} outside [0, 1]")));
    }
    let orbit = Orbit::of(spec, prefix)?;
    let last = prefix.len() - 1;
    let observed = prefix[last].value;
    match mode {
        BruteForceMode::Exact => {
            let Orbit::Permutation { values, classes } = &orbit else {
                return Err(Error::Domain(
                    "exact enumeration needs a permutation family".into(),
                ));
            };
            let class = classes
                .iter()
                .find(|c| c.contains(&last))
                .expect("every position has a class");
            if class.len() > MAX_EXACT_CLASS {
                return Err(Error::Domain(format!(
                    "class of size {} exceeds the enumeration limit {MAX_EXACT_CLASS}",
                    class.len()
                )));
            }
            let slot = class.iter().position(|&i| i == last).expect("present");
            let (mut upper, mut tie, mut total) = (0u64, 0u64, 0u64);
            for_each_permutation(class.len(), |perm| {
                // the group element sends position class[perm[slot]] to `last`
                let v = values[class[perm[slot]]];
                total += 1;
                if v > observed {
                    upper += 1;
                } else if v == observed {
                    tie += 1;
                }
            });
            let upper_mass = upper as f64 / total as f64;
            let tie_mass = tie as f64 / total as f64;
            Ok(BruteForceRank {
                r: upper_mass + theta * tie_mass,
                upper_mass,
                tie_mass,
                std_error: 0.0,
            })
        }
        BruteForceMode::MonteCarlo { samples } => {
            if samples == 0 {
                return Err(Error::Domain(
                    "Monte Carlo needs at least one sample".into(),
                ));
            }
            let (mut upper, mut tie) = (0usize, 0usize);
            for _ in 0..samples {
                let y = orbit.sample(rng);
                if y[last] > observed {
                    upper += 1;
                } else if y[last] == observed {
                    tie += 1;
                }
            }
            let s = samples as f64;
            let upper_mass = upper as f64 / s;
            let tie_mass = tie as f64 / s;
            Ok(BruteForceRank {
                r: upper_mass + theta * tie_mass,
                upper_mass,
                tie_mass,
                std_error: (upper_mass * (1.0 - upper_mass) / s).sqrt(),
            })
        }
    }
}

/// Heap's algorithm over `0..k`.
fn for_each_permutation(k: usize, mut visit: impl FnMut(&[usize])) {
    let mut perm: Vec<usize> = (0..k).collect();
    let mut c = vec![0usize; k];
    visit(&perm);
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Data and thetas recovered from a rank sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub values: Vec<f64>,
    pub thetas: Vec<f64>,
}

/// Inverts the exchangeability ranks: the newest rank identifies which order
/// statistic arrived last; peel it off and repeat.
///
/// Only the untied full-permutation case is supported; there the fractional
/// part of `n R_n` is the theta that was used.
pub fn reconstruct(ranks: &[OrbitRank], summary: &OrbitState) -> Result<Reconstruction> {
    let Summary::Sorted(sorted) = summary.summary() else {
        return Err(Error::Reconstruction(
            "only the full permutation family can be reconstructed".into(),
        ));
    };
    if sorted.len() != ranks.len() {
        return Err(Error::Reconstruction(format!(
            "{} ranks for a summary of {} values",
            ranks.len(),
            sorted.len()
        )));
    }
    if sorted.has_ties() {
        return Err(Error::Reconstruction(
            "ties: the data cannot be recovered uniquely".into(),
        ));
    }
    let mut pool = sorted.as_slice().to_vec();
    let mut values = vec![0.0; ranks.len()];
    let mut thetas = vec![0.0; ranks.len()];
    for (idx, rank) in ranks.iter().enumerate().rev() {
        let n = pool.len();
        if rank.n != n {
            return Err(Error::Reconstruction(format!(
                "rank for time {} found at position {n}",
                rank.n
            )));
        }
        let scaled = rank.r * n as f64;
        // r = (#greater + θ) / n with θ in [0, 1)
        let greater = (scaled + 1e-9).floor();
        if !(0.0..n as f64).contains(&greater) {
            return Err(Error::Reconstruction(format!(
                "rank {} inconsistent with {n} remaining values",
                rank.r
            )));
        }
        let pos = n - 1 - greater as usize;
        values[idx] = pool.remove(pos);
        thetas[idx] = (scaled - greater).clamp(0.0, 1.0);
    }
    Ok(Reconstruction { values, thetas })
}
