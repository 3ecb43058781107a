//! Smoothed orbit ranks.
//!
//! `R_n = μ{g : (gα)_n > α_n} + θ μ{g : (gα)_n = α_n}` where `μ` is the Haar
//! probability on the group acting at time `n`. Large observations give small
//! ranks. All functions expect the state to already contain the newest
//! observation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{dot, Family, Observation, OrbitState, Summary};
use crate::numerics::{cap_from_parts, cap_measure, t_upper_tail};

/// Cosines this close to ±1 are treated as the pole.
pub const POLE_SNAP: f64 = 1e-12;
/// Relative threshold below which the residual sphere is a point.
pub const RSS_TOLERANCE: f64 = 1e-12;
/// Leverage above `1 - LEVERAGE_TOLERANCE` pins the newest response.
pub const LEVERAGE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitRank {
    pub r: f64,
    pub theta: f64,
    pub n: usize,
    /// Haar mass strictly above the observed score.
    pub upper_mass: f64,
    /// Haar mass tying with the observed score.
    pub tie_mass: f64,
    /// Set when the orbit collapsed to a single point.
    pub degenerate: bool,
}

impl OrbitRank {
    fn from_masses(n: usize, upper_mass: f64, tie_mass: f64, theta: f64) -> Self {
        Self {
            r: (upper_mass + theta * tie_mass).clamp(0.0, 1.0),
            theta,
            n,
            upper_mass,
            tie_mass,
            degenerate: false,
        }
    }

    /// The orbit is a single point: everything ties.
    fn point_orbit(n: usize, theta: f64) -> Self {
        Self {
            degenerate: true,
            ..Self::from_masses(n, 0.0, 1.0, theta)
        }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(Error::Domain(format!("theta {theta} outside [0, 1]")))
    }
}

fn require_nonempty(state: &OrbitState) -> Result<()> {
    if state.n() == 0 {
        Err(Error::Domain(
            "rank requested before any observation was folded".into(),
        ))
    } else {
        Ok(())
    }
}

/// Rank for any family, dispatching on the state's group.
pub fn rank(state: &OrbitState, obs: &Observation, theta: f64) -> Result<OrbitRank> {
    match state.spec().family() {
        Family::FullPermutation
        | Family::ModularPermutation { .. }
        | Family::LabelPermutation { .. } => rank_permutation(state, obs, theta),
        Family::FullOrthogonal => rank_spherical(state, obs, theta),
        Family::DesignIsotropy { .. } => rank_isotropy(state, obs, theta),
    }
}

/// Sequential rank of the newest value within its reference class.
pub fn rank_permutation(state: &OrbitState, obs: &Observation, theta: f64) -> Result<OrbitRank> {
    check_theta(theta)?;
    require_nonempty(state)?;
    state.spec().validate(obs)?;
    let class = state.reference_class(obs).ok_or_else(|| {
        Error::PayloadMismatch(format!("{} is not a permutation family", state.spec()))
    })?;
    let ties = class.count_equal(obs.value);
    if ties == 0 {
        return Err(Error::PayloadMismatch(
            "observation has not been folded into the state".into(),
        ));
    }
    let size = class.len() as f64;
    let greater = class.count_greater(obs.value) as f64;
    let ties = ties as f64;
    Ok(OrbitRank {
        r: ((greater + theta * ties) / size).clamp(0.0, 1.0),
        theta,
        n: state.n(),
        upper_mass: greater / size,
        tie_mass: ties / size,
        degenerate: false,
    })
}

fn norm_parts(state: &OrbitState) -> Result<(f64, f64)> {
    match state.summary() {
        Summary::Norm {
            sum_sq,
            prev_sum_sq,
        } => Ok((*sum_sq, *prev_sum_sq)),
        _ => Err(Error::PayloadMismatch(format!(
            "{} is not the orthogonal family",
            state.spec()
        ))),
    }
}

/// Relative area of the cap of `S^{n-1}(‖Xⁿ‖)` above the newest coordinate.
pub fn rank_spherical(state: &OrbitState, obs: &Observation, theta: f64) -> Result<OrbitRank> {
    check_theta(theta)?;
    require_nonempty(state)?;
    let (sum_sq, prev_sum_sq) = norm_parts(state)?;
    let n = state.n();
    if n == 1 {
        return Ok(OrbitRank::from_masses(1, 0.0, 1.0, theta));
    }
    if sum_sq <= 0.0 {
        return Ok(OrbitRank::point_orbit(n, theta));
    }
    let x = obs.value;
    let upper = if prev_sum_sq <= 0.0 {
        // the newest point sits on a pole
        if x > 0.0 {
            0.0
        } else {
            1.0
        }
    } else {
        cap_from_parts(x >= 0.0, prev_sum_sq / sum_sq, n)?
    };
    Ok(OrbitRank::from_masses(n, upper, 0.0, theta))
}

/// The same rank as [`rank_spherical`], evaluated as the upper tail of a
/// t statistic with `n - 1` degrees of freedom.
pub fn rank_spherical_t(state: &OrbitState, obs: &Observation, theta: f64) -> Result<OrbitRank> {
    check_theta(theta)?;
    require_nonempty(state)?;
    let (sum_sq, prev_sum_sq) = norm_parts(state)?;
    let n = state.n();
    if n == 1 {
        return Ok(OrbitRank::from_masses(1, 0.0, 1.0, theta));
    }
    if sum_sq <= 0.0 {
        return Ok(OrbitRank::point_orbit(n, theta));
    }
    let nu = n - 1;
    let x = obs.value;
    let scale = (prev_sum_sq / nu as f64).sqrt();
    let t = if scale > 0.0 {
        x / scale
    } else if x > 0.0 {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    let upper = t_upper_tail(t, nu)?;
    Ok(OrbitRank::from_masses(n, upper, 0.0, theta))
}

/// Rank on the orbit of the isotropy group of the design columns: a sphere
/// of dimension `n - d - 1` centred at the fitted values.
pub fn rank_isotropy(state: &OrbitState, obs: &Observation, theta: f64) -> Result<OrbitRank> {
    check_theta(theta)?;
    require_nonempty(state)?;
    state.spec().validate(obs)?;
    let design = match state.summary() {
        Summary::Design(d) => d,
        _ => {
            return Err(Error::PayloadMismatch(format!(
                "{} is not an isotropy family",
                state.spec()
            )))
        }
    };
    let n = state.n();
    let d = design.dim();
    if n <= d || !design.is_full_rank() {
        return Ok(OrbitRank::point_orbit(n, theta));
    }
    let z = obs.covariates.as_deref().expect("validated");
    let w = design.solve(z).ok_or(Error::DegenerateDesign { n })?;
    let beta = design
        .solve(design.cross())
        .ok_or(Error::DegenerateDesign { n })?;
    let leverage = dot(z, &w);
    let residual = obs.value - dot(z, &beta);
    let rss = design.rss();
    let scale = design.response_sum_sq().max(f64::MIN_POSITIVE);
    if rss <= RSS_TOLERANCE * scale || leverage >= 1.0 - LEVERAGE_TOLERANCE {
        return Ok(OrbitRank::point_orbit(n, theta));
    }
    let m = n - d;
    if m == 1 {
        // two-point orbit: the observation and its reflection through the fit
        let upper = if residual < 0.0 { 0.5 } else { 0.0 };
        return Ok(OrbitRank::from_masses(n, upper, 0.5, theta));
    }
    let c = residual / (rss.sqrt() * (1.0 - leverage).sqrt());
    let c = if c >= 1.0 - POLE_SNAP {
        1.0
    } else if c <= -1.0 + POLE_SNAP {
        -1.0
    } else {
        c
    };
    let upper = cap_measure(c, m)?;
    Ok(OrbitRank::from_masses(n, upper, 0.0, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{update_state, GroupSpec};

    fn fold(spec: GroupSpec, obs: &[Observation]) -> OrbitState {
        obs.iter()
            .fold(OrbitState::new(spec), |s, o| update_state(s, o).unwrap())
    }

    fn scalars(v: &[f64]) -> Vec<Observation> {
        v.iter().map(|&x| Observation::scalar(x)).collect()
    }

    fn ones(v: &[f64]) -> Vec<Observation> {
        v.iter()
            .map(|&y| Observation::regression(y, vec![1.0]))
            .collect()
    }

    #[test]
    fn permutation_examples() {
        let obs = scalars(&[0.5, 0.2, 0.9]);
        let s = fold(GroupSpec::full_permutation(), &obs);
        let r = rank_permutation(&s, &obs[2], 0.5).unwrap();
        assert!((r.r - 1.0 / 6.0).abs() < 1e-15);

        let obs = scalars(&[4.0, 4.0, 4.0]);
        let s = fold(GroupSpec::full_permutation(), &obs);
        let r = rank_permutation(&s, &obs[2], 0.3).unwrap();
        assert!((r.r - 0.3).abs() < 1e-15);
        assert_eq!(r.tie_mass, 1.0);

        let s = fold(GroupSpec::full_permutation(), &scalars(&[-2.5]));
        let r = rank_permutation(&s, &Observation::scalar(-2.5), 0.77).unwrap();
        assert_eq!(r.r, 0.77);
    }

    #[test]
    fn modular_example() {
        let spec = GroupSpec::new(Family::ModularPermutation { period: 2 }).unwrap();
        let obs = scalars(&[5.0, 1.0, 7.0, 2.0]);
        let s = fold(spec, &obs);
        assert_eq!(rank_permutation(&s, &obs[3], 0.0).unwrap().r, 0.0);
        assert_eq!(rank_permutation(&s, &obs[3], 1.0).unwrap().r, 0.5);
    }

    #[test]
    fn label_ranks_within_label() {
        let spec = GroupSpec::new(Family::LabelPermutation { labels: 2 }).unwrap();
        let obs = vec![
            Observation::labelled(10.0, 0),
            Observation::labelled(-3.0, 1),
            Observation::labelled(1.0, 1),
        ];
        let s = fold(spec, &obs);
        // label-1 class {-3, 1}: nothing above 1
        let r = rank_permutation(&s, &obs[2], 0.4).unwrap();
        assert!((r.r - 0.2).abs() < 1e-15);
    }

    #[test]
    fn unfolded_observation_is_rejected() {
        let s = fold(GroupSpec::full_permutation(), &scalars(&[1.0, 2.0]));
        assert!(rank_permutation(&s, &Observation::scalar(3.0), 0.5).is_err());
        assert!(rank_permutation(&s, &Observation::scalar(2.0), 1.5).is_err());
        let empty = OrbitState::new(GroupSpec::full_permutation());
        assert!(rank_permutation(&empty, &Observation::scalar(2.0), 0.5).is_err());
    }

    #[test]
    fn spherical_examples() {
        let obs = scalars(&[3.0, 0.0]);
        let s = fold(GroupSpec::full_orthogonal(), &obs);
        assert!((rank_spherical(&s, &obs[1], 0.9).unwrap().r - 0.5).abs() < 1e-15);

        let obs = scalars(&[1.0, 1.0]);
        let s = fold(GroupSpec::full_orthogonal(), &obs);
        let r = rank_spherical(&s, &obs[1], 0.1).unwrap();
        assert!((r.r - 0.25).abs() < 1e-12);
        assert_eq!(r.tie_mass, 0.0);

        let obs = scalars(&[1.0, 1.0, 1.0]);
        let s = fold(GroupSpec::full_orthogonal(), &obs);
        let expected = 1.0 - (0.5 + 1.0 / (2.0 * 3f64.sqrt()));
        assert!((rank_spherical(&s, &obs[2], 0.1).unwrap().r - expected).abs() < 1e-12);
        assert!((rank_spherical_t(&s, &obs[2], 0.1).unwrap().r - expected).abs() < 1e-12);
    }

    #[test]
    fn spherical_first_rank_is_theta_and_zero_norm_is_degenerate() {
        let s = fold(GroupSpec::full_orthogonal(), &scalars(&[-4.0]));
        assert_eq!(
            rank_spherical(&s, &Observation::scalar(-4.0), 0.3)
                .unwrap()
                .r,
            0.3
        );
        let s = fold(GroupSpec::full_orthogonal(), &scalars(&[0.0, 0.0]));
        let r = rank_spherical(&s, &Observation::scalar(0.0), 0.6).unwrap();
        assert_eq!(r.r, 0.6);
        assert!(r.degenerate);
    }

    #[test]
    fn spherical_pole() {
        let obs = scalars(&[0.0, 0.0, 2.0]);
        let s = fold(GroupSpec::full_orthogonal(), &obs);
        assert_eq!(rank_spherical(&s, &obs[2], 0.5).unwrap().r, 0.0);
        assert_eq!(rank_spherical_t(&s, &obs[2], 0.5).unwrap().r, 0.0);
        let obs = scalars(&[0.0, -2.0]);
        let s = fold(GroupSpec::full_orthogonal(), &obs);
        assert_eq!(rank_spherical(&s, &obs[1], 0.5).unwrap().r, 1.0);
    }

    #[test]
    fn centred_sphericity_examples() {
        let spec = GroupSpec::new(Family::DesignIsotropy { dim: 1 }).unwrap();

        let obs = ones(&[0.0, 0.0, 3.0]);
        let s = fold(spec, &obs);
        let r = rank_isotropy(&s, &obs[2], 0.7).unwrap();
        assert_eq!(r.r, 0.0);
        assert_eq!(r.tie_mass, 0.0);

        let obs = ones(&[1.0, 2.0, 3.0, 2.0]);
        let s = fold(spec, &obs);
        assert!((rank_isotropy(&s, &obs[3], 0.7).unwrap().r - 0.5).abs() < 1e-12);

        // newest response equals the running mean
        let obs = ones(&[4.0, -1.0, 0.5, 1.5, 1.25]);
        let s = fold(spec, &obs);
        assert!((rank_isotropy(&s, &obs[4], 0.2).unwrap().r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn isotropy_small_n_cases() {
        let spec = GroupSpec::new(Family::DesignIsotropy { dim: 1 }).unwrap();
        let obs = ones(&[2.0, 5.0]);
        let s1 = fold(spec, &obs[..1]);
        let r = rank_isotropy(&s1, &obs[0], 0.4).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.r, 0.4);
        // n = d + 1: reflection pair, newest above the mean
        let s2 = fold(spec, &obs);
        let r = rank_isotropy(&s2, &obs[1], 0.4).unwrap();
        assert!((r.r - 0.2).abs() < 1e-15);
        assert_eq!(r.tie_mass, 0.5);
        let obs = ones(&[2.0, -5.0]);
        let s2 = fold(spec, &obs);
        assert!((rank_isotropy(&s2, &obs[1], 0.4).unwrap().r - 0.7).abs() < 1e-15);
    }

    #[test]
    fn isotropy_constant_responses_are_degenerate() {
        let spec = GroupSpec::new(Family::DesignIsotropy { dim: 1 }).unwrap();
        let obs = ones(&[3.0, 3.0, 3.0, 3.0]);
        let s = fold(spec, &obs);
        let r = rank_isotropy(&s, &obs[3], 0.35).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.r, 0.35);
    }

    #[test]
    fn centred_sphericity_matches_t_statistic() {
        // d = 1 with an intercept: the rank is the upper tail of the
        // leave-one-out studentized deviation with n - 2 degrees of freedom.
        let spec = GroupSpec::new(Family::DesignIsotropy { dim: 1 }).unwrap();
        let ys = [0.3, -1.2, 2.2, 0.7, -0.1, 1.9, -0.8];
        let obs = ones(&ys);
        let s = fold(spec, &obs);
        let r = rank_isotropy(&s, &obs[6], 0.0).unwrap().r;

        let prev = &ys[..6];
        let k = prev.len() as f64;
        let mean = prev.iter().sum::<f64>() / k;
        let var = prev.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let t = (ys[6] - mean) / (var * (1.0 + 1.0 / k)).sqrt();
        let expected = t_upper_tail(t, 5).unwrap();
        assert!((r - expected).abs() < 1e-12, "{r} vs {expected}");
    }
}
