//! Joint-rank test for independence across K streams.
//!
//! Each coordinate stream is ranked under its own copy of the group; under
//! the null (every stream invariant and the streams mutually independent)
//! the rank vector is uniform on `[0,1]^K`, so any predictable density on
//! the cube calibrates it.

use rand::Rng;
use serde::Serialize;

use crate::calibrator::Calibrator;
use crate::error::{Error, Result};
use crate::group::{Family, GroupSpec, Observation, OrbitState};
use crate::martingale::MartingaleState;
use crate::rank::{rank, OrbitRank};
use crate::rng::{substream, StreamRng, Substream};

/// Grids larger than this are worth a warning.
pub const LARGE_GRID: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointRank {
    pub components: Vec<OrbitRank>,
    pub n: usize,
}

impl JointRank {
    pub fn values(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.r).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointStep {
    pub rank: JointRank,
    pub factor: f64,
    pub log10_wealth: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone)]
pub struct JointTest {
    states: Vec<OrbitState>,
    calibrator: Calibrator,
    martingale: MartingaleState,
    thetas: StreamRng,
}

impl JointTest {
    pub fn new(
        spec: GroupSpec,
        streams: usize,
        calibrator: Calibrator,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::with_theta_stream(
            spec,
            streams,
            calibrator,
            alpha,
            substream(seed, 0, Substream::Theta),
        )
    }

    pub fn with_theta_stream(
        spec: GroupSpec,
        streams: usize,
        calibrator: Calibrator,
        alpha: f64,
        thetas: StreamRng,
    ) -> Result<Self> {
        if streams == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if calibrator.dim() != streams {
            return Err(Error::DimensionMismatch {
                expected: streams,
                got: calibrator.dim(),
            });
        }
        Ok(Self {
            states: vec![OrbitState::new(spec); streams],
            calibrator,
            martingale: MartingaleState::new(alpha)?,
            thetas,
        })
    }

    /// Builds a test from per-stream states, which must share one family.
    pub fn from_states(
        states: Vec<OrbitState>,
        calibrator: Calibrator,
        martingale: MartingaleState,
        thetas: StreamRng,
    ) -> Result<Self> {
        let first = states.first().ok_or(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        })?;
        if let Some(other) = states.iter().find(|s| s.spec() != first.spec()) {
            return Err(Error::InvalidSpec(format!(
                "stream families differ: {} vs {}",
                first.spec(),
                other.spec()
            )));
        }
        if calibrator.dim() != states.len() {
            return Err(Error::DimensionMismatch {
                expected: states.len(),
                got: calibrator.dim(),
            });
        }
        Ok(Self {
            states,
            calibrator,
            martingale,
            thetas,
        })
    }

    pub fn streams(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[OrbitState] {
        &self.states
    }

    pub fn calibrator(&self) -> &Calibrator {
        &self.calibrator
    }

    pub fn martingale(&self) -> &MartingaleState {
        &self.martingale
    }

    /// One joint step with thetas drawn from the seeded stream.
    pub fn push(&mut self, obs: &[Observation]) -> Result<JointStep> {
        self.check_len(obs.len())?;
        let thetas: Vec<f64> = (0..obs.len()).map(|_| self.thetas.gen::<f64>()).collect();
        self.step_joint(obs, &thetas)
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.states.len() {
            Err(Error::DimensionMismatch {
                expected: self.states.len(),
                got,
            })
        } else {
            Ok(())
        }
    }

    /// Updates and ranks every stream, steps the martingale once with the
    /// joint factor, then lets the joint calibrator learn the rank vector.
    /// On error nothing is modified.
    pub fn step_joint(&mut self, obs: &[Observation], thetas: &[f64]) -> Result<JointStep> {
        self.check_len(obs.len())?;
        self.check_len(thetas.len())?;
        if let Some(t) = thetas.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Domain(format!("theta {t} outside [0, 1]")));
        }
        for (s, o) in self.states.iter().zip(obs) {
            s.spec().validate(o)?;
        }
        // only the design family can still fail after validation
        if matches!(
            self.states[0].spec().family(),
            Family::DesignIsotropy { .. }
        ) {
            let mut next = self.states.clone();
            for (s, o) in next.iter_mut().zip(obs) {
                s.update(o)?;
            }
            self.states = next;
        } else {
            for (s, o) in self.states.iter_mut().zip(obs) {
                s.update(o)?;
            }
        }
        let components = self
            .states
            .iter()
            .zip(obs)
            .zip(thetas)
            .map(|((s, o), &t)| rank(s, o, t))
            .collect::<Result<Vec<_>>>()?;
        let joint = JointRank {
            n: self.states[0].n(),
            components,
        };
        let factor = self
            .martingale
            .step(&mut self.calibrator, &joint.values())?;
        Ok(JointStep {
            rank: joint,
            factor,
            log10_wealth: self.martingale.log10_wealth(),
            rejected: self.martingale.rejected,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrator::CalibratorSpec;

    fn pair(a: f64, b: f64) -> [Observation; 2] {
        [Observation::scalar(a), Observation::scalar(b)]
    }

    #[test]
    fn flat_prior_gives_unit_first_factor() {
        let cal = Calibrator::histogram_kd(4, 2, 1.0).unwrap();
        let mut t = JointTest::new(GroupSpec::full_permutation(), 2, cal, 0.05, 1).unwrap();
        let step = t.step_joint(&pair(0.3, -1.0), &[0.2, 0.9]).unwrap();
        assert_eq!(step.factor, 1.0);
        assert_eq!(step.rank.values(), vec![0.2, 0.9]);
    }

    #[test]
    fn dimension_checks() {
        let cal = Calibrator::histogram_kd(4, 3, 1.0).unwrap();
        assert!(JointTest::new(GroupSpec::full_permutation(), 2, cal, 0.05, 1).is_err());
        let cal = Calibrator::histogram_kd(4, 2, 1.0).unwrap();
        let mut t = JointTest::new(GroupSpec::full_permutation(), 2, cal, 0.05, 1).unwrap();
        assert!(t.step_joint(&pair(1.0, 2.0), &[0.5]).is_err());
        assert!(t.push(&[Observation::scalar(1.0)]).is_err());
        assert_eq!(t.states()[0].n(), 0);
    }

    #[test]
    fn mixed_families_are_rejected() {
        let states = vec![
            OrbitState::new(GroupSpec::full_permutation()),
            OrbitState::new(GroupSpec::full_orthogonal()),
        ];
        let cal = Calibrator::histogram_kd(4, 2, 1.0).unwrap();
        let err = JointTest::from_states(
            states,
            cal,
            MartingaleState::new(0.05).unwrap(),
            substream(0, 0, Substream::Theta),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(_)));
    }

    #[test]
    fn product_calibrator_recovers_per_stream_factors() {
        let spec = GroupSpec::full_permutation();
        let joint_cal = CalibratorSpec::Histogram {
            bins: 5,
            lambda: 1.0,
        }
        .build(2)
        .unwrap();
        let mut joint = JointTest::new(spec, 2, joint_cal, 0.05, 9).unwrap();
        let mut singles: Vec<_> = (0..2)
            .map(|_| {
                (
                    OrbitState::new(spec),
                    Calibrator::histogram(5, 1.0).unwrap(),
                    MartingaleState::new(0.05).unwrap(),
                )
            })
            .collect();
        let data = [
            (0.1, 2.0),
            (0.7, -1.0),
            (-0.4, 0.5),
            (1.3, 0.2),
            (0.0, 0.9),
            (0.8, -2.2),
        ];
        let thetas = [
            (0.3, 0.6),
            (0.1, 0.8),
            (0.5, 0.5),
            (0.9, 0.2),
            (0.4, 0.7),
            (0.2, 0.1),
        ];
        for ((a, b), (ta, tb)) in data.iter().zip(thetas) {
            let step = joint.step_joint(&pair(*a, *b), &[ta, tb]).unwrap();
            let mut product = 1.0;
            for ((st, cal, m), (x, t)) in singles.iter_mut().zip([(*a, ta), (*b, tb)]) {
                let o = Observation::scalar(x);
                st.update(&o).unwrap();
                let r = rank(st, &o, t).unwrap();
                product *= m.step(cal, &[r.r]).unwrap();
            }
            assert_eq!(step.factor, product);
        }
    }
}
