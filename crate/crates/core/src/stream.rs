//! Streaming driver: fold, rank, calibrate and accumulate one observation at
//! a time.

use rand::Rng;
use serde::Serialize;

use crate::calibrator::Calibrator;
use crate::error::{Error, Result};
use crate::group::{GroupSpec, Observation, OrbitState};
use crate::martingale::MartingaleState;
use crate::rank::{rank, OrbitRank};
use crate::rng::{substream, StreamRng, Substream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub rank: OrbitRank,
    pub factor: f64,
    pub log10_wealth: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone)]
pub struct SequentialTest {
    state: OrbitState,
    calibrator: Calibrator,
    martingale: MartingaleState,
    thetas: StreamRng,
}

impl SequentialTest {
    /// Thetas come from the theta substream of `seed`.
    pub fn new(spec: GroupSpec, calibrator: Calibrator, alpha: f64, seed: u64) -> Result<Self> {
        Self::with_theta_stream(
            spec,
            calibrator,
            alpha,
            substream(seed, 0, Substream::Theta),
        )
    }

    pub fn with_theta_stream(
        spec: GroupSpec,
        calibrator: Calibrator,
        alpha: f64,
        thetas: StreamRng,
    ) -> Result<Self> {
        if calibrator.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: calibrator.dim(),
            });
        }
        Ok(Self {
            state: OrbitState::new(spec),
            calibrator,
            martingale: MartingaleState::new(alpha)?,
            thetas,
        })
    }

    pub fn state(&self) -> &OrbitState {
        &self.state
    }

    pub fn calibrator(&self) -> &Calibrator {
        &self.calibrator
    }

    pub fn martingale(&self) -> &MartingaleState {
        &self.martingale
    }

    /// Processes one observation, drawing its theta from the seeded stream.
    /// A rejected observation leaves the test untouched and consumes no theta.
    pub fn push(&mut self, obs: &Observation) -> Result<StepRecord> {
        self.state.update(obs)?;
        let theta = self.thetas.gen::<f64>();
        self.finish(obs, theta)
    }

    /// Processes one observation with a caller-supplied theta.
    pub fn push_with_theta(&mut self, obs: &Observation, theta: f64) -> Result<StepRecord> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Domain(format!("theta {theta} outside [0, 1]")));
        }
        self.state.update(obs)?;
        self.finish(obs, theta)
    }

    fn finish(&mut self, obs: &Observation, theta: f64) -> Result<StepRecord> {
        let rank = rank(&self.state, obs, theta)?;
        let factor = self.martingale.step(&mut self.calibrator, &[rank.r])?;
        Ok(StepRecord {
            rank,
            factor,
            log10_wealth: self.martingale.log10_wealth(),
            rejected: self.martingale.rejected,
        })
    }
}
