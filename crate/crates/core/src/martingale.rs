//! Conformal test martingale `M_n = Π f_i(R_i)` with the `1/α` threshold.
//!
//! Wealth is accumulated in log space. Rejection latches on the running
//! maximum: once the process has touched `1/α` the test stays rejected,
//! which is what the stopped-process guarantee covers.
//!
//! Continued monitoring and [`MartingaleState::combine`] are only licensed for
//! stopping rules that depend on the ranks alone; the library cannot check a
//! caller's stopping rule.

use serde::{Deserialize, Serialize};

use crate::calibrator::Calibrator;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleState {
    pub log_wealth: f64,
    pub max_log_wealth: f64,
    pub n: usize,
    pub alpha: f64,
    pub rejected: bool,
}

impl MartingaleState {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("alpha {alpha} not in (0, 1)")));
        }
        Ok(Self {
            log_wealth: 0.0,
            max_log_wealth: 0.0,
            n: 0,
            alpha,
            rejected: false,
        })
    }

    /// `-ln α`: the log-wealth that triggers rejection.
    pub fn log_threshold(&self) -> f64 {
        -self.alpha.ln()
    }

    pub fn wealth(&self) -> f64 {
        self.log_wealth.exp()
    }

    pub fn log10_wealth(&self) -> f64 {
        self.log_wealth / std::f64::consts::LN_10
    }

    /// Multiplies in one factor `f > 0`.
    pub fn apply_factor(&mut self, factor: f64) -> Result<()> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::NonPositiveDensity(factor));
        }
        self.log_wealth += factor.ln();
        self.max_log_wealth = self.max_log_wealth.max(self.log_wealth);
        self.n += 1;
        self.rejected |= self.max_log_wealth >= self.log_threshold();
        Ok(())
    }

    /// Evaluates the calibrator at `r`, multiplies the factor in, then lets
    /// the calibrator learn from `r`. Returns the factor used.
    pub fn step(&mut self, cal: &mut Calibrator, r: &[f64]) -> Result<f64> {
        let factor = cal.evaluate(r)?;
        self.apply_factor(factor)?;
        cal.update(r)?;
        Ok(factor)
    }

    /// Product of two martingales driven by independent streams.
    pub fn combine(&self, other: &Self) -> Result<Self> {
        if self.alpha != other.alpha {
            return Err(Error::AlphaMismatch(self.alpha, other.alpha));
        }
        let log_wealth = self.log_wealth + other.log_wealth;
        let max_log_wealth = self
            .max_log_wealth
            .max(other.max_log_wealth)
            .max(log_wealth);
        let mut out = Self {
            log_wealth,
            max_log_wealth,
            n: self.n + other.n,
            alpha: self.alpha,
            rejected: self.rejected || other.rejected,
        };
        out.rejected |= out.log_wealth >= out.log_threshold();
        Ok(out)
    }
}

/// Functional form of [`MartingaleState::step`].
pub fn step(
    mut m: MartingaleState,
    mut cal: Calibrator,
    r: &[f64],
) -> Result<(MartingaleState, Calibrator)> {
    m.step(&mut cal, r)?;
    Ok((m, cal))
}
