//! Predictable calibrators: densities on `[0,1]^K` that turn ranks into
//! martingale factors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp for ranks fed to the power family.
pub const POWER_FLOOR: f64 = 1e-12;

/// Fixed-size grid histogram with a pseudocount on every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    bins: usize,
    dim: usize,
    counts: Vec<u64>,
    lambda: f64,
    total: u64,
}

impl Histogram {
    pub fn new(bins: usize, dim: usize, lambda: f64) -> Result<Self> {
        if bins == 0 || dim == 0 {
            return Err(Error::InvalidCalibrator(
                "histogram needs at least one bin and one axis".into(),
            ));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidCalibrator(format!(
                "pseudocount {lambda} must be > 0"
            )));
        }
        let cells = (bins as u64)
            .checked_pow(dim as u32)
            .filter(|&c| c <= 1 << 28)
            .ok_or_else(|| Error::InvalidCalibrator(format!("{bins}^{dim} cells is too many")))?;
        Ok(Self {
            bins,
            dim,
            counts: vec![0; cells as usize],
            lambda,
            total: 0,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn cells(&self) -> usize {
        self.counts.len()
    }

    /// Half-open bins `[i/B, (i+1)/B)`, the last one closed.
    fn cell(&self, r: &[f64]) -> usize {
        r.iter().fold(0, |acc, &x| {
            let i = ((x * self.bins as f64) as usize).min(self.bins - 1);
            acc * self.bins + i
        })
    }

    fn cell_density(&self, cell: usize) -> f64 {
        let cells = self.counts.len() as f64;
        // bin volume is 1/cells
        (self.counts[cell] as f64 + self.lambda) * cells / (self.total as f64 + self.lambda * cells)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Calibrator {
    /// `κ r^(κ-1)`.
    PowerFixed {
        kappa: f64,
    },
    /// `Σ w_j κ_j r^(κ_j - 1)`.
    PowerMixture {
        kappas: Vec<f64>,
        weights: Vec<f64>,
    },
    Histogram1D(Histogram),
    HistogramKD(Histogram),
    /// Product of univariate calibrators, one per coordinate.
    Product(Vec<Calibrator>),
}

impl Calibrator {
    pub fn power(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(Error::InvalidCalibrator(format!(
                "power exponent {kappa} not in (0, 1]"
            )));
        }
        Ok(Self::PowerFixed { kappa })
    }

    /// Equal-weight mixture over κ ∈ {0.05, 0.10, …, 0.95}.
    pub fn power_mixture() -> Self {
        let kappas: Vec<f64> = (1..=19).map(|j| j as f64 * 0.05).collect();
        let weights = vec![1.0 / kappas.len() as f64; kappas.len()];
        Self::PowerMixture { kappas, weights }
    }

    pub fn power_mixture_with(kappas: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if kappas.is_empty() || kappas.len() != weights.len() {
            return Err(Error::InvalidCalibrator(
                "mixture needs matching, nonempty grids".into(),
            ));
        }
        if kappas.iter().any(|&k| !(k > 0.0 && k <= 1.0)) || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidCalibrator(
                "mixture exponent or weight out of range".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidCalibrator(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self::PowerMixture { kappas, weights })
    }

    pub fn histogram(bins: usize, lambda: f64) -> Result<Self> {
        Ok(Self::Histogram1D(Histogram::new(bins, 1, lambda)?))
    }

    pub fn histogram_kd(bins: usize, dim: usize, lambda: f64) -> Result<Self> {
        Ok(Self::HistogramKD(Histogram::new(bins, dim, lambda)?))
    }

    pub fn product(parts: Vec<Calibrator>) -> Result<Self> {
        if parts.is_empty() || parts.iter().any(|c| c.dim() != 1) {
            return Err(Error::InvalidCalibrator(
                "product calibrator needs univariate parts".into(),
            ));
        }
        Ok(Self::Product(parts))
    }

    /// Dimension of the cube the density lives on.
    pub fn dim(&self) -> usize {
        match self {
            Self::HistogramKD(h) => h.dim,
            Self::Product(parts) => parts.len(),
            _ => 1,
        }
    }

    fn check_point(&self, r: &[f64]) -> Result<()> {
        if r.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: r.len(),
            });
        }
        if let Some(x) = r.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Domain(format!("rank {x} outside [0, 1]")));
        }
        Ok(())
    }

    /// Density of the current state at `r`.
    pub fn evaluate(&self, r: &[f64]) -> Result<f64> {
        self.check_point(r)?;
        Ok(self.density(r))
    }

    fn density(&self, r: &[f64]) -> f64 {
        match self {
            Self::PowerFixed { kappa } => {
                let x = r[0].max(POWER_FLOOR);
                kappa * x.powf(kappa - 1.0)
            }
            Self::PowerMixture { kappas, weights } => {
                let x = r[0].max(POWER_FLOOR);
                kappas
                    .iter()
                    .zip(weights)
                    .map(|(k, w)| w * k * x.powf(k - 1.0))
                    .sum()
            }
            Self::Histogram1D(h) | Self::HistogramKD(h) => h.cell_density(h.cell(r)),
            Self::Product(parts) => parts
                .iter()
                .zip(r)
                .map(|(c, x)| c.density(std::slice::from_ref(x)))
                .product(),
        }
    }

    /// Incorporates an observed rank; fixed calibrators are unchanged.
    pub fn update(&mut self, r: &[f64]) -> Result<()> {
        self.check_point(r)?;
        match self {
            Self::Histogram1D(h) | Self::HistogramKD(h) => {
                let cell = h.cell(r);
                h.counts[cell] += 1;
                h.total += 1;
            }
            Self::Product(parts) => {
                for (c, x) in parts.iter_mut().zip(r) {
                    c.update(std::slice::from_ref(x))?;
                }
            }
            Self::PowerFixed { .. } | Self::PowerMixture { .. } => {}
        }
        Ok(())
    }

    /// Exact integral of the current density over the cube.
    pub fn integral(&self) -> f64 {
        match self {
            // ∫ κ r^(κ-1) dr = 1 for every κ in (0, 1]
            Self::PowerFixed { .. } => 1.0,
            Self::PowerMixture { weights, .. } => weights.iter().sum(),
            Self::Histogram1D(h) | Self::HistogramKD(h) => {
                let vol = 1.0 / h.cells() as f64;
                (0..h.cells()).map(|c| h.cell_density(c) * vol).sum()
            }
            Self::Product(parts) => parts.iter().map(Calibrator::integral).product(),
        }
    }
}

/// Calibrator selection strings: `power:<κ>`, `power-mixture`,
/// `hist:<B>:<λ>`, `histkd:<B>:<λ>`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum CalibratorSpec {
    Power(f64),
    #[default]
    PowerMixture,
    Histogram {
        bins: usize,
        lambda: f64,
    },
    HistogramKD {
        bins: usize,
        lambda: f64,
    },
}

impl CalibratorSpec {
    /// Builds a calibrator on `[0,1]^dim`. Univariate specs used with
    /// `dim > 1` become a product of independent copies.
    pub fn build(&self, dim: usize) -> Result<Calibrator> {
        if dim == 0 {
            return Err(Error::InvalidCalibrator("dimension must be >= 1".into()));
        }
        let univariate = || -> Result<Calibrator> {
            match *self {
                Self::Power(k) => Calibrator::power(k),
                Self::PowerMixture => Ok(Calibrator::power_mixture()),
                Self::Histogram { bins, lambda } => Calibrator::histogram(bins, lambda),
                Self::HistogramKD { .. } => unreachable!(),
            }
        };
        match *self {
            Self::HistogramKD { bins, lambda } => Calibrator::histogram_kd(bins, dim, lambda),
            _ if dim == 1 => univariate(),
            _ => Calibrator::product((0..dim).map(|_| univariate()).collect::<Result<_>>()?),
        }
    }
}

impl FromStr for CalibratorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::InvalidCalibrator(format!("cannot parse calibrator `{s}`"));
        let spec = match parts.as_slice() {
            ["power-mixture"] => Self::PowerMixture,
            ["power", k] => Self::Power(k.parse().map_err(|_| bad())?),
            ["hist", b, l] | ["histkd", b, l] => {
                let bins = b.parse().map_err(|_| bad())?;
                let lambda = l.parse().map_err(|_| bad())?;
                if parts[0] == "hist" {
                    Self::Histogram { bins, lambda }
                } else {
                    Self::HistogramKD { bins, lambda }
                }
            }
            _ => return Err(bad()),
        };
        // validate parameters eagerly
        spec.build(1)?;
        Ok(spec)
    }
}

impl fmt::Display for CalibratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Power(k) => write!(f, "power:{k}"),
            Self::PowerMixture => write!(f, "power-mixture"),
            Self::Histogram { bins, lambda } => write!(f, "hist:{bins}:{lambda}"),
            Self::HistogramKD { bins, lambda } => write!(f, "histkd:{bins}:{lambda}"),
        }
    }
}
