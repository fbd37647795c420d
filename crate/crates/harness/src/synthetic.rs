//! Gaussian-process synthetic populations on a one-dimensional grid.

use std::fmt;
use std::str::FromStr;

use active_sampling::{Characteristic, CharacteristicKind, Population};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::HarnessError;

/// Where the standardized response is shifted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// `min y = 0.1`.
    StrictlyPositive,
    /// `mean y = 0`.
    ZeroMean,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::StrictlyPositive => "positive",
            Scenario::ZeroMean => "zero-mean",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "positive" | "strictly-positive" | "strictlypositive" => Ok(Scenario::StrictlyPositive),
            "zero-mean" | "zeromean" | "zero" => Ok(Scenario::ZeroMean),
            other => Err(HarnessError::Config(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    /// Kernel bandwidth `σ` in `exp(−(z − z′)² / (2σ²))`.
    pub bandwidth: f64,
    pub target_r2: f64,
    pub scenario: Scenario,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(bandwidth: f64, target_r2: f64, scenario: Scenario, seed: u64) -> Self {
        Self { n: 1000, grid_lo: 0.001, grid_hi: 1.0, bandwidth, target_r2, scenario, seed }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n < 2 {
            return Err(HarnessError::Config("synthetic populations need at least 2 elements".into()));
        }
        if !(self.grid_lo > 0.0 && self.grid_hi > self.grid_lo) {
            return Err(HarnessError::Config("grid needs 0 < grid_lo < grid_hi".into()));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(HarnessError::Config("kernel bandwidth must be positive".into()));
        }
        if !(self.target_r2 > 0.0 && self.target_r2 < 1.0) {
            return Err(HarnessError::Config("target R² must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// A generated population before it is bound to a characteristic.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub z: Vec<f64>,
    /// Final (standardized, shifted) response.
    pub y: Vec<f64>,
    /// Noiseless latent signal, on the pre-standardization scale.
    pub signal: Vec<f64>,
    /// `var(signal) / var(signal + noise)` as realized.
    pub realized_r2: f64,
    /// Diagonal jitter that made the kernel matrix factorizable.
    pub jitter: f64,
}

impl SyntheticData {
    pub fn population(&self, kind: CharacteristicKind) -> Result<Population, HarnessError> {
        let n = self.z.len();
        Ok(Population::new(
            Characteristic::of_kind(kind, n),
            DMatrix::from_column_slice(n, 1, &self.y),
            DMatrix::from_column_slice(n, 1, &self.z),
            None,
        )?)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with divisor `n − 1`.
pub fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Draws a population: GP signal, calibrated Gaussian noise, then
/// standardization to unit sample variance, a sign flip towards positive
/// correlation with `z`, and the scenario shift.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, HarnessError> {
    spec.validate()?;
    let n = spec.n;
    let z = grid(n, spec.grid_lo, spec.grid_hi);
    let scale = -0.5 / (spec.bandwidth * spec.bandwidth);
    let kernel = DMatrix::from_fn(n, n, |i, j| ((z[i] - z[j]).powi(2) * scale).exp());

    // Smooth kernels are numerically rank deficient; grow the jitter until
    // the factorization succeeds.
    let mut jitter = 1e-10;
    let lower = loop {
        let mut k = kernel.clone();
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = k.cholesky() {
            break chol.l();
        }
        jitter *= 10.0;
        if jitter > 1e-2 {
            return Err(HarnessError::Precondition("kernel matrix could not be factorized".into()));
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let signal: Vec<f64> = (lower * xi).iter().copied().collect();
    let noise_sd = (sample_variance(&signal) * (1.0 - spec.target_r2) / spec.target_r2).sqrt();
    let raw: Vec<f64> = signal.iter().map(|f| f + noise_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let realized_r2 = sample_variance(&signal) / sample_variance(&raw);

    let (m, sd) = (mean(&raw), sample_variance(&raw).sqrt());
    let mut y: Vec<f64> = raw.iter().map(|v| (v - m) / sd).collect();
    if correlation(&y, &z) < 0.0 {
        y.iter_mut().for_each(|v| *v = -*v);
    }
    let shift = match spec.scenario {
        Scenario::StrictlyPositive => 0.1 - y.iter().copied().fold(f64::INFINITY, f64::min),
        Scenario::ZeroMean => -mean(&y),
    };
    y.iter_mut().for_each(|v| *v += shift);

    Ok(SyntheticData { spec: spec.clone(), z, y, signal, realized_r2, jitter })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_round_trip() {
        for s in [Scenario::StrictlyPositive, Scenario::ZeroMean] {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!("sideways".parse::<Scenario>().is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SyntheticSpec::new(0.1, 0.5, Scenario::ZeroMean, 0);
        spec.grid_lo = 0.0;
        assert!(generate_synthetic(&spec).is_err());
        let spec = SyntheticSpec::new(0.1, 1.0, Scenario::ZeroMean, 0);
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn zero_mean_scenario_is_centred() {
        let mut spec = SyntheticSpec::new(1.0, 0.75, Scenario::ZeroMean, 3);
        spec.n = 200;
        let data = generate_synthetic(&spec).unwrap();
        assert!(mean(&data.y).abs() < 1e-12);
        assert!((sample_variance(&data.y) - 1.0).abs() < 1e-9);
        assert!(correlation(&data.y, &data.z) >= 0.0);
    }
}
