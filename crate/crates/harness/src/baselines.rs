//! Classical auxiliary-variable estimators of a population mean under
//! simple random sampling with replacement.

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AuxEstimator {
    /// `z̄_pop · ȳ / z̄`.
    Ratio,
    /// `ȳ + β̂ (z̄_pop − z̄)` with `β̂` the sample least-squares slope.
    ControlVariate,
}

/// Estimates the mean of `y` from paired draws `(z, y)` (repeats allowed).
pub fn estimate_mean(kind: AuxEstimator, sample: &[(f64, f64)], population_mean_z: f64) -> Result<f64, HarnessError> {
    if sample.is_empty() {
        return Err(HarnessError::Precondition("empty sample".into()));
    }
    let n = sample.len() as f64;
    let z_bar = sample.iter().map(|s| s.0).sum::<f64>() / n;
    let y_bar = sample.iter().map(|s| s.1).sum::<f64>() / n;
    match kind {
        AuxEstimator::Ratio => {
            if z_bar == 0.0 {
                return Err(HarnessError::Precondition("ratio estimator needs a nonzero sample mean of z".into()));
            }
            Ok(population_mean_z * y_bar / z_bar)
        }
        AuxEstimator::ControlVariate => {
            let szz: f64 = sample.iter().map(|s| (s.0 - z_bar).powi(2)).sum();
            let szy: f64 = sample.iter().map(|s| (s.0 - z_bar) * (s.1 - y_bar)).sum();
            // With a single distinct z the slope is unidentified; fall back to ȳ.
            let beta = if szz > 0.0 { szy / szz } else { 0.0 };
            Ok(y_bar + beta * (population_mean_z - z_bar))
        }
    }
}
