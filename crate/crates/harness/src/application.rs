//! A synthetic stand-in for a crash-simulation scenario grid.
//!
//! Each element is a (case, glance, deceleration) configuration. A case has a
//! crash threshold and a maximal impact speed; the configuration crashes when
//! the off-road glance outlasts the threshold, which grows with the braking
//! deceleration. The outcome of a crash is the impact speed reduction an
//! emergency braking system would achieve. Prior weights follow an
//! exponential glance distribution times a normal deceleration distribution.

use active_sampling::{Characteristic, Population};
use nalgebra::DMatrix;

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct ApplicationSpec {
    /// Glance at which each case starts to crash at the lowest deceleration.
    pub case_thresholds: Vec<f64>,
    /// Maximal impact speed of each case (km/h).
    pub case_max_speeds: Vec<f64>,
    pub glance_levels: usize,
    pub glance_max: f64,
    pub decel_levels: usize,
    pub decel_min: f64,
    pub decel_max: f64,
    /// Threshold increase per unit of deceleration above `decel_min`.
    pub threshold_slope: f64,
    /// Mean of the exponential glance prior.
    pub glance_mean: f64,
    pub decel_mean: f64,
    pub decel_sd: f64,
    /// Time scale over which impact speed approaches the case maximum.
    pub speed_time_scale: f64,
    /// Speed reduction the braking system achieves per unit deceleration.
    pub braking_gain: f64,
}

impl Default for ApplicationSpec {
    fn default() -> Self {
        Self {
            case_thresholds: vec![0.8, 1.2, 1.6, 2.0],
            case_max_speeds: vec![40.0, 55.0, 70.0, 85.0],
            glance_levels: 25,
            glance_max: 6.0,
            decel_levels: 20,
            decel_min: 3.3,
            decel_max: 10.3,
            threshold_slope: 0.3,
            glance_mean: 1.5,
            decel_mean: 6.5,
            decel_sd: 1.5,
            speed_time_scale: 1.5,
            braking_gain: 2.5,
        }
    }
}

impl ApplicationSpec {
    pub fn len(&self) -> usize {
        self.case_thresholds.len() * self.glance_levels * self.decel_levels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Auxiliary columns: glance, deceleration, case maximal speed.
pub const GLANCE: usize = 0;
pub const DECELERATION: usize = 1;
pub const MAX_SPEED: usize = 2;

fn levels(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Builds the grid as a ratio-of-weighted-totals population with raw
/// outcomes `(r_i, x_i)`. Rejects grids without any crash.
pub fn generate_application_grid(spec: &ApplicationSpec) -> Result<Population, HarnessError> {
    if spec.case_thresholds.len() != spec.case_max_speeds.len() || spec.case_thresholds.is_empty() {
        return Err(HarnessError::Config("every case needs a threshold and a maximal speed".into()));
    }
    if spec.glance_levels == 0 || spec.decel_levels == 0 {
        return Err(HarnessError::Config("grid needs at least one level per input".into()));
    }
    if !(spec.glance_mean > 0.0 && spec.decel_sd > 0.0 && spec.speed_time_scale > 0.0) {
        return Err(HarnessError::Config("distribution parameters must be positive".into()));
    }
    let glances = levels(spec.glance_levels, 0.0, spec.glance_max);
    let decels = levels(spec.decel_levels, spec.decel_min, spec.decel_max);
    let n = spec.len();
    let mut aux = DMatrix::zeros(n, 3);
    let mut raw = DMatrix::zeros(n, 2);
    let mut weights = Vec::with_capacity(n);
    let mut i = 0;
    for (&threshold0, &max_speed) in spec.case_thresholds.iter().zip(&spec.case_max_speeds) {
        for &o in &glances {
            for &d in &decels {
                let threshold = threshold0 + spec.threshold_slope * (d - spec.decel_min);
                let crash = o > threshold;
                let impact = max_speed * (1.0 - (-(o - threshold) / spec.speed_time_scale).exp());
                let reduction = if crash { impact.min(spec.braking_gain * d) } else { 0.0 };
                aux[(i, GLANCE)] = o;
                aux[(i, DECELERATION)] = d;
                aux[(i, MAX_SPEED)] = max_speed;
                raw[(i, 0)] = crash as u8 as f64;
                raw[(i, 1)] = reduction;
                let glance_density = (-o / spec.glance_mean).exp();
                let decel_density = (-0.5 * ((d - spec.decel_mean) / spec.decel_sd).powi(2)).exp();
                weights.push(glance_density * decel_density);
                i += 1;
            }
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    if raw.column(0).iter().all(|r| *r == 0.0) {
        return Err(HarnessError::Config("grid has no crashes, so the target is undefined".into()));
    }
    Ok(Population::new(Characteristic::ratio_of_weighted_totals(), raw, aux, Some(weights))?)
}
