//! Adaptive importance sampling for finite-population inference.
//!
//! A population of `N` elements carries response vectors `y_i` (expensive to
//! observe) and auxiliary vectors `z_i` (free). The target is a smooth
//! function `θ = h(t_y)` of the population totals `t_y = Σ y_i`. The crate
//! provides:
//!
//! * [`characteristics`]: the supported `h`, their gradients and the mapping
//!   from raw study variables to response vectors.
//! * [`schemes`]: optimal and baseline sampling schemes, multinomial draws and
//!   the exact covariance of the sample-weighted total.
//! * [`surrogates`]: prediction models supplying means and residual
//!   covariances for unlabeled elements.
//! * [`estimation`]: batch and pooled totals, three covariance estimators,
//!   delta-method variances and normal confidence intervals.
//! * [`active`]: the sequential learn/optimize/sample/estimate loop.

pub mod active;
pub mod characteristics;
pub mod error;
pub mod estimation;
pub mod parallel;
pub mod schemes;
pub mod surrogates;

pub mod linalg;

pub use active::{
    pilot_sample_size, run_active_sampling, ActiveSampler, FallbackKind, IterationTrace,
    LabelOracle, LoopConfig, LoopResult, Observation, SchemeSource, SurrogateSpec,
    TerminationReason,
};
pub use characteristics::{Characteristic, CharacteristicKind, Population, SamplingFrame};
pub use error::{Error, Result};
pub use estimation::{PooledEstimate, SampleHistory, VarianceMethod};
pub use schemes::{BaselineKind, BatchDraw, SamplingScheme, DEFAULT_FLOOR_EPSILON};
pub use surrogates::{LabeledSet, ModelConfig, ModelKind, SurrogateFit};
