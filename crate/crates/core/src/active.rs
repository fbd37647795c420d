//! The sequential active-sampling loop.
//!
//! Every iteration learns a surrogate from the labels collected so far,
//! turns it into a sampling scheme (falling back to a fixed scheme whenever
//! learning is not possible), draws a multinomial batch, labels the newly
//! selected elements and updates the pooled estimate.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::characteristics::{Characteristic, CharacteristicKind, Population, SamplingFrame};
use crate::error::{Error, Result};
use crate::estimation::{PooledEstimate, SampleHistory, VarianceMethod};
use crate::parallel::{map_indexed, Execution};
use crate::schemes::{
    application_scheme, baseline_scheme, draw_multinomial, optimal_scheme_predictive, BaselineKind,
    SamplingScheme, DEFAULT_FLOOR_EPSILON,
};
use crate::surrogates::{fit_application_surrogate, fit_surrogate, LabeledSet, ModelConfig, ModelKind};

/// Source of labels: raw outcomes for an element index.
///
/// Implementations must be deterministic; the loop never asks twice for the
/// same element within one run.
pub trait LabelOracle: Sync {
    fn label(&self, index: usize) -> std::result::Result<Vec<f64>, String>;
}

/// A fully enumerated population labels itself.
impl LabelOracle for Population {
    fn label(&self, index: usize) -> std::result::Result<Vec<f64>, String> {
        if index >= self.len() {
            return Err(format!("index {index} outside a population of {}", self.len()));
        }
        Ok(self.raw().row(index).iter().copied().collect())
    }
}

impl<F> LabelOracle for F
where
    F: Fn(usize) -> std::result::Result<Vec<f64>, String> + Sync,
{
    fn label(&self, index: usize) -> std::result::Result<Vec<f64>, String> {
        self(index)
    }
}

/// A labeled element: raw outcomes and the mapped response vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub raw: Vec<f64>,
    pub response: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSpec {
    pub kind: ModelKind,
    pub config: ModelConfig,
    /// Refit every this many iterations; schemes in between reuse the last fit.
    pub refit_every: usize,
}

impl SurrogateSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self { kind, config: ModelConfig::default(), refit_every: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FallbackKind {
    Uniform,
    /// `π ∝ p_i`.
    Density,
}

impl FallbackKind {
    /// Density for the ratio of weighted totals, uniform otherwise.
    pub fn default_for(kind: CharacteristicKind) -> Self {
        match kind {
            CharacteristicKind::RatioOfWeightedTotals => FallbackKind::Density,
            _ => FallbackKind::Uniform,
        }
    }

    fn scheme(self, frame: &SamplingFrame, floor_epsilon: f64) -> Result<SamplingScheme> {
        match self {
            FallbackKind::Uniform => Ok(SamplingScheme::uniform(frame.len())),
            FallbackKind::Density => baseline_scheme(&BaselineKind::Density, frame, floor_epsilon),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub max_iterations: usize,
    /// Stop once the standard error drops below this; may be infinite.
    pub precision_target: f64,
    /// One batch size per iteration.
    pub batch_sizes: Vec<usize>,
    pub surrogate: SurrogateSpec,
    pub variance_method: VarianceMethod,
    /// Treat predictions as exact (zero residual covariance).
    pub naive_mode: bool,
    pub fallback: FallbackKind,
    pub floor_epsilon: f64,
    /// Interval level is `1 − alpha`.
    pub alpha: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl LoopConfig {
    /// `iterations` batches of `batch_size`, kernel ridge surrogate, design variance.
    pub fn new(iterations: usize, batch_size: usize, precision_target: f64) -> Self {
        Self {
            max_iterations: iterations,
            precision_target,
            batch_sizes: vec![batch_size; iterations],
            surrogate: SurrogateSpec::new(ModelKind::KernelRidge),
            variance_method: VarianceMethod::Design,
            naive_mode: false,
            fallback: FallbackKind::Uniform,
            floor_epsilon: DEFAULT_FLOOR_EPSILON,
            alpha: 0.05,
            seed: 0,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("at least one iteration is required"));
        }
        if !(self.precision_target > 0.0) {
            return Err(Error::invalid("precision target must be positive"));
        }
        if self.batch_sizes.len() != self.max_iterations {
            return Err(Error::invalid(format!(
                "{} batch sizes for {} iterations",
                self.batch_sizes.len(),
                self.max_iterations
            )));
        }
        if self.batch_sizes.contains(&0) {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        if self.variance_method == VarianceMethod::Design && self.batch_sizes.iter().any(|&n| n < 2) {
            return Err(Error::invalid("design variance needs batches of at least two draws"));
        }
        if self.surrogate.refit_every == 0 {
            return Err(Error::invalid("refit cadence must be positive"));
        }
        if !(0.0..1.0).contains(&self.floor_epsilon) {
            return Err(Error::invalid("floor epsilon must lie in [0, 1)"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Why an iteration did not use a surrogate-driven scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FallbackReason {
    FirstIteration,
    TooFewLabels,
    FitFailed,
    /// `h` has no gradient at the previous pooled totals.
    UndefinedGradient,
    DegenerateScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeSource {
    Surrogate,
    Fallback(FallbackReason),
    /// A non-adaptive sampler's fixed scheme.
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub iteration: usize,
    pub batch_size: usize,
    /// Cumulative selections `m_k`.
    pub total_size: usize,
    pub source: SchemeSource,
    /// Outcome of a fit attempted this iteration.
    pub fit_success: Option<bool>,
    pub holdout_score: Option<f64>,
    pub min_probability: f64,
    pub max_probability: f64,
    pub new_labels: usize,
    /// `None` when `h` is undefined at the pooled totals.
    pub estimate: Option<PooledEstimate>,
}

impl IterationTrace {
    pub fn std_error(&self) -> Option<f64> {
        self.estimate.as_ref().map(|e| e.std_error)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminationReason {
    PrecisionReached,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopResult {
    /// Estimate after the last iteration.
    pub estimate: Option<PooledEstimate>,
    /// Labeled elements in index order.
    pub labeled: Vec<(usize, Observation)>,
    pub history: SampleHistory,
    pub trace: Vec<IterationTrace>,
    /// The scheme used in each iteration.
    pub schemes: Vec<SamplingScheme>,
    /// `None` for a partial result.
    pub termination: Option<TerminationReason>,
}

/// An oracle failure, with everything completed before it.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopFailure {
    pub error: Error,
    pub partial: Box<LoopResult>,
}

impl std::fmt::Display for LoopFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} iterations)", self.error, self.partial.trace.len())
    }
}

impl std::error::Error for LoopFailure {}

/// What the current surrogate predicts, in the form the scheme needs.
enum Prediction {
    Responses { means: DMatrix<f64>, covariances: Vec<DMatrix<f64>> },
    Application { crash_prob: Vec<f64>, outcome: Vec<f64>, residual_sd: Vec<f64> },
}

enum Mode {
    Adaptive,
    Fixed(SamplingScheme),
}

/// Step-wise driver of the loop.
///
/// [`ActiveSampler::step`] runs one iteration regardless of the stopping rule,
/// which lets experiments run to a fixed budget; [`ActiveSampler::run`]
/// applies the rule.
pub struct ActiveSampler<'a, O: LabelOracle + ?Sized> {
    frame: &'a SamplingFrame,
    characteristic: Characteristic,
    oracle: &'a O,
    config: LoopConfig,
    mode: Mode,
    draw_rng: ChaCha8Rng,
    variance_rng: ChaCha8Rng,
    history: SampleHistory,
    /// Responses of labeled elements; other rows are never read.
    responses: DMatrix<f64>,
    labels: BTreeMap<usize, Observation>,
    prediction: Option<Prediction>,
    trace: Vec<IterationTrace>,
    schemes: Vec<SamplingScheme>,
}

impl<'a, O: LabelOracle + ?Sized> ActiveSampler<'a, O> {
    pub fn new(
        frame: &'a SamplingFrame,
        characteristic: Characteristic,
        oracle: &'a O,
        config: LoopConfig,
    ) -> Result<Self> {
        Self::with_mode(frame, characteristic, oracle, config, Mode::Adaptive)
    }

    /// A non-adaptive sampler drawing every batch from `scheme`. It consumes
    /// the same random stream as the adaptive sampler with the same seed.
    pub fn fixed(
        frame: &'a SamplingFrame,
        characteristic: Characteristic,
        oracle: &'a O,
        config: LoopConfig,
        scheme: SamplingScheme,
    ) -> Result<Self> {
        if scheme.len() != frame.len() {
            return Err(Error::invalid("fixed scheme and frame differ in length"));
        }
        Self::with_mode(frame, characteristic, oracle, config, Mode::Fixed(scheme))
    }

    fn with_mode(
        frame: &'a SamplingFrame,
        characteristic: Characteristic,
        oracle: &'a O,
        config: LoopConfig,
        mode: Mode,
    ) -> Result<Self> {
        config.validate()?;
        if characteristic.kind() == CharacteristicKind::LinearMean && characteristic.population_size() != frame.len()
        {
            return Err(Error::invalid("linear mean defined for a different population size"));
        }
        let mut variance_rng = ChaCha8Rng::seed_from_u64(config.seed);
        variance_rng.set_stream(1);
        Ok(Self {
            frame,
            characteristic,
            oracle,
            draw_rng: ChaCha8Rng::seed_from_u64(config.seed),
            variance_rng,
            responses: DMatrix::zeros(frame.len(), characteristic.dimension()),
            config,
            mode,
            history: SampleHistory::new(),
            labels: BTreeMap::new(),
            prediction: None,
            trace: Vec::new(),
            schemes: Vec::new(),
        })
    }

    /// Number of completed iterations.
    pub fn iteration(&self) -> usize {
        self.trace.len()
    }

    pub fn is_exhausted(&self) -> bool {
        self.iteration() >= self.config.max_iterations
    }

    pub fn history(&self) -> &SampleHistory {
        &self.history
    }

    pub fn trace(&self) -> &[IterationTrace] {
        &self.trace
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    /// Labeled elements so far, keyed by index.
    pub fn labels(&self) -> &BTreeMap<usize, Observation> {
        &self.labels
    }

    /// The scheme used in each completed iteration.
    pub fn schemes(&self) -> &[SamplingScheme] {
        &self.schemes
    }

    /// Responses of labeled elements (zero rows elsewhere).
    pub fn responses(&self) -> &DMatrix<f64> {
        &self.responses
    }

    /// Whether the last iteration met the precision target.
    pub fn precision_reached(&self) -> bool {
        self.trace.last().and_then(|t| t.estimate.as_ref()).is_some_and(|e| {
            !e.insufficient && e.std_error < self.config.precision_target
        })
    }

    /// Runs one iteration. Returns `None` once the iteration budget is spent.
    pub fn step(&mut self) -> Result<Option<&IterationTrace>> {
        if self.is_exhausted() {
            return Ok(None);
        }
        let k = self.iteration() + 1;
        let (scheme, source, fit_success, holdout_score) = self.choose_scheme(k)?;

        let n = self.config.batch_sizes[k - 1];
        let draw = draw_multinomial(&scheme, n, &mut self.draw_rng);

        let fresh: Vec<usize> =
            draw.selections().map(|(i, _, _)| i).filter(|i| !self.labels.contains_key(i)).collect();
        let oracle = self.oracle;
        let outcomes = map_indexed(fresh.len(), self.config.execution, |r| (fresh[r], oracle.label(fresh[r])));
        let mut observed = Vec::with_capacity(outcomes.len());
        for (i, outcome) in outcomes {
            let raw = outcome.map_err(|message| Error::Oracle { index: i, message })?;
            let response = self
                .characteristic
                .map_response(&raw, self.frame.prior_weights()[i])
                .map_err(|e| Error::Oracle { index: i, message: e.to_string() })?;
            observed.push((i, Observation { raw, response }));
        }
        for (i, obs) in observed {
            for (c, v) in obs.response.iter().enumerate() {
                self.responses[(i, c)] = *v;
            }
            self.labels.insert(i, obs);
        }
        let new_labels = fresh.len();

        self.history.push(draw, &self.responses)?;
        let estimate = match PooledEstimate::compute(
            &self.characteristic,
            self.history.records(),
            self.config.variance_method,
            self.config.alpha,
            &mut self.variance_rng,
            self.config.execution,
        ) {
            Ok(e) => Some(e),
            Err(Error::Domain { .. }) => None,
            Err(e) => return Err(e),
        };

        self.trace.push(IterationTrace {
            iteration: k,
            batch_size: n,
            total_size: self.history.total_size(),
            source,
            fit_success,
            holdout_score,
            min_probability: scheme.min_probability(),
            max_probability: scheme.max_probability(),
            new_labels,
            estimate,
        });
        self.schemes.push(scheme);
        Ok(self.trace.last())
    }

    /// Runs until the precision target is met or the budget is spent.
    pub fn run(mut self) -> std::result::Result<LoopResult, LoopFailure> {
        loop {
            match self.step() {
                Ok(Some(_)) => {}
                Ok(None) => break,
                Err(error) => {
                    return Err(LoopFailure { error, partial: Box::new(self.into_result(None)) });
                }
            }
            if self.precision_reached() {
                return Ok(self.into_result(Some(TerminationReason::PrecisionReached)));
            }
        }
        Ok(self.into_result(Some(TerminationReason::IterationLimit)))
    }

    /// Finishes without applying the stopping rule.
    pub fn finish(self) -> LoopResult {
        let reason = if self.precision_reached() {
            TerminationReason::PrecisionReached
        } else {
            TerminationReason::IterationLimit
        };
        self.into_result(Some(reason))
    }

    fn into_result(self, termination: Option<TerminationReason>) -> LoopResult {
        LoopResult {
            estimate: self.trace.last().and_then(|t| t.estimate.clone()),
            labeled: self.labels.into_iter().collect(),
            history: self.history,
            trace: self.trace,
            schemes: self.schemes,
            termination,
        }
    }

    fn fallback(&self, reason: FallbackReason) -> Result<(SamplingScheme, SchemeSource)> {
        Ok((self.config.fallback.scheme(self.frame, self.config.floor_epsilon)?, SchemeSource::Fallback(reason)))
    }

    #[allow(clippy::type_complexity)]
    fn choose_scheme(&mut self, k: usize) -> Result<(SamplingScheme, SchemeSource, Option<bool>, Option<f64>)> {
        if let Mode::Fixed(scheme) = &self.mode {
            return Ok((scheme.clone(), SchemeSource::Fixed, None, None));
        }
        if k == 1 {
            let (s, src) = self.fallback(FallbackReason::FirstIteration)?;
            return Ok((s, src, None, None));
        }

        let mut fit_success = None;
        let mut holdout_score = None;
        if (k - 2).is_multiple_of(self.config.surrogate.refit_every) {
            let min = self.config.surrogate.config.min_fit_size.max(self.config.surrogate.config.folds);
            if self.labels.len() < min {
                self.prediction = None;
                let (s, src) = self.fallback(FallbackReason::TooFewLabels)?;
                return Ok((s, src, None, None));
            }
            let (prediction, success, score) = self.fit()?;
            fit_success = Some(success);
            holdout_score = score;
            self.prediction = prediction;
        }
        let Some(prediction) = &self.prediction else {
            let reason =
                if fit_success.is_some() { FallbackReason::FitFailed } else { FallbackReason::TooFewLabels };
            let (s, src) = self.fallback(reason)?;
            return Ok((s, src, fit_success, holdout_score));
        };

        let pooled = self.history.pooled_totals().expect("k > 1 has a pooled total").clone();
        let eps = self.config.floor_epsilon;
        let scheme = match prediction {
            Prediction::Responses { means, covariances } => match self.characteristic.gradient(pooled.as_slice()) {
                Err(Error::Domain { .. }) => Err(FallbackReason::UndefinedGradient),
                Err(e) => return Err(e),
                Ok(grad) => optimal_scheme_predictive(means, covariances, &grad, eps)
                    .map_err(|_| FallbackReason::DegenerateScheme),
            },
            Prediction::Application { crash_prob, outcome, residual_sd } => {
                match self.characteristic.eval(pooled.as_slice()) {
                    Err(Error::Domain { .. }) => Err(FallbackReason::UndefinedGradient),
                    Err(e) => return Err(e),
                    Ok(theta) => {
                        application_scheme(self.frame.prior_weights(), crash_prob, outcome, residual_sd, theta, eps)
                            .map_err(|_| FallbackReason::DegenerateScheme)
                    }
                }
            }
        };
        match scheme {
            Ok(s) => Ok((s, SchemeSource::Surrogate, fit_success, holdout_score)),
            Err(reason) => {
                let (s, src) = self.fallback(reason)?;
                Ok((s, src, fit_success, holdout_score))
            }
        }
    }

    /// Fits the surrogate on the current labels. A failed fit yields no prediction.
    fn fit(&self) -> Result<(Option<Prediction>, bool, Option<f64>)> {
        let spec = &self.config.surrogate;
        let indices: Vec<usize> = self.labels.keys().copied().collect();
        let aux = self.frame.auxiliaries();
        if self.characteristic.kind() == CharacteristicKind::RatioOfWeightedTotals {
            let raw = DMatrix::from_fn(indices.len(), 2, |r, c| self.labels[&indices[r]].raw[c]);
            let fit = match fit_application_surrogate(spec.kind, &indices, &raw, aux, &spec.config) {
                Ok(f) => f,
                Err(Error::FitFailed(_)) => return Ok((None, false, None)),
                Err(e) => return Err(e),
            };
            let score = fit.crash_score.into_iter().chain(fit.outcome_score).fold(None, |a: Option<f64>, s| {
                Some(a.map_or(s, |a| a.max(s)))
            });
            if !fit.success {
                return Ok((None, false, score));
            }
            let residual_sd = if self.config.naive_mode { vec![0.0; fit.residual_sd.len()] } else { fit.residual_sd };
            let prediction =
                Prediction::Application { crash_prob: fit.crash_prob, outcome: fit.predicted_outcome, residual_sd };
            return Ok((Some(prediction), true, score));
        }

        let d = self.characteristic.dimension();
        let targets = DMatrix::from_fn(indices.len(), d, |r, c| self.labels[&indices[r]].response[c]);
        let labeled = LabeledSet::gather(indices, aux, targets)?;
        let fit = match fit_surrogate(spec.kind, &labeled, aux, &spec.config) {
            Ok(f) => f,
            Err(Error::FitFailed(_)) => return Ok((None, false, None)),
            Err(e) => return Err(e),
        };
        if !fit.success {
            return Ok((None, false, Some(fit.holdout_score)));
        }
        let covariances = if self.config.naive_mode {
            vec![DMatrix::zeros(d, d); fit.predicted_means.nrows()]
        } else {
            fit.residual_covariances
        };
        let prediction = Prediction::Responses { means: fit.predicted_means, covariances };
        Ok((Some(prediction), true, Some(fit.holdout_score)))
    }
}

/// Runs the loop to termination.
pub fn run_active_sampling<O: LabelOracle + ?Sized>(
    frame: &SamplingFrame,
    characteristic: Characteristic,
    oracle: &O,
    config: LoopConfig,
) -> std::result::Result<LoopResult, LoopFailure> {
    match ActiveSampler::new(frame, characteristic, oracle, config) {
        Ok(sampler) => sampler.run(),
        Err(error) => Err(LoopFailure {
            error,
            partial: Box::new(LoopResult {
                estimate: None,
                labeled: Vec::new(),
                history: SampleHistory::new(),
                trace: Vec::new(),
                schemes: Vec::new(),
                termination: None,
            }),
        }),
    }
}

/// Simple-random-sampling size reaching standard error `delta` for a
/// mean-type characteristic: `⌈s² / δ²⌉`.
pub fn pilot_sample_size(pilot_variance: f64, delta: f64) -> Result<usize> {
    if !(pilot_variance > 0.0 && pilot_variance.is_finite()) || !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid("pilot variance and precision target must be positive and finite"));
    }
    let ratio = pilot_variance / (delta * delta);
    // Absorb rounding so that e.g. 1 / 0.1² is 100 rather than 101.
    let nearest = ratio.round();
    let n = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) { nearest } else { ratio.ceil() };
    Ok((n as usize).max(1))
}
