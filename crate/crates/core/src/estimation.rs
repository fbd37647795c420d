//! Batch and pooled totals, covariance estimators and intervals.
//!
//! The pooled total after `k` batches is `t̂ = (1/m) Σ_j n_j t̂_j`, the
//! size-weighted average of the batch totals. Equivalently it is the plain
//! mean of the `m` per-selection values `y_i / π_{ji}`, which is what the
//! bootstrap resamples.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::characteristics::Characteristic;
use crate::error::{Error, Result};
use crate::parallel::{map_indexed, Execution};
use crate::schemes::BatchDraw;

/// `Σ_{i: s_i > 0} s_i y_i / μ_i`. Only rows of selected elements are read.
pub fn hh_batch_total(draw: &BatchDraw, responses: &DMatrix<f64>) -> DVector<f64> {
    let mut total = DVector::zeros(responses.ncols());
    for (i, s, mu) in draw.selections() {
        total += responses.row(i).transpose() * (s as f64 / mu);
    }
    total
}

/// One iteration of the selection history.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    draw: BatchDraw,
    /// Distinct selected elements, in index order.
    selected: Vec<usize>,
    /// Row `r`: `y_i / μ_i` for `selected[r]`.
    weighted: DMatrix<f64>,
    batch_total: DVector<f64>,
}

impl BatchRecord {
    pub fn new(draw: BatchDraw, responses: &DMatrix<f64>) -> Result<Self> {
        if draw.counts().len() != responses.nrows() {
            return Err(Error::invalid("draw and responses differ in population size"));
        }
        if draw.expected_counts().iter().any(|&mu| !(mu > 0.0)) {
            return Err(Error::invalid("expected counts must be strictly positive"));
        }
        let selected: Vec<usize> = draw.selections().map(|(i, _, _)| i).collect();
        let d = responses.ncols();
        let weighted = DMatrix::from_fn(selected.len(), d, |r, c| {
            let i = selected[r];
            responses[(i, c)] / draw.expected_counts()[i]
        });
        let batch_total = hh_batch_total(&draw, responses);
        Ok(Self { draw, selected, weighted, batch_total })
    }

    pub fn draw(&self) -> &BatchDraw {
        &self.draw
    }

    pub fn batch_size(&self) -> usize {
        self.draw.batch_size()
    }

    pub fn batch_total(&self) -> &DVector<f64> {
        &self.batch_total
    }

    pub fn dimension(&self) -> usize {
        self.batch_total.len()
    }

    /// `(i, s_i, y_i / μ_i)` for every distinct selected element.
    pub fn weighted_values(&self) -> impl Iterator<Item = (usize, u32, DVector<f64>)> + '_ {
        self.selected
            .iter()
            .enumerate()
            .map(move |(r, &i)| (i, self.draw.counts()[i], self.weighted.row(r).transpose()))
    }
}

/// Per-iteration records plus the running pooled total.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleHistory {
    records: Vec<BatchRecord>,
    total_size: usize,
    pooled: Option<DVector<f64>>,
}

impl SampleHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a batch, updating the pooled total incrementally.
    pub fn push(&mut self, draw: BatchDraw, responses: &DMatrix<f64>) -> Result<&BatchRecord> {
        let record = BatchRecord::new(draw, responses)?;
        self.push_record(record)?;
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn push_record(&mut self, record: BatchRecord) -> Result<()> {
        if let Some(first) = self.records.first() {
            if first.dimension() != record.dimension() {
                return Err(Error::invalid("batch totals differ in dimension"));
            }
        }
        let previous = self.total_size as f64;
        let n = record.batch_size();
        self.total_size += n;
        let m = self.total_size as f64;
        self.pooled = Some(match self.pooled.take() {
            None => record.batch_total.clone(),
            Some(p) => (p * previous + &record.batch_total * n as f64) / m,
        });
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[BatchRecord] {
        &self.records
    }

    /// Number of iterations `k`.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Cumulative sample size `m_k`.
    pub fn total_size(&self) -> usize {
        self.total_size
    }

    /// Pooled total maintained by the incremental update; `None` before the first batch.
    pub fn pooled_totals(&self) -> Option<&DVector<f64>> {
        self.pooled.as_ref()
    }
}

fn total_size(records: &[BatchRecord]) -> usize {
    records.iter().map(BatchRecord::batch_size).sum()
}

fn require_nonempty(records: &[BatchRecord]) -> Result<()> {
    if records.is_empty() {
        Err(Error::invalid("history has no iterations"))
    } else {
        Ok(())
    }
}

/// `(1/m_k) Σ_j n_j t̂_j` in batch form.
pub fn pool_totals(records: &[BatchRecord]) -> Result<DVector<f64>> {
    require_nonempty(records)?;
    let m = total_size(records) as f64;
    let mut sum = DVector::zeros(records[0].dimension());
    for r in records {
        sum += &r.batch_total * r.batch_size() as f64;
    }
    Ok(sum / m)
}

/// Sen–Yates–Grundy estimate of the batch total's covariance,
/// `n/(n−1) Σ_i s_i (y_i/μ_i − t̂/n)(·)ᵀ`.
///
/// `iteration` only labels the error.
pub fn syg_batch_cov(record: &BatchRecord, iteration: usize) -> Result<DMatrix<f64>> {
    let n = record.batch_size();
    if n < 2 {
        return Err(Error::BatchTooSmall { iteration, size: n });
    }
    let d = record.dimension();
    let centre = &record.batch_total / n as f64;
    let mut acc = DMatrix::zeros(d, d);
    for (_, s, v) in record.weighted_values() {
        let dev = v - &centre;
        acc += &dev * dev.transpose() * s as f64;
    }
    Ok(acc * (n as f64 / (n - 1) as f64))
}

/// `m_k⁻² Σ_j n_j² Φ̂_j`; every batch needs at least two draws.
pub fn pooled_design_variance(records: &[BatchRecord]) -> Result<DMatrix<f64>> {
    require_nonempty(records)?;
    let m = total_size(records) as f64;
    let d = records[0].dimension();
    let mut acc = DMatrix::zeros(d, d);
    for (j, r) in records.iter().enumerate() {
        let n = r.batch_size() as f64;
        acc += syg_batch_cov(r, j + 1)? * (n * n);
    }
    Ok(acc / (m * m))
}

/// Covariance estimate together with a flag for the single-iteration case.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleEstimate {
    pub covariance: DMatrix<f64>,
    /// Set when `k = 1`: there is no variation between batches to measure.
    pub insufficient_iterations: bool,
}

/// `m_k⁻² Σ_j n_j² (t̂_j − t̂)(·)ᵀ`; zero with a flag when `k = 1`.
pub fn martingale_variance(records: &[BatchRecord]) -> Result<MartingaleEstimate> {
    let pooled = pool_totals(records)?;
    let d = pooled.len();
    if records.len() < 2 {
        return Ok(MartingaleEstimate { covariance: DMatrix::zeros(d, d), insufficient_iterations: true });
    }
    let m = total_size(records) as f64;
    let mut acc = DMatrix::zeros(d, d);
    for r in records {
        let n = r.batch_size() as f64;
        let dev = &r.batch_total - &pooled;
        acc += &dev * dev.transpose() * (n * n);
    }
    Ok(MartingaleEstimate { covariance: acc / (m * m), insufficient_iterations: false })
}

/// Importance-weighted bootstrap.
///
/// Each selection contributes a record `y_i / π_{ji} = n_j · y_i / μ_{ji}`;
/// the pooled total is the mean of these `m_k` records. Each replicate
/// resamples `m_k` records with replacement and takes their mean. Replicate
/// `b` draws from its own stream of a generator seeded from `rng`, so the
/// result does not depend on `execution`.
pub fn bootstrap_variance<R: Rng + ?Sized>(
    records: &[BatchRecord],
    replicates: usize,
    rng: &mut R,
    execution: Execution,
) -> Result<DMatrix<f64>> {
    require_nonempty(records)?;
    if replicates < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 replicates"));
    }
    let m = total_size(records);
    if m < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 selections"));
    }
    let d = records[0].dimension();
    // Row-major `m × d` buffer of augmented records.
    let mut augmented: Vec<f64> = Vec::with_capacity(m * d);
    for r in records {
        let n = r.batch_size() as f64;
        for (_, s, v) in r.weighted_values() {
            for _ in 0..s {
                augmented.extend(v.iter().map(|x| x * n));
            }
        }
    }
    let seed: u64 = rng.random();
    let draws = map_indexed(replicates, execution, |b| {
        let mut stream = ChaCha8Rng::seed_from_u64(seed);
        stream.set_stream(b as u64);
        let mut acc = vec![0.0; d];
        for _ in 0..m {
            let row = stream.random_range(0..m);
            for (a, x) in acc.iter_mut().zip(&augmented[row * d..(row + 1) * d]) {
                *a += x;
            }
        }
        DVector::from_iterator(d, acc.into_iter().map(|a| a / m as f64))
    });
    let mean = draws.iter().fold(DVector::zeros(d), |a, x| a + x) / replicates as f64;
    let mut cov = DMatrix::zeros(d, d);
    for x in &draws {
        let dev = x - &mean;
        cov += &dev * dev.transpose();
    }
    Ok(cov / (replicates - 1) as f64)
}

/// `∇h(t̂)ᵀ Ψ̂ ∇h(t̂)`, with rounding-level negatives clamped to zero.
pub fn delta_variance(characteristic: &Characteristic, pooled_totals: &[f64], psi: &DMatrix<f64>) -> Result<f64> {
    let grad = characteristic.gradient(pooled_totals)?;
    if psi.nrows() != grad.len() || psi.ncols() != grad.len() {
        return Err(Error::invalid("covariance dimension does not match the characteristic"));
    }
    let value = (grad.transpose() * psi * &grad)[(0, 0)];
    if value >= 0.0 {
        return Ok(value);
    }
    let tolerance = 1e-12 * psi.norm() * grad.norm_squared();
    if -value <= tolerance {
        Ok(0.0)
    } else {
        Err(Error::invalid(format!("delta-method variance {value:e} is negative beyond rounding")))
    }
}

/// Standard normal upper quantile `z_{α/2}`.
pub fn normal_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// `θ̂ ∓ z_{α/2} √variance`.
pub fn confidence_interval(theta_hat: f64, variance_hat: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    if !(variance_hat >= 0.0) {
        return Err(Error::invalid("variance must be nonnegative"));
    }
    let half = normal_quantile(alpha) * variance_hat.sqrt();
    Ok((theta_hat - half, theta_hat + half))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarianceMethod {
    /// Pooled Sen–Yates–Grundy.
    Design,
    /// Squared variation of the batch totals around the pooled total.
    Martingale,
    /// Importance-weighted bootstrap with this many replicates.
    Bootstrap { replicates: usize },
}

impl VarianceMethod {
    pub fn name(self) -> &'static str {
        match self {
            VarianceMethod::Design => "design",
            VarianceMethod::Martingale => "martingale",
            VarianceMethod::Bootstrap { .. } => "bootstrap",
        }
    }

    pub fn parse(name: &str, replicates: usize) -> Option<Self> {
        match name {
            "design" => Some(VarianceMethod::Design),
            "martingale" => Some(VarianceMethod::Martingale),
            "bootstrap" => Some(VarianceMethod::Bootstrap { replicates }),
            _ => None,
        }
    }

    /// Covariance estimate for the pooled total and whether it is a placeholder
    /// (martingale with a single iteration).
    pub fn covariance<R: Rng + ?Sized>(
        self,
        records: &[BatchRecord],
        rng: &mut R,
        execution: Execution,
    ) -> Result<(DMatrix<f64>, bool)> {
        match self {
            VarianceMethod::Design => Ok((pooled_design_variance(records)?, false)),
            VarianceMethod::Martingale => {
                let est = martingale_variance(records)?;
                Ok((est.covariance, est.insufficient_iterations))
            }
            VarianceMethod::Bootstrap { replicates } => {
                Ok((bootstrap_variance(records, replicates, rng, execution)?, false))
            }
        }
    }
}

/// Point estimate, variance and interval after some iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledEstimate {
    pub pooled_totals: DVector<f64>,
    pub theta_hat: f64,
    pub variance_hat: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: VarianceMethod,
    /// The variance is a placeholder zero (martingale method, one iteration).
    pub insufficient: bool,
}

impl PooledEstimate {
    /// Estimates `θ` from `records` with the given variance method.
    pub fn compute<R: Rng + ?Sized>(
        characteristic: &Characteristic,
        records: &[BatchRecord],
        method: VarianceMethod,
        alpha: f64,
        rng: &mut R,
        execution: Execution,
    ) -> Result<Self> {
        let pooled = pool_totals(records)?;
        let theta_hat = characteristic.eval(pooled.as_slice())?;
        let (psi, insufficient) = method.covariance(records, rng, execution)?;
        let variance_hat = delta_variance(characteristic, pooled.as_slice(), &psi)?;
        let (ci_low, ci_high) = confidence_interval(theta_hat, variance_hat, alpha)?;
        Ok(Self {
            pooled_totals: pooled,
            theta_hat,
            variance_hat,
            std_error: variance_hat.sqrt(),
            ci_low,
            ci_high,
            method,
            insufficient,
        })
    }

    pub fn covers(&self, theta: f64) -> bool {
        self.ci_low <= theta && theta <= self.ci_high
    }
}
