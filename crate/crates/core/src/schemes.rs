//! Sampling schemes, multinomial draws and the exact covariance of the
//! sample-weighted total.
//!
//! Optimal schemes put `π_i ∝ √c_i` for per-element importance scores `c_i`.
//! Every scheme handed to the sampler is mixed with the uniform scheme,
//! `π ← (1 − ε) π + ε / N`, so probabilities stay bounded away from zero.

use nalgebra::{DMatrix, DVector, SVD};
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::characteristics::SamplingFrame;
use crate::error::{Error, Result};
use crate::linalg::{normal_condition, SINGULAR_CONDITION};

/// Uniform mixing weight `ε` applied to score-based schemes.
pub const DEFAULT_FLOOR_EPSILON: f64 = 1e-3;

const SUM_TOLERANCE: f64 = 1e-9;

/// A strictly positive probability vector over the population.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingScheme {
    probabilities: Vec<f64>,
}

impl SamplingScheme {
    /// Validates and renormalizes `probabilities`.
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::invalid("scheme over an empty population"));
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid("scheme probabilities must be strictly positive"));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(format!("scheme probabilities sum to {sum}")));
        }
        Ok(Self::normalized(probabilities))
    }

    fn normalized(mut probabilities: Vec<f64>) -> Self {
        let sum: f64 = probabilities.iter().sum();
        probabilities.iter_mut().for_each(|p| *p /= sum);
        Self { probabilities }
    }

    pub fn uniform(n: usize) -> Self {
        Self { probabilities: vec![1.0 / n as f64; n] }
    }

    /// `π_i ∝ weights_i` for strictly positive weights.
    pub fn proportional(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("scheme over an empty population"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("proportional scheme needs strictly positive weights"));
        }
        Ok(Self::normalized(weights.to_vec()))
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn min_probability(&self) -> f64 {
        self.probabilities.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_probability(&self) -> f64 {
        self.probabilities.iter().copied().fold(0.0, f64::max)
    }

    /// Total-variation distance `½ Σ |π_i − π'_i|`.
    pub fn total_variation(&self, other: &SamplingScheme) -> f64 {
        assert_eq!(self.len(), other.len(), "schemes over different populations");
        0.5 * self
            .probabilities
            .iter()
            .zip(&other.probabilities)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Lower bound `ε / N` guaranteed by [`mix_with_uniform`].
pub fn probability_floor(epsilon: f64, n: usize) -> f64 {
    epsilon / n as f64
}

/// `(1 − ε) π + ε / N` for a probability vector that may contain zeros.
pub fn mix_with_uniform(probabilities: &[f64], epsilon: f64) -> Result<SamplingScheme> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("floor epsilon {epsilon} outside [0, 1)")));
    }
    let n = probabilities.len() as f64;
    let mixed: Vec<f64> = probabilities.iter().map(|p| (1.0 - epsilon) * p + epsilon / n).collect();
    SamplingScheme::new(mixed)
}

/// Closed-form minimizer of `Σ c_i / π_i` over the simplex: `π_i = √c_i / Σ √c_j`.
///
/// No floor is applied, so elements with `c_i = 0` get probability zero.
pub fn optimal_probabilities(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::invalid("importance scores must be finite and nonnegative"));
    }
    let roots: Vec<f64> = scores.iter().map(|c| c.sqrt()).collect();
    let total: f64 = roots.iter().sum();
    if total == 0.0 {
        return Err(Error::DegenerateScheme);
    }
    Ok(roots.into_iter().map(|r| r / total).collect())
}

/// `π ∝ √c` followed by the uniform floor.
pub fn scheme_from_scores(scores: &[f64], floor_epsilon: f64) -> Result<SamplingScheme> {
    mix_with_uniform(&optimal_probabilities(scores)?, floor_epsilon)
}

fn check_gradient(grad: &DVector<f64>, d: usize) -> Result<()> {
    if grad.len() != d {
        return Err(Error::invalid(format!("gradient has length {}, responses have {d} columns", grad.len())));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::invalid("gradient must be finite"));
    }
    Ok(())
}

/// Scores `c_i = (∇hᵀ y_i)²` for known responses.
pub fn known_scores(responses: &DMatrix<f64>, grad: &DVector<f64>) -> Result<Vec<f64>> {
    check_gradient(grad, responses.ncols())?;
    Ok((responses * grad).iter().map(|v| v * v).collect())
}

/// Scores `c_i = (∇hᵀ η_i)² + ∇hᵀ Σ_i ∇h` for predicted responses.
pub fn predictive_scores(
    means: &DMatrix<f64>,
    covariances: &[DMatrix<f64>],
    grad: &DVector<f64>,
) -> Result<Vec<f64>> {
    check_gradient(grad, means.ncols())?;
    if covariances.len() != means.nrows() {
        return Err(Error::invalid(format!(
            "{} covariance matrices for {} elements",
            covariances.len(),
            means.nrows()
        )));
    }
    let projected = means * grad;
    covariances
        .iter()
        .zip(projected.iter())
        .map(|(cov, m)| {
            if cov.nrows() != grad.len() || cov.ncols() != grad.len() {
                return Err(Error::invalid("covariance matrix has the wrong shape"));
            }
            let spread = (grad.transpose() * cov * grad)[(0, 0)];
            Ok(m * m + spread.max(0.0))
        })
        .collect()
}

/// Optimal scheme when every response is known.
pub fn optimal_scheme_known(
    responses: &DMatrix<f64>,
    grad: &DVector<f64>,
    floor_epsilon: f64,
) -> Result<SamplingScheme> {
    scheme_from_scores(&known_scores(responses, grad)?, floor_epsilon)
}

/// Optimal scheme under predicted means `η_i` and residual covariances `Σ_i`.
pub fn optimal_scheme_predictive(
    means: &DMatrix<f64>,
    covariances: &[DMatrix<f64>],
    grad: &DVector<f64>,
    floor_epsilon: f64,
) -> Result<SamplingScheme> {
    scheme_from_scores(&predictive_scores(means, covariances, grad)?, floor_epsilon)
}

/// Scores for the ratio of weighted totals with a factorized crash/outcome model:
/// `c_i = p_i² r̂_i [(x̂_i − θ̂)² + σ̂_i²]`.
pub fn application_scores(
    prior_weights: &[f64],
    crash_prob: &[f64],
    predicted: &[f64],
    residual_sd: &[f64],
    theta_prev: f64,
) -> Result<Vec<f64>> {
    let n = prior_weights.len();
    if crash_prob.len() != n || predicted.len() != n || residual_sd.len() != n {
        return Err(Error::invalid("application scheme inputs differ in length"));
    }
    if !theta_prev.is_finite() {
        return Err(Error::invalid("previous estimate must be finite"));
    }
    (0..n)
        .map(|i| {
            let (p, r, x, s) = (prior_weights[i], crash_prob[i], predicted[i], residual_sd[i]);
            if !(p.is_finite() && r.is_finite() && x.is_finite() && s.is_finite()) {
                return Err(Error::invalid("application scheme inputs must be finite"));
            }
            if !(0.0..=1.0).contains(&r) || s < 0.0 {
                return Err(Error::invalid("crash probabilities in [0, 1], residual sd ≥ 0"));
            }
            Ok(p * p * r * ((x - theta_prev).powi(2) + s * s))
        })
        .collect()
}

pub fn application_scheme(
    prior_weights: &[f64],
    crash_prob: &[f64],
    predicted: &[f64],
    residual_sd: &[f64],
    theta_prev: f64,
    floor_epsilon: f64,
) -> Result<SamplingScheme> {
    let scores = application_scores(prior_weights, crash_prob, predicted, residual_sd, theta_prev)?;
    scheme_from_scores(&scores, floor_epsilon)
}

/// Non-adaptive schemes used as fallbacks and benchmarks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaselineKind {
    Uniform,
    /// `π_i ∝ z_{i,column}` for a strictly positive auxiliary column.
    ProportionalToAux { column: usize },
    /// `π_i ∝ p_i`.
    Density,
    /// `π_i ∝ p_i Π_f g(z_{i,f})` with each factor mapped affinely onto `[0.1, 1]`.
    Severity { columns: Vec<usize> },
    /// `π_i ∝ h_ii`, the weighted hat-matrix diagonal; `None` uses every auxiliary column.
    Leverage { columns: Option<Vec<usize>> },
}

/// Builds a baseline scheme. The uniform floor is applied only when some
/// probability falls below `ε / N`.
pub fn baseline_scheme(
    kind: &BaselineKind,
    frame: &SamplingFrame,
    floor_epsilon: f64,
) -> Result<SamplingScheme> {
    let n = frame.len();
    let aux = frame.auxiliaries();
    let check_column = |c: usize| {
        if c >= aux.ncols() {
            Err(Error::invalid(format!("auxiliary column {c} out of range ({} columns)", aux.ncols())))
        } else {
            Ok(())
        }
    };
    let weights: Vec<f64> = match kind {
        BaselineKind::Uniform => return Ok(SamplingScheme::uniform(n)),
        BaselineKind::ProportionalToAux { column } => {
            check_column(*column)?;
            let z: Vec<f64> = aux.column(*column).iter().copied().collect();
            if z.iter().any(|v| *v <= 0.0) {
                return Err(Error::invalid("proportional-to-auxiliary needs a strictly positive column"));
            }
            z
        }
        BaselineKind::Density => frame.prior_weights().to_vec(),
        BaselineKind::Severity { columns } => {
            let mut w = frame.prior_weights().to_vec();
            for &c in columns {
                check_column(c)?;
                let factor = rescale_unit(&aux.column(c).iter().copied().collect::<Vec<_>>());
                w.iter_mut().zip(factor).for_each(|(w, f)| *w *= f);
            }
            w
        }
        BaselineKind::Leverage { columns } => {
            let cols: Vec<usize> = columns.clone().unwrap_or_else(|| (0..aux.ncols()).collect());
            if cols.is_empty() {
                return Err(Error::invalid("leverage scheme needs at least one auxiliary"));
            }
            for &c in &cols {
                check_column(c)?;
            }
            leverage_scores(aux, &cols, frame.prior_weights())?
        }
    };
    let probs = SamplingScheme::proportional(&weights)?;
    if probs.min_probability() >= probability_floor(floor_epsilon, n) {
        Ok(probs)
    } else {
        mix_with_uniform(probs.probabilities(), floor_epsilon)
    }
}

/// Affine map of `values` onto `[0.1, 1]`; a constant column maps to 1.
fn rescale_unit(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| 0.1 + 0.9 * (v - lo) / (hi - lo)).collect()
}

/// Diagonal of `W^{1/2} Z (ZᵀWZ)⁻¹ Zᵀ W^{1/2}` with `W = diag(p)` and rows `(1, z_i)`.
pub fn leverage_scores(
    auxiliaries: &DMatrix<f64>,
    columns: &[usize],
    weights: &[f64],
) -> Result<Vec<f64>> {
    let n = auxiliaries.nrows();
    let p = columns.len() + 1;
    let design = DMatrix::from_fn(n, p, |i, j| {
        let z = if j == 0 { 1.0 } else { auxiliaries[(i, columns[j - 1])] };
        weights[i].sqrt() * z
    });
    if n < p {
        return Err(Error::SingularDesign { condition: f64::INFINITY });
    }
    let svd = SVD::new(design, true, false);
    let condition = normal_condition(&svd.singular_values);
    if condition > SINGULAR_CONDITION {
        return Err(Error::SingularDesign { condition });
    }
    let u = svd.u.expect("left singular vectors requested");
    Ok((0..n).map(|i| u.row(i).norm_squared()).collect())
}

/// One multinomial batch: counts `s_i`, batch size `n` and `μ_i = n π_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDraw {
    counts: Vec<u32>,
    batch_size: usize,
    expected_counts: Vec<f64>,
}

impl BatchDraw {
    /// Validates counts against the scheme they were drawn from.
    pub fn new(counts: Vec<u32>, scheme: &SamplingScheme) -> Result<Self> {
        if counts.len() != scheme.len() {
            return Err(Error::invalid("counts and scheme differ in length"));
        }
        let batch_size: usize = counts.iter().map(|&c| c as usize).sum();
        if batch_size == 0 {
            return Err(Error::invalid("a batch needs at least one draw"));
        }
        let expected_counts = scheme.probabilities().iter().map(|p| batch_size as f64 * p).collect();
        Ok(Self { counts, batch_size, expected_counts })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn expected_counts(&self) -> &[f64] {
        &self.expected_counts
    }

    /// `(i, s_i, μ_i)` for every selected element, in index order.
    pub fn selections(&self) -> impl Iterator<Item = (usize, u32, f64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0)
            .map(move |(i, &s)| (i, s, self.expected_counts[i]))
    }
}

/// Draws `Multinomial(n, π)` by sequential conditional binomials.
pub fn draw_multinomial<R: Rng + ?Sized>(scheme: &SamplingScheme, n: usize, rng: &mut R) -> BatchDraw {
    assert!(n >= 1, "batch size must be positive");
    let probs = scheme.probabilities();
    let len = probs.len();
    let mut tail = vec![0.0; len];
    let mut acc = 0.0;
    for i in (0..len).rev() {
        acc += probs[i];
        tail[i] = acc;
    }
    let mut counts = vec![0u32; len];
    let mut remaining = n as u64;
    for i in 0..len - 1 {
        if remaining == 0 {
            break;
        }
        let p = (probs[i] / tail[i]).clamp(0.0, 1.0);
        let s = Binomial::new(remaining, p).expect("valid binomial parameters").sample(rng);
        counts[i] = s as u32;
        remaining -= s;
    }
    counts[len - 1] += remaining as u32;
    let expected_counts = probs.iter().map(|p| n as f64 * p).collect();
    BatchDraw { counts, batch_size: n, expected_counts }
}

/// Exact covariance of the sample-weighted total under `Multinomial(n, π)`:
/// `(1/n) (Σ y_i y_iᵀ / π_i − t tᵀ)`.
pub fn exact_hh_covariance(responses: &DMatrix<f64>, scheme: &SamplingScheme, n: usize) -> DMatrix<f64> {
    assert_eq!(responses.nrows(), scheme.len(), "responses and scheme differ in length");
    let d = responses.ncols();
    let mut second = DMatrix::zeros(d, d);
    let mut total = DVector::zeros(d);
    for (i, &p) in scheme.probabilities().iter().enumerate() {
        let y = responses.row(i).transpose();
        second += &y * y.transpose() / p;
        total += &y;
    }
    let mut cov = (second - &total * total.transpose()) / n as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn column(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    fn frame(aux: DMatrix<f64>, p: Option<Vec<f64>>) -> SamplingFrame {
        SamplingFrame::new(aux, p).unwrap()
    }

    #[test]
    fn known_scheme_examples() {
        let g = DVector::from_element(1, 1.0);
        let s = optimal_scheme_known(&column(&[2.0; 4]), &g, DEFAULT_FLOOR_EPSILON).unwrap();
        s.probabilities().iter().for_each(|p| assert_relative_eq!(*p, 0.25, epsilon = 1e-15));

        let s = optimal_scheme_known(&column(&[1.0, 3.0]), &g, 0.0).unwrap();
        assert_eq!(s.probabilities(), &[0.25, 0.75]);
        // Both single-draw outcomes reproduce the total.
        for (i, y) in [1.0, 3.0].iter().enumerate() {
            assert_relative_eq!(y / s.probabilities()[i], 4.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn hajek_scheme_example() {
        // y = (1, 2, 6): t = (3, 9), grad = (-1, 1/3), grad·(1, y_i) = (y_i - 3) / 3.
        let responses = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 6.0]);
        let grad = crate::Characteristic::hajek_mean().gradient(&[3.0, 9.0]).unwrap();
        let s = optimal_scheme_known(&responses, &grad, 0.0).unwrap();
        let expected = [2.0 / 6.0, 1.0 / 6.0, 3.0 / 6.0];
        for (p, e) in s.probabilities().iter().zip(expected) {
            assert_relative_eq!(*p, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn all_zero_scores_are_degenerate() {
        let g = DVector::from_element(1, 1.0);
        assert_eq!(optimal_scheme_known(&column(&[0.0, 0.0]), &g, 1e-3), Err(Error::DegenerateScheme));
    }

    #[test]
    fn predictive_examples() {
        let g = DVector::from_element(1, 1.0);
        let zero = vec![DMatrix::zeros(1, 1); 3];
        let means = column(&[0.5, 1.0, 4.0]);
        assert_eq!(
            optimal_scheme_predictive(&means, &zero, &g, 1e-3).unwrap(),
            optimal_scheme_known(&means, &g, 1e-3).unwrap()
        );

        let four = vec![DMatrix::from_element(1, 1, 4.0); 2];
        let s = optimal_scheme_predictive(&column(&[0.0, 0.0]), &four, &g, 1e-3).unwrap();
        assert_eq!(s.probabilities(), &[0.5, 0.5]);

        let covs = vec![DMatrix::from_element(1, 1, 3.0), DMatrix::from_element(1, 1, 0.0)];
        let s = optimal_scheme_predictive(&column(&[1.0, 2.0]), &covs, &g, 0.0).unwrap();
        assert_eq!(s.probabilities(), &[0.5, 0.5]);
    }

    #[test]
    fn application_examples() {
        let s = application_scheme(&[1.0, 3.0], &[0.4, 0.4], &[2.0, 2.0], &[0.5, 0.5], 2.0, 0.0).unwrap();
        assert_relative_eq!(s.probabilities()[0], 0.25, epsilon = 1e-15);

        let eps = 1e-3;
        let s = application_scheme(&[1.0, 1.0], &[1.0, 0.0], &[1.0, 7.0], &[1.0, 1.0], 0.0, eps).unwrap();
        assert_relative_eq!(s.probabilities()[1], probability_floor(eps, 2), epsilon = 1e-15);
        assert_relative_eq!(s.probabilities()[0], 1.0 - probability_floor(eps, 2), epsilon = 1e-15);

        // c = (4 * 1 * 4, 1 * 1 * 4) = (16, 4).
        let s = application_scheme(&[2.0, 1.0], &[1.0, 1.0], &[5.0, 5.0], &[0.0, 0.0], 3.0, 0.0).unwrap();
        assert_relative_eq!(s.probabilities()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(s.probabilities()[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn baseline_examples() {
        let f = frame(column(&[0.0, 1.0, 2.0, 3.0, 4.0]), None);
        let s = baseline_scheme(&BaselineKind::Uniform, &f, 1e-3).unwrap();
        assert_eq!(s.probabilities(), &[0.2; 5]);

        let f = frame(column(&[0.0, 1.0]), Some(vec![1.0, 1.0]));
        let lev = leverage_scores(f.auxiliaries(), &[0], f.prior_weights()).unwrap();
        lev.iter().for_each(|h| assert_relative_eq!(*h, 1.0, epsilon = 1e-12));
        let s = baseline_scheme(&BaselineKind::Leverage { columns: None }, &f, 1e-3).unwrap();
        s.probabilities().iter().for_each(|p| assert_relative_eq!(*p, 0.5, epsilon = 1e-12));

        let aux = DMatrix::from_row_slice(3, 2, &[2.0, 5.0, 2.0, 5.0, 2.0, 5.0]);
        let f = frame(aux, None);
        let s = baseline_scheme(&BaselineKind::Severity { columns: vec![0, 1] }, &f, 1e-3).unwrap();
        s.probabilities().iter().for_each(|p| assert_relative_eq!(*p, 1.0 / 3.0, epsilon = 1e-15));
    }

    #[test]
    fn baseline_proportional_and_density() {
        let f = frame(column(&[1.0, 3.0]), Some(vec![2.0, 6.0]));
        let s = baseline_scheme(&BaselineKind::ProportionalToAux { column: 0 }, &f, 1e-3).unwrap();
        assert_eq!(s.probabilities(), &[0.25, 0.75]);
        let s = baseline_scheme(&BaselineKind::Density, &f, 1e-3).unwrap();
        assert_eq!(s.probabilities(), &[0.25, 0.75]);
        let bad = frame(column(&[0.0, 3.0]), None);
        assert!(baseline_scheme(&BaselineKind::ProportionalToAux { column: 0 }, &bad, 1e-3).is_err());
    }

    #[test]
    fn severity_rescales_each_factor() {
        let aux = column(&[0.0, 10.0]);
        let f = frame(aux, None);
        let s = baseline_scheme(&BaselineKind::Severity { columns: vec![0] }, &f, 1e-3).unwrap();
        assert_relative_eq!(s.probabilities()[0], 0.1 / 1.1, epsilon = 1e-15);
    }

    #[test]
    fn leverage_rejects_singular_designs() {
        let f = frame(column(&[1.0, 1.0, 1.0]), None);
        assert!(matches!(
            baseline_scheme(&BaselineKind::Leverage { columns: None }, &f, 1e-3),
            Err(Error::SingularDesign { .. })
        ));
    }

    #[test]
    fn leverage_scores_sum_to_rank() {
        let aux = DMatrix::from_fn(40, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 + 0.1 * j as f64);
        let w: Vec<f64> = (0..40).map(|i| 0.5 + (i % 5) as f64).collect();
        let h = leverage_scores(&aux, &[0, 1], &w).unwrap();
        assert_relative_eq!(h.iter().sum::<f64>(), 3.0, epsilon = 1e-10);
        assert!(h.iter().all(|v| *v > 0.0 && *v <= 1.0 + 1e-12));
    }

    #[test]
    fn draws_conserve_the_batch_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eps = probability_floor(1e-3, 2);
        let s = SamplingScheme::new(vec![1.0 - eps, eps]).unwrap();
        let d = draw_multinomial(&s, 1, &mut rng);
        assert_eq!(d.counts().iter().sum::<u32>(), 1);

        let s = SamplingScheme::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let d = draw_multinomial(&s, 7, &mut rng);
        assert_eq!(d.counts().iter().sum::<u32>(), 7);
        assert_eq!(d.batch_size(), 7);
        for (mu, p) in d.expected_counts().iter().zip(s.probabilities()) {
            assert_eq!(*mu, 7.0 * p);
        }
    }

    #[test]
    fn fair_coin_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let s = SamplingScheme::uniform(2);
        let hits: u32 = (0..10_000).map(|_| draw_multinomial(&s, 1, &mut rng).counts()[0]).sum();
        let freq = hits as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&freq), "frequency {freq}");
    }

    #[test]
    fn draws_are_seed_deterministic() {
        let s = SamplingScheme::new(vec![0.05, 0.15, 0.3, 0.5]).unwrap();
        let a = draw_multinomial(&s, 20, &mut ChaCha8Rng::seed_from_u64(5));
        let b = draw_multinomial(&s, 20, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn exact_covariance_examples() {
        let y = column(&[1.0, 3.0]);
        let zero_var = SamplingScheme::new(vec![0.25, 0.75]).unwrap();
        assert_relative_eq!(exact_hh_covariance(&y, &zero_var, 1)[(0, 0)], 0.0, epsilon = 1e-14);
        let half = SamplingScheme::uniform(2);
        assert_relative_eq!(exact_hh_covariance(&y, &half, 1)[(0, 0)], 4.0, epsilon = 1e-14);
        assert_relative_eq!(exact_hh_covariance(&y, &half, 2)[(0, 0)], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn scheme_validation() {
        assert!(SamplingScheme::new(vec![0.5, 0.6]).is_err());
        assert!(SamplingScheme::new(vec![1.0, 0.0]).is_err());
        assert!(SamplingScheme::new(vec![]).is_err());
        assert!(mix_with_uniform(&[1.0, 0.0], 1.0).is_err());
        let s = mix_with_uniform(&[1.0, 0.0], 0.01).unwrap();
        assert_relative_eq!(s.min_probability(), 0.005, epsilon = 1e-15);
    }
}
