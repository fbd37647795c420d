//! Surrogate models for the learning step.
//!
//! A fit produces, for every population element, predicted response means and
//! a residual covariance. Residual moments come from out-of-fold residuals
//! (homoscedastic, diagonal across response coordinates) and are clamped from
//! below so that no element's uncertainty collapses to zero.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::least_squares;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Ordinary least squares with an intercept.
    LinearLS,
    /// k-nearest-neighbour mean on standardized auxiliaries.
    KNearest,
    /// Gaussian-kernel ridge regression on standardized auxiliaries.
    KernelRidge,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LinearLS => "linear",
            ModelKind::KNearest => "knn",
            ModelKind::KernelRidge => "kernel",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Cross-validation folds used for tuning and residual moments.
    pub folds: usize,
    pub fold_seed: u64,
    /// Fits on fewer labeled points fail.
    pub min_fit_size: usize,
    /// Residual variances are clamped at this multiple of the labeled target variance.
    pub variance_floor_factor: f64,
    /// Fixed neighbour count; `None` tunes over `knn_grid`.
    pub knn_k: Option<usize>,
    pub knn_grid: Vec<usize>,
    /// Kernel bandwidths, in units of the standardized auxiliaries.
    pub kernel_bandwidths: Vec<f64>,
    /// Ridge penalties; the system solved is `(K + λ n I) α = y`.
    pub kernel_ridges: Vec<f64>,
    /// Clamp applied to predictions (used for {0, 1} targets).
    pub prediction_clamp: Option<(f64, f64)>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            fold_seed: 0,
            min_fit_size: 10,
            variance_floor_factor: 1e-6,
            knn_k: None,
            knn_grid: vec![1, 3, 5, 10, 20],
            kernel_bandwidths: vec![0.1, 0.3, 1.0, 3.0],
            kernel_ridges: vec![1e-4, 1e-2, 1e-1],
            prediction_clamp: None,
        }
    }
}

/// Clamp for probability-style predictions.
pub const PROBABILITY_CLAMP: (f64, f64) = (1e-6, 1.0 - 1e-6);

/// Labeled elements: distinct indices with their auxiliaries and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    indices: Vec<usize>,
    auxiliaries: DMatrix<f64>,
    targets: DMatrix<f64>,
}

impl LabeledSet {
    pub fn new(indices: Vec<usize>, auxiliaries: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if auxiliaries.nrows() != indices.len() || targets.nrows() != indices.len() {
            return Err(Error::invalid("labeled indices, auxiliaries and targets differ in length"));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("labeled indices must be distinct"));
        }
        if targets.ncols() == 0 {
            return Err(Error::invalid("labeled targets need at least one column"));
        }
        if targets.iter().chain(auxiliaries.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("labeled data must be finite"));
        }
        Ok(Self { indices, auxiliaries, targets })
    }

    /// Gathers the rows `indices` of `all_auxiliaries`; `targets` row `r` belongs to `indices[r]`.
    pub fn gather(indices: Vec<usize>, all_auxiliaries: &DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if let Some(bad) = indices.iter().find(|&&i| i >= all_auxiliaries.nrows()) {
            return Err(Error::invalid(format!("labeled index {bad} out of range")));
        }
        let aux = all_auxiliaries.select_rows(indices.iter());
        Self::new(indices, aux, targets)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn auxiliaries(&self) -> &DMatrix<f64> {
        &self.auxiliaries
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }
}

/// Predictions and residual covariances for every population element.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFit {
    pub predicted_means: DMatrix<f64>,
    pub residual_covariances: Vec<DMatrix<f64>>,
    /// `true` iff `holdout_score > 0`.
    pub success: bool,
    /// Smallest cross-validated R² over non-constant target columns.
    pub holdout_score: f64,
    /// Cross-validated R² per column; `None` for columns constant on the labeled set.
    pub column_scores: Vec<Option<f64>>,
    /// Clamped residual variance per column.
    pub residual_variances: Vec<f64>,
}

/// Hyperparameters of one candidate model.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Candidate {
    Linear,
    Neighbours(usize),
    Kernel { bandwidth: f64, ridge: f64 },
}

fn candidates(kind: ModelKind, config: &ModelConfig) -> Result<Vec<Candidate>> {
    let list: Vec<Candidate> = match kind {
        ModelKind::LinearLS => vec![Candidate::Linear],
        ModelKind::KNearest => match config.knn_k {
            Some(k) => vec![Candidate::Neighbours(k)],
            None => config.knn_grid.iter().map(|&k| Candidate::Neighbours(k)).collect(),
        },
        ModelKind::KernelRidge => config
            .kernel_bandwidths
            .iter()
            .flat_map(|&bandwidth| {
                config.kernel_ridges.iter().map(move |&ridge| Candidate::Kernel { bandwidth, ridge })
            })
            .collect(),
    };
    let valid = list.iter().all(|c| match c {
        Candidate::Linear => true,
        Candidate::Neighbours(k) => *k >= 1,
        Candidate::Kernel { bandwidth, ridge } => *bandwidth > 0.0 && *ridge > 0.0,
    });
    if list.is_empty() || !valid {
        return Err(Error::invalid(format!("invalid hyperparameter grid for {}", kind.name())));
    }
    Ok(list)
}

/// Column-wise standardization learned on the labeled auxiliaries.
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, scale }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.scale[j])
    }
}

fn squared_distances(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        (0..a.ncols()).map(|c| (a[(i, c)] - b[(j, c)]).powi(2)).sum()
    })
}

/// Fits every candidate on `(train_x, train_y)` and predicts `test_x`.
///
/// Returns one prediction matrix per candidate (`None` where the fit failed).
/// Auxiliaries are already standardized for the distance-based models.
fn fit_predict(
    candidates: &[Candidate],
    train_x: &DMatrix<f64>,
    train_y: &DMatrix<f64>,
    test_x: &DMatrix<f64>,
) -> Vec<Option<DMatrix<f64>>> {
    let n_train = train_x.nrows();
    let n_test = test_x.nrows();
    let t = train_y.ncols();
    match candidates.first() {
        Some(Candidate::Linear) => {
            let design = DMatrix::from_fn(n_train, train_x.ncols() + 1, |i, j| {
                if j == 0 { 1.0 } else { train_x[(i, j - 1)] }
            });
            let test_design = DMatrix::from_fn(n_test, test_x.ncols() + 1, |i, j| {
                if j == 0 { 1.0 } else { test_x[(i, j - 1)] }
            });
            let mut out = DMatrix::zeros(n_test, t);
            for c in 0..t {
                let Some(beta) = least_squares(&design, &train_y.column(c).into_owned()) else {
                    return vec![None];
                };
                out.set_column(c, &(&test_design * beta));
            }
            vec![Some(out)]
        }
        Some(Candidate::Neighbours(_)) => {
            let d2 = squared_distances(test_x, train_x);
            let mut order: Vec<usize> = (0..n_train).collect();
            let mut outs: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n_test, t); candidates.len()];
            let max_k = candidates
                .iter()
                .map(|c| match c {
                    Candidate::Neighbours(k) => (*k).min(n_train),
                    _ => unreachable!("mixed candidate kinds"),
                })
                .max()
                .unwrap_or(1);
            for i in 0..n_test {
                // Ties are broken by training index so results are reproducible.
                let closer = |a: &usize, b: &usize| d2[(i, *a)].total_cmp(&d2[(i, *b)]).then(a.cmp(b));
                if max_k < n_train {
                    order.select_nth_unstable_by(max_k - 1, closer);
                }
                order[..max_k].sort_unstable_by(closer);
                let mut running = vec![0.0; t];
                let mut prefix: Vec<Vec<f64>> = Vec::with_capacity(max_k);
                for &j in order.iter().take(max_k) {
                    for (c, r) in running.iter_mut().enumerate() {
                        *r += train_y[(j, c)];
                    }
                    prefix.push(running.clone());
                }
                for (out, cand) in outs.iter_mut().zip(candidates) {
                    let Candidate::Neighbours(k) = *cand else { unreachable!() };
                    let k = k.min(n_train);
                    for c in 0..t {
                        out[(i, c)] = prefix[k - 1][c] / k as f64;
                    }
                }
            }
            outs.into_iter().map(Some).collect()
        }
        Some(Candidate::Kernel { .. }) => {
            let d2_train = squared_distances(train_x, train_x);
            let d2_test = squared_distances(test_x, train_x);
            let means: Vec<f64> = (0..t).map(|c| train_y.column(c).mean()).collect();
            let centered = DMatrix::from_fn(n_train, t, |i, c| train_y[(i, c)] - means[c]);
            let mut cache: Option<(f64, DMatrix<f64>, DMatrix<f64>)> = None;
            candidates
                .iter()
                .map(|cand| {
                    let Candidate::Kernel { bandwidth, ridge } = *cand else { unreachable!() };
                    if cache.as_ref().map(|c| c.0) != Some(bandwidth) {
                        let scale = -0.5 / (bandwidth * bandwidth);
                        cache = Some((
                            bandwidth,
                            d2_train.map(|v| (v * scale).exp()),
                            d2_test.map(|v| (v * scale).exp()),
                        ));
                    }
                    let (_, k_train, k_test) = cache.as_ref().expect("kernel cache filled");
                    let mut system = k_train.clone();
                    for i in 0..n_train {
                        system[(i, i)] += ridge * n_train as f64;
                    }
                    let chol = system.cholesky()?;
                    let alpha = chol.solve(&centered);
                    let mut pred = k_test * alpha;
                    for c in 0..t {
                        pred.column_mut(c).add_scalar_mut(means[c]);
                    }
                    Some(pred)
                })
                .collect()
        }
        None => Vec::new(),
    }
}

fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        fold[i] = rank % folds;
    }
    fold
}

/// Out-of-fold cross-validation summary for the chosen candidate.
struct CrossValidation {
    chosen: Candidate,
    /// Out-of-fold SSE per column.
    sse: Vec<f64>,
}

fn column_stats(y: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let n = y.nrows() as f64;
    let mut means = Vec::new();
    let mut sst = Vec::new();
    let mut constant = Vec::new();
    for col in y.column_iter() {
        let m = col.sum() / n;
        let first = col[0];
        means.push(m);
        sst.push(col.iter().map(|v| (v - m).powi(2)).sum());
        constant.push(col.iter().all(|v| *v == first));
    }
    (means, sst, constant)
}

fn cross_validate(
    candidates: &[Candidate],
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    folds: usize,
    seed: u64,
    clamp: Option<(f64, f64)>,
) -> Result<CrossValidation> {
    let n = x.nrows();
    let t = y.ncols();
    let fold = fold_assignment(n, folds, seed);
    let mut sse = vec![vec![0.0; t]; candidates.len()];
    let mut failed = vec![false; candidates.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
        if test.is_empty() {
            continue;
        }
        let preds = fit_predict(
            candidates,
            &x.select_rows(train.iter()),
            &y.select_rows(train.iter()),
            &x.select_rows(test.iter()),
        );
        for (ci, pred) in preds.into_iter().enumerate() {
            let Some(pred) = pred else {
                failed[ci] = true;
                continue;
            };
            for (r, &i) in test.iter().enumerate() {
                for c in 0..t {
                    let p = clamp_value(pred[(r, c)], clamp);
                    sse[ci][c] += (y[(i, c)] - p).powi(2);
                }
            }
        }
    }
    let (_, sst, constant) = column_stats(y);
    let loss = |ci: usize| -> f64 {
        (0..t).filter(|&c| !constant[c]).map(|c| sse[ci][c] / sst[c]).sum()
    };
    let best = (0..candidates.len())
        .filter(|&ci| !failed[ci])
        .min_by(|&a, &b| loss(a).total_cmp(&loss(b)))
        .ok_or_else(|| Error::FitFailed("no candidate could be fitted on every fold".to_string()))?;
    Ok(CrossValidation { chosen: candidates[best], sse: sse[best].clone() })
}

fn clamp_value(v: f64, clamp: Option<(f64, f64)>) -> f64 {
    match clamp {
        Some((lo, hi)) => v.clamp(lo, hi),
        None => v,
    }
}

fn check_fit_inputs(labeled: &LabeledSet, config: &ModelConfig) -> Result<()> {
    if labeled.len() < config.min_fit_size.max(2) {
        return Err(Error::FitFailed(format!(
            "{} labeled points, at least {} required",
            labeled.len(),
            config.min_fit_size.max(2)
        )));
    }
    if config.folds < 2 || config.folds > labeled.len() {
        return Err(Error::invalid(format!(
            "{} folds for {} labeled points",
            config.folds,
            labeled.len()
        )));
    }
    if labeled.auxiliaries().ncols() == 0 {
        return Err(Error::invalid("surrogates need at least one auxiliary variable"));
    }
    Ok(())
}

fn variance_floors(y: &DMatrix<f64>, factor: f64) -> Vec<f64> {
    let n = y.nrows();
    let (_, sst, _) = column_stats(y);
    sst.into_iter()
        .map(|s| {
            let var = if n > 1 { s / (n - 1) as f64 } else { 0.0 };
            factor * if var > 0.0 { var } else { 1.0 }
        })
        .collect()
}

fn prepare_features(kind: ModelKind, labeled: &DMatrix<f64>, all: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    match kind {
        ModelKind::LinearLS => (labeled.clone(), all.clone()),
        _ => {
            let s = Standardizer::fit(labeled);
            (s.apply(labeled), s.apply(all))
        }
    }
}

/// Homoscedastic, diagonal residual covariance from out-of-fold residuals,
/// broadcast to `population_size` elements.
pub fn cv_residual_covariance(
    kind: ModelKind,
    labeled: &LabeledSet,
    population_size: usize,
    config: &ModelConfig,
) -> Result<Vec<DMatrix<f64>>> {
    check_fit_inputs(labeled, config)?;
    let (x, _) = prepare_features(kind, labeled.auxiliaries(), labeled.auxiliaries());
    let y = labeled.targets();
    let cands = candidates(kind, config)?;
    let cv = cross_validate(&cands, &x, y, config.folds, config.fold_seed, config.prediction_clamp)?;
    let floors = variance_floors(y, config.variance_floor_factor);
    let vars: Vec<f64> =
        cv.sse.iter().zip(&floors).map(|(s, f)| (s / y.nrows() as f64).max(*f)).collect();
    Ok(vec![DMatrix::from_diagonal(&DVector::from_vec(vars)); population_size])
}

/// Fits `kind` on `labeled` and predicts every row of `all_auxiliaries`.
pub fn fit_surrogate(
    kind: ModelKind,
    labeled: &LabeledSet,
    all_auxiliaries: &DMatrix<f64>,
    config: &ModelConfig,
) -> Result<SurrogateFit> {
    check_fit_inputs(labeled, config)?;
    if all_auxiliaries.ncols() != labeled.auxiliaries().ncols() {
        return Err(Error::invalid("labeled and population auxiliaries differ in width"));
    }
    let y = labeled.targets();
    let t = y.ncols();
    let n_all = all_auxiliaries.nrows();
    let (x, x_all) = prepare_features(kind, labeled.auxiliaries(), all_auxiliaries);
    let (means, sst, constant) = column_stats(y);
    let floors = variance_floors(y, config.variance_floor_factor);

    let mut predicted = DMatrix::zeros(n_all, t);
    let mut variances = floors.clone();
    let mut scores = vec![None; t];
    let active: Vec<usize> = (0..t).filter(|&c| !constant[c]).collect();

    for &c in (0..t).filter(|c| constant[*c]).collect::<Vec<_>>().iter() {
        predicted.column_mut(c).fill(clamp_value(means[c], config.prediction_clamp));
    }
    if !active.is_empty() {
        let y_active = y.select_columns(active.iter());
        let cands = candidates(kind, config)?;
        let cv = cross_validate(&cands, &x, &y_active, config.folds, config.fold_seed, config.prediction_clamp)?;
        let full = fit_predict(&[cv.chosen], &x, &y_active, &x_all)
            .pop()
            .flatten()
            .ok_or_else(|| Error::FitFailed("final fit on the labeled set failed".into()))?;
        for (a, &c) in active.iter().enumerate() {
            for i in 0..n_all {
                predicted[(i, c)] = clamp_value(full[(i, a)], config.prediction_clamp);
            }
            scores[c] = Some(1.0 - cv.sse[a] / sst[c]);
            variances[c] = (cv.sse[a] / y.nrows() as f64).max(floors[c]);
        }
    }

    let holdout_score = scores.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let holdout_score = if holdout_score.is_finite() { holdout_score } else { 0.0 };
    let covariance = DMatrix::from_diagonal(&DVector::from_vec(variances.clone()));
    Ok(SurrogateFit {
        predicted_means: predicted,
        residual_covariances: vec![covariance; n_all],
        success: holdout_score > 0.0,
        holdout_score,
        column_scores: scores,
        residual_variances: variances,
    })
}

/// Factorized crash/outcome fit for the ratio of weighted totals.
#[derive(Debug, Clone, PartialEq)]
pub struct ApplicationFit {
    /// Predicted probability that `r_i = 1`.
    pub crash_prob: Vec<f64>,
    /// Predicted `x_i` given `r_i = 1`.
    pub predicted_outcome: Vec<f64>,
    pub residual_sd: Vec<f64>,
    pub crash_score: Option<f64>,
    pub outcome_score: Option<f64>,
    /// At least one of the two models beat a constant predictor on hold-out data.
    pub success: bool,
}

/// Fits the crash indicator on all labeled elements and the outcome on the
/// labeled crashes. A component that cannot be fitted, or does not beat a
/// constant on hold-out data, is replaced by constant predictions.
///
/// `raw` holds `(r_i, x_i)` for each entry of `indices`.
pub fn fit_application_surrogate(
    kind: ModelKind,
    indices: &[usize],
    raw: &DMatrix<f64>,
    all_auxiliaries: &DMatrix<f64>,
    config: &ModelConfig,
) -> Result<ApplicationFit> {
    if raw.ncols() != 2 || raw.nrows() != indices.len() {
        return Err(Error::invalid("application fit needs (r, x) per labeled element"));
    }
    let n_all = all_auxiliaries.nrows();
    let crash: Vec<f64> = raw.column(0).iter().copied().collect();
    let crash_mean = if crash.is_empty() { 0.5 } else { crash.iter().sum::<f64>() / crash.len() as f64 };

    let crash_config = ModelConfig { prediction_clamp: Some(PROBABILITY_CLAMP), ..config.clone() };
    let crash_set = LabeledSet::gather(
        indices.to_vec(),
        all_auxiliaries,
        DMatrix::from_column_slice(crash.len(), 1, &crash),
    )?;
    let crash_fit = fit_surrogate(kind, &crash_set, all_auxiliaries, &crash_config).ok();
    let crash_score = crash_fit.as_ref().map(|f| f.holdout_score);
    let crash_prob = match crash_fit.filter(|f| f.success) {
        Some(f) => f.predicted_means.column(0).iter().copied().collect(),
        None => vec![crash_mean.clamp(PROBABILITY_CLAMP.0, PROBABILITY_CLAMP.1); n_all],
    };

    let crash_rows: Vec<usize> = (0..indices.len()).filter(|&r| raw[(r, 0)] > 0.5).collect();
    let outcomes: Vec<f64> = crash_rows.iter().map(|&r| raw[(r, 1)]).collect();
    let (mean_x, sd_x) = if outcomes.is_empty() {
        (0.0, 0.0)
    } else {
        let m = outcomes.iter().sum::<f64>() / outcomes.len() as f64;
        let v = outcomes.iter().map(|x| (x - m).powi(2)).sum::<f64>() / outcomes.len() as f64;
        (m, v.sqrt())
    };
    let outcome_fit = if outcomes.len() >= config.min_fit_size.max(config.folds) {
        let set = LabeledSet::gather(
            crash_rows.iter().map(|&r| indices[r]).collect(),
            all_auxiliaries,
            DMatrix::from_column_slice(outcomes.len(), 1, &outcomes),
        )?;
        fit_surrogate(kind, &set, all_auxiliaries, config).ok()
    } else {
        None
    };
    let outcome_score = outcome_fit.as_ref().map(|f| f.holdout_score);
    let outcome_ok = outcome_fit.as_ref().is_some_and(|f| f.success);
    let (predicted_outcome, residual_sd) = match outcome_fit.filter(|f| f.success) {
        Some(f) => (
            f.predicted_means.column(0).iter().copied().collect(),
            vec![f.residual_variances[0].sqrt(); n_all],
        ),
        None => (vec![mean_x; n_all], vec![sd_x; n_all]),
    };

    Ok(ApplicationFit {
        crash_prob,
        predicted_outcome,
        residual_sd,
        crash_score,
        outcome_score,
        success: crash_score.is_some_and(|s| s > 0.0) || outcome_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::is_symmetric_psd;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn column(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    fn labeled(z: &[f64], y: &[f64]) -> LabeledSet {
        LabeledSet::new((0..z.len()).collect(), column(z), column(y)).unwrap()
    }

    #[test]
    fn linear_fit_interpolates_exact_lines() {
        let z: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = z.iter().map(|v| 2.0 * v + 1.0).collect();
        let set = labeled(&z, &y);
        let all = column(&[-1.0, 0.5, 7.0]);
        let fit = fit_surrogate(ModelKind::LinearLS, &set, &all, &ModelConfig::default()).unwrap();
        assert!(fit.success);
        assert_relative_eq!(fit.holdout_score, 1.0, epsilon = 1e-10);
        for (i, z) in [-1.0, 0.5, 7.0].iter().enumerate() {
            assert_relative_eq!(fit.predicted_means[(i, 0)], 2.0 * z + 1.0, epsilon = 1e-8);
        }
        let var_y = {
            let m = y.iter().sum::<f64>() / 10.0;
            y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 9.0
        };
        assert_relative_eq!(fit.residual_variances[0], 1e-6 * var_y, epsilon = 1e-15);
    }

    #[test]
    fn knn_with_all_neighbours_is_the_mean_and_fails() {
        let z: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..12).map(|i| ((i * 5) % 7) as f64).collect();
        let set = labeled(&z, &y);
        let config = ModelConfig { knn_k: Some(12), ..ModelConfig::default() };
        let fit = fit_surrogate(ModelKind::KNearest, &set, &column(&z), &config).unwrap();
        let mean = y.iter().sum::<f64>() / 12.0;
        fit.predicted_means.iter().for_each(|p| assert_relative_eq!(*p, mean, epsilon = 1e-12));
        assert!(fit.holdout_score <= 0.0);
        assert!(!fit.success);
    }

    #[test]
    fn too_few_labels_fail() {
        let set = labeled(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.5]);
        let err = fit_surrogate(ModelKind::LinearLS, &set, &column(&[1.0]), &ModelConfig::default());
        assert!(matches!(err, Err(Error::FitFailed(_))));
    }

    #[test]
    fn singular_linear_design_fails() {
        let set = labeled(&[1.0; 10], &(0..10).map(|i| i as f64).collect::<Vec<_>>());
        let err = fit_surrogate(ModelKind::LinearLS, &set, &column(&[1.0]), &ModelConfig::default());
        assert!(matches!(err, Err(Error::FitFailed(_))));
    }

    #[test]
    fn duplicate_indices_are_rejected() {
        assert!(LabeledSet::new(vec![1, 1], column(&[0.0, 0.0]), column(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn zero_residuals_clamp_to_the_floor() {
        let z: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = z.iter().map(|v| 3.0 - v).collect();
        let set = labeled(&z, &y);
        let covs = cv_residual_covariance(ModelKind::LinearLS, &set, 4, &ModelConfig::default()).unwrap();
        assert_eq!(covs.len(), 4);
        let var_y = 35.0; // sample variance of 0..19
        for c in &covs {
            assert_relative_eq!(c[(0, 0)], 1e-6 * var_y, epsilon = 1e-15);
        }
    }

    #[test]
    fn pure_noise_pooled_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let set = labeled(&z, &y);
        let covs = cv_residual_covariance(ModelKind::LinearLS, &set, 1, &ModelConfig::default()).unwrap();
        let v = covs[0][(0, 0)];
        assert!((0.7..=1.3).contains(&v), "pooled variance {v}");
    }

    #[test]
    fn two_columns_get_a_diagonal_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 50;
        let z: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let targets = DMatrix::from_fn(n, 2, |i, c| {
            z[i] * (c + 1) as f64 + rng.sample::<f64, _>(StandardNormal)
        });
        let set = LabeledSet::new((0..n).collect(), column(&z), targets).unwrap();
        let fit = fit_surrogate(ModelKind::LinearLS, &set, &column(&z), &ModelConfig::default()).unwrap();
        for cov in &fit.residual_covariances {
            assert_eq!(cov[(0, 1)], 0.0);
            assert_eq!(cov[(1, 0)], 0.0);
            assert!(is_symmetric_psd(cov, 0.0));
        }
    }

    #[test]
    fn constant_columns_are_predicted_exactly() {
        let z: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let targets = DMatrix::from_fn(15, 2, |i, c| if c == 0 { 1.0 } else { (i as f64).sin() + 0.2 * i as f64 });
        let set = LabeledSet::new((0..15).collect(), column(&z), targets).unwrap();
        let fit = fit_surrogate(ModelKind::KernelRidge, &set, &column(&z), &ModelConfig::default()).unwrap();
        assert!(fit.column_scores[0].is_none());
        fit.predicted_means.column(0).iter().for_each(|p| assert_eq!(*p, 1.0));
        assert_relative_eq!(fit.residual_variances[0], 1e-6);
    }

    #[test]
    fn fits_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = z.iter().map(|v| (6.0 * v).sin() + 0.1 * rng.random::<f64>()).collect();
        let set = labeled(&z, &y);
        for kind in [ModelKind::LinearLS, ModelKind::KNearest, ModelKind::KernelRidge] {
            let a = fit_surrogate(kind, &set, &column(&z), &ModelConfig::default()).unwrap();
            let b = fit_surrogate(kind, &set, &column(&z), &ModelConfig::default()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn kernel_ridge_learns_a_smooth_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let z: Vec<f64> = (0..80).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = z
            .iter()
            .map(|v| (8.0 * v).sin() + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let set = labeled(&z, &y);
        let fit = fit_surrogate(ModelKind::KernelRidge, &set, &column(&z), &ModelConfig::default()).unwrap();
        assert!(fit.holdout_score > 0.9, "score {}", fit.holdout_score);
    }

    #[test]
    fn application_fit_falls_back_to_constants() {
        let n = 30;
        let aux = DMatrix::from_fn(n, 1, |i, _| i as f64);
        // Crash exactly when the auxiliary exceeds 10; outcome constant.
        let raw = DMatrix::from_fn(n, 2, |i, c| if c == 0 { (i > 10) as u8 as f64 } else { 4.0 });
        let fit = fit_application_surrogate(
            ModelKind::KNearest,
            &(0..n).collect::<Vec<_>>(),
            &raw,
            &aux,
            &ModelConfig::default(),
        )
        .unwrap();
        assert!(fit.success);
        assert!(fit.crash_score.unwrap() > 0.5);
        assert!(fit.crash_prob[0] < 0.01 && fit.crash_prob[n - 1] > 0.99);
        assert!(fit.crash_prob.iter().all(|p| (PROBABILITY_CLAMP.0..=PROBABILITY_CLAMP.1).contains(p)));
        fit.predicted_outcome.iter().for_each(|x| assert_eq!(*x, 4.0));
        fit.residual_sd.iter().for_each(|s| assert_eq!(*s, 0.0));
    }
}
