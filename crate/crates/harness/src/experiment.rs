//! Repeated-subsampling experiments: eRMSE and interval coverage per method
//! and sample size.
//!
//! Replication `r` of every method uses the same seed, derived from the
//! master seed and `r`, so methods are compared on common random numbers:
//! all uniform-draw methods see identical samples, and the adaptive methods'
//! first batch equals the uniform methods' first batch.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use active_sampling::estimation::{pool_totals, BatchRecord};
use active_sampling::parallel::{map_indexed, Execution};
use active_sampling::schemes::baseline_scheme;
use active_sampling::{
    ActiveSampler, BaselineKind, Characteristic, CharacteristicKind, FallbackKind, LoopConfig, PooledEstimate,
    Population, SamplingScheme, SurrogateSpec, VarianceMethod, DEFAULT_FLOOR_EPSILON,
};
use active_sampling::ModelKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::baselines::{estimate_mean, AuxEstimator};
use crate::error::HarnessError;

/// Bit-exact CSV header of result tables.
pub const CSV_HEADER: [&str; 12] =
    ["method", "scenario", "sigma", "r2", "estimator", "batch_size", "n", "m_reps", "ermse", "ermse_se", "coverage", "seed"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Uniform draws with the experiment's estimator.
    Srs,
    SrsLinear,
    SrsHajek,
    Ratio,
    ControlVariate,
    ImportanceAux,
    Leverage,
    Density,
    Severity,
    NaiveAs,
    As,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Srs,
        Method::SrsLinear,
        Method::SrsHajek,
        Method::Ratio,
        Method::ControlVariate,
        Method::ImportanceAux,
        Method::Leverage,
        Method::Density,
        Method::Severity,
        Method::NaiveAs,
        Method::As,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Srs => "SRS",
            Method::SrsLinear => "SRS-linear",
            Method::SrsHajek => "SRS-Hajek",
            Method::Ratio => "Ratio",
            Method::ControlVariate => "ControlVariate",
            Method::ImportanceAux => "ImportanceAux",
            Method::Leverage => "Leverage",
            Method::Density => "Density",
            Method::Severity => "Severity",
            Method::NaiveAs => "NaiveAS",
            Method::As => "AS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HarnessError::Config(format!("unknown method '{s}'")))
    }
}

/// Descriptive columns of the population, copied into every row.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationInfo {
    pub scenario: String,
    pub sigma: Option<f64>,
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub methods: Vec<Method>,
    pub characteristic: CharacteristicKind,
    pub batch_size: usize,
    pub n_max: usize,
    /// Sample sizes to report; `None` reports after every batch.
    pub checkpoints: Option<Vec<usize>>,
    pub replications: usize,
    /// Variance methods evaluated by [`run_coverage`].
    pub variance_methods: Vec<VarianceMethod>,
    pub surrogate: SurrogateSpec,
    /// `None` picks the characteristic's default.
    pub fallback: Option<FallbackKind>,
    pub floor_epsilon: f64,
    pub alpha: f64,
    pub seed: u64,
    pub execution: Execution,
    /// Auxiliary column used by the ratio, control-variate and proportional-to-aux methods.
    pub aux_column: usize,
    pub severity_columns: Vec<usize>,
    pub leverage_columns: Option<Vec<usize>>,
}

impl ExperimentSpec {
    /// Desk-scale defaults: 200 replications, batches of 10 up to 250 draws.
    pub fn new(methods: Vec<Method>, characteristic: CharacteristicKind) -> Self {
        Self {
            methods,
            characteristic,
            batch_size: 10,
            n_max: 250,
            checkpoints: None,
            replications: 200,
            variance_methods: vec![
                VarianceMethod::Design,
                VarianceMethod::Martingale,
                VarianceMethod::Bootstrap { replicates: 1000 },
            ],
            surrogate: SurrogateSpec::new(ModelKind::KernelRidge),
            fallback: None,
            floor_epsilon: DEFAULT_FLOOR_EPSILON,
            alpha: 0.05,
            seed: 2024,
            execution: Execution::default(),
            aux_column: 0,
            severity_columns: vec![0],
            leverage_columns: None,
        }
    }

    pub fn iterations(&self) -> usize {
        self.n_max / self.batch_size
    }

    /// Reported sample sizes, validated and sorted.
    pub fn checkpoint_sizes(&self) -> Result<Vec<usize>, HarnessError> {
        let mut sizes = match &self.checkpoints {
            Some(c) => c.clone(),
            None => (1..=self.iterations()).map(|k| k * self.batch_size).collect(),
        };
        sizes.sort_unstable();
        sizes.dedup();
        if sizes.is_empty() {
            return Err(HarnessError::Config("no checkpoints".into()));
        }
        if let Some(bad) = sizes.iter().find(|&&n| n == 0 || n % self.batch_size != 0 || n > self.n_max) {
            return Err(HarnessError::Config(format!(
                "checkpoint {bad} must be a positive multiple of the batch size {} and at most n_max {}",
                self.batch_size, self.n_max
            )));
        }
        Ok(sizes)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.methods.is_empty() {
            return Err(HarnessError::Config("no methods selected".into()));
        }
        if self.replications < 2 {
            return Err(HarnessError::Config("at least 2 replications are required".into()));
        }
        if self.batch_size == 0 || self.n_max < self.batch_size {
            return Err(HarnessError::Config("need 1 ≤ batch_size ≤ n_max".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(HarnessError::Config("alpha must lie in (0, 1)".into()));
        }
        self.checkpoint_sizes()?;
        Ok(())
    }

    fn loop_config(&self, seed: u64, naive: bool) -> LoopConfig {
        let mut cfg = LoopConfig::new(self.iterations(), self.batch_size, f64::MIN_POSITIVE);
        cfg.surrogate = self.surrogate.clone();
        cfg.naive_mode = naive;
        cfg.fallback = self.fallback.unwrap_or_else(|| FallbackKind::default_for(self.characteristic));
        cfg.floor_epsilon = self.floor_epsilon;
        cfg.alpha = self.alpha;
        cfg.seed = seed;
        cfg.execution = Execution::Sequential;
        cfg.variance_method =
            if self.batch_size >= 2 { VarianceMethod::Design } else { VarianceMethod::Martingale };
        cfg
    }
}

/// Per-replication seed: SplitMix64 of the master seed offset by the replication index.
pub fn replication_seed(master: u64, replication: usize) -> u64 {
    let mut z = master.wrapping_add((replication as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How a method draws its sample.
#[derive(Debug, Clone, PartialEq)]
enum Design {
    Fixed(SamplingScheme),
    Adaptive { naive: bool },
}

/// How a method turns a sample into an estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Estimator {
    Weighted(Characteristic),
    Aux(AuxEstimator),
}

struct MethodPlan {
    method: Method,
    /// Index into the list of distinct designs.
    design: usize,
    estimator: Estimator,
    /// Responses mapped for the weighted estimator.
    responses: Option<nalgebra::DMatrix<f64>>,
}

fn estimator_label(estimator: Estimator) -> &'static str {
    match estimator {
        Estimator::Weighted(c) => c.kind().name(),
        Estimator::Aux(_) => "linear",
    }
}

struct Plan {
    designs: Vec<Design>,
    methods: Vec<MethodPlan>,
    failures: Vec<(Method, String)>,
}

fn plan(pop: &Population, spec: &ExperimentSpec) -> Result<Plan, HarnessError> {
    let n = pop.len();
    let experiment_c = Characteristic::of_kind(spec.characteristic, n);
    let mut designs: Vec<Design> = Vec::new();
    let mut methods = Vec::new();
    let mut failures = Vec::new();
    let design_index = |d: Design, designs: &mut Vec<Design>| -> usize {
        match designs.iter().position(|x| *x == d) {
            Some(i) => i,
            None => {
                designs.push(d);
                designs.len() - 1
            }
        }
    };
    for &method in &spec.methods {
        let scheme = |kind: BaselineKind| baseline_scheme(&kind, pop.frame(), spec.floor_epsilon);
        let (design, estimator) = match method {
            Method::Srs => (Ok(Design::Fixed(SamplingScheme::uniform(n))), Estimator::Weighted(experiment_c)),
            Method::SrsLinear => (
                Ok(Design::Fixed(SamplingScheme::uniform(n))),
                Estimator::Weighted(Characteristic::linear_mean(n)),
            ),
            Method::SrsHajek => {
                (Ok(Design::Fixed(SamplingScheme::uniform(n))), Estimator::Weighted(Characteristic::hajek_mean()))
            }
            Method::Ratio => (Ok(Design::Fixed(SamplingScheme::uniform(n))), Estimator::Aux(AuxEstimator::Ratio)),
            Method::ControlVariate => {
                (Ok(Design::Fixed(SamplingScheme::uniform(n))), Estimator::Aux(AuxEstimator::ControlVariate))
            }
            Method::ImportanceAux => (
                scheme(BaselineKind::ProportionalToAux { column: spec.aux_column }).map(Design::Fixed),
                Estimator::Weighted(experiment_c),
            ),
            Method::Leverage => (
                scheme(BaselineKind::Leverage { columns: spec.leverage_columns.clone() }).map(Design::Fixed),
                Estimator::Weighted(experiment_c),
            ),
            Method::Density => (scheme(BaselineKind::Density).map(Design::Fixed), Estimator::Weighted(experiment_c)),
            Method::Severity => (
                scheme(BaselineKind::Severity { columns: spec.severity_columns.clone() }).map(Design::Fixed),
                Estimator::Weighted(experiment_c),
            ),
            Method::NaiveAs => (Ok(Design::Adaptive { naive: true }), Estimator::Weighted(experiment_c)),
            Method::As => (Ok(Design::Adaptive { naive: false }), Estimator::Weighted(experiment_c)),
        };
        let design = match design {
            Ok(d) => d,
            Err(e) => {
                failures.push((method, e.to_string()));
                continue;
            }
        };
        let responses = match estimator {
            Estimator::Weighted(c) => match pop.remap(c) {
                Ok(p) => Some(p.responses().clone()),
                Err(e) => {
                    failures.push((method, e.to_string()));
                    continue;
                }
            },
            Estimator::Aux(_) => {
                if pop.characteristic().raw_dimension() != 1 || spec.aux_column >= pop.auxiliaries().ncols() {
                    failures.push((method, "auxiliary estimators need a scalar study variable".into()));
                    continue;
                }
                if matches!(estimator, Estimator::Aux(AuxEstimator::Ratio))
                    && pop.auxiliaries().column(spec.aux_column).iter().any(|z| *z <= 0.0)
                {
                    failures.push((method, "ratio estimator needs a strictly positive auxiliary".into()));
                    continue;
                }
                None
            }
        };
        let design = design_index(design, &mut designs);
        methods.push(MethodPlan { method, design, estimator, responses });
    }
    Ok(Plan { designs, methods, failures })
}

/// Draws of one replication under one design.
fn run_design(
    pop: &Population,
    spec: &ExperimentSpec,
    design: &Design,
    seed: u64,
) -> Result<Vec<active_sampling::BatchDraw>, HarnessError> {
    let cfg = spec.loop_config(seed, matches!(design, Design::Adaptive { naive: true }));
    let mut sampler = match design {
        Design::Fixed(s) => ActiveSampler::fixed(pop.frame(), pop.characteristic(), pop, cfg, s.clone())?,
        Design::Adaptive { .. } => ActiveSampler::new(pop.frame(), pop.characteristic(), pop, cfg)?,
    };
    while sampler.step()?.is_some() {}
    Ok(sampler.history().records().iter().map(|r| r.draw().clone()).collect())
}

fn truth_for(pop: &Population, estimator: Estimator) -> Result<f64, HarnessError> {
    Ok(match estimator {
        Estimator::Weighted(c) => pop.remap(c)?.true_value()?,
        Estimator::Aux(_) => pop.raw().column(0).mean(),
    })
}

/// Per-checkpoint results of one method in one replication.
#[derive(Debug, Clone, PartialEq)]
struct RepOutcome {
    estimates: Vec<Option<f64>>,
    /// `[variance method][checkpoint]`: whether the interval covered the truth.
    covered: Vec<Vec<bool>>,
}

fn evaluate(
    pop: &Population,
    spec: &ExperimentSpec,
    plan: &MethodPlan,
    draws: &[active_sampling::BatchDraw],
    checkpoints: &[usize],
    truth: f64,
    coverage: bool,
    seed: u64,
) -> Result<RepOutcome, HarnessError> {
    let iterations: Vec<usize> = checkpoints.iter().map(|n| n / spec.batch_size).collect();
    let mut estimates = Vec::with_capacity(checkpoints.len());
    let mut covered = vec![Vec::with_capacity(checkpoints.len()); if coverage { spec.variance_methods.len() } else { 0 }];
    match plan.estimator {
        Estimator::Weighted(c) => {
            let responses = plan.responses.as_ref().expect("weighted estimators carry responses");
            let records: Vec<BatchRecord> =
                draws.iter().map(|d| BatchRecord::new(d.clone(), responses)).collect::<Result<_, _>>()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(2);
            for &k in &iterations {
                let prefix = &records[..k];
                let pooled = pool_totals(prefix)?;
                estimates.push(c.eval(pooled.as_slice()).ok());
                if coverage {
                    for (slot, &vm) in covered.iter_mut().zip(&spec.variance_methods) {
                        let hit = match PooledEstimate::compute(&c, prefix, vm, spec.alpha, &mut rng, Execution::Sequential)
                        {
                            Ok(e) => !e.insufficient && e.covers(truth),
                            Err(active_sampling::Error::Domain { .. }) => false,
                            Err(e) => return Err(e.into()),
                        };
                        slot.push(hit);
                    }
                }
            }
        }
        Estimator::Aux(kind) => {
            let z = pop.auxiliaries().column(spec.aux_column);
            let y = pop.raw().column(0);
            let z_pop = z.mean();
            let mut sample: Vec<(f64, f64)> = Vec::new();
            let mut done = 0;
            for &k in &iterations {
                for draw in &draws[done..k] {
                    for (i, s, _) in draw.selections() {
                        sample.extend(std::iter::repeat_n((z[i], y[i]), s as usize));
                    }
                }
                done = k;
                estimates.push(Some(estimate_mean(kind, &sample, z_pop)?));
            }
            if coverage {
                return Err(HarnessError::Precondition(format!(
                    "{} has no variance estimator for coverage",
                    plan.method
                )));
            }
        }
    }
    Ok(RepOutcome { estimates, covered })
}

/// Mean squared error with a normal-approximation band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErmseStats {
    pub ermse: f64,
    /// Standard error of the eRMSE (delta method from the squared errors).
    pub ermse_se: f64,
    /// 95% band, `√(MSE ∓ 1.96 se(MSE))`.
    pub lower: f64,
    pub upper: f64,
    pub mean_error: f64,
    /// Replications with a defined estimate.
    pub defined: usize,
}

pub fn ermse_stats(errors: &[f64]) -> ErmseStats {
    let m = errors.len();
    if m == 0 {
        return ErmseStats {
            ermse: f64::NAN,
            ermse_se: f64::NAN,
            lower: f64::NAN,
            upper: f64::NAN,
            mean_error: f64::NAN,
            defined: 0,
        };
    }
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let mse = sq.iter().sum::<f64>() / m as f64;
    let mse_se = if m > 1 {
        (sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (m - 1) as f64 / m as f64).sqrt()
    } else {
        0.0
    };
    let ermse = mse.sqrt();
    ErmseStats {
        ermse,
        ermse_se: if ermse > 0.0 { mse_se / (2.0 * ermse) } else { 0.0 },
        lower: (mse - 1.96 * mse_se).max(0.0).sqrt(),
        upper: (mse + 1.96 * mse_se).sqrt(),
        mean_error: errors.iter().sum::<f64>() / m as f64,
        defined: m,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub scenario: String,
    pub sigma: Option<f64>,
    pub r2: Option<f64>,
    pub estimator: String,
    pub batch_size: usize,
    pub n: usize,
    pub m_reps: usize,
    pub ermse: f64,
    pub ermse_se: f64,
    pub coverage: Option<f64>,
    pub seed: u64,
    /// Not part of the CSV: the eRMSE band.
    pub band: (f64, f64),
}

/// Per-replication estimates of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodEstimates {
    pub method: Method,
    pub estimator: String,
    pub truth: f64,
    /// `[checkpoint][replication]`.
    pub estimates: Vec<Vec<Option<f64>>>,
}

impl MethodEstimates {
    pub fn errors(&self, checkpoint: usize) -> Vec<f64> {
        self.estimates[checkpoint].iter().flatten().map(|e| e - self.truth).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub checkpoints: Vec<usize>,
    pub estimates: Vec<MethodEstimates>,
    /// Methods that could not run, with the reason.
    pub failures: Vec<(String, String)>,
    /// `key=value` lines for the sidecar metadata file.
    pub meta: Vec<(String, String)>,
}

impl ResultTable {
    pub fn row(&self, method: &str, n: usize) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.method == method && r.n == n)
    }

    pub fn method_estimates(&self, method: Method) -> Option<&MethodEstimates> {
        self.estimates.iter().find(|e| e.method == method)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.scenario.clone(),
                opt(r.sigma),
                opt(r.r2),
                r.estimator.clone(),
                r.batch_size.to_string(),
                r.n.to_string(),
                r.m_reps.to_string(),
                r.ermse.to_string(),
                r.ermse_se.to_string(),
                opt(r.coverage),
                r.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_meta<W: Write>(&self, mut writer: W) -> Result<(), HarnessError> {
        for (k, v) in &self.meta {
            writeln!(writer, "{k}={v}")?;
        }
        for (m, reason) in &self.failures {
            writeln!(writer, "failed.{m}={reason}")?;
        }
        Ok(())
    }
}

struct Collected {
    plan: Plan,
    checkpoints: Vec<usize>,
    truths: Vec<f64>,
    /// `[replication][method]`.
    outcomes: Vec<Vec<RepOutcome>>,
}

fn collect(pop: &Population, spec: &ExperimentSpec, coverage: bool) -> Result<Collected, HarnessError> {
    spec.validate()?;
    let checkpoints = spec.checkpoint_sizes()?;
    let mut plan = plan(pop, spec)?;
    if coverage {
        let (keep, drop): (Vec<_>, Vec<_>) =
            plan.methods.into_iter().partition(|m| matches!(m.estimator, Estimator::Weighted(_)));
        for m in drop {
            plan.failures.push((m.method, "no variance estimator for coverage".into()));
        }
        plan.methods = keep;
    }
    if plan.methods.is_empty() {
        let reasons: Vec<String> = plan.failures.iter().map(|(m, r)| format!("{m}: {r}")).collect();
        return Err(HarnessError::Precondition(reasons.join("; ")));
    }
    let truths: Vec<f64> = plan.methods.iter().map(|m| truth_for(pop, m.estimator)).collect::<Result<_, _>>()?;
    let outcomes = map_indexed(spec.replications, spec.execution, |rep| -> Result<Vec<RepOutcome>, HarnessError> {
        let seed = replication_seed(spec.seed, rep);
        let draws: Vec<Vec<active_sampling::BatchDraw>> =
            plan.designs.iter().map(|d| run_design(pop, spec, d, seed)).collect::<Result<_, _>>()?;
        plan.methods
            .iter()
            .zip(&truths)
            .map(|(m, &truth)| evaluate(pop, spec, m, &draws[m.design], &checkpoints, truth, coverage, seed))
            .collect()
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(Collected { plan, checkpoints, truths, outcomes })
}

fn base_row(info: &PopulationInfo, spec: &ExperimentSpec, method: String, estimator: &str, n: usize) -> ResultRow {
    ResultRow {
        method,
        scenario: info.scenario.clone(),
        sigma: info.sigma,
        r2: info.r2,
        estimator: estimator.to_string(),
        batch_size: spec.batch_size,
        n,
        m_reps: spec.replications,
        ermse: f64::NAN,
        ermse_se: f64::NAN,
        coverage: None,
        seed: spec.seed,
        band: (f64::NAN, f64::NAN),
    }
}

fn method_estimates(c: &Collected) -> Vec<MethodEstimates> {
    c.plan
        .methods
        .iter()
        .enumerate()
        .map(|(mi, m)| MethodEstimates {
            method: m.method,
            estimator: estimator_label(m.estimator).to_string(),
            truth: c.truths[mi],
            estimates: (0..c.checkpoints.len())
                .map(|ci| c.outcomes.iter().map(|rep| rep[mi].estimates[ci]).collect())
                .collect(),
        })
        .collect()
}

/// eRMSE of every method at every checkpoint.
pub fn run_benchmark(pop: &Population, info: &PopulationInfo, spec: &ExperimentSpec) -> Result<ResultTable, HarnessError> {
    let collected = collect(pop, spec, false)?;
    let estimates = method_estimates(&collected);
    let mut rows = Vec::new();
    for est in &estimates {
        for (ci, &n) in collected.checkpoints.iter().enumerate() {
            let stats = ermse_stats(&est.errors(ci));
            let mut row = base_row(info, spec, est.method.name().to_string(), &est.estimator, n);
            row.ermse = stats.ermse;
            row.ermse_se = stats.ermse_se;
            row.band = (stats.lower, stats.upper);
            rows.push(row);
        }
    }
    let mut meta = common_meta(pop, spec, &collected);
    meta.extend(significance_meta(&estimates, &collected.checkpoints));
    Ok(ResultTable {
        rows,
        checkpoints: collected.checkpoints,
        estimates,
        failures: collected.plan.failures.iter().map(|(m, r)| (m.name().to_string(), r.clone())).collect(),
        meta,
    })
}

/// Interval coverage per method, variance method and checkpoint. The
/// variance method is appended to the method column, e.g. `AS+design`.
pub fn run_coverage(pop: &Population, info: &PopulationInfo, spec: &ExperimentSpec) -> Result<ResultTable, HarnessError> {
    if spec.variance_methods.is_empty() {
        return Err(HarnessError::Config("no variance methods selected".into()));
    }
    let collected = collect(pop, spec, true)?;
    let estimates = method_estimates(&collected);
    let mut rows = Vec::new();
    let mut meta = common_meta(pop, spec, &collected);
    for (mi, est) in estimates.iter().enumerate() {
        for (vi, vm) in spec.variance_methods.iter().enumerate() {
            let label = format!("{}+{}", est.method.name(), vm.name());
            let mut hits = Vec::with_capacity(collected.checkpoints.len());
            for (ci, &n) in collected.checkpoints.iter().enumerate() {
                let covered = collected.outcomes.iter().filter(|rep| rep[mi].covered[vi][ci]).count();
                hits.push(covered);
                let stats = ermse_stats(&est.errors(ci));
                let mut row = base_row(info, spec, label.clone(), &est.estimator, n);
                row.ermse = stats.ermse;
                row.ermse_se = stats.ermse_se;
                row.band = (stats.lower, stats.upper);
                row.coverage = Some(covered as f64 / spec.replications as f64);
                rows.push(row);
            }
            let (z, p) = coverage_trend_test(&hits, spec.replications, &collected.checkpoints);
            meta.push((format!("trend.{label}"), format!("z={z:.4} p_increasing={p:.4}")));
        }
    }
    Ok(ResultTable {
        rows,
        checkpoints: collected.checkpoints,
        estimates,
        failures: collected.plan.failures.iter().map(|(m, r)| (m.name().to_string(), r.clone())).collect(),
        meta,
    })
}

fn common_meta(pop: &Population, spec: &ExperimentSpec, c: &Collected) -> Vec<(String, String)> {
    let mut meta = vec![
        ("population_size".to_string(), pop.len().to_string()),
        ("replications".to_string(), spec.replications.to_string()),
        ("seed_policy".to_string(), "replication r uses splitmix64(seed, r) for every method".to_string()),
        ("surrogate".to_string(), spec.surrogate.kind.name().to_string()),
        ("floor_epsilon".to_string(), spec.floor_epsilon.to_string()),
    ];
    for (mi, m) in c.plan.methods.iter().enumerate() {
        let undefined: usize =
            c.outcomes.iter().map(|rep| rep[mi].estimates.iter().filter(|e| e.is_none()).count()).sum();
        if undefined > 0 {
            meta.push((format!("undefined_estimates.{}", m.method), undefined.to_string()));
        }
        meta.push((format!("truth.{}", m.method), c.truths[mi].to_string()));
    }
    meta
}

/// Welch's two-sided t-test p-value.
pub fn welch_p_value(a: &[f64], b: &[f64]) -> f64 {
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (n, m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    };
    if a.len() < 2 || b.len() < 2 {
        return 1.0;
    }
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return if ma == mb { 1.0 } else { 0.0 };
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

/// Smallest checkpoint from which every test is significant at `level`.
pub fn first_persistent(p_values: &[f64], checkpoints: &[usize], level: f64) -> Option<usize> {
    let mut first = None;
    for (p, &n) in p_values.iter().zip(checkpoints).rev() {
        if *p < level {
            first = Some(n);
        } else {
            break;
        }
    }
    first
}

fn significance_meta(estimates: &[MethodEstimates], checkpoints: &[usize]) -> Vec<(String, String)> {
    let Some(reference) = estimates.iter().find(|e| e.method == Method::As).or(estimates.first()) else {
        return Vec::new();
    };
    let mut meta = vec![(
        "significance_rule".to_string(),
        format!(
            "Welch t-test on squared errors against {} at each checkpoint; a difference is persistent from the \
             smallest n at which it and every larger checkpoint have p < 0.05",
            reference.method
        ),
    )];
    for other in estimates.iter().filter(|e| e.method != reference.method) {
        let p: Vec<f64> = (0..checkpoints.len())
            .map(|ci| {
                let sq = |v: Vec<f64>| v.into_iter().map(|e| e * e).collect::<Vec<_>>();
                welch_p_value(&sq(reference.errors(ci)), &sq(other.errors(ci)))
            })
            .collect();
        let value = first_persistent(&p, checkpoints, 0.05).map_or("none".to_string(), |n| n.to_string());
        meta.push((format!("persistent_from.{}_vs_{}", reference.method, other.method), value));
    }
    meta
}

/// Cochran–Armitage test for an increasing trend of coverage counts over
/// checkpoints, with `ln n` as the dose scores (coverage error shrinks
/// roughly like a power of `n`). Returns the z statistic and the one-sided
/// p-value.
pub fn coverage_trend_test(hits: &[usize], replications: usize, checkpoints: &[usize]) -> (f64, f64) {
    let m = replications as f64;
    let total: f64 = hits.iter().map(|&h| h as f64).sum();
    let groups = hits.len() as f64;
    let p_bar = total / (m * groups);
    let x: Vec<f64> = checkpoints.iter().map(|&n| (n as f64).ln()).collect();
    let x_bar = x.iter().sum::<f64>() / groups;
    let t: f64 = hits.iter().zip(&x).map(|(&h, xi)| (xi - x_bar) * h as f64).sum();
    let var = p_bar * (1.0 - p_bar) * m * x.iter().map(|xi| (xi - x_bar).powi(2)).sum::<f64>();
    if var <= 0.0 {
        return (0.0, 0.5);
    }
    let z = t / var.sqrt();
    (z, 1.0 - Normal::standard().cdf(z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn seeds_differ_across_replications() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|r| replication_seed(7, r)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(replication_seed(7, 3), replication_seed(7, 3));
    }

    #[test]
    fn ermse_band_contains_the_estimate() {
        let s = ermse_stats(&[0.1, -0.2, 0.3, 0.05]);
        assert!(s.lower <= s.ermse && s.ermse <= s.upper);
        let zero = ermse_stats(&[0.0, 0.0]);
        assert_eq!((zero.ermse, zero.ermse_se), (0.0, 0.0));
    }

    #[test]
    fn persistence_rule() {
        let n = [10, 20, 30, 40];
        assert_eq!(first_persistent(&[0.01, 0.2, 0.01, 0.01], &n, 0.05), Some(30));
        assert_eq!(first_persistent(&[0.01, 0.01, 0.01, 0.3], &n, 0.05), None);
    }

    #[test]
    fn welch_detects_shifted_samples() {
        let a: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 3.0).collect();
        assert!(welch_p_value(&a, &b) < 1e-6);
        assert!(welch_p_value(&a, &a) > 0.99);
    }

    #[test]
    fn trend_test_direction() {
        let n = [50, 100, 150, 200];
        let (z, p) = coverage_trend_test(&[80, 85, 90, 95], 100, &n);
        assert!(z > 0.0 && p < 0.05);
        let (z, _) = coverage_trend_test(&[95, 90, 85, 80], 100, &n);
        assert!(z < 0.0);
    }

    #[test]
    fn checkpoints_must_align_with_batches() {
        let mut spec = ExperimentSpec::new(vec![Method::Srs], CharacteristicKind::LinearMean);
        spec.checkpoints = Some(vec![15]);
        assert!(spec.validate().is_err());
        spec.checkpoints = Some(vec![250, 50]);
        assert_eq!(spec.checkpoint_sizes().unwrap(), vec![50, 250]);
    }
}
