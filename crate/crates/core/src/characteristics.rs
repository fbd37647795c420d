//! Target characteristics `θ = h(t_y)` and the populations they are defined on.
//!
//! Each characteristic owns the mapping from raw study variables to the
//! response vectors `y_i`, so everything downstream works on an `N × d`
//! response matrix and never needs to know which kind of target it serves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CharacteristicKind {
    /// `h(u) = u`, `d = 1`.
    LinearTotal,
    /// `h(u) = u / N`, `d = 1`.
    LinearMean,
    /// `h(u) = u₂ / u₁` on `y_i = (1, y_i)`.
    HajekMean,
    /// `h(u) = u₂ / u₁` on `y_i = p_i (r_i, r_i x_i)`.
    RatioOfWeightedTotals,
}

impl CharacteristicKind {
    pub fn name(self) -> &'static str {
        match self {
            CharacteristicKind::LinearTotal => "total",
            CharacteristicKind::LinearMean => "linear",
            CharacteristicKind::HajekMean => "hajek",
            CharacteristicKind::RatioOfWeightedTotals => "ratio",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Characteristic {
    kind: CharacteristicKind,
    population_size: usize,
}

impl Characteristic {
    pub fn linear_total() -> Self {
        Self { kind: CharacteristicKind::LinearTotal, population_size: 0 }
    }

    pub fn linear_mean(population_size: usize) -> Self {
        Self { kind: CharacteristicKind::LinearMean, population_size }
    }

    pub fn hajek_mean() -> Self {
        Self { kind: CharacteristicKind::HajekMean, population_size: 0 }
    }

    pub fn ratio_of_weighted_totals() -> Self {
        Self { kind: CharacteristicKind::RatioOfWeightedTotals, population_size: 0 }
    }

    /// Builds the characteristic of `kind` for a population of `population_size` elements.
    pub fn of_kind(kind: CharacteristicKind, population_size: usize) -> Self {
        Self { kind, population_size }
    }

    /// `N` for the linear mean; unused by the other kinds.
    pub fn population_size(&self) -> usize {
        self.population_size
    }

    pub fn kind(&self) -> CharacteristicKind {
        self.kind
    }

    /// Length `d` of the mapped response vectors.
    pub fn dimension(&self) -> usize {
        match self.kind {
            CharacteristicKind::LinearTotal | CharacteristicKind::LinearMean => 1,
            CharacteristicKind::HajekMean | CharacteristicKind::RatioOfWeightedTotals => 2,
        }
    }

    /// Number of raw study variables per element: `y` for the mean/total kinds,
    /// `(r, x)` for the ratio of weighted totals.
    pub fn raw_dimension(&self) -> usize {
        match self.kind {
            CharacteristicKind::RatioOfWeightedTotals => 2,
            _ => 1,
        }
    }

    fn is_ratio(&self) -> bool {
        matches!(
            self.kind,
            CharacteristicKind::HajekMean | CharacteristicKind::RatioOfWeightedTotals
        )
    }

    fn check_totals(&self, totals: &[f64]) -> Result<()> {
        if totals.len() != self.dimension() {
            return Err(Error::invalid(format!(
                "expected {} totals, got {}",
                self.dimension(),
                totals.len()
            )));
        }
        if totals.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("totals must be finite"));
        }
        if self.kind == CharacteristicKind::LinearMean && self.population_size == 0 {
            return Err(Error::invalid("linear mean needs a positive population size"));
        }
        if self.is_ratio() && totals[0] == 0.0 {
            return Err(Error::Domain { totals: totals.to_vec() });
        }
        Ok(())
    }

    /// Evaluates `h(totals)`.
    pub fn eval(&self, totals: &[f64]) -> Result<f64> {
        self.check_totals(totals)?;
        Ok(match self.kind {
            CharacteristicKind::LinearTotal => totals[0],
            CharacteristicKind::LinearMean => totals[0] / self.population_size as f64,
            _ => totals[1] / totals[0],
        })
    }

    /// Evaluates `∇h(totals)`.
    pub fn gradient(&self, totals: &[f64]) -> Result<DVector<f64>> {
        self.check_totals(totals)?;
        Ok(match self.kind {
            CharacteristicKind::LinearTotal => DVector::from_element(1, 1.0),
            CharacteristicKind::LinearMean => {
                DVector::from_element(1, 1.0 / self.population_size as f64)
            }
            _ => {
                let (u1, u2) = (totals[0], totals[1]);
                DVector::from_vec(vec![-u2 / (u1 * u1), 1.0 / u1])
            }
        })
    }

    /// Maps raw study variables of one element to its response vector.
    pub fn map_response(&self, raw: &[f64], prior_weight: f64) -> Result<Vec<f64>> {
        if raw.len() != self.raw_dimension() {
            return Err(Error::invalid(format!(
                "expected {} raw outcomes, got {}",
                self.raw_dimension(),
                raw.len()
            )));
        }
        Ok(match self.kind {
            CharacteristicKind::LinearTotal | CharacteristicKind::LinearMean => vec![raw[0]],
            CharacteristicKind::HajekMean => vec![1.0, raw[0]],
            CharacteristicKind::RatioOfWeightedTotals => {
                let (r, x) = (raw[0], raw[1]);
                vec![prior_weight * r, prior_weight * r * x]
            }
        })
    }
}

/// What the sampler may see without labeling: auxiliaries and prior weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingFrame {
    auxiliaries: DMatrix<f64>,
    prior_weights: Vec<f64>,
}

impl SamplingFrame {
    /// `auxiliaries` is `N × q`; missing prior weights default to 1.
    pub fn new(auxiliaries: DMatrix<f64>, prior_weights: Option<Vec<f64>>) -> Result<Self> {
        let n = auxiliaries.nrows();
        if n == 0 {
            return Err(Error::invalid("population must have at least one element"));
        }
        if auxiliaries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("auxiliary values must be finite"));
        }
        let prior_weights = prior_weights.unwrap_or_else(|| vec![1.0; n]);
        if prior_weights.len() != n {
            return Err(Error::invalid(format!(
                "{} prior weights for {} elements",
                prior_weights.len(),
                n
            )));
        }
        if prior_weights.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid("prior weights must be strictly positive"));
        }
        Ok(Self { auxiliaries, prior_weights })
    }

    pub fn len(&self) -> usize {
        self.auxiliaries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn auxiliaries(&self) -> &DMatrix<f64> {
        &self.auxiliaries
    }

    pub fn prior_weights(&self) -> &[f64] {
        &self.prior_weights
    }
}

/// A fully enumerated population: the frame plus every element's outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    frame: SamplingFrame,
    characteristic: Characteristic,
    raw: DMatrix<f64>,
    responses: DMatrix<f64>,
}

impl Population {
    /// `raw` is `N × raw_dimension`; responses are mapped through `characteristic`.
    pub fn new(
        characteristic: Characteristic,
        raw: DMatrix<f64>,
        auxiliaries: DMatrix<f64>,
        prior_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let frame = SamplingFrame::new(auxiliaries, prior_weights)?;
        Self::from_frame(frame, characteristic, raw)
    }

    pub fn from_frame(
        frame: SamplingFrame,
        characteristic: Characteristic,
        raw: DMatrix<f64>,
    ) -> Result<Self> {
        let n = frame.len();
        if raw.nrows() != n {
            return Err(Error::invalid(format!("{} outcome rows for {} elements", raw.nrows(), n)));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("outcomes must be finite"));
        }
        if characteristic.kind == CharacteristicKind::LinearMean
            && characteristic.population_size != n
        {
            return Err(Error::invalid(format!(
                "linear mean defined for N = {}, population has {}",
                characteristic.population_size, n
            )));
        }
        let d = characteristic.dimension();
        let mut responses = DMatrix::zeros(n, d);
        for i in 0..n {
            let row: Vec<f64> = raw.row(i).iter().copied().collect();
            let y = characteristic.map_response(&row, frame.prior_weights[i])?;
            for (j, v) in y.into_iter().enumerate() {
                responses[(i, j)] = v;
            }
        }
        Ok(Self { frame, characteristic, raw, responses })
    }

    /// Same elements and outcomes, responses remapped for another characteristic.
    pub fn remap(&self, characteristic: Characteristic) -> Result<Self> {
        Self::from_frame(self.frame.clone(), characteristic, self.raw.clone())
    }

    pub fn len(&self) -> usize {
        self.frame.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame.is_empty()
    }

    pub fn frame(&self) -> &SamplingFrame {
        &self.frame
    }

    pub fn characteristic(&self) -> Characteristic {
        self.characteristic
    }

    pub fn auxiliaries(&self) -> &DMatrix<f64> {
        self.frame.auxiliaries()
    }

    pub fn prior_weights(&self) -> &[f64] {
        self.frame.prior_weights()
    }

    pub fn raw(&self) -> &DMatrix<f64> {
        &self.raw
    }

    pub fn responses(&self) -> &DMatrix<f64> {
        &self.responses
    }

    pub fn response(&self, i: usize) -> DVector<f64> {
        self.responses.row(i).transpose()
    }

    /// `t_y = Σ_i y_i` by full enumeration.
    pub fn true_totals(&self) -> DVector<f64> {
        true_totals(&self.responses)
    }

    /// `θ = h(t_y)` by full enumeration.
    pub fn true_value(&self) -> Result<f64> {
        self.characteristic.eval(self.true_totals().as_slice())
    }
}

/// Column sums of an `N × d` response matrix.
pub fn true_totals(responses: &DMatrix<f64>) -> DVector<f64> {
    responses.row_sum().transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn column(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    #[test]
    fn eval_examples() {
        assert_eq!(Characteristic::linear_mean(4).eval(&[8.0]).unwrap(), 2.0);
        assert_eq!(Characteristic::hajek_mean().eval(&[2.0, 6.0]).unwrap(), 3.0);
        assert_eq!(Characteristic::linear_total().eval(&[5.5]).unwrap(), 5.5);
    }

    #[test]
    fn ratio_example_by_hand() {
        // p = 1, r = (1, 1, 0), x = (2, 4, 9): numerator 2 + 4, denominator 1 + 1.
        let raw = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 4.0, 0.0, 9.0]);
        let pop = Population::new(
            Characteristic::ratio_of_weighted_totals(),
            raw,
            column(&[0.0, 1.0, 2.0]),
            None,
        )
        .unwrap();
        let t = pop.true_totals();
        assert_eq!(t.as_slice(), &[2.0, 6.0]);
        assert_eq!(pop.true_value().unwrap(), 3.0);
    }

    #[test]
    fn gradient_examples() {
        let g = Characteristic::linear_mean(10).gradient(&[123.0]).unwrap();
        assert_relative_eq!(g[0], 0.1);
        let g = Characteristic::hajek_mean().gradient(&[2.0, 6.0]).unwrap();
        assert_eq!(g.as_slice(), &[-1.5, 0.5]);
    }

    #[test]
    fn zero_denominator_is_a_domain_error() {
        for c in [Characteristic::hajek_mean(), Characteristic::ratio_of_weighted_totals()] {
            assert!(matches!(c.eval(&[0.0, 1.0]), Err(Error::Domain { .. })));
            assert!(matches!(c.gradient(&[0.0, 1.0]), Err(Error::Domain { .. })));
        }
    }

    #[test]
    fn true_totals_examples() {
        let pop =
            Population::new(Characteristic::linear_total(), column(&[1.0, 3.0]), column(&[0.0, 0.0]), None)
                .unwrap();
        assert_eq!(pop.true_totals().as_slice(), &[4.0]);

        let hajek = pop.remap(Characteristic::hajek_mean()).unwrap();
        let pop2 = Population::new(
            Characteristic::hajek_mean(),
            column(&[2.0, 4.0]),
            column(&[0.0, 0.0]),
            None,
        )
        .unwrap();
        assert_eq!(pop2.true_totals().as_slice(), &[2.0, 6.0]);
        assert_eq!(hajek.true_totals().as_slice(), &[2.0, 4.0]);

        let raw = DMatrix::from_row_slice(2, 2, &[1.0, 4.0, 0.0, 9.0]);
        let ratio = Population::new(
            Characteristic::ratio_of_weighted_totals(),
            raw,
            column(&[0.0, 1.0]),
            Some(vec![0.5, 0.5]),
        )
        .unwrap();
        assert_eq!(ratio.true_totals().as_slice(), &[0.5, 2.0]);
    }

    #[test]
    fn linear_and_hajek_agree_on_the_mean() {
        let y = [0.3, 1.7, 2.2, 5.0, -1.1];
        let linear = Population::new(
            Characteristic::linear_mean(5),
            column(&y),
            column(&[0.0; 5]),
            None,
        )
        .unwrap();
        let hajek = linear.remap(Characteristic::hajek_mean()).unwrap();
        let mean = y.iter().sum::<f64>() / 5.0;
        assert_relative_eq!(linear.true_value().unwrap(), mean, epsilon = 1e-15);
        assert_relative_eq!(hajek.true_value().unwrap(), mean, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_populations() {
        assert!(SamplingFrame::new(DMatrix::zeros(0, 1), None).is_err());
        assert!(SamplingFrame::new(DMatrix::zeros(2, 1), Some(vec![1.0, 0.0])).is_err());
        assert!(SamplingFrame::new(column(&[f64::NAN]), None).is_err());
        assert!(Population::new(
            Characteristic::linear_mean(3),
            column(&[1.0, 2.0]),
            column(&[0.0, 0.0]),
            None
        )
        .is_err());
    }
}
