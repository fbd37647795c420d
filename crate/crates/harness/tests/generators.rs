use active_sampling::{Characteristic, CharacteristicKind, Population};
use active_sampling_harness::application::{generate_application_grid, ApplicationSpec, DECELERATION, GLANCE};
use active_sampling_harness::synthetic::{correlation, generate_synthetic, sample_variance, Scenario, SyntheticSpec};
use nalgebra::DMatrix;

/// R² of the least-squares line through `(z, f)`.
fn best_line_r2(z: &[f64], f: &[f64]) -> f64 {
    correlation(z, f).powi(2)
}

#[test]
fn standardized_output_has_unit_variance_and_full_length() {
    for scenario in [Scenario::StrictlyPositive, Scenario::ZeroMean] {
        let data = generate_synthetic(&SyntheticSpec::new(1.0, 0.5, scenario, 4)).unwrap();
        assert_eq!(data.y.len(), 1000);
        assert_eq!(data.z.len(), 1000);
        assert!((sample_variance(&data.y) - 1.0).abs() < 1e-9);
        assert!(correlation(&data.y, &data.z) >= 0.0);
    }
}

#[test]
fn strictly_positive_scenario_has_minimum_one_tenth() {
    let data = generate_synthetic(&SyntheticSpec::new(0.1, 0.75, Scenario::StrictlyPositive, 9)).unwrap();
    let min = data.y.iter().copied().fold(f64::INFINITY, f64::min);
    assert!((min - 0.1).abs() < 1e-12, "{min}");
    assert!((data.z[0] - 0.001).abs() < 1e-15 && (data.z[999] - 1.0).abs() < 1e-15);
}

#[test]
fn realized_r2_tracks_the_target() {
    for seed in 0..50 {
        let data = generate_synthetic(&SyntheticSpec::new(0.1, 0.5, Scenario::ZeroMean, seed)).unwrap();
        assert!((data.realized_r2 - 0.5).abs() <= 0.08, "seed {seed}: {}", data.realized_r2);
    }
}

#[test]
fn bandwidth_controls_linearity() {
    let wide = generate_synthetic(&SyntheticSpec::new(10.0, 0.9, Scenario::StrictlyPositive, 2)).unwrap();
    assert!(best_line_r2(&wide.z, &wide.signal) > 0.99);
    let narrow = generate_synthetic(&SyntheticSpec::new(0.1, 0.9, Scenario::StrictlyPositive, 2)).unwrap();
    assert!(best_line_r2(&narrow.z, &narrow.signal) < 0.5);
    // Smooth kernels need jitter beyond the nominal 1e-10 to factorize.
    assert!(wide.jitter >= narrow.jitter);
}

#[test]
fn generation_is_reproducible() {
    let spec = SyntheticSpec::new(1.0, 0.75, Scenario::StrictlyPositive, 11);
    assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    let other = SyntheticSpec { seed: 12, ..spec.clone() };
    assert_ne!(generate_synthetic(&spec).unwrap().y, generate_synthetic(&other).unwrap().y);
}

#[test]
fn synthetic_population_truths() {
    let data = generate_synthetic(&SyntheticSpec::new(1.0, 0.75, Scenario::ZeroMean, 5)).unwrap();
    let mean = data.population(CharacteristicKind::LinearMean).unwrap().true_value().unwrap();
    assert!(mean.abs() < 1e-12);
    let hajek = data.population(CharacteristicKind::HajekMean).unwrap().true_value().unwrap();
    assert!((hajek - mean).abs() < 1e-12);
}

#[test]
fn application_truth_matches_brute_force() {
    let pop = generate_application_grid(&ApplicationSpec::default()).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..pop.len() {
        let (r, x, p) = (pop.raw()[(i, 0)], pop.raw()[(i, 1)], pop.prior_weights()[i]);
        num += p * r * x;
        den += p * r;
    }
    let theta = pop.true_value().unwrap();
    assert!((theta - num / den).abs() < 1e-10 * theta.abs());
}

#[test]
fn application_grid_structure() {
    let pop = generate_application_grid(&ApplicationSpec::default()).unwrap();
    for i in 0..pop.len() {
        let (r, x) = (pop.raw()[(i, 0)], pop.raw()[(i, 1)]);
        assert!(r == 0.0 || r == 1.0);
        if r == 0.0 {
            assert_eq!(x, 0.0);
        } else {
            assert!(x > 0.0 && x <= 2.5 * pop.auxiliaries()[(i, DECELERATION)] + 1e-12);
        }
    }
    // Longer glances never turn a crash into a non-crash.
    let levels = 20;
    for i in 0..pop.len() - levels {
        if pop.auxiliaries()[(i + levels, GLANCE)] > pop.auxiliaries()[(i, GLANCE)] {
            assert!(pop.raw()[(i + levels, 0)] >= pop.raw()[(i, 0)]);
        }
    }
}

#[test]
fn all_crashes_with_equal_weights_reduce_to_the_plain_mean() {
    let x = [3.0, 7.5, 1.25, 9.0];
    let raw = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
    let aux = DMatrix::from_column_slice(4, 1, &[0.1, 0.2, 0.3, 0.4]);
    let pop = Population::new(Characteristic::ratio_of_weighted_totals(), raw, aux, Some(vec![0.25; 4])).unwrap();
    assert!((pop.true_value().unwrap() - x.iter().sum::<f64>() / 4.0).abs() < 1e-12);
}
