use oscloop_core::analysis::{existence_conditions, integrator_period, relaxation_period, switching_levels};
use oscloop_core::blocks::{LinearBlockSpec, LoopConfig, RelayState, SaturationSpec};
use oscloop_core::profiler::{sweep, write_profile_csv, SweepOptions, SweepParam};
use oscloop_core::simulator::{simulate, simulate_relaxation_exact, SimSettings};
use oscloop_core::waveform::{detect_steady_state, measure_features};
use oscloop_core::Error;
use oscloop_oracles::relay_period_fine_step;
use proptest::prelude::*;

fn relay(a: f64, b: f64, k_plus: f64, k_minus: f64, linear: LinearBlockSpec) -> LoopConfig {
    LoopConfig::new(SaturationSpec::new(a, b).unwrap(), k_plus, k_minus, linear).unwrap()
}

#[test]
fn off_cycle_start_is_discarded_before_measuring() {
    let cfg = relay(1.0, 1.0, 2.0, 2.0, LinearBlockSpec::lag(1, 1.0).unwrap());
    let trace = simulate_relaxation_exact(&cfg, 0.0, RelayState::High, 8).unwrap();
    let transient: Vec<_> = trace.events.iter().filter(|e| e.transient).collect();
    assert_eq!(transient.len(), 1);
    let window = detect_steady_state(&trace).unwrap();
    assert!(trace.times[window] >= transient[0].time);
    let f = measure_features(&trace, window).unwrap();
    assert!((f.period - 2.0 * 3f64.ln()).abs() < 1e-9);
}

#[test]
fn trace_csv_keeps_full_precision() {
    let cfg = relay(1.0, 1.0, 2.0, 3.0, LinearBlockSpec::lag(1, 0.7).unwrap());
    let trace = simulate(&cfg, &[0.1], Some(RelayState::Low), &SimSettings::for_loop(&cfg, 5.0)).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let mut reader = csv::Reader::from_reader(buf.as_slice());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), trace.len());
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0].parse::<f64>().unwrap().to_bits(), trace.times[i].to_bits());
        assert_eq!(row[4].parse::<f64>().unwrap().to_bits(), trace.x[i].to_bits());
        assert_eq!(row[5].parse::<i8>().unwrap(), trace.event_flag[i]);
    }
}

#[test]
fn exact_period_matches_fine_step_oracle() {
    for &(a, b, kp, km, alpha) in &[(1.0, 1.0, 2.0, 2.0, 1.0), (0.5, 2.0, 1.0, 3.0, 2.0), (2.0, 1.0, 3.5, 1.8, 0.5)] {
        let cfg = relay(a, b, kp, km, LinearBlockSpec::lag(1, alpha).unwrap());
        let (_, x_low) = switching_levels(&cfg).unwrap();
        let trace = simulate_relaxation_exact(&cfg, x_low, RelayState::High, 6).unwrap();
        let f = measure_features(&trace, detect_steady_state(&trace).unwrap()).unwrap();
        let oracle = relay_period_fine_step(a, b, kp, km, alpha, 1e-5);
        assert!((f.period - oracle).abs() / oracle < 1e-4, "{f:?} vs {oracle}");
    }
}

#[test]
fn sweep_csv_leaves_missing_values_empty() {
    let cfg = relay(1.0, 1.0, 2.0, 2.0, LinearBlockSpec::lag(1, 1.0).unwrap());
    let pts = sweep(&cfg, SweepParam::KMinus, &[0.5, 2.0], &SweepOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_profile_csv(SweepParam::KMinus, &pts, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k_minus,amplitude,frequency,predicted_amplitude,predicted_frequency");
    assert_eq!(lines[1], "0.5,,,,");
    assert!(lines[2].starts_with("2,1,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_relaxation_half_period_is_closed_form(
        a in 0.2f64..3.0, b in 0.2f64..3.0, excess in 0.1f64..3.0, km_factor in 1.05f64..8.0, alpha in 0.2f64..5.0,
    ) {
        let kp = a / b + excess;
        let cfg = relay(a, b, kp, km_factor * excess, LinearBlockSpec::lag(1, alpha).unwrap());
        prop_assert!(existence_conditions(&cfg).unwrap().oscillates);
        let (_, x_low) = switching_levels(&cfg).unwrap();
        let trace = simulate_relaxation_exact(&cfg, x_low, RelayState::High, 3).unwrap();
        let half = relaxation_period(&cfg).unwrap() / 2.0;
        for w in trace.events.windows(2) {
            prop_assert!(((w[1].time - w[0].time) - half).abs() <= 1e-9 * half);
        }
    }

    #[test]
    fn exact_simulator_agrees_with_existence_predicate(
        excess in 0.05f64..3.0, km in 0.01f64..6.0, alpha in 0.2f64..5.0,
    ) {
        let cfg = relay(1.0, 1.0, 1.0 + excess, km, LinearBlockSpec::lag(1, alpha).unwrap());
        let predicted = existence_conditions(&cfg).unwrap().oscillates;
        match simulate_relaxation_exact(&cfg, 0.0, RelayState::High, 2) {
            Ok(_) => prop_assert!(predicted),
            Err(Error::NoOscillation) => prop_assert!(!predicted),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn stepped_integrator_period_is_closed_form(
        a in 0.5f64..2.0, b in 0.5f64..2.0, excess in 0.2f64..2.0, km in 0.5f64..4.0,
    ) {
        let cfg = relay(a, b, a / b + excess, km, LinearBlockSpec::Integrator);
        let expected = integrator_period(&cfg).unwrap();
        let trace = simulate(&cfg, &[0.0], Some(RelayState::High), &SimSettings::for_loop(&cfg, 12.0 * expected)).unwrap();
        let f = measure_features(&trace, detect_steady_state(&trace).unwrap()).unwrap();
        prop_assert!((f.period - expected).abs() < 5e-3 * expected, "{} vs {}", f.period, expected);
        prop_assert!((f.amplitude - b).abs() < 1e-12);
    }
}
