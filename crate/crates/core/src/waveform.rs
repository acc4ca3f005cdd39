//! Steady-state feature extraction: amplitude, period, harmonic distortion
//! and a coarse shape label.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::simulator::{Signal, Trace};

/// Points per resampled cycle for the harmonic analysis.
pub const CYCLE_POINTS: usize = 256;
/// Highest harmonic included in the distortion figure.
pub const MAX_HARMONIC: usize = 25;
/// Cycle-to-cycle relative amplitude change accepted as steady.
pub const STEADY_TOL: f64 = 0.01;
/// Minimum number of full cycles in a steady window.
pub const MIN_CYCLES: usize = 4;
/// Oscillation floor relative to the loop's saturation level.
pub const AMPLITUDE_FLOOR: f64 = 1e-6;
/// Crossing hysteresis as a fraction of the half range.
const CROSSING_BAND: f64 = 0.05;

const SINUSOIDAL_BELOW: f64 = 0.05;
const TRIANGULAR_BELOW: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Triangular,
    Sinusoidal,
    None,
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Shape::Square => "square",
            Shape::Triangular => "triangular",
            Shape::Sinusoidal => "sinusoidal",
            Shape::None => "none",
        })
    }
}

/// Measured oscillation features. Period, frequency and THD are zero when
/// the signal does not oscillate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Features {
    pub oscillating: bool,
    pub amplitude: f64,
    pub period: f64,
    pub frequency: f64,
    pub thd: f64,
    pub shape: Shape,
}

#[derive(Debug, Clone, Copy)]
struct Crossing {
    time: f64,
    /// Sample index just after the crossing.
    index: usize,
}

fn range(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Upward crossings of `mid`, re-armed only after the signal drops below `mid - band`.
fn upward_crossings(times: &[f64], values: &[f64], mid: f64, band: f64) -> Vec<Crossing> {
    let mut out = Vec::new();
    let mut armed = false;
    for k in 0..values.len() {
        let v = values[k];
        if v < mid - band {
            armed = true;
        }
        if armed && k > 0 && values[k - 1] < mid && v >= mid {
            let frac = (mid - values[k - 1]) / (v - values[k - 1]);
            let time = times[k - 1] + frac * (times[k] - times[k - 1]);
            out.push(Crossing { time, index: k });
            armed = false;
        }
    }
    out
}

fn crossings_for(times: &[f64], values: &[f64]) -> Vec<Crossing> {
    let (lo, hi) = range(values);
    let half = 0.5 * (hi - lo);
    if !(half > 0.0) {
        return Vec::new();
    }
    upward_crossings(times, values, 0.5 * (hi + lo), CROSSING_BAND * half)
}

/// Steady-window start for the output `y`.
pub fn detect_steady_state(trace: &Trace) -> Result<usize> {
    detect_steady_state_of(trace, Signal::Y)
}

/// Steady-window start for any loop signal.
///
/// Cycles are delimited by upward mid-level crossings. The window starts at
/// the first cycle after which every cycle-to-cycle amplitude change stays
/// below 1%, and never before the last transient switching event. When fewer
/// than two cycles can be delimited, the first half of the trace is dropped.
pub fn detect_steady_state_of(trace: &Trace, which: Signal) -> Result<usize> {
    let values = trace.signal(which);
    if values.is_empty() {
        return Err(Error::TraceTooShort { cycles: 0 });
    }
    let times = &trace.times;
    let after_transient = trace
        .events
        .iter()
        .filter(|e| e.transient)
        .map(|e| trace.index_at(e.time))
        .max()
        .unwrap_or(0);

    let crossings = crossings_for(times, values);
    if crossings.len() < 3 {
        let start = (values.len() / 2).max(after_transient);
        let remaining = crossings_for(&times[start..], &values[start..]).len().saturating_sub(1);
        if remaining < MIN_CYCLES {
            return Err(Error::TraceTooShort { cycles: remaining });
        }
        return Ok(start);
    }

    let amplitudes: Vec<f64> = crossings
        .windows(2)
        .map(|w| {
            let (lo, hi) = range(&values[w[0].index..w[1].index]);
            0.5 * (hi - lo)
        })
        .collect();
    // first cycle index from which all later changes are small
    let mut first_steady = amplitudes.len();
    for j in (0..amplitudes.len()).rev() {
        if j + 1 < amplitudes.len() {
            let change = (amplitudes[j + 1] - amplitudes[j]).abs();
            if change > STEADY_TOL * amplitudes[j] {
                break;
            }
        }
        first_steady = j;
    }
    // crossings[first_steady] opens the first steady cycle
    let mut first = first_steady;
    while first < crossings.len() && crossings[first].index <= after_transient {
        first += 1;
    }
    let cycles = crossings.len().saturating_sub(first + 1);
    if cycles < MIN_CYCLES || first_steady == amplitudes.len() {
        return Err(Error::TraceTooShort { cycles: if first_steady == amplitudes.len() { 0 } else { cycles } });
    }
    if first == 0 {
        // The partial cycle before the first crossing counts when it stays
        // inside the first full cycle's envelope.
        let (lo_c, hi_c) = range(&values[crossings[0].index..crossings[1].index]);
        let (lo_p, hi_p) = range(&values[after_transient..crossings[0].index]);
        let slack = STEADY_TOL * 0.5 * (hi_c - lo_c);
        if lo_p >= lo_c - slack && hi_p <= hi_c + slack {
            return Ok(after_transient);
        }
    }
    Ok((crossings[first].index - 1).max(after_transient))
}

/// Features of `y` from `window` to the end of the trace.
pub fn measure_features(trace: &Trace, window: usize) -> Result<Features> {
    measure_signal(trace, Signal::Y, window)
}

/// Features of any loop signal from `window` to the end of the trace.
pub fn measure_signal(trace: &Trace, which: Signal, window: usize) -> Result<Features> {
    let values = trace.signal(which);
    if window + 2 > values.len() {
        return Err(Error::TraceTooShort { cycles: 0 });
    }
    let times = &trace.times[window..];
    let values = &values[window..];
    let amplitude = 0.5 * (refined_extremum(times, values, 1.0) + refined_extremum(times, values, -1.0));
    let crossings = crossings_for(times, values);
    let floor = AMPLITUDE_FLOOR * trace.output_level;
    if !(amplitude > floor) || crossings.len() < 3 {
        return Ok(Features { oscillating: false, amplitude, period: 0.0, frequency: 0.0, thd: 0.0, shape: Shape::None });
    }
    let first = crossings[0].time;
    let period = (crossings[crossings.len() - 1].time - first) / (crossings.len() - 1) as f64;
    let thd = cycle_thd(times, values, first, period);
    let mut features = Features { oscillating: true, amplitude, period, frequency: 1.0 / period, thd, shape: Shape::None };
    features.shape = classify(&features);
    Ok(features)
}

/// Largest value of `sign * v`, refined by a parabola through the extreme
/// sample and its neighbours when that sample is a strict local extremum.
fn refined_extremum(times: &[f64], values: &[f64], sign: f64) -> f64 {
    let (k, best) = values
        .iter()
        .map(|v| sign * v)
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if k == 0 || k + 1 >= values.len() {
        return best;
    }
    let (t0, t1, t2) = (times[k - 1], times[k], times[k + 1]);
    let (y0, y1, y2) = (sign * values[k - 1], best, sign * values[k + 1]);
    if !(y1 > y0 && y1 > y2) {
        return best;
    }
    let d1 = (y1 - y0) / (t1 - t0);
    let d2 = (y2 - y1) / (t2 - t1);
    let curv = (d2 - d1) / (t2 - t0);
    let t_peak = 0.5 * (t0 + t1) - d1 / (2.0 * curv);
    if !(curv < 0.0 && (t0..=t2).contains(&t_peak)) {
        return best;
    }
    (y0 + d1 * (t_peak - t0) + curv * (t_peak - t0) * (t_peak - t1)).max(best)
}

fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    let k = times.partition_point(|&s| s <= t);
    if k == 0 {
        return values[0];
    }
    if k >= times.len() {
        return values[values.len() - 1];
    }
    let (t0, t1) = (times[k - 1], times[k]);
    values[k - 1] + (values[k] - values[k - 1]) * (t - t0) / (t1 - t0)
}

/// `sqrt(sum_{k=2..25} |c_k|^2) / |c_1|` over one cycle resampled to 256 points.
fn cycle_thd(times: &[f64], values: &[f64], start: f64, period: f64) -> f64 {
    let samples: Vec<f64> = (0..CYCLE_POINTS)
        .map(|j| interpolate(times, values, start + period * j as f64 / CYCLE_POINTS as f64))
        .collect();
    let coeff = |k: usize| -> Complex64 {
        samples
            .iter()
            .enumerate()
            .map(|(j, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (j * k) as f64 / CYCLE_POINTS as f64))
            .sum()
    };
    let fundamental = coeff(1).norm();
    let harmonics: f64 = (2..=MAX_HARMONIC).map(|k| coeff(k).norm_sqr()).sum();
    harmonics.sqrt() / fundamental
}

/// Shape label from the distortion figure.
pub fn classify(features: &Features) -> Shape {
    if !features.oscillating {
        Shape::None
    } else if features.thd < SINUSOIDAL_BELOW {
        Shape::Sinusoidal
    } else if features.thd < TRIANGULAR_BELOW {
        Shape::Triangular
    } else {
        Shape::Square
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use oscloop_oracles::{ideal_triangle_thd, truncated_square_thd};
    use proptest::prelude::*;

    fn synthetic(f: impl Fn(f64) -> f64, t_end: f64, dt: f64) -> Trace {
        let n = (t_end / dt).round() as usize;
        let times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
        let y = times.iter().map(|&t| f(t)).collect();
        Trace { times, y, output_level: 1.0, ..Default::default() }
    }

    fn square(period: f64) -> impl Fn(f64) -> f64 {
        move |t: f64| if (t / period).fract() < 0.5 { 1.0 } else { -1.0 }
    }

    fn triangle(period: f64) -> impl Fn(f64) -> f64 {
        move |t: f64| {
            let p = (t / period).fract();
            if p < 0.5 { 4.0 * p - 1.0 } else { 3.0 - 4.0 * p }
        }
    }

    #[test]
    fn square_wave_features() {
        let period = 2.0 * 3f64.ln();
        let tr = synthetic(square(period), 20.0 * period, 1e-3);
        let start = detect_steady_state(&tr).unwrap();
        assert!(start < 10);
        let f = measure_features(&tr, start).unwrap();
        assert!(f.oscillating);
        assert_eq!(f.amplitude, 1.0);
        assert!((f.period - period).abs() / period < 1e-3);
        assert!((f.frequency * f.period - 1.0).abs() < 1e-12);
        // 25-harmonic truncation of the ideal 0.483
        assert!((f.thd - truncated_square_thd(MAX_HARMONIC)).abs() < 0.01, "thd {}", f.thd);
        assert!((f.thd - 0.483).abs() < 0.03);
        assert_eq!(f.shape, Shape::Square);
    }

    #[test]
    fn sine_wave_features() {
        let w = 3f64.sqrt();
        let tr = synthetic(|t| 0.5 * (w * t).sin(), 30.0, 0.01);
        let f = measure_features(&tr, detect_steady_state(&tr).unwrap()).unwrap();
        assert!((f.amplitude - 0.5).abs() < 1e-3);
        assert!((f.period - 2.0 * PI / w).abs() / f.period < 1e-3);
        assert!(f.thd < 0.01);
        assert_eq!(f.shape, Shape::Sinusoidal);
    }

    #[test]
    fn triangle_wave_features() {
        let tr = synthetic(triangle(2.0), 20.0, 1e-3);
        let f = measure_features(&tr, 0).unwrap();
        assert!((f.thd - ideal_triangle_thd()).abs() < 2e-3, "thd {}", f.thd);
        assert!((f.thd - 0.121).abs() < 2e-3);
        assert_eq!(f.shape, Shape::Triangular);
    }

    #[test]
    fn decaying_trace_is_too_short() {
        let tr = synthetic(|t| (-0.3 * t).exp() * (2.0 * t).sin(), 60.0, 0.01);
        assert!(matches!(detect_steady_state(&tr), Err(Error::TraceTooShort { .. })));
        let flat = synthetic(|_| 0.3, 10.0, 0.01);
        assert!(matches!(detect_steady_state(&flat), Err(Error::TraceTooShort { .. })));
        let f = measure_features(&flat, 0).unwrap();
        assert!(!f.oscillating);
        assert_eq!(f.shape, Shape::None);
    }

    #[test]
    fn transient_prefix_is_discarded() {
        let w = 2.0;
        let tr = synthetic(
            |t| if t < 10.0 { 0.1 * (0.25 * t).exp() * (w * t).sin() } else { 0.8 * (w * t).sin() },
            60.0,
            0.005,
        );
        let start = detect_steady_state(&tr).unwrap();
        assert!(tr.times[start] >= 9.0);
        let f = measure_features(&tr, start).unwrap();
        assert!((f.amplitude - 0.8).abs() < 1e-3);
        let clean = synthetic(|t| 0.8 * (w * t).sin(), 50.0, 0.005);
        let g = measure_features(&clean, 0).unwrap();
        assert!((f.amplitude - g.amplitude).abs() < 1e-4);
    }

    #[test]
    fn classify_thresholds() {
        let mut f = Features { oscillating: true, amplitude: 1.0, period: 1.0, frequency: 1.0, thd: 0.483, shape: Shape::None };
        assert_eq!(classify(&f), Shape::Square);
        f.thd = 0.121;
        assert_eq!(classify(&f), Shape::Triangular);
        f.thd = 0.002;
        assert_eq!(classify(&f), Shape::Sinusoidal);
        f.oscillating = false;
        assert_eq!(classify(&f), Shape::None);
    }

    proptest! {
        #[test]
        fn sine_amplitude_and_period(amp in 0.01f64..10.0, w in 0.5f64..5.0, spc in 16usize..64) {
            let period = 2.0 * PI / w;
            let dt = period / spc as f64;
            let tr = synthetic(|t| amp * (w * t + 0.3).sin(), 12.0 * period, dt);
            let f = measure_features(&tr, 0).unwrap();
            prop_assert!((f.amplitude - amp).abs() < 1e-3 * amp, "{} vs {}", f.amplitude, amp);
            prop_assert!((f.period - period).abs() / period < 1e-3);
        }

        #[test]
        fn thd_scale_invariant(scale in 0.01f64..100.0) {
            let base = synthetic(triangle(1.7), 12.0, 2e-3);
            let mut scaled = base.clone();
            scaled.y.iter_mut().for_each(|v| *v *= scale);
            scaled.output_level = scale;
            let f0 = measure_features(&base, 0).unwrap();
            let f1 = measure_features(&scaled, 0).unwrap();
            prop_assert!((f0.thd - f1.thd).abs() < 1e-9);
        }
    }
}
