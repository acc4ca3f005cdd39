//! Parameter sweeps over the loop, amplitude-frequency profile labels and the
//! simulated oscillation map over the two feedback gains.
//!
//! Every sweep point and map cell starts from its own deterministic initial
//! condition and runs independently, so the work is spread over a rayon pool
//! and merged back in input order.

use std::f64::consts::PI;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    existence_conditions, harmonic_balance, integrator_period, relaxation_period, switching_levels,
};
use crate::blocks::{LinearBlockSpec, LoopConfig, RelayState, SaturationSpec};
use crate::error::{Error, Result};
use crate::simulator::{init_on_limit_cycle, simulate, simulate_relaxation_exact, SimSettings};
use crate::waveform::{detect_steady_state, measure_features, Features};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    KMinus,
    KPlus,
    Alpha,
    A,
    B,
    InitAmplitude,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::KMinus => "k_minus",
            SweepParam::KPlus => "k_plus",
            SweepParam::Alpha => "alpha",
            SweepParam::A => "a",
            SweepParam::B => "b",
            SweepParam::InitAmplitude => "init_amplitude",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "k_minus" => SweepParam::KMinus,
            "k_plus" => SweepParam::KPlus,
            "alpha" => SweepParam::Alpha,
            "a" => SweepParam::A,
            "b" => SweepParam::B,
            "init_amplitude" => SweepParam::InitAmplitude,
            other => {
                return Err(Error::InvalidParameter { name: "param", reason: format!("unknown sweep parameter `{other}`") })
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepOptions {
    /// Cycles recorded per point on the exact relaxation path and on the
    /// limit-cycle amplitude path.
    pub cycles: usize,
    /// Horizon for points that need the stepped simulator from a generic start,
    /// in units of `1/alpha`.
    pub horizon: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { cycles: 20, horizon: 200.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub param_value: f64,
    pub amplitude: Option<f64>,
    pub frequency: Option<f64>,
    pub predicted_amplitude: Option<f64>,
    pub predicted_frequency: Option<f64>,
    /// Error code when the point could not be simulated.
    pub error: Option<String>,
}

impl ProfilePoint {
    pub fn oscillating(&self) -> bool {
        self.amplitude.is_some()
    }
}

fn configure(template: &LoopConfig, param: SweepParam, value: f64) -> Result<LoopConfig> {
    let mut cfg = *template;
    match param {
        SweepParam::KMinus => cfg.k_minus = value,
        SweepParam::KPlus => cfg.k_plus = value,
        SweepParam::Alpha => match cfg.linear {
            LinearBlockSpec::LagCascade { order, .. } => cfg.linear = LinearBlockSpec::lag(order, value)?,
            LinearBlockSpec::Integrator => {
                return Err(Error::Unsupported("the integrator has no alpha to sweep".into()));
            }
        },
        SweepParam::A => cfg.sat = SaturationSpec::new(value, cfg.sat.b())?,
        SweepParam::B => cfg.sat = SaturationSpec::new(cfg.sat.a(), value)?,
        SweepParam::InitAmplitude => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

struct PointRun {
    features: Features,
    predicted_amplitude: Option<f64>,
    predicted_frequency: Option<f64>,
}

fn run_point(cfg: &LoopConfig, param: SweepParam, value: f64, opts: &SweepOptions) -> Result<PointRun> {
    let b = cfg.sat.b();
    if param == SweepParam::InitAmplitude {
        let start = init_on_limit_cycle(cfg, value)?;
        let period = 2.0 * PI / start.omega;
        let settings = SimSettings::for_loop(cfg, opts.cycles as f64 * period);
        let trace = simulate(cfg, &start.state, None, &settings)?;
        let features = measure_features(&trace, detect_steady_state(&trace)?)?;
        return Ok(PointRun {
            features,
            predicted_amplitude: Some(value),
            predicted_frequency: Some(start.omega / (2.0 * PI)),
        });
    }

    let relay_block = cfg.linear.is_first_order_lag() || cfg.linear == LinearBlockSpec::Integrator;
    if relay_block && cfg.is_bistable() {
        let (_, x_low) = switching_levels(cfg)?;
        let trace = simulate_relaxation_exact(cfg, x_low, RelayState::High, opts.cycles)?;
        let features = measure_features(&trace, detect_steady_state(&trace)?)?;
        let period = match cfg.linear {
            LinearBlockSpec::Integrator => integrator_period(cfg),
            _ => relaxation_period(cfg),
        };
        return Ok(PointRun {
            features,
            predicted_amplitude: Some(b),
            predicted_frequency: period.ok().map(|t| 1.0 / t),
        });
    }

    let mut x0 = vec![0.0; cfg.linear.state_len()];
    if !cfg.is_bistable() {
        x0[0] = 0.1 * b;
    }
    let settings = SimSettings::for_loop(cfg, opts.horizon / cfg.linear.rate());
    let trace = simulate(cfg, &x0, Some(RelayState::High), &settings)?;
    let features = match detect_steady_state(&trace) {
        Ok(window) => measure_features(&trace, window)?,
        Err(Error::TraceTooShort { .. }) => Features { oscillating: false, ..measure_features(&trace, 0)? },
        Err(e) => return Err(e),
    };
    let predicted_frequency =
        harmonic_balance(cfg).ok().filter(|hb| hb.valid).map(|hb| hb.omega / (2.0 * PI));
    Ok(PointRun { features, predicted_amplitude: None, predicted_frequency })
}

/// Runs one simulation per value of `param` and reports measured and
/// predicted amplitude/frequency. Per-point failures are recorded on the
/// point; only an invalid sweep request is an error.
pub fn sweep(template: &LoopConfig, param: SweepParam, values: &[f64], opts: &SweepOptions) -> Result<Vec<ProfilePoint>> {
    template.validate()?;
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter { name: "values", reason: "sweep values must be finite and non-empty".into() });
    }
    if opts.cycles == 0 || !(opts.horizon > 0.0) {
        return Err(Error::InvalidParameter { name: "options", reason: "cycles and horizon must be positive".into() });
    }
    if param == SweepParam::InitAmplitude {
        init_on_limit_cycle(template, 0.0)?;
    }
    let points = values
        .par_iter()
        .map(|&value| {
            let outcome = configure(template, param, value).and_then(|cfg| run_point(&cfg, param, value, opts));
            match outcome {
                Ok(run) => {
                    let f = run.features;
                    ProfilePoint {
                        param_value: value,
                        amplitude: f.oscillating.then_some(f.amplitude),
                        frequency: f.oscillating.then_some(f.frequency),
                        predicted_amplitude: run.predicted_amplitude,
                        predicted_frequency: run.predicted_frequency,
                        error: None,
                    }
                }
                Err(e) => ProfilePoint {
                    param_value: value,
                    amplitude: None,
                    frequency: None,
                    predicted_amplitude: None,
                    predicted_frequency: None,
                    error: Some(e.code().to_string()),
                },
            }
        })
        .collect();
    Ok(points)
}

/// Writes `param,amplitude,frequency,predicted_amplitude,predicted_frequency`;
/// missing values are empty fields.
pub fn write_profile_csv<W: Write>(param: SweepParam, points: &[ProfilePoint], out: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record([param.name(), "amplitude", "frequency", "predicted_amplitude", "predicted_frequency"])?;
    for p in points {
        w.write_record([
            p.param_value.to_string(),
            opt(p.amplitude),
            opt(p.frequency),
            opt(p.predicted_amplitude),
            opt(p.predicted_frequency),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileClass {
    Horizontal,
    Vertical,
    Other,
    None,
}

impl std::fmt::Display for ProfileClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProfileClass::Horizontal => "horizontal",
            ProfileClass::Vertical => "vertical",
            ProfileClass::Other => "other",
            ProfileClass::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileLabel {
    pub label: ProfileClass,
    pub amplitude_spread: f64,
    pub frequency_spread: f64,
}

/// What counts as "fixed" and "variable" along a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileThresholds {
    pub flat: f64,
    pub varying: f64,
    pub min_points: usize,
}

impl Default for ProfileThresholds {
    fn default() -> Self {
        Self { flat: 0.01, varying: 0.10, min_points: 5 }
    }
}

fn spread(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (lo, hi, sum, n) = values
        .fold((f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize), |(lo, hi, s, n), v| (lo.min(v), hi.max(v), s + v, n + 1));
    (hi - lo) / (sum / n as f64)
}

pub fn label_profile(points: &[ProfilePoint], thresholds: &ProfileThresholds) -> ProfileLabel {
    let live: Vec<(f64, f64)> = points.iter().filter_map(|p| Some((p.amplitude?, p.frequency?))).collect();
    if live.len() < thresholds.min_points {
        return ProfileLabel { label: ProfileClass::None, amplitude_spread: 0.0, frequency_spread: 0.0 };
    }
    let amplitude_spread = spread(live.iter().map(|p| p.0));
    let frequency_spread = spread(live.iter().map(|p| p.1));
    let label = if amplitude_spread < thresholds.flat && frequency_spread > thresholds.varying {
        ProfileClass::Horizontal
    } else if frequency_spread < thresholds.flat && amplitude_spread > thresholds.varying {
        ProfileClass::Vertical
    } else {
        ProfileClass::Other
    };
    ProfileLabel { label, amplitude_spread, frequency_spread }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapOptions {
    /// Simulated horizon per cell in units of `1/alpha`.
    pub horizon: f64,
    /// Cells closer than this (in `K-`) to the boundary are not compared.
    pub margin: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self { horizon: 100.0, margin: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapCell {
    pub k_plus: f64,
    pub k_minus: f64,
    /// Classification from simulation.
    pub oscillating: bool,
    /// Closed-form existence verdict.
    pub predicted: bool,
    pub near_boundary: bool,
    /// The run failed; the cell is reported quiescent.
    pub errored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BifurcationMap {
    /// Row-major: all `K-` values for the first `K+`, then the next `K+`.
    pub cells: Vec<MapCell>,
    /// `(K+, K-_min)` for every grid `K+` above `a/b`.
    pub boundary: Vec<(f64, f64)>,
    pub disagreements: usize,
    pub compared: usize,
}

/// Distance in `K-` to the existence boundary; for `K+ <= a/b` the distance to
/// the boundary's end point `(a/b, 0)`.
fn boundary_distance(sat: &SaturationSpec, k_plus: f64, k_minus: f64) -> f64 {
    let threshold = sat.a() / sat.b();
    if k_plus > threshold {
        (k_minus - (k_plus - threshold)).abs()
    } else {
        (k_plus - threshold).hypot(k_minus)
    }
}

fn simulate_cell(cfg: &LoopConfig, horizon: f64) -> Result<bool> {
    let settings = SimSettings::for_loop(cfg, horizon / cfg.linear.rate());
    let trace = simulate(cfg, &[0.0], Some(RelayState::High), &settings)?;
    match detect_steady_state(&trace) {
        Ok(window) => Ok(measure_features(&trace, window)?.oscillating),
        Err(Error::TraceTooShort { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Classifies every `(K+, K-)` cell of the first-order loop by simulation and
/// compares against the closed-form existence verdict away from the boundary.
pub fn bifurcation_map(
    sat: &SaturationSpec,
    alpha: f64,
    k_plus_grid: &[f64],
    k_minus_grid: &[f64],
    opts: &MapOptions,
) -> Result<BifurcationMap> {
    let linear = LinearBlockSpec::lag(1, alpha)?;
    let pairs: Vec<(f64, f64)> =
        k_plus_grid.iter().flat_map(|&kp| k_minus_grid.iter().map(move |&km| (kp, km))).collect();
    let cells: Vec<MapCell> = pairs
        .par_iter()
        .map(|&(k_plus, k_minus)| {
            let near_boundary = boundary_distance(sat, k_plus, k_minus) <= opts.margin;
            let outcome = LoopConfig::new(*sat, k_plus, k_minus, linear).and_then(|cfg| {
                let predicted = existence_conditions(&cfg)?.oscillates;
                Ok((predicted, simulate_cell(&cfg, opts.horizon)))
            });
            let (predicted, sim) = match outcome {
                Ok(v) => v,
                Err(e) => (false, Err(e)),
            };
            let (oscillating, errored) = match sim {
                Ok(osc) => (osc, false),
                Err(_) => (false, true),
            };
            MapCell { k_plus, k_minus, oscillating, predicted, near_boundary, errored }
        })
        .collect();
    let compared: Vec<&MapCell> = cells.iter().filter(|c| !c.near_boundary).collect();
    let disagreements = compared.iter().filter(|c| c.oscillating != c.predicted).count();
    let threshold = sat.a() / sat.b();
    let boundary = k_plus_grid.iter().filter(|&&kp| kp > threshold).map(|&kp| (kp, kp - threshold)).collect();
    Ok(BifurcationMap { compared: compared.len(), cells, boundary, disagreements })
}

/// Writes `k_plus,k_minus,class,boundary_flag` rows.
pub fn write_map_csv<W: Write>(map: &BifurcationMap, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k_plus", "k_minus", "class", "boundary_flag"])?;
    for c in &map.cells {
        w.write_record([
            c.k_plus.to_string(),
            c.k_minus.to_string(),
            (if c.oscillating { "oscillating" } else { "quiescent" }).to_string(),
            u8::from(c.near_boundary).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

/// `count` evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count).map(|i| start + (stop - start) * i as f64 / (count - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relay_template() -> LoopConfig {
        LoopConfig::new(SaturationSpec::new(1.0, 1.0).unwrap(), 2.0, 2.0, LinearBlockSpec::lag(1, 1.0).unwrap())
            .unwrap()
    }

    fn point(amp: f64, freq: f64) -> ProfilePoint {
        ProfilePoint {
            param_value: 0.0,
            amplitude: Some(amp),
            frequency: Some(freq),
            predicted_amplitude: None,
            predicted_frequency: None,
            error: None,
        }
    }

    #[test]
    fn relaxation_sweep_is_horizontal_and_exact() {
        let values = linspace(1.1, 10.0, 20);
        let pts = sweep(&relay_template(), SweepParam::KMinus, &values, &SweepOptions::default()).unwrap();
        let mut prev = 0.0;
        for p in &pts {
            let f = p.frequency.unwrap_or_else(|| panic!("{p:?}"));
            assert!(f > prev);
            prev = f;
            assert!((p.amplitude.unwrap() - 1.0).abs() < 1e-12);
            let fp = p.predicted_frequency.unwrap();
            assert!((f - fp).abs() / fp < 1e-9, "{f} vs {fp}");
        }
        assert_eq!(label_profile(&pts, &ProfileThresholds::default()).label, ProfileClass::Horizontal);
    }

    #[test]
    fn sweep_outside_region_is_quiescent() {
        let values = linspace(0.5, 0.9, 5);
        let pts = sweep(&relay_template(), SweepParam::KMinus, &values, &SweepOptions::default()).unwrap();
        assert!(pts.iter().all(|p| !p.oscillating()));
        assert!(pts.iter().all(|p| p.error.as_deref() == Some("NoOscillation")));
        assert_eq!(label_profile(&pts, &ProfileThresholds::default()).label, ProfileClass::None);
    }

    #[test]
    fn amplitude_sweep_needs_marginal_loop() {
        let err = sweep(&relay_template(), SweepParam::InitAmplitude, &[0.5], &SweepOptions::default());
        assert!(err.is_err());
        assert!(sweep(&relay_template(), SweepParam::KMinus, &[], &SweepOptions::default()).is_err());
        assert!(sweep(&relay_template(), SweepParam::KMinus, &[f64::NAN], &SweepOptions::default()).is_err());
    }

    #[test]
    fn sweep_other_parameters() {
        let pts = sweep(&relay_template(), SweepParam::Alpha, &[0.5, 1.0, 2.0], &SweepOptions::default()).unwrap();
        assert!(pts[0].frequency.unwrap() < pts[1].frequency.unwrap());
        let pts = sweep(&relay_template(), SweepParam::B, &[1.0, 2.0], &SweepOptions::default()).unwrap();
        assert!((pts[1].amplitude.unwrap() - 2.0).abs() < 1e-12);
        // a = -1 is rejected per point, not for the whole sweep
        let pts = sweep(&relay_template(), SweepParam::A, &[-1.0, 0.5], &SweepOptions::default()).unwrap();
        assert_eq!(pts[0].error.as_deref(), Some("InvalidParameter"));
        assert!(pts[1].oscillating());
    }

    #[test]
    fn sweep_is_order_independent() {
        let values = vec![3.0, 1.5, 7.0, 2.2];
        let mut reversed = values.clone();
        reversed.reverse();
        let a = sweep(&relay_template(), SweepParam::KMinus, &values, &SweepOptions::default()).unwrap();
        let mut b = sweep(&relay_template(), SweepParam::KMinus, &reversed, &SweepOptions::default()).unwrap();
        b.reverse();
        assert_eq!(a, b);
    }

    #[test]
    fn label_rules() {
        let t = ProfileThresholds::default();
        let horiz: Vec<_> = (1..=6).map(|i| point(1.0, i as f64)).collect();
        assert_eq!(label_profile(&horiz, &t).label, ProfileClass::Horizontal);
        let vert: Vec<_> = (1..=6).map(|i| point(0.1 * i as f64, 0.27)).collect();
        assert_eq!(label_profile(&vert, &t).label, ProfileClass::Vertical);
        let both: Vec<_> = (1..=6).map(|i| point(i as f64, i as f64)).collect();
        assert_eq!(label_profile(&both, &t).label, ProfileClass::Other);
        assert_eq!(label_profile(&horiz[..4], &t).label, ProfileClass::None);
    }

    #[test]
    fn map_cells_and_csv() {
        let sat = SaturationSpec::new(1.0, 1.0).unwrap();
        let map = bifurcation_map(&sat, 1.0, &[0.8, 2.0], &[2.0, 0.5], &MapOptions::default()).unwrap();
        let cell = |kp: f64, km: f64| *map.cells.iter().find(|c| c.k_plus == kp && c.k_minus == km).unwrap();
        assert!(!cell(0.8, 2.0).oscillating);
        assert!(cell(2.0, 2.0).oscillating);
        assert!(!cell(2.0, 0.5).oscillating);
        assert_eq!(map.disagreements, 0);
        assert_eq!(map.boundary, vec![(2.0, 1.0)]);
        let mut buf = Vec::new();
        write_map_csv(&map, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "k_plus,k_minus,class,boundary_flag");
        assert!(text.contains("2,2,oscillating,0"));
    }

    #[test]
    fn boundary_distance_band() {
        let sat = SaturationSpec::new(1.0, 1.0).unwrap();
        assert!((boundary_distance(&sat, 2.0, 1.04) - 0.04).abs() < 1e-12);
        assert!((boundary_distance(&sat, 0.97, 0.04) - 0.05).abs() < 1e-12);
    }
}
