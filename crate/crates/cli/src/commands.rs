use std::fs::File;
use std::io::{self, BufWriter, Write};

use oscloop_core::analysis::{
    bifurcation_boundary, critical_gain, describing_function_saturation, existence_conditions, harmonic_balance,
    integrator_period, relaxation_period, required_feedback_gain, rl_crossings, switching_levels,
};
use oscloop_core::blocks::{LinearBlockSpec, LoopConfig};
use oscloop_core::profiler::{bifurcation_map, label_profile, sweep, write_map_csv, write_profile_csv};
use oscloop_core::simulator::{init_on_limit_cycle, simulate, simulate_relaxation_exact, Signal, Trace};
use oscloop_core::waveform::{detect_steady_state, measure_signal};
use oscloop_core::Error;
use serde_json::{json, Value};

use crate::config::{CommandName, ExperimentConfig, Format, Method, Range};
use crate::CliError;

pub fn run(config: &ExperimentConfig) -> Result<(), CliError> {
    match config.command.expect("resolved config names its command") {
        CommandName::Simulate => run_simulate(config),
        CommandName::Period => report(config, period_report(config)?),
        CommandName::Existence => report(config, existence_report(config)?),
        CommandName::Hbalance => report(config, hbalance_report(config)?),
        CommandName::Boundary => run_boundary(config),
        CommandName::Rlocus => run_rlocus(config),
        CommandName::Sweep => run_sweep(config),
        CommandName::Bifurcation => run_bifurcation(config),
    }
}

fn create(path: &str) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(format!("cannot create {path}: {e}")))
}

fn write_json(path: &str, value: &Value) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &str) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn print_json(value: &Value) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn lag_order(cfg: &LoopConfig) -> Result<(u32, f64), CliError> {
    match cfg.linear {
        LinearBlockSpec::LagCascade { order, alpha } => Ok((order, alpha)),
        LinearBlockSpec::Integrator => Err(Error::Unsupported("this analysis needs a lag cascade".into()).into()),
    }
}

fn json_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

/// Prints a flat report and writes it to `--out` as JSON or a one-row CSV.
fn report(config: &ExperimentConfig, value: Value) -> Result<(), CliError> {
    print_json(&value)?;
    let Some(path) = &config.output.path else { return Ok(()) };
    match config.format() {
        Format::Json => write_json(path, &value),
        Format::Csv => {
            let Value::Object(map) = &value else { unreachable!("reports are objects") };
            let mut w = csv_writer(path)?;
            w.write_record(map.keys()).map_err(csv_err)?;
            w.write_record(map.values().map(|v| match v {
                Value::String(s) => s.clone(),
                Value::Number(n) if !(n.is_i64() || n.is_u64()) => n.as_f64().unwrap_or(f64::NAN).to_string(),
                other => other.to_string(),
            }))
            .map_err(csv_err)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn period_report(config: &ExperimentConfig) -> Result<Value, CliError> {
    let cfg = config.loop_config()?;
    let period = match cfg.linear {
        LinearBlockSpec::Integrator => integrator_period(&cfg)?,
        _ => relaxation_period(&cfg)?,
    };
    let (x_high, x_low) = switching_levels(&cfg)?;
    Ok(json!({
        "period": period,
        "half_period": period / 2.0,
        "frequency": 1.0 / period,
        "x_high": x_high,
        "x_low": x_low,
    }))
}

fn existence_report(config: &ExperimentConfig) -> Result<Value, CliError> {
    Ok(json_value(&existence_conditions(&config.loop_config()?)?))
}

fn hbalance_report(config: &ExperimentConfig) -> Result<Value, CliError> {
    let cfg = config.loop_config()?;
    let (n, alpha) = lag_order(&cfg)?;
    let hb = harmonic_balance(&cfg)?;
    let crit = critical_gain(n, alpha)?;
    Ok(json!({
        "amplitude": hb.amplitude,
        "omega": hb.omega,
        "frequency": hb.omega / (2.0 * std::f64::consts::PI),
        "valid": hb.valid,
        "describing_function": describing_function_saturation(hb.amplitude, &cfg.sat),
        "critical_gain": crit.gain,
        "critical_omega": crit.omega,
        "required_k_minus": required_feedback_gain(n, &cfg.sat, alpha)?,
    }))
}

fn run_boundary(config: &ExperimentConfig) -> Result<(), CliError> {
    let cfg = config.loop_config()?;
    // the boundary exists only where the inner loop is bistable, K+ > a/b
    let threshold = cfg.sat.a() / cfg.sat.b();
    let range = config.boundary.k_plus.unwrap_or(Range { start: 1.25 * threshold, stop: 3.0 * threshold, count: 8 });
    let rows = bifurcation_boundary(&cfg.sat, &range.values())?;
    let value = json!({
        "boundary": rows.iter().map(|&(kp, km)| json!({"k_plus": kp, "k_minus_min": km})).collect::<Vec<_>>(),
    });
    print_json(&value)?;
    let Some(path) = &config.output.path else { return Ok(()) };
    match config.format() {
        Format::Json => write_json(path, &value),
        Format::Csv => {
            let mut w = csv_writer(path)?;
            w.write_record(["k_plus", "k_minus_min"]).map_err(csv_err)?;
            for (kp, km) in rows {
                w.write_record([kp.to_string(), km.to_string()]).map_err(csv_err)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

/// Closed-loop poles of `(1 + s/alpha)^n + K = 0`:
/// `s = alpha (-1 + K^(1/n) e^{j(2m+1)pi/n})`. The K grid is uniform in
/// `K^(1/n)`, i.e. in distance travelled along each branch.
fn locus_samples(n: u32, alpha: f64, k_max: f64, samples: usize) -> Vec<(f64, u32, f64, f64)> {
    let mut rows = Vec::with_capacity(samples * n as usize);
    for i in 0..samples {
        let frac = if samples > 1 { i as f64 / (samples - 1) as f64 } else { 1.0 };
        let radius = k_max.powf(1.0 / n as f64) * frac;
        let gain = radius.powi(n as i32);
        for m in 0..n {
            let phi = (2 * m + 1) as f64 * std::f64::consts::PI / n as f64;
            rows.push((gain, m, alpha * (-1.0 + radius * phi.cos()), alpha * radius * phi.sin()));
        }
    }
    rows
}

fn run_rlocus(config: &ExperimentConfig) -> Result<(), CliError> {
    let cfg = config.loop_config()?;
    let (n, alpha) = lag_order(&cfg)?;
    let k_max = config.rlocus.k_max.unwrap_or(1e3);
    let samples = config.rlocus.samples.unwrap_or(201);
    if !(k_max.is_finite() && k_max > 0.0) || samples == 0 {
        return Err(CliError::Config("rlocus.k_max must be positive and samples non-zero".into()));
    }
    let crossings = rl_crossings(n, alpha);
    let critical = critical_gain(n, alpha).ok();
    let value = json!({ "n": n, "alpha": alpha, "crossings": json_value(&crossings), "critical": json_value(&critical) });
    print_json(&value)?;
    let Some(path) = &config.output.path else { return Ok(()) };
    let rows = locus_samples(n, alpha, k_max, samples);
    match config.format() {
        Format::Json => {
            let mut full = value;
            full["samples"] =
                rows.iter().map(|&(k, m, re, im)| json!({"k": k, "root": m, "re": re, "im": im})).collect();
            write_json(path, &full)
        }
        Format::Csv => {
            let mut w = csv_writer(path)?;
            w.write_record(["k", "root", "re", "im"]).map_err(csv_err)?;
            for (k, m, re, im) in rows {
                w.write_record([k.to_string(), m.to_string(), re.to_string(), im.to_string()]).map_err(csv_err)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn simulate_from_config(config: &ExperimentConfig, cfg: &LoopConfig) -> Result<Trace, CliError> {
    let init = &config.init;
    match config.method() {
        Method::Exact => {
            if init.amplitude.is_some() {
                return Err(CliError::Config("init.amplitude needs the stepped method".into()));
            }
            let x0 = match init.x0.as_deref() {
                Some([x]) => *x,
                Some(other) => {
                    return Err(Error::DimensionMismatch { expected: 1, found: other.len() }.into());
                }
                None => {
                    // start on the cycle: the high branch drives x up from the low level
                    let (x_high, x_low) = switching_levels(cfg)?;
                    if config.branch() == oscloop_core::blocks::RelayState::High { x_low } else { x_high }
                }
            };
            Ok(simulate_relaxation_exact(cfg, x0, config.branch(), config.cycles())?)
        }
        Method::Stepped => {
            let settings = config.sim_settings(cfg)?;
            let (x0, y0) = match init.amplitude {
                Some(a) => (init_on_limit_cycle(cfg, a)?.state, None),
                None => {
                    (init.x0.clone().unwrap_or_else(|| vec![0.0; cfg.linear.state_len()]), Some(config.branch()))
                }
            };
            Ok(simulate(cfg, &x0, y0, &settings)?)
        }
    }
}

fn feature_line(trace: &Trace, window: Option<usize>, which: Signal, name: &str) -> Result<(String, Value), CliError> {
    let Some(window) = window else {
        return Ok((format!("{name}: oscillating=false"), json!({"oscillating": false})));
    };
    let f = measure_signal(trace, which, window)?;
    let line = format!(
        "{name}: oscillating={} amplitude={} period={} frequency={} thd={} shape={}",
        f.oscillating, f.amplitude, f.period, f.frequency, f.thd, f.shape
    );
    Ok((line, json_value(&f)))
}

fn run_simulate(config: &ExperimentConfig) -> Result<(), CliError> {
    let cfg = config.loop_config()?;
    let trace = simulate_from_config(config, &cfg)?;
    let window = match detect_steady_state(&trace) {
        Ok(w) => Some(w),
        Err(Error::TraceTooShort { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let (y_line, y_json) = feature_line(&trace, window, Signal::Y, "y")?;
    let (x_line, x_json) = feature_line(&trace, window, Signal::X, "x")?;
    println!("{y_line}\n{x_line}\nevents: {}", trace.events.len());

    let Some(path) = &config.output.path else { return Ok(()) };
    match config.format() {
        Format::Csv => {
            let mut w = create(path)?;
            trace.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
        Format::Json => write_json(path, &json!({"features": {"y": y_json, "x": x_json}, "trace": json_value(&trace)})),
    }
}

fn run_sweep(config: &ExperimentConfig) -> Result<(), CliError> {
    let template = config.loop_config()?;
    let param = config.sweep_param()?;
    let values = config.sweep_values()?;
    let points = sweep(&template, param, &values, &config.sweep_options())?;
    let label = label_profile(&points, &config.thresholds());
    let live = points.iter().filter(|p| p.oscillating()).count();
    println!(
        "label={} amplitude_spread={} frequency_spread={} oscillating_points={live}/{}",
        label.label,
        label.amplitude_spread,
        label.frequency_spread,
        points.len()
    );
    let Some(path) = &config.output.path else { return Ok(()) };
    match config.format() {
        Format::Csv => {
            let mut w = create(path)?;
            write_profile_csv(param, &points, &mut w)?;
            w.flush()?;
            Ok(())
        }
        Format::Json => write_json(
            path,
            &json!({"param": param.name(), "points": json_value(&points), "label": json_value(&label)}),
        ),
    }
}

fn run_bifurcation(config: &ExperimentConfig) -> Result<(), CliError> {
    let cfg = config.loop_config()?;
    let alpha = match cfg.linear {
        LinearBlockSpec::LagCascade { order: 1, alpha } => alpha,
        _ => return Err(CliError::Config("bifurcation needs a first-order lag (n = 1)".into())),
    };
    let (kp, km, opts) = config.grid()?;
    let map = bifurcation_map(&cfg.sat, alpha, &kp, &km, &opts)?;
    let errored = map.cells.iter().filter(|c| c.errored).count();
    println!(
        "disagreements={} compared={} cells={} errored={errored}",
        map.disagreements,
        map.compared,
        map.cells.len()
    );
    let Some(path) = &config.output.path else { return Ok(()) };
    match config.format() {
        Format::Csv => {
            let mut w = create(path)?;
            write_map_csv(&map, &mut w)?;
            w.flush()?;
            Ok(())
        }
        Format::Json => write_json(path, &json_value(&map)),
    }
}
