//! Time-domain simulation of the closed loop.
//!
//! Two paths are provided. [`simulate`] integrates the linear block with a
//! fixed-step classical Runge-Kutta scheme; in the bistable regime the inner
//! loop is the relay from [`make_hysteresis`] and every threshold crossing is
//! bracketed and bisected to `event_tol` before the switch is applied. In the
//! monostable regime the inner loop is solved algebraically at every stage
//! evaluation. [`simulate_relaxation_exact`] advances the first-order lag (or
//! the integrator) segment by segment in closed form.

use std::io::Write;

use serde::Serialize;

use crate::analysis::critical_gain;
use crate::blocks::{
    make_hysteresis, partial_lag_response, resolve_inner_loop, Branch, LinearBlockSpec, LoopConfig, RelayState,
};
use crate::error::{Error, Result};

/// Samples per closed-form segment in [`simulate_relaxation_exact`].
pub const SEGMENT_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimSettings {
    pub t_final: f64,
    pub dt: f64,
    pub event_tol: f64,
    pub record_stride: usize,
}

impl SimSettings {
    /// Defaults scaled to the loop's time constant: `dt = 0.01/alpha`,
    /// `event_tol = 1e-9/alpha`, every step recorded.
    pub fn for_loop(cfg: &LoopConfig, t_final: f64) -> Self {
        let rate = cfg.linear.rate();
        Self { t_final, dt: 0.01 / rate, event_tol: 1e-9 / rate, record_stride: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.event_tol > 0.0 && self.event_tol < self.dt && self.dt < self.t_final && self.t_final.is_finite();
        if !ok {
            return Err(Error::InvalidSettings(format!(
                "need 0 < event_tol < dt < t_final, got event_tol={}, dt={}, t_final={}",
                self.event_tol, self.dt, self.t_final
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidSettings("record_stride must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Up,
    Down,
}

impl Transition {
    fn into_state(self) -> RelayState {
        match self {
            Transition::Up => RelayState::High,
            Transition::Down => RelayState::Low,
        }
    }

    fn flag(self) -> i8 {
        match self {
            Transition::Up => 1,
            Transition::Down => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub time: f64,
    pub transition: Transition,
    /// Set when the switch ends a partial swing that started off the cycle.
    pub transient: bool,
}

/// Loop signal selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    R,
    U,
    Y,
    X,
}

/// Sampled loop signals plus the switching events.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Trace {
    pub times: Vec<f64>,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    /// Per sample: +1 for an up switch at that instant, -1 for down, else 0.
    pub event_flag: Vec<i8>,
    pub events: Vec<SwitchEvent>,
    /// Saturation level `b` of the loop that produced the trace.
    pub output_level: f64,
}

impl Trace {
    fn new(output_level: f64) -> Self {
        Self { output_level, ..Default::default() }
    }

    fn push(&mut self, t: f64, x: f64, y: f64, cfg: &LoopConfig, flag: i8) {
        let r = -cfg.k_minus * x;
        self.times.push(t);
        self.r.push(r);
        self.u.push(r + cfg.k_plus * y);
        self.y.push(y);
        self.x.push(x);
        self.event_flag.push(flag);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn signal(&self, which: Signal) -> &[f64] {
        match which {
            Signal::R => &self.r,
            Signal::U => &self.u,
            Signal::Y => &self.y,
            Signal::X => &self.x,
        }
    }

    /// First sample index with `times[i] >= t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s < t)
    }

    /// Writes `t,r,u,y,x,event_flag` rows with shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "r", "u", "y", "x", "event_flag"])?;
        for i in 0..self.len() {
            w.write_record([
                self.times[i].to_string(),
                self.r[i].to_string(),
                self.u[i].to_string(),
                self.y[i].to_string(),
                self.x[i].to_string(),
                self.event_flag[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Classical RK4 for the linear block with scratch buffers reused across steps.
struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(len: usize) -> Self {
        Self { k: std::array::from_fn(|_| vec![0.0; len]), tmp: vec![0.0; len] }
    }

    fn step<F>(&mut self, lin: &LinearBlockSpec, x: &[f64], h: f64, input: &F, out: &mut [f64]) -> Result<()>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        lin.derivative_into(x, input(x)?, k1)?;
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        lin.derivative_into(tmp, input(tmp)?, k2)?;
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        lin.derivative_into(tmp, input(tmp)?, k3)?;
        for i in 0..x.len() {
            tmp[i] = x[i] + h * k3[i];
        }
        lin.derivative_into(tmp, input(tmp)?, k4)?;
        for i in 0..x.len() {
            out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

fn transition_between(from: RelayState, to: RelayState) -> Option<Transition> {
    match (from, to) {
        (RelayState::High, RelayState::Low) => Some(Transition::Down),
        (RelayState::Low, RelayState::High) => Some(Transition::Up),
        _ => None,
    }
}

/// Integrates the closed loop over `[0, settings.t_final]`.
///
/// `y0` selects the relay branch at `t = 0` in the bistable regime (high when
/// `None`) and is ignored otherwise.
pub fn simulate(cfg: &LoopConfig, x0: &[f64], y0: Option<RelayState>, settings: &SimSettings) -> Result<Trace> {
    cfg.validate()?;
    settings.validate()?;
    let lin = cfg.linear;
    if x0.len() != lin.state_len() {
        return Err(Error::DimensionMismatch { expected: lin.state_len(), found: x0.len() });
    }
    if cfg.is_bistable() {
        simulate_relay(cfg, x0, y0.unwrap_or(RelayState::High), settings)
    } else {
        simulate_monostable(cfg, x0, settings)
    }
}

fn step_count(settings: &SimSettings) -> usize {
    ((settings.t_final / settings.dt) - 1e-9).ceil().max(1.0) as usize
}

fn grid_time(k: usize, n_steps: usize, settings: &SimSettings) -> f64 {
    if k == n_steps {
        settings.t_final
    } else {
        k as f64 * settings.dt
    }
}

fn simulate_monostable(cfg: &LoopConfig, x0: &[f64], settings: &SimSettings) -> Result<Trace> {
    let lin = cfg.linear;
    let input = |state: &[f64]| resolve_inner_loop(-cfg.k_minus * lin.output(state), &cfg.sat, cfg.k_plus, Branch::Linear);
    let mut trace = Trace::new(cfg.sat.b());
    let mut x = x0.to_vec();
    let mut next = x.clone();
    let mut rk = Rk4::new(x.len());
    trace.push(0.0, lin.output(&x), input(&x)?, cfg, 0);

    let n_steps = step_count(settings);
    let mut t = 0.0;
    for k in 1..=n_steps {
        let t_next = grid_time(k, n_steps, settings);
        rk.step(&lin, &x, t_next - t, &input, &mut next)?;
        std::mem::swap(&mut x, &mut next);
        t = t_next;
        if k % settings.record_stride == 0 || k == n_steps {
            trace.push(t, lin.output(&x), input(&x)?, cfg, 0);
        }
    }
    Ok(trace)
}

fn simulate_relay(cfg: &LoopConfig, x0: &[f64], y0: RelayState, settings: &SimSettings) -> Result<Trace> {
    let lin = cfg.linear;
    let r_of = |state: &[f64]| -cfg.k_minus * lin.output(state);
    let mut relay = make_hysteresis(&cfg.sat, cfg.k_plus)?.with_state(y0);
    let mut trace = Trace::new(cfg.sat.b());
    let mut x = x0.to_vec();
    let mut trial = x.clone();
    let mut rk = Rk4::new(x.len());

    let mut flag = 0;
    let mut last_event = f64::NEG_INFINITY;
    let initial = relay.next_state(r_of(&x));
    if let Some(tr) = transition_between(relay.state, initial) {
        relay.state = initial;
        trace.events.push(SwitchEvent { time: 0.0, transition: tr, transient: false });
        flag = tr.flag();
        last_event = 0.0;
    }
    trace.push(0.0, lin.output(&x), relay.output(), cfg, flag);

    let n_steps = step_count(settings);
    let mut t = 0.0;
    for k in 1..=n_steps {
        let t_target = grid_time(k, n_steps, settings);
        while t < t_target {
            let h = t_target - t;
            let y = relay.output();
            let held = |_: &[f64]| Ok(y);
            rk.step(&lin, &x, h, &held, &mut trial)?;
            let after = relay.next_state(r_of(&trial));
            let Some(tr) = transition_between(relay.state, after) else {
                std::mem::swap(&mut x, &mut trial);
                t = t_target;
                break;
            };

            // Bisect the step fraction: `lo` has not switched, `hi` has.
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > settings.event_tol {
                let mid = 0.5 * (lo + hi);
                rk.step(&lin, &x, mid, &held, &mut trial)?;
                if relay.next_state(r_of(&trial)) == relay.state {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            rk.step(&lin, &x, hi, &held, &mut trial)?;
            let t_event = t + hi;
            if t_event - last_event < settings.event_tol {
                return Err(Error::StepTooLarge { time: t_event });
            }
            std::mem::swap(&mut x, &mut trial);
            relay.state = tr.into_state();
            trace.events.push(SwitchEvent { time: t_event, transition: tr, transient: false });
            trace.push(t_event, lin.output(&x), relay.output(), cfg, tr.flag());
            last_event = t_event;
            t = t_event;
        }
        let record = k % settings.record_stride == 0 || k == n_steps;
        if record && trace.times.last().is_some_and(|&last| t > last) {
            trace.push(t, lin.output(&x), relay.output(), cfg, 0);
        }
    }
    Ok(trace)
}

/// Event-exact relaxation run for the first-order lag or the integrator.
///
/// Each inter-switch segment is solved in closed form, the switching instant
/// analytically, and `x` is snapped to the threshold at every switch. Records
/// `2 * n_cycles` events after any transient switch.
pub fn simulate_relaxation_exact(cfg: &LoopConfig, x0: f64, y0: RelayState, n_cycles: usize) -> Result<Trace> {
    cfg.validate()?;
    let lin = cfg.linear;
    if !(lin.is_first_order_lag() || lin == LinearBlockSpec::Integrator) {
        return Err(Error::Unsupported("exact relaxation needs a first-order lag or an integrator".into()));
    }
    let mut relay = make_hysteresis(&cfg.sat, cfg.k_plus)?.with_state(y0);
    let b = cfg.sat.b();
    if cfg.k_minus <= 0.0 {
        return Err(Error::NoOscillation);
    }
    let level = (cfg.k_plus * b - cfg.sat.a()) / cfg.k_minus;
    let snap_tol = 1e-12 * level.max(1.0);

    let mut trace = Trace::new(b);
    let mut t = 0.0;
    let mut x = x0;
    let mut flag = 0;
    let mut off_cycle = false;

    let initial = relay.next_state(-cfg.k_minus * x);
    if let Some(tr) = transition_between(relay.state, initial) {
        relay.state = initial;
        trace.events.push(SwitchEvent { time: 0.0, transition: tr, transient: true });
        flag = tr.flag();
        off_cycle = true;
    }
    trace.push(0.0, x, relay.output(), cfg, flag);

    // On the cycle a segment starts at the opposite switching level.
    let start_level = |s: RelayState| if s == RelayState::High { -level } else { level };
    if (x - start_level(relay.state)).abs() > snap_tol {
        off_cycle = true;
    }

    let mut steady_events = 0;
    while steady_events < 2 * n_cycles {
        let y = relay.output();
        let target = -start_level(relay.state);
        let duration = match lin {
            LinearBlockSpec::Integrator => (target - x) / y,
            LinearBlockSpec::LagCascade { alpha, .. } => {
                // x moves from x toward y; it reaches `target` only if |target| < b.
                if level >= b {
                    return Err(Error::NoOscillation);
                }
                ((y - x) / (y - target)).ln() / alpha
            }
        };
        if !(duration.is_finite() && duration >= 0.0) {
            return Err(Error::NoOscillation);
        }
        let x_at = |tau: f64| match lin {
            LinearBlockSpec::Integrator => x + y * tau,
            LinearBlockSpec::LagCascade { alpha, .. } => y + (x - y) * (-alpha * tau).exp(),
        };
        for j in 1..SEGMENT_SAMPLES {
            let tau = duration * j as f64 / SEGMENT_SAMPLES as f64;
            trace.push(t + tau, x_at(tau), y, cfg, 0);
        }

        // The segment ends on the threshold by construction; `r` evaluated
        // there can miss the closed bound by rounding, so flip directly.
        let after = match relay.state {
            RelayState::High => RelayState::Low,
            RelayState::Low => RelayState::High,
        };
        let tr = transition_between(relay.state, after).ok_or(Error::NoOscillation)?;
        t += duration;
        x = target;
        relay.state = after;
        trace.events.push(SwitchEvent { time: t, transition: tr, transient: off_cycle });
        trace.push(t, x, relay.output(), cfg, tr.flag());
        if off_cycle {
            off_cycle = false;
        } else {
            steady_events += 1;
        }
    }
    Ok(trace)
}

/// Initial state placing the marginal linear loop on its sinusoidal cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitCycleStart {
    pub state: Vec<f64>,
    /// Oscillation frequency in rad/time; the saturation output is `A sin(omega t)`.
    pub omega: f64,
}

/// Initializes every cascade stage at its steady sinusoidal value so that the
/// loop at `K- = K0 a/b` (with `K+ = 0`) runs on a sinusoid of amplitude `A`.
pub fn init_on_limit_cycle(cfg: &LoopConfig, amplitude: f64) -> Result<LimitCycleStart> {
    cfg.validate()?;
    let LinearBlockSpec::LagCascade { order, alpha } = cfg.linear else {
        return Err(Error::Unsupported("limit-cycle start needs a lag cascade".into()));
    };
    let crossing = critical_gain(order, alpha)?;
    if cfg.k_plus != 0.0 {
        return Err(Error::Unsupported("limit-cycle start is defined for K+ = 0 only".into()));
    }
    let required = crossing.gain * cfg.sat.a() / cfg.sat.b();
    if (cfg.k_minus - required).abs() > 1e-9 * required {
        return Err(Error::InvalidParameter {
            name: "k_minus",
            reason: format!("must equal K0 a/b = {required} for a marginal cycle, got {}", cfg.k_minus),
        });
    }
    if !(amplitude >= 0.0 && amplitude < cfg.sat.b()) {
        return Err(Error::AmplitudeOutOfRange { amplitude, limit: cfg.sat.b() });
    }
    // Stage i carries Im(A G_i(j omega) e^{j omega t}) at t = 0.
    let state = (1..=order).map(|i| amplitude * partial_lag_response(i, alpha, crossing.omega).im).collect();
    Ok(LimitCycleStart { state, omega: crossing.omega })
}
