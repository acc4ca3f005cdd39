//! Block-diagram domain types and the static evaluation of each block.
//!
//! The loop is: `r = -K- x`, `u = r + K+ y`, `y = sat(u)`, and `x` is the
//! output of a linear block driven by `y` (a cascade of identical first-order
//! lags `1/(1 + s/alpha)^n`, or a pure integrator).

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative tolerance used to decide that `K+ b / a` equals one.
const UNIT_LOOP_GAIN_TOL: f64 = 1e-12;

/// Parameters of the saturation nonlinearity: slope `b/a` on `[-a, a)`, clipped at `±b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaturationSpec {
    a: f64,
    b: f64,
}

impl SaturationSpec {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        positive("a", a)?;
        positive("b", b)?;
        Ok(Self { a, b })
    }

    /// Input break point.
    pub fn a(&self) -> f64 {
        self.a
    }

    /// Output saturation level.
    pub fn b(&self) -> f64 {
        self.b
    }

    /// Slope of the linear region, `b/a`.
    pub fn slope(&self) -> f64 {
        self.b / self.a
    }

    pub fn apply(&self, u: f64) -> f64 {
        saturate(u, self)
    }
}

/// The linear dynamics block `G(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinearBlockSpec {
    /// `1 / (1 + s/alpha)^order`, realized as `order` chained first-order sections.
    LagCascade { order: u32, alpha: f64 },
    /// `1/s`.
    Integrator,
}

impl LinearBlockSpec {
    pub fn lag(order: u32, alpha: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter {
                name: "n",
                reason: "cascade order must be a positive integer".into(),
            });
        }
        positive("alpha", alpha)?;
        Ok(LinearBlockSpec::LagCascade { order, alpha })
    }

    /// Number of scalar states in the realization.
    pub fn state_len(&self) -> usize {
        match *self {
            LinearBlockSpec::LagCascade { order, .. } => order as usize,
            LinearBlockSpec::Integrator => 1,
        }
    }

    /// Pole rate; the integrator reports 1 so that default time scales stay defined.
    pub fn rate(&self) -> f64 {
        match *self {
            LinearBlockSpec::LagCascade { alpha, .. } => alpha,
            LinearBlockSpec::Integrator => 1.0,
        }
    }

    /// Cascade order, `None` for the integrator.
    pub fn order(&self) -> Option<u32> {
        match *self {
            LinearBlockSpec::LagCascade { order, .. } => Some(order),
            LinearBlockSpec::Integrator => None,
        }
    }

    pub fn is_first_order_lag(&self) -> bool {
        matches!(self, LinearBlockSpec::LagCascade { order: 1, .. })
    }

    /// Writes the state derivative into `out` without allocating.
    pub fn derivative_into(&self, state: &[f64], y_in: f64, out: &mut [f64]) -> Result<()> {
        let len = self.state_len();
        if state.len() != len {
            return Err(Error::DimensionMismatch { expected: len, found: state.len() });
        }
        if out.len() != len {
            return Err(Error::DimensionMismatch { expected: len, found: out.len() });
        }
        match *self {
            LinearBlockSpec::LagCascade { alpha, .. } => {
                let mut upstream = y_in;
                for (dx, &x) in out.iter_mut().zip(state) {
                    *dx = alpha * (upstream - x);
                    upstream = x;
                }
            }
            LinearBlockSpec::Integrator => out[0] = y_in,
        }
        Ok(())
    }

    /// Output `x` of the block for a given state (the last stage).
    pub fn output(&self, state: &[f64]) -> f64 {
        state[state.len() - 1]
    }
}

/// Full loop configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoopConfig {
    pub sat: SaturationSpec,
    pub k_plus: f64,
    pub k_minus: f64,
    pub linear: LinearBlockSpec,
}

impl LoopConfig {
    pub fn new(sat: SaturationSpec, k_plus: f64, k_minus: f64, linear: LinearBlockSpec) -> Result<Self> {
        let cfg = Self { sat, k_plus, k_minus, linear };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Re-checks every invariant; useful after editing public fields.
    pub fn validate(&self) -> Result<()> {
        SaturationSpec::new(self.sat.a, self.sat.b)?;
        non_negative("k_plus", self.k_plus)?;
        non_negative("k_minus", self.k_minus)?;
        if let LinearBlockSpec::LagCascade { order, alpha } = self.linear {
            LinearBlockSpec::lag(order, alpha)?;
        }
        Ok(())
    }

    /// `K+ - a/b`; positive exactly when the inner loop is bistable.
    pub fn hysteresis_margin(&self) -> f64 {
        self.k_plus - self.sat.a / self.sat.b
    }

    pub fn is_bistable(&self) -> bool {
        self.hysteresis_margin() > 0.0
    }
}

/// Memory state of the relay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayState {
    High,
    Low,
}

/// Branch selector for [`resolve_inner_loop`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    High,
    Low,
    Linear,
}

impl From<RelayState> for Branch {
    fn from(s: RelayState) -> Self {
        match s {
            RelayState::High => Branch::High,
            RelayState::Low => Branch::Low,
        }
    }
}

/// Relay with hysteresis equivalent to the bistable inner positive-feedback loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HysteresisElement {
    pub r_up: f64,
    pub r_down: f64,
    pub y_high: f64,
    pub y_low: f64,
    pub state: RelayState,
}

impl HysteresisElement {
    pub fn with_state(mut self, state: RelayState) -> Self {
        self.state = state;
        self
    }

    pub fn output(&self) -> f64 {
        match self.state {
            RelayState::High => self.y_high,
            RelayState::Low => self.y_low,
        }
    }

    /// State reached from the current one for input `r`. Thresholds are closed.
    pub fn next_state(&self, r: f64) -> RelayState {
        match self.state {
            RelayState::High if r <= self.r_down => RelayState::Low,
            RelayState::Low if r >= self.r_up => RelayState::High,
            s => s,
        }
    }
}

/// Saturation nonlinearity.
pub fn saturate(u: f64, sat: &SaturationSpec) -> f64 {
    if u < -sat.a {
        -sat.b
    } else if u < sat.a {
        sat.slope() * u
    } else {
        sat.b
    }
}

/// Builds the relay that the inner loop reduces to when `K+ > a/b`.
///
/// The element starts in the high state.
pub fn make_hysteresis(sat: &SaturationSpec, k_plus: f64) -> Result<HysteresisElement> {
    let threshold = sat.a / sat.b;
    if !(k_plus > threshold) {
        return Err(Error::NotBistable { k_plus, threshold });
    }
    let width = k_plus * sat.b - sat.a;
    Ok(HysteresisElement {
        r_up: width,
        r_down: -width,
        y_high: sat.b,
        y_low: -sat.b,
        state: RelayState::High,
    })
}

/// One evaluation of the relay: returns the output and the updated element.
pub fn hysteresis_step(elem: HysteresisElement, r: f64) -> (f64, HysteresisElement) {
    let next = elem.with_state(elem.next_state(r));
    (next.output(), next)
}

/// Solves the algebraic inner loop `u = r + K+ y`, `y = sat(u)` for any `K+ >= 0`.
///
/// When several branches are consistent (bistable parameters) the one named by
/// `prev` is returned; otherwise the unique consistent solution is.
pub fn resolve_inner_loop(r: f64, sat: &SaturationSpec, k_plus: f64, prev: Branch) -> Result<f64> {
    let (a, b) = (sat.a, sat.b);
    let loop_gain = k_plus * sat.slope();
    // y = +b needs u = r + K+ b >= a; y = -b needs u = r - K+ b < -a.
    let high_ok = r + k_plus * b >= a;
    let low_ok = r - k_plus * b < -a;

    if (loop_gain - 1.0).abs() <= UNIT_LOOP_GAIN_TOL {
        // Degenerate: every y in [-b, b) balances r = 0.
        return match (high_ok, low_ok) {
            _ if r == 0.0 => Err(Error::SingularLoop { r }),
            (true, _) => Ok(b),
            (_, true) => Ok(-b),
            _ => Err(Error::SingularLoop { r }),
        };
    }

    // Linear branch: u = r / (1 - g) must lie in [-a, a).
    let u_lin = r / (1.0 - loop_gain);
    let linear_ok = (-a..a).contains(&u_lin);
    let y_lin = sat.slope() * u_lin;

    let preferred = match prev {
        Branch::High if high_ok => Some(b),
        Branch::Low if low_ok => Some(-b),
        Branch::Linear if linear_ok => Some(y_lin),
        _ => None,
    };
    if let Some(y) = preferred {
        return Ok(y);
    }
    // Fall back to whichever stable branch exists, then the linear one.
    if high_ok && !low_ok {
        Ok(b)
    } else if low_ok && !high_ok {
        Ok(-b)
    } else if linear_ok {
        Ok(y_lin)
    } else if high_ok {
        // Both saturated branches consistent and prev named neither.
        Ok(if r >= 0.0 { b } else { -b })
    } else {
        // Rounding at a branch boundary; the nearest saturated level is the limit.
        Ok(if u_lin >= 0.0 { b } else { -b })
    }
}

/// State derivative of the linear block for input `y_in`.
pub fn cascade_derivative(linear: &LinearBlockSpec, state: &[f64], y_in: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; linear.state_len()];
    linear.derivative_into(state, y_in, &mut out)?;
    Ok(out)
}

/// `G(j omega)` of the linear block.
pub fn freq_response(linear: &LinearBlockSpec, omega: f64) -> Result<Complex64> {
    match *linear {
        LinearBlockSpec::LagCascade { order, alpha } => Ok(partial_lag_response(order, alpha, omega)),
        LinearBlockSpec::Integrator => {
            if omega == 0.0 {
                Err(Error::IntegratorAtDc)
            } else {
                Ok(Complex64::new(0.0, omega).inv())
            }
        }
    }
}

/// Response of the first `stages` sections of a lag cascade.
pub(crate) fn partial_lag_response(stages: u32, alpha: f64, omega: f64) -> Complex64 {
    Complex64::new(1.0, omega / alpha).powi(-(stages as i32))
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: format!("must be finite and > 0, got {v}") })
    }
}

fn non_negative(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: format!("must be finite and >= 0, got {v}") })
    }
}
