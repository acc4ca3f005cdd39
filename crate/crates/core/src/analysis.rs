//! Closed-form predictors for the loop: existence conditions and the
//! relaxation period for the first-order relay loop, root-locus imaginary-axis
//! crossings of the lag cascade, and a describing-function harmonic balance.

use std::f64::consts::PI;

use serde::Serialize;

use crate::blocks::{LinearBlockSpec, LoopConfig, SaturationSpec};
use crate::error::{Error, Result};

/// Smallest `cos(phi)` treated as a genuine positive-gain branch. Branches at
/// `phi = pi/2` evaluate to ~6e-17 in floating point and must be dropped.
const MIN_BRANCH_COS: f64 = 1e-12;

/// Residual tolerance of the harmonic-balance bisection (on `N(A)`).
pub const BALANCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExistenceVerdict {
    pub oscillates: bool,
    /// `K+ - a/b`.
    pub pf_margin: f64,
    /// `K- - (K+ - a/b)` for the first-order lag; `K-` for the integrator.
    pub nf_margin: f64,
}

/// A root-locus crossing of the imaginary axis for `1 + K/(1 + s/alpha)^n = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossingSolution {
    pub omega: f64,
    pub gain: f64,
    pub branch: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarmonicBalancePrediction {
    /// Sinusoid amplitude at the saturation input.
    pub amplitude: f64,
    pub omega: f64,
    pub valid: bool,
}

fn require_relay_block(cfg: &LoopConfig) -> Result<()> {
    match cfg.linear {
        LinearBlockSpec::LagCascade { order: 1, .. } | LinearBlockSpec::Integrator => Ok(()),
        LinearBlockSpec::LagCascade { order, .. } => Err(Error::Unsupported(format!(
            "closed-form relay analysis needs a first-order lag or an integrator, got order {order}; use simulation"
        ))),
    }
}

/// Oscillation existence for the relay loop (first-order lag or integrator).
///
/// Both inequalities are strict. For the integrator `x` is unbounded, so the
/// negative-feedback requirement reduces to `K- > 0`.
pub fn existence_conditions(cfg: &LoopConfig) -> Result<ExistenceVerdict> {
    require_relay_block(cfg)?;
    let pf_margin = cfg.hysteresis_margin();
    let nf_margin = match cfg.linear {
        LinearBlockSpec::Integrator => cfg.k_minus,
        _ => cfg.k_minus - pf_margin,
    };
    Ok(ExistenceVerdict { oscillates: pf_margin > 0.0 && nf_margin > 0.0, pf_margin, nf_margin })
}

/// Values of `x` at which `y` switches: `±(K+ b - a)/K-`.
///
/// Defined for any bistable inner loop with `K- > 0`, including parameters on
/// or beyond the negative-feedback boundary, where `|x_high| >= b`.
pub fn switching_levels(cfg: &LoopConfig) -> Result<(f64, f64)> {
    require_relay_block(cfg)?;
    let threshold = cfg.sat.a() / cfg.sat.b();
    if !cfg.is_bistable() {
        return Err(Error::NotBistable { k_plus: cfg.k_plus, threshold });
    }
    if cfg.k_minus <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "k_minus",
            reason: "switching levels need K- > 0".into(),
        });
    }
    let level = (cfg.k_plus * cfg.sat.b() - cfg.sat.a()) / cfg.k_minus;
    Ok((level, -level))
}

/// Period of the relaxation cycle for the first-order lag:
/// `T = (2/alpha) ln[(K- + c)/(K- - c)]` with `c = K+ - a/b`.
pub fn relaxation_period(cfg: &LoopConfig) -> Result<f64> {
    let LinearBlockSpec::LagCascade { order: 1, alpha } = cfg.linear else {
        return Err(Error::Unsupported("relaxation period needs a first-order lag".into()));
    };
    let c = cfg.hysteresis_margin();
    if c <= 0.0 {
        return Err(Error::NotBistable { k_plus: cfg.k_plus, threshold: cfg.sat.a() / cfg.sat.b() });
    }
    let arg = (cfg.k_minus + c) / (cfg.k_minus - c);
    if !(arg > 1.0) || !arg.is_finite() {
        return Err(Error::NonPositiveLogArgument { value: arg });
    }
    Ok(2.0 / alpha * arg.ln())
}

/// Period of the integrator loop: `x` is a triangle sweeping `±(K+ b - a)/K-`
/// at slope `±b`, so `T = 4 (K+ b - a) / (K- b)`.
pub fn integrator_period(cfg: &LoopConfig) -> Result<f64> {
    if cfg.linear != LinearBlockSpec::Integrator {
        return Err(Error::Unsupported("integrator period needs the integrator block".into()));
    }
    if !cfg.is_bistable() {
        return Err(Error::NotBistable { k_plus: cfg.k_plus, threshold: cfg.sat.a() / cfg.sat.b() });
    }
    if !(cfg.k_minus > 0.0) {
        return Err(Error::InvalidParameter { name: "k_minus", reason: "integrator period needs K- > 0".into() });
    }
    let (a, b) = (cfg.sat.a(), cfg.sat.b());
    Ok(4.0 * (cfg.k_plus * b - a) / (cfg.k_minus * b))
}

/// All positive-frequency, positive-gain imaginary-axis crossings of the lag
/// cascade root locus, sorted by gain.
///
/// The closed-loop poles lie on rays `s = alpha(-1 + K^(1/n) e^(j phi_m))` with
/// `phi_m = (2m+1) pi / n`; a ray reaches the axis when `K^(1/n) cos phi_m = 1`.
pub fn rl_crossings(n: u32, alpha: f64) -> Vec<CrossingSolution> {
    let mut out: Vec<CrossingSolution> = (0..n)
        .filter_map(|m| {
            let phi = (2 * m + 1) as f64 * PI / n as f64;
            let (sin, cos) = phi.sin_cos();
            if cos <= MIN_BRANCH_COS || sin <= 0.0 {
                return None;
            }
            Some(CrossingSolution { omega: alpha * sin / cos, gain: cos.powi(-(n as i32)), branch: m })
        })
        .collect();
    out.sort_by(|l, r| l.gain.total_cmp(&r.gain));
    out
}

/// First crossing (`m = 0`): `omega0 = alpha tan(pi/n)`, `K0 = sec^n(pi/n)`.
pub fn critical_gain(n: u32, alpha: f64) -> Result<CrossingSolution> {
    rl_crossings(n, alpha).into_iter().find(|c| c.branch == 0).ok_or(Error::NoCrossing { n })
}

/// Outer gain that places the linearized loop exactly on the crossing: `K0 a / b`.
pub fn required_feedback_gain(n: u32, sat: &SaturationSpec, alpha: f64) -> Result<f64> {
    Ok(critical_gain(n, alpha)?.gain * sat.a() / sat.b())
}

/// First-harmonic gain of the saturation for a sinusoidal input of amplitude `A`.
pub fn describing_function_saturation(amplitude: f64, sat: &SaturationSpec) -> f64 {
    let (a, b) = (sat.a(), sat.b());
    if amplitude <= a {
        return b / a;
    }
    let ratio = a / amplitude;
    2.0 * b / (PI * a) * (ratio.asin() + ratio * (1.0 - ratio * ratio).sqrt())
}

/// Solves `1 + K- N(A) G(j omega) = 0` for the lag cascade with `K+ = 0`.
///
/// The phase condition fixes `omega = omega0` independently of `A`; the
/// magnitude condition `N(A) = K0 / K-` is solved by bisection. When `K-`
/// equals `K0 a / b` every `A <= a` balances, and `a` is reported.
pub fn harmonic_balance(cfg: &LoopConfig) -> Result<HarmonicBalancePrediction> {
    let LinearBlockSpec::LagCascade { order, alpha } = cfg.linear else {
        return Err(Error::Unsupported("harmonic balance needs a lag cascade".into()));
    };
    if cfg.k_plus != 0.0 {
        return Err(Error::Unsupported("harmonic balance is defined for K+ = 0 only".into()));
    }
    let crossing = critical_gain(order, alpha)?;
    let sat = &cfg.sat;
    let invalid = HarmonicBalancePrediction { amplitude: 0.0, omega: crossing.omega, valid: false };
    if cfg.k_minus <= 0.0 {
        return Ok(invalid);
    }
    let target = crossing.gain / cfg.k_minus;
    let ratio = target / sat.slope();
    if ratio > 1.0 + 1e-9 {
        return Ok(invalid);
    }
    if ratio >= 1.0 - 1e-9 {
        return Ok(HarmonicBalancePrediction { amplitude: sat.a(), omega: crossing.omega, valid: true });
    }

    let df = |amp: f64| describing_function_saturation(amp, sat);
    let mut lo = sat.a();
    let mut hi = 2.0 * sat.a();
    while df(hi) > target {
        lo = hi;
        hi *= 2.0;
    }
    // N is strictly decreasing above a.
    while hi - lo > 4.0 * f64::EPSILON * hi {
        let mid = 0.5 * (lo + hi);
        if df(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let amplitude = 0.5 * (lo + hi);
    debug_assert!((df(amplitude) - target).abs() < BALANCE_TOL);
    Ok(HarmonicBalancePrediction { amplitude, omega: crossing.omega, valid: true })
}

/// Minimum outer gain for oscillation, `K-_min(K+) = K+ - a/b`, per entry.
pub fn bifurcation_boundary(sat: &SaturationSpec, k_plus_values: &[f64]) -> Result<Vec<(f64, f64)>> {
    let threshold = sat.a() / sat.b();
    k_plus_values
        .iter()
        .map(|&kp| {
            if kp > threshold && kp.is_finite() {
                Ok((kp, kp - threshold))
            } else {
                Err(Error::NotBistable { k_plus: kp, threshold })
            }
        })
        .collect()
}
