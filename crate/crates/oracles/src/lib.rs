//! Reference computations for tests. Nothing here calls into the library
//! under test: each routine works from the raw loop definition or from a
//! generic numerical method.

use std::f64::consts::PI;

use num_complex::Complex64;

fn clamp_saturation(a: f64, b: f64, u: f64) -> f64 {
    (b / a * u).clamp(-b, b)
}

// 5-point Gauss-Legendre on [-1, 1].
const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

fn gauss_legendre(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let h = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            total += w * f(mid + 0.5 * h * x);
        }
    }
    total * 0.5 * h
}

/// First Fourier sine coefficient of `sat(A sin theta)` divided by `A`,
/// integrated numerically over a full period. Panels are split where the
/// input crosses a break point so every piece is smooth.
pub fn first_harmonic_gain(a: f64, b: f64, amplitude: f64) -> f64 {
    let f = |theta: f64| clamp_saturation(a, b, amplitude * theta.sin()) * theta.sin();
    let mut cuts = vec![0.0, 0.5 * PI, PI, 1.5 * PI, 2.0 * PI];
    if amplitude > a {
        // Break points of |A sin theta| = a in each quadrant, located by bisection.
        let mut lo = 0.0;
        let mut hi = 0.5 * PI;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if amplitude * mid.sin() < a {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let k = 0.5 * (lo + hi);
        cuts.extend([k, PI - k, PI + k, 2.0 * PI - k]);
    }
    cuts.sort_by(f64::total_cmp);
    let integral: f64 = cuts.windows(2).map(|w| gauss_legendre(&f, w[0], w[1], 64)).sum();
    integral / (PI * amplitude)
}

/// Input amplitude at which the numerically integrated first-harmonic gain
/// equals `target` (for `target < b/a`), by bisection.
pub fn bisect_first_harmonic_gain(a: f64, b: f64, target: f64) -> f64 {
    let mut lo = a;
    let mut hi = a;
    while first_harmonic_gain(a, b, hi) > target {
        hi *= 2.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if first_harmonic_gain(a, b, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Period of the first-order relay loop by brute-force time stepping of the
/// raw loop equations (inner loop kept on its saturated branch while
/// consistent, lag advanced by its exact one-step exponential).
pub fn relay_period_fine_step(a: f64, b: f64, k_plus: f64, k_minus: f64, alpha: f64, h: f64) -> f64 {
    let decay = (-alpha * h).exp();
    let mut x = 0.0;
    let mut y = b;
    let mut t = 0.0;
    let mut switches: Vec<f64> = Vec::new();
    // branch margin: >= 0 means the current saturated branch is still consistent
    let margin = |x: f64, y: f64| {
        let u = -k_minus * x + k_plus * y;
        if y > 0.0 {
            u - a
        } else {
            -a - u - f64::MIN_POSITIVE
        }
    };
    while switches.len() < 7 {
        let before = margin(x, y);
        let x_next = y + (x - y) * decay;
        let after = margin(x_next, y);
        if after < 0.0 {
            let frac = before / (before - after);
            switches.push(t + frac * h);
            x = x_next;
            y = -y;
        } else {
            x = x_next;
        }
        t += h;
        assert!(t < 1e4, "relay oracle did not oscillate");
    }
    // two full cycles after the transient
    (switches[6] - switches[2]) / 2.0
}

fn eval_loop_poly(z: Complex64, n: u32, alpha: f64, gain: f64) -> Complex64 {
    (Complex64::new(1.0, 0.0) + z / alpha).powi(n as i32) + gain
}

/// Roots of `(1 + s/alpha)^n + K` by Durand-Kerner iteration followed by
/// Newton polishing. `start` seeds the iteration (e.g. roots at a nearby K).
pub fn closed_loop_poles(n: u32, alpha: f64, gain: f64, start: Option<&[Complex64]>) -> Vec<Complex64> {
    let lead = alpha.powi(-(n as i32));
    let mut z: Vec<Complex64> = match start {
        Some(s) if s.len() == n as usize => s.to_vec(),
        _ => {
            let radius = alpha * (2.0 + (1.0 + gain).powf(1.0 / n as f64));
            let seed = Complex64::new(0.4, 0.9);
            (0..n).map(|k| seed.powi(k as i32) * radius / seed.norm().powi(k as i32) + (-alpha)).collect()
        }
    };
    for _ in 0..5000 {
        let mut worst: f64 = 0.0;
        for i in 0..z.len() {
            let mut denom = Complex64::new(lead, 0.0);
            for j in 0..z.len() {
                if i != j {
                    denom *= z[i] - z[j];
                }
            }
            let delta = eval_loop_poly(z[i], n, alpha, gain) / denom;
            z[i] -= delta;
            worst = worst.max(delta.norm() / (1.0 + z[i].norm()));
        }
        if worst < 1e-15 {
            break;
        }
    }
    for root in z.iter_mut() {
        for _ in 0..4 {
            let base = Complex64::new(1.0, 0.0) + *root / alpha;
            let dp = base.powi(n as i32 - 1) * (n as f64 / alpha);
            if dp.norm() == 0.0 {
                break;
            }
            *root -= eval_loop_poly(*root, n, alpha, gain) / dp;
        }
    }
    z
}

fn rhp_count(roots: &[Complex64]) -> usize {
    roots.iter().filter(|r| r.re > 0.0).count()
}

/// Imaginary-axis crossings of the root locus of `(1 + s/alpha)^n + K = 0`,
/// found by tracking roots over a log-spaced K grid and bisecting on the
/// number of right-half-plane roots. Returns `(omega, K)` sorted by K.
pub fn rl_crossings_numeric(n: u32, alpha: f64, k_max: f64) -> Vec<(f64, f64)> {
    let per_decade = 25.0;
    let lo_exp = -3.0;
    let steps = ((k_max.log10() - lo_exp) * per_decade).ceil() as usize;
    let gain_at = |i: usize| 10f64.powf(lo_exp + i as f64 / per_decade);

    let mut out = Vec::new();
    let mut prev_roots = closed_loop_poles(n, alpha, gain_at(0), None);
    let mut prev_count = rhp_count(&prev_roots);
    for i in 1..=steps {
        let roots = closed_loop_poles(n, alpha, gain_at(i), Some(&prev_roots));
        let count = rhp_count(&roots);
        // each crossing brings a conjugate pair; locate every level passed
        let mut level = prev_count + 2;
        while level <= count {
            let (mut lo, mut hi) = (gain_at(i - 1), gain_at(i));
            let mut seed = prev_roots.clone();
            while hi / lo - 1.0 > 1e-14 {
                let mid = (lo * hi).sqrt();
                let r = closed_loop_poles(n, alpha, mid, Some(&seed));
                if rhp_count(&r) >= level {
                    hi = mid;
                } else {
                    lo = mid;
                    seed = r;
                }
            }
            let gain = (lo * hi).sqrt();
            let at = closed_loop_poles(n, alpha, gain, Some(&seed));
            let omega = at
                .iter()
                .filter(|r| r.im > 0.0)
                .min_by(|l, r| l.re.abs().total_cmp(&r.re.abs()))
                .map(|r| r.im)
                .expect("crossing pair");
            out.push((omega, gain));
            level += 2;
        }
        prev_roots = roots;
        prev_count = count;
    }
    out
}

/// THD of an ideal square wave, all harmonics: `sqrt(pi^2/8 - 1)`.
pub fn ideal_square_thd() -> f64 {
    (PI * PI / 8.0 - 1.0).sqrt()
}

/// THD of an ideal square wave counting harmonics up to `max_harmonic`.
pub fn truncated_square_thd(max_harmonic: usize) -> f64 {
    (3..=max_harmonic).step_by(2).map(|k| 1.0 / (k * k) as f64).sum::<f64>().sqrt()
}

/// THD of an ideal triangle wave: `sqrt(pi^4/96 - 1)`.
pub fn ideal_triangle_thd() -> f64 {
    (PI.powi(4) / 96.0 - 1.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_region_gain_is_slope() {
        assert!((first_harmonic_gain(1.0, 2.0, 0.5) - 2.0).abs() < 1e-13);
    }

    #[test]
    fn poles_satisfy_polynomial() {
        let roots = closed_loop_poles(5, 1.3, 40.0, None);
        for r in roots {
            assert!(eval_loop_poly(r, 5, 1.3, 40.0).norm() < 1e-9);
        }
    }

    #[test]
    fn third_order_crossing() {
        let c = rl_crossings_numeric(3, 1.0, 1e3);
        assert_eq!(c.len(), 1);
        assert!((c[0].1 - 8.0).abs() < 1e-9);
    }
}
