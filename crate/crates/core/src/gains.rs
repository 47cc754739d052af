//! Observer-gain lower-bound machinery and gain mappings.
//!
//! The admissible observer bandwidth has a computable lower bound
//!
//! ```text
//! ω_o* = max{ ω̄_o, 0, (L1 - k_ap)/k_ad, L2 - k_ad },
//! ```
//!
//! where `L1`, `L2` bound the disturbance's sensitivity to the cost and its
//! rate (estimated online from finite differences of observed costs), and
//! `ω̄_o` is the largest real root of a quartic stability manifold. The
//! manifold coefficients come from the caller; when absent, `ω̄_o = 0`.
//!
//! The module also carries the exact gain correspondence between the ADRC
//! triple `(k_ap, k_ad, ω_o)` and PID gains:
//!
//! ```text
//! K_p = k_ap + ω_o·k_ad,   K_i = ω_o·k_ap,   K_d = ω_o + k_ad,
//! ```
//!
//! with the inverse reduced to a cubic in ω_o.

use crate::controller::{GainSet, PidGains};
use crate::error::{ensure_finite, Error, Result};

/// Sensitivity bounds of the disturbance class: `|∂h/∂x1| ≤ L1`,
/// `|∂h/∂x2| ≤ L2`, `|w|, |ẇ| ≤ L3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceBounds {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl DisturbanceBounds {
    pub fn new(l1: f64, l2: f64, l3: f64) -> Self {
        Self { l1, l2, l3 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("L1", self.l1), ("L2", self.l2), ("L3", self.l3)] {
            ensure_finite(name, v)?;
            if v < 0.0 {
                return Err(Error::parameter(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Coefficients `n0..n4` of the stability manifold polynomial
/// `n0·ω⁴ + n1·ω³ + n2·ω² + n3·ω + n4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticCoefficients {
    pub n: [f64; 5],
}

impl QuarticCoefficients {
    pub fn new(n0: f64, n1: f64, n2: f64, n3: f64, n4: f64) -> Self {
        Self {
            n: [n0, n1, n2, n3, n4],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.n.iter().all(|&c| c == 0.0)
    }
}

/// Result of the online L1/L2 estimation, with skip diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceEstimate {
    pub l1: f64,
    pub l2: f64,
    pub used_l1: usize,
    pub skipped_l1: usize,
    pub used_l2: usize,
    pub skipped_l2: usize,
}

/// Denominator guard for the finite-difference ratios.
pub const EPS_DEN: f64 = 1e-8;

/// Estimates `L1 = max |Δẍ1/Δx1|` and `L2 = max |Δẍ1/Δx2|` from a uniformly
/// sampled `x1` series.
///
/// `ẍ1` is the second central difference and `x2` the first central
/// difference. Sample pairs whose denominator magnitude falls below
/// [`EPS_DEN`] are skipped and counted; if every sample of either ratio is
/// degenerate the estimation fails with a diagnostic.
pub fn estimate_l1_l2(x1: &[f64], dt: f64) -> Result<DisturbanceEstimate> {
    if x1.len() < 4 {
        return Err(Error::parameter(format!(
            "L1/L2 estimation needs at least 4 samples, got {}",
            x1.len()
        )));
    }
    ensure_finite("dt", dt)?;
    if dt <= 0.0 {
        return Err(Error::parameter(format!("dt must be positive, got {dt}")));
    }
    for (i, &v) in x1.iter().enumerate() {
        ensure_finite(&format!("x1[{i}]"), v)?;
    }

    let n = x1.len();
    // Interior finite differences, defined for k in 1..n-1.
    let d2 = |k: usize| (x1[k + 1] - 2.0 * x1[k] + x1[k - 1]) / (dt * dt);
    let x2c = |k: usize| (x1[k + 1] - x1[k - 1]) / (2.0 * dt);

    let mut est = DisturbanceEstimate {
        l1: 0.0,
        l2: 0.0,
        used_l1: 0,
        skipped_l1: 0,
        used_l2: 0,
        skipped_l2: 0,
    };
    for k in 1..n - 2 {
        let num = d2(k + 1) - d2(k);
        let den1 = x1[k + 1] - x1[k];
        if den1.abs() < EPS_DEN {
            est.skipped_l1 += 1;
        } else {
            est.l1 = est.l1.max((num / den1).abs());
            est.used_l1 += 1;
        }
        let den2 = x2c(k + 1) - x2c(k);
        if den2.abs() < EPS_DEN {
            est.skipped_l2 += 1;
        } else {
            est.l2 = est.l2.max((num / den2).abs());
            est.used_l2 += 1;
        }
    }
    if est.used_l1 == 0 || est.used_l2 == 0 {
        let mut which = Vec::new();
        if est.used_l1 == 0 {
            which.push(format!(
                "L1 (all {} Δx1 samples below {EPS_DEN})",
                est.skipped_l1
            ));
        }
        if est.used_l2 == 0 {
            which.push(format!(
                "L2 (all {} Δx2 samples below {EPS_DEN})",
                est.skipped_l2
            ));
        }
        return Err(Error::Estimation(format!(
            "no admissible finite-difference samples for {}",
            which.join(" and ")
        )));
    }
    Ok(est)
}

/// Same estimator restricted to the trailing `window` samples.
pub fn estimate_l1_l2_windowed(x1: &[f64], dt: f64, window: usize) -> Result<DisturbanceEstimate> {
    let start = x1.len().saturating_sub(window);
    estimate_l1_l2(&x1[start..], dt)
}

// ---------------------------------------------------------------------------
// Real roots of low-degree polynomials
// ---------------------------------------------------------------------------

/// Horner evaluation; coefficients in descending degree order.
fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
}

fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    let deg = coeffs.len() - 1;
    coeffs[..deg]
        .iter()
        .enumerate()
        .map(|(i, &c)| c * (deg - i) as f64)
        .collect()
}

fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Bisection on a bracketing interval with a guaranteed sign change.
fn bisect(coeffs: &[f64], mut a: f64, mut b: f64) -> f64 {
    let mut fa = poly_eval(coeffs, a);
    if fa == 0.0 {
        return a;
    }
    let sa = sign_of(fa);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        let fm = poly_eval(coeffs, mid);
        if fm == 0.0 {
            return mid;
        }
        if sign_of(fm) == sa {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
        let _ = fa;
        if (b - a).abs() <= 1e-15 * a.abs().max(b.abs()).max(1.0) {
            break;
        }
    }
    0.5 * (a + b)
}

/// All real roots of a polynomial of degree <= 4, ascending and deduplicated.
///
/// Deflation-free: critical points from the derivative split the Cauchy
/// bracket into monotone intervals; each sign change is refined by bisection
/// and tangent roots are caught at critical points with a residual test.
pub fn real_roots(coefficients: &[f64]) -> Vec<f64> {
    // Trim exact leading zeros.
    let first = coefficients.iter().position(|&c| c != 0.0);
    let coeffs: &[f64] = match first {
        Some(i) => &coefficients[i..],
        None => return Vec::new(),
    };
    let deg = coeffs.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    if deg == 1 {
        return vec![-coeffs[1] / coeffs[0]];
    }

    let critical = real_roots(&poly_derivative(coeffs));
    // Cauchy bound: all real roots lie in [-m, m] and p(±m) != 0.
    let m = 1.0
        + coeffs[1..]
            .iter()
            .map(|c| (c / coeffs[0]).abs())
            .fold(0.0, f64::max);

    let mut breakpoints = Vec::with_capacity(critical.len() + 2);
    breakpoints.push(-m);
    for &c in &critical {
        if c > -m && c < m {
            breakpoints.push(c);
        }
    }
    breakpoints.push(m);

    let coeff_scale = coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max);
    let mut roots = Vec::new();
    for win in breakpoints.windows(2) {
        let (a, b) = (win[0], win[1]);
        let (fa, fb) = (poly_eval(coeffs, a), poly_eval(coeffs, b));
        if sign_of(fa) != 0 && sign_of(fb) != 0 && sign_of(fa) != sign_of(fb) {
            roots.push(bisect(coeffs, a, b));
        }
    }
    // Tangent (even-multiplicity) roots sit at critical points.
    for &c in &critical {
        let tol = 1e-11 * coeff_scale * c.abs().max(1.0).powi(deg as i32);
        if poly_eval(coeffs, c).abs() <= tol {
            roots.push(c);
        }
    }

    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-11 * a.abs().max(1.0));
    roots
}

/// Largest real element of the manifold `Ω`, or `None` when the polynomial
/// has no real roots. The zero polynomial is rejected.
pub fn max_real_root(c: &QuarticCoefficients) -> Result<Option<f64>> {
    for (i, &v) in c.n.iter().enumerate() {
        ensure_finite(&format!("n{i}"), v)?;
    }
    if c.is_zero() {
        return Err(Error::parameter("manifold polynomial is identically zero"));
    }
    Ok(real_roots(&c.n).last().copied())
}

/// Independent cross-check for [`max_real_root`]: companion-matrix
/// eigenvalues classified by imaginary part, refined by Newton polish.
/// Kept free of the bracketing machinery above so the two routes stay
/// independent.
pub mod oracle {
    use super::QuarticCoefficients;
    use nalgebra::DMatrix;

    fn eval(coeffs: &[f64], x: f64) -> f64 {
        coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
    }

    fn eval_deriv(coeffs: &[f64], x: f64) -> f64 {
        let deg = coeffs.len() - 1;
        coeffs[..deg]
            .iter()
            .enumerate()
            .fold(0.0, |acc, (i, &c)| acc * x + c * (deg - i) as f64)
    }

    /// Largest real root per the eigenvalue route, or `None`.
    pub fn max_real_root_oracle(c: &QuarticCoefficients) -> Option<f64> {
        let first = c.n.iter().position(|&v| v != 0.0)?;
        let coeffs = &c.n[first..];
        let deg = coeffs.len() - 1;
        if deg == 0 {
            return None;
        }
        if deg == 1 {
            return Some(-coeffs[1] / coeffs[0]);
        }
        // Monic companion matrix (column convention).
        let lead = coeffs[0];
        let companion = DMatrix::from_fn(deg, deg, |r, col| {
            if col == deg - 1 {
                -coeffs[deg - r] / lead
            } else if r == col + 1 {
                1.0
            } else {
                0.0
            }
        });
        let eigen = companion.complex_eigenvalues();
        let scale = coeffs.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let mut best: Option<f64> = None;
        for ev in eigen.iter() {
            if ev.im.abs() > 1e-8 * ev.re.abs().max(1.0) {
                continue;
            }
            // Newton polish on the real axis.
            let mut x = ev.re;
            for _ in 0..50 {
                let f = eval(coeffs, x);
                let df = eval_deriv(coeffs, x);
                if df == 0.0 {
                    break;
                }
                let step = f / df;
                x -= step;
                if step.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            let residual_tol = 1e-7 * scale * x.abs().max(1.0).powi(deg as i32);
            if eval(coeffs, x).abs() <= residual_tol {
                best = Some(best.map_or(x, |b: f64| b.max(x)));
            }
        }
        best
    }
}

/// Stability lower bound on the observer gain:
/// `ω_o* = max{ ω̄_o, 0, (L1 - k_ap)/k_ad, L2 - k_ad }`.
///
/// `manifold` supplies the quartic whose largest real root is `ω̄_o`; absent
/// (or with no real roots) that term is 0.
pub fn omega_star(
    k_ap: f64,
    k_ad: f64,
    bounds: &DisturbanceBounds,
    manifold: Option<&QuarticCoefficients>,
) -> Result<f64> {
    ensure_finite("k_ap", k_ap)?;
    ensure_finite("k_ad", k_ad)?;
    bounds.validate()?;
    if k_ad <= 0.0 {
        return Err(Error::parameter(format!(
            "omega_star requires k_ad > 0 (it divides L1 - k_ap), got {k_ad}"
        )));
    }
    let omega_bar = match manifold {
        Some(c) => max_real_root(c)?.unwrap_or(0.0),
        None => 0.0,
    };
    Ok(omega_bar
        .max(0.0)
        .max((bounds.l1 - k_ap) / k_ad)
        .max(bounds.l2 - k_ad))
}

/// Exact forward gain map `(k_ap, k_ad, ω_o) -> (K_p, K_i, K_d)`.
pub fn pid_equivalent_gains(adrc: &GainSet) -> PidGains {
    PidGains {
        k_p: adrc.k_ap + adrc.omega_o * adrc.k_ad,
        k_i: adrc.omega_o * adrc.k_ap,
        k_d: adrc.omega_o + adrc.k_ad,
    }
}

/// Inverse gain map. Eliminating `k_ad = K_d - ω_o` and
/// `k_ap = K_p - ω_o·k_ad` turns `K_i = ω_o·k_ap` into the cubic
///
/// ```text
/// ω_o³ - K_d·ω_o² + K_p·ω_o - K_i = 0.
/// ```
///
/// Returns the admissible solution with the largest ω_o, verified to
/// reproduce the input through the forward map within 1e-10; `Infeasible`
/// (listing the candidate roots) when no real root yields nonnegative gains.
pub fn solve_adrc_from_pid(pid: &PidGains) -> Result<GainSet> {
    pid.validate()?;
    let cubic = [1.0, -pid.k_d, pid.k_p, -pid.k_i];
    let mut candidates = real_roots(&cubic);
    candidates.reverse(); // largest omega_o first
    for &omega_o in &candidates {
        if omega_o <= 0.0 {
            continue;
        }
        let mut k_ad = pid.k_d - omega_o;
        if k_ad < -1e-9 * pid.k_d.max(1.0) {
            continue;
        }
        k_ad = k_ad.max(0.0);
        let mut k_ap = pid.k_p - omega_o * k_ad;
        if k_ap < -1e-9 * pid.k_p.max(1.0) {
            continue;
        }
        k_ap = k_ap.max(0.0);
        let g = GainSet {
            k_ap,
            k_ad,
            omega_o,
        };
        let fwd = pid_equivalent_gains(&g);
        let ok = |a: f64, b: f64| (a - b).abs() <= 1e-10 * b.abs().max(1.0);
        if ok(fwd.k_p, pid.k_p) && ok(fwd.k_i, pid.k_i) && ok(fwd.k_d, pid.k_d) {
            return Ok(g);
        }
    }
    Err(Error::Infeasible(format!(
        "no admissible (k_ap, k_ad, omega_o) for PID gains ({}, {}, {}); cubic roots: {:?}",
        pid.k_p, pid.k_i, pid.k_d, candidates
    )))
}
