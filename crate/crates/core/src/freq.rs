//! Frequency response of the two disturbance-estimation error channels.
//!
//! With the observer in the loop, the estimation error `e_f` sees the
//! disturbance through `G_ef(s) = s/(s + ω_o)`. The implicit estimate of an
//! integral/PID controller sees it through
//!
//! ```text
//! G_efI(s) = (s³ + K_d·s² + K_p·s) / ((s + ω_o)(s² + k_ad·s + k_ap)),
//! ```
//!
//! so the squared magnitude ratio reduces to
//!
//! ```text
//! |G_ef|²/|G_efI|² = ((k_ap - ω²)² + k_ad²ω²) / ((K_p - ω²)² + K_d²ω²),
//! ```
//!
//! which is < 1 at every frequency under the mapped PID gains. The phase
//! comparison `arctan(ω/ω_o) < arctan(k_ad·ω/(k_ap - ω²))` is certified on
//! the branch `ω² < k_ap` where both arctan arguments are positive; outside
//! that branch the sign flip makes the single-branch arctan comparison
//! convention-dependent, so those points are reported but not asserted.

use num_complex::Complex64;

use crate::controller::{GainSet, PidGains};
use crate::error::{ensure_finite, Error, Result};
use crate::ode::rk4_step;

/// Magnitude and principal-argument phase of a transfer function at one
/// frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferEval {
    pub omega: f64,
    pub magnitude: f64,
    /// Principal argument in (-π, π].
    pub phase: f64,
}

fn check_freq(omega: f64) -> Result<()> {
    ensure_finite("omega", omega)?;
    if omega <= 0.0 {
        return Err(Error::parameter(format!(
            "frequency must be positive, got {omega}"
        )));
    }
    Ok(())
}

/// Evaluates `G_ef(s) = s/(s + ω_o)` at `s = iω`.
///
/// The magnitude is `ω/√(ω² + ω_o²)`; the principal argument equals
/// `arctan(ω_o/ω)`.
pub fn g_ef(omega: f64, omega_o: f64) -> Result<TransferEval> {
    check_freq(omega)?;
    ensure_finite("omega_o", omega_o)?;
    if omega_o <= 0.0 {
        return Err(Error::parameter(format!(
            "omega_o must be positive, got {omega_o}"
        )));
    }
    let s = Complex64::new(0.0, omega);
    let g = s / (s + omega_o);
    Ok(TransferEval {
        omega,
        magnitude: g.norm(),
        phase: g.arg(),
    })
}

/// Evaluates `G_efI(s)` at `s = iω` for the given PID/ADRC gain pair.
pub fn g_ef_i(omega: f64, pid: &PidGains, adrc: &GainSet) -> Result<TransferEval> {
    check_freq(omega)?;
    adrc.validate()?;
    pid.validate()?;
    let s = Complex64::new(0.0, omega);
    let numerator = s * (s * s + pid.k_d * s + pid.k_p);
    let denominator = (s + adrc.omega_o) * (s * s + adrc.k_ad * s + adrc.k_ap);
    if denominator.norm() < 1e-14 {
        return Err(Error::Singular(format!(
            "G_efI denominator vanishes at omega = {omega}"
        )));
    }
    let g = numerator / denominator;
    Ok(TransferEval {
        omega,
        magnitude: g.norm(),
        phase: g.arg(),
    })
}

/// Steady-state ratio of the two error channels,
/// `k_ap / (k_ap + ω_o·k_ad)`.
pub fn steady_state_ratio(adrc: &GainSet) -> f64 {
    adrc.k_ap / (adrc.k_ap + adrc.omega_o * adrc.k_ad)
}

/// `n` log-spaced frequencies over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi <= lo || n < 2 {
        return Err(Error::parameter(format!(
            "log grid needs 0 < lo < hi and n >= 2, got lo={lo}, hi={hi}, n={n}"
        )));
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp())
        .collect())
}

/// Default certification grid: 200 log-spaced points over [1e-3, 1e3].
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-3, 1e3, 200).expect("static grid parameters")
}

/// One row of the certification sweep.
#[derive(Debug, Clone, Copy)]
pub struct FreqPoint {
    pub omega: f64,
    pub mag_ef: f64,
    pub mag_efi: f64,
    /// Squared magnitude ratio from the closed-form expression.
    pub ratio_sq: f64,
    /// Same ratio from direct complex evaluation (cross-check path).
    pub ratio_sq_direct: f64,
    /// Principal arguments of the two transfer functions.
    pub phase_ef: f64,
    pub phase_efi: f64,
    /// Single-branch arctan forms entering the phase comparison.
    pub arctan_ef: f64,
    pub arctan_efi: f64,
    /// True when `ω_o > (k_ap - ω²)/k_ad`.
    pub side_condition: bool,
    /// True on the branch `ω² < k_ap` where the arctan comparison is
    /// well-ordered; phase is only asserted there.
    pub asserted_branch: bool,
    pub magnitude_ok: bool,
    /// `Some(ok)` on the asserted branch, `None` where only reported.
    pub phase_ok: Option<bool>,
}

/// Result of [`ratio_and_phase_check`].
#[derive(Debug, Clone)]
pub struct FreqReport {
    pub points: Vec<FreqPoint>,
    /// Grid indices where the magnitude inequality ratio² < 1 failed.
    pub magnitude_violations: Vec<usize>,
    /// Grid indices on the asserted branch where the phase inequality failed.
    pub phase_violations: Vec<usize>,
    pub steady_state_ratio: f64,
}

impl FreqReport {
    pub fn all_magnitude_ok(&self) -> bool {
        self.magnitude_violations.is_empty()
    }

    pub fn all_phase_ok(&self) -> bool {
        self.phase_violations.is_empty()
    }
}

/// Sweeps the grid, comparing the two error channels point by point.
///
/// Assumes the caller chose `ω_o > ω_o*`. The magnitude inequality is
/// checked everywhere; the phase inequality only on the asserted branch.
pub fn ratio_and_phase_check(grid: &[f64], adrc: &GainSet, pid: &PidGains) -> Result<FreqReport> {
    if grid.is_empty() {
        return Err(Error::parameter("frequency grid is empty"));
    }
    adrc.validate()?;
    pid.validate()?;

    let mut points = Vec::with_capacity(grid.len());
    let mut magnitude_violations = Vec::new();
    let mut phase_violations = Vec::new();
    for (i, &omega) in grid.iter().enumerate() {
        let ef = g_ef(omega, adrc.omega_o)?;
        let efi = g_ef_i(omega, pid, adrc)?;
        let w2 = omega * omega;
        let num = (adrc.k_ap - w2).powi(2) + (adrc.k_ad * omega).powi(2);
        let den = (pid.k_p - w2).powi(2) + (pid.k_d * omega).powi(2);
        if den == 0.0 {
            return Err(Error::Singular(format!(
                "magnitude-ratio denominator vanishes at omega = {omega}"
            )));
        }
        let ratio_sq = num / den;
        let ratio_sq_direct = (ef.magnitude / efi.magnitude).powi(2);

        let side_condition = adrc.omega_o > (adrc.k_ap - w2) / adrc.k_ad;
        let asserted_branch = w2 < adrc.k_ap && side_condition;
        let arctan_ef = (omega / adrc.omega_o).atan();
        let arctan_efi = (adrc.k_ad * omega / (adrc.k_ap - w2)).atan();
        let magnitude_ok = ratio_sq < 1.0;
        let phase_ok = asserted_branch.then_some(arctan_ef < arctan_efi);

        if !magnitude_ok {
            magnitude_violations.push(i);
        }
        if phase_ok == Some(false) {
            phase_violations.push(i);
        }
        points.push(FreqPoint {
            omega,
            mag_ef: ef.magnitude,
            mag_efi: efi.magnitude,
            ratio_sq,
            ratio_sq_direct,
            phase_ef: ef.phase,
            phase_efi: efi.phase,
            arctan_ef,
            arctan_efi,
            side_condition,
            asserted_branch,
            magnitude_ok,
            phase_ok,
        });
    }
    Ok(FreqReport {
        points,
        magnitude_violations,
        phase_violations,
        steady_state_ratio: steady_state_ratio(adrc),
    })
}

/// Time-domain realization of the two error channels under a constant
/// disturbance rate (`f` a ramp, i.e. a step in `ḟ`), returning
/// `e_f(T)/e_fI(T)`.
///
/// Both signals settle to nonzero constants whose ratio is the steady-state
/// value `k_ap/(k_ap + ω_o·k_ad)`; a step in `f` itself drives both errors
/// to zero and leaves the ratio indeterminate.
pub fn error_channel_ratio_sim(adrc: &GainSet, pid: &PidGains, t_end: f64, dt: f64) -> Result<f64> {
    adrc.validate()?;
    pid.validate()?;
    if !(dt > 0.0 && t_end > dt) {
        return Err(Error::parameter(format!(
            "need 0 < dt < t_end, got dt={dt}, t_end={t_end}"
        )));
    }
    let f_dot = 1.0;
    // States: [e, ė, e_f].
    let mut y = [0.0, 0.0, 0.0];
    let mut t = 0.0;
    let steps = (t_end / dt).round() as usize;
    let rhs = |_t: f64, s: &[f64; 3]| {
        [
            s[1],
            -adrc.k_ap * s[0] - adrc.k_ad * s[1] + s[2],
            -adrc.omega_o * s[2] - f_dot,
        ]
    };
    for step in 0..steps {
        y = rk4_step(t, &y, dt, rhs);
        t += dt;
        if !(y[0].is_finite() && y[1].is_finite() && y[2].is_finite()) {
            return Err(Error::Divergence {
                step,
                detail: "error-channel simulation left the finite range".into(),
            });
        }
    }
    let e_f = y[2];
    let e_fi = (pid.k_p - adrc.k_ap) * y[0] + (pid.k_d - adrc.k_ad) * y[1] + y[2];
    if e_fi == 0.0 {
        return Err(Error::Singular("e_fI settled at exactly zero".into()));
    }
    Ok(e_f / e_fi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gains::pid_equivalent_gains;

    fn table_gains() -> (GainSet, PidGains) {
        let g = GainSet::new(0.1, 0.01, 10.0);
        let p = pid_equivalent_gains(&g);
        (g, p)
    }

    #[test]
    fn corner_frequency_magnitude() {
        let e = g_ef(10.0, 10.0).unwrap();
        assert!((e.magnitude - 1.0 / (2.0f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn high_frequency_limit() {
        let e = g_ef(1e9, 10.0).unwrap();
        assert!((e.magnitude - 1.0).abs() < 1e-12);
        assert!(e.phase.abs() < 1e-7);
    }

    #[test]
    fn g_ef_at_unit_frequency() {
        let e = g_ef(1.0, 10.0).unwrap();
        assert!((e.magnitude - 0.09950371902099892).abs() < 1e-15);
        // Principal argument equals arctan(omega_o/omega).
        assert!((e.phase - (10.0f64).atan()).abs() < 1e-15);
    }

    #[test]
    fn g_efi_zero_at_origin() {
        let (g, p) = table_gains();
        let e = g_ef_i(1e-9, &p, &g).unwrap();
        assert!(e.magnitude < 1e-8);
    }

    #[test]
    fn factorization_matches_direct_evaluation() {
        let (g, p) = table_gains();
        for omega in [1e-3, 0.05, 1.0, 3.7, 40.0, 1e3] {
            let ef = g_ef(omega, g.omega_o).unwrap();
            let efi = g_ef_i(omega, &p, &g).unwrap();
            let w2 = omega * omega;
            let factor = (((p.k_p - w2).powi(2) + (p.k_d * omega).powi(2))
                / ((g.k_ap - w2).powi(2) + (g.k_ad * omega).powi(2)))
            .sqrt();
            let predicted = ef.magnitude * factor;
            assert!(
                (efi.magnitude - predicted).abs() <= 1e-12 * predicted.max(1.0),
                "omega={omega}: {} vs {predicted}",
                efi.magnitude
            );
        }
    }

    #[test]
    fn table_gain_sweep_certifies_both_inequalities() {
        let (g, p) = table_gains();
        let grid = default_grid();
        let report = ratio_and_phase_check(&grid, &g, &p).unwrap();
        assert!(
            report.all_magnitude_ok(),
            "{:?}",
            report.magnitude_violations
        );
        assert!(report.all_phase_ok(), "{:?}", report.phase_violations);
        assert_eq!(report.steady_state_ratio, 0.5);
        // Two evaluation paths agree at every grid point.
        for pt in &report.points {
            assert!(
                (pt.ratio_sq - pt.ratio_sq_direct).abs() <= 1e-10 * pt.ratio_sq.max(1.0),
                "omega={}: {} vs {}",
                pt.omega,
                pt.ratio_sq,
                pt.ratio_sq_direct
            );
        }
        // The asserted branch is non-trivial for these gains.
        assert!(report.points.iter().filter(|pt| pt.asserted_branch).count() > 50);
    }

    #[test]
    fn identical_gain_pair_sits_on_the_boundary() {
        let g = GainSet::new(0.1, 0.01, 10.0);
        let p = PidGains::new(g.k_ap, 1.0, g.k_ad);
        let grid = log_grid(1e-2, 1e2, 50).unwrap();
        let report = ratio_and_phase_check(&grid, &g, &p).unwrap();
        for pt in &report.points {
            assert!((pt.ratio_sq - 1.0).abs() < 1e-12);
            assert!(!pt.magnitude_ok); // strict inequality fails on the boundary
        }
    }

    #[test]
    fn empty_grid_rejected() {
        let (g, p) = table_gains();
        assert!(ratio_and_phase_check(&[], &g, &p).is_err());
        assert!(g_ef(0.0, 10.0).is_err());
        assert!(g_ef(-1.0, 10.0).is_err());
        assert!(log_grid(0.0, 1.0, 10).is_err());
    }

    #[test]
    fn ramp_disturbance_reaches_steady_state_ratio() {
        let (g, p) = table_gains();
        let ratio = error_channel_ratio_sim(&g, &p, 3000.0, 0.01).unwrap();
        let expected = steady_state_ratio(&g);
        assert!(
            (ratio - expected).abs() <= 0.02 * expected,
            "simulated {ratio} vs {expected}"
        );
    }
}
