//! Reduced-order extended state observer (ESO) for the cost channel.
//!
//! The observer maintains one auxiliary state `ξ` and exposes the lumped
//! disturbance estimate `f̂ = ξ + ω_o·x2`, driven by the observed cost rate
//! `x2` and the applied control (the multiplier). Regardless of the feedback
//! sign convention, the estimation error obeys
//!
//! ```text
//! ė_f = -ω_o·e_f - ḟ,
//! ```
//!
//! so `|e_f(t)| ≤ e^(-ω_o t)·|e_f(0)| + L_f/ω_o` whenever `|ḟ| ≤ L_f`
//! (see [`error_bound`]).

use crate::error::{ensure_finite, Error, Result};

/// Sign convention linking the observer to the cost channel.
///
/// The two variants correspond to the two closed-loop channel forms:
/// `ẋ2 = f + u` (control input added) versus `ẋ2 = f - λ` (multiplier acts
/// as negative feedback). The observer term `∓ω_o·u` must match the channel,
/// otherwise the error dynamics above do not hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeedbackSign {
    /// Channel `ẋ2 = f + u`, observer `ξ̇ = -ω_o ξ - ω_o² x2 - ω_o u`.
    PositiveInput,
    /// Channel `ẋ2 = f - λ`, observer `ξ̇ = -ω_o ξ - ω_o² x2 + ω_o λ`.
    /// This is the sign-consistent form used by all theory checks.
    #[default]
    NegativeFeedback,
}

/// Observer gain and sign convention.
#[derive(Debug, Clone, Copy)]
pub struct ObserverConfig {
    /// Observer bandwidth ω_o > 0. Larger tracks faster.
    pub omega_o: f64,
    pub feedback_sign: FeedbackSign,
}

impl ObserverConfig {
    pub fn new(omega_o: f64) -> Self {
        Self {
            omega_o,
            feedback_sign: FeedbackSign::default(),
        }
    }

    pub fn with_sign(omega_o: f64, feedback_sign: FeedbackSign) -> Self {
        Self {
            omega_o,
            feedback_sign,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("omega_o", self.omega_o)?;
        if self.omega_o <= 0.0 {
            return Err(Error::parameter(format!(
                "observer gain omega_o must be positive, got {}",
                self.omega_o
            )));
        }
        Ok(())
    }
}

/// Observer state: auxiliary variable and derived disturbance estimate.
///
/// `f_hat - xi == omega_o * x2` holds for the `x2` supplied at the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverState {
    pub xi: f64,
    pub f_hat: f64,
}

impl ObserverState {
    /// State with `f̂(0) = 0` for the given initial cost rate.
    pub fn zeroed(cfg: &ObserverConfig, x2_0: f64) -> Self {
        Self {
            xi: -cfg.omega_o * x2_0,
            f_hat: 0.0,
        }
    }

    /// Pairs an auxiliary value with a measurement, recomputing `f̂`.
    pub fn from_xi(xi: f64, cfg: &ObserverConfig, x2: f64) -> Self {
        Self {
            xi,
            f_hat: xi + cfg.omega_o * x2,
        }
    }
}

/// Continuous-time derivative of the auxiliary state.
///
/// `ξ̇ = -ω_o ξ - ω_o² x2 ∓ ω_o u`, sign per [`FeedbackSign`]. Exposed so
/// simulators can integrate the observer jointly with the plant (e.g. RK4).
pub fn xi_dot(cfg: &ObserverConfig, xi: f64, x2: f64, u: f64) -> f64 {
    let coupling = match cfg.feedback_sign {
        FeedbackSign::PositiveInput => -cfg.omega_o * u,
        FeedbackSign::NegativeFeedback => cfg.omega_o * u,
    };
    -cfg.omega_o * xi - cfg.omega_o * cfg.omega_o * x2 + coupling
}

/// Advances the observer one explicit Euler step and recomputes `f̂` against
/// the supplied measurement.
///
/// Stability guard: `dt ≥ 2/ω_o` is rejected (explicit Euler would diverge);
/// `dt ≥ 1/ω_o` logs a warning.
pub fn observer_step(
    state: &ObserverState,
    cfg: &ObserverConfig,
    x2: f64,
    u: f64,
    dt: f64,
) -> Result<ObserverState> {
    cfg.validate()?;
    ensure_finite("xi", state.xi)?;
    ensure_finite("x2", x2)?;
    ensure_finite("u", u)?;
    ensure_finite("dt", dt)?;
    if dt <= 0.0 {
        return Err(Error::parameter(format!("dt must be positive, got {dt}")));
    }
    if dt >= 2.0 / cfg.omega_o {
        return Err(Error::parameter(format!(
            "dt = {dt} is unstable for explicit Euler with omega_o = {} (needs dt < 2/omega_o)",
            cfg.omega_o
        )));
    }
    if dt >= 1.0 / cfg.omega_o {
        log::warn!(
            "observer step dt = {dt} exceeds 1/omega_o = {}; estimate will be poorly damped",
            1.0 / cfg.omega_o
        );
    }
    let xi = state.xi + dt * xi_dot(cfg, state.xi, x2, u);
    Ok(ObserverState::from_xi(xi, cfg, x2))
}

/// Worst-case estimation error at time `t`:
/// `e^(-ω_o t)·|e_f(0)| + L_f/ω_o`.
pub fn error_bound(omega_o: f64, l_f: f64, e_f0: f64, t: f64) -> Result<f64> {
    ensure_finite("omega_o", omega_o)?;
    ensure_finite("l_f", l_f)?;
    ensure_finite("e_f0", e_f0)?;
    ensure_finite("t", t)?;
    if omega_o <= 0.0 {
        return Err(Error::parameter("error_bound requires omega_o > 0"));
    }
    if l_f < 0.0 {
        return Err(Error::parameter("error_bound requires L_f >= 0"));
    }
    if t < 0.0 {
        return Err(Error::Domain(format!(
            "error_bound evaluated at t = {t} < 0"
        )));
    }
    Ok((-omega_o * t).exp() * e_f0.abs() + l_f / omega_o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::rk4_step;

    #[test]
    fn equilibrium_at_rest() {
        let cfg = ObserverConfig::new(1.0);
        let mut st = ObserverState::from_xi(0.0, &cfg, 0.0);
        for _ in 0..1000 {
            st = observer_step(&st, &cfg, 0.0, 0.0, 0.01).unwrap();
        }
        assert_eq!(st.xi, 0.0);
        assert_eq!(st.f_hat, 0.0);
    }

    #[test]
    fn constant_disturbance_is_tracked() {
        // Plant x2' = f - u with f = c, u = 0; error decays as e^(-omega_o t).
        let cfg = ObserverConfig::new(4.0);
        let c = 2.5;
        let dt = 1e-3;
        let mut x2 = 0.0;
        let mut st = ObserverState::zeroed(&cfg, x2);
        let e_f0 = st.f_hat - c;
        let mut t: f64 = 0.0;
        for _ in 0..4000 {
            st = observer_step(&st, &cfg, x2, 0.0, dt).unwrap();
            x2 += dt * c;
            t += dt;
            // Pair xi with the measurement at the new time.
            st = ObserverState::from_xi(st.xi, &cfg, x2);
            let e_f = st.f_hat - c;
            let expected = e_f0 * (-cfg.omega_o * t).exp();
            assert!(
                (e_f - expected).abs() < 2e-2 * e_f0.abs().max(1e-3),
                "t={t}: e_f={e_f} expected~{expected}"
            );
        }
        assert!((st.f_hat - c).abs() < 1e-4);
    }

    #[test]
    fn sinusoid_respects_asymptotic_bound() {
        // f(t) = sin(t): L_f = 1, omega_o = 10 -> asymptotic |e_f| <= 0.1 (+2%).
        let cfg = ObserverConfig::new(10.0);
        let dt = 5e-4;
        let mut x2 = 0.0;
        let mut st = ObserverState::zeroed(&cfg, x2);
        let mut t: f64 = 0.0;
        let mut worst_tail = 0.0f64;
        for _ in 0..40_000 {
            let f = t.sin();
            st = observer_step(&st, &cfg, x2, 0.0, dt).unwrap();
            x2 += dt * f;
            t += dt;
            if t > 2.0 {
                worst_tail = worst_tail.max((st.f_hat - t.sin()).abs());
            }
        }
        assert!(worst_tail <= 0.1 * 1.02, "tail error {worst_tail}");
    }

    #[test]
    fn bound_examples() {
        // Zero initial error: asymptote only.
        for t in [0.0, 0.3, 7.0] {
            assert_eq!(error_bound(10.0, 1.0, 0.0, t).unwrap(), 0.1);
        }
        // Pure exponential halving.
        let t_half = (2.0f64).ln() / 2.0;
        assert!((error_bound(2.0, 0.0, 4.0, t_half).unwrap() - 2.0).abs() < 1e-14);
        // Direct evaluation.
        let b = error_bound(10.0, 1.0, 5.0, 0.5).unwrap();
        assert!((b - 0.13368973499542736).abs() < 1e-15);
    }

    #[test]
    fn doubling_gain_halves_asymptote() {
        for omega in [0.5, 3.0, 10.0, 80.0] {
            let b1 = error_bound(omega, 0.7, 0.0, 123.0).unwrap();
            let b2 = error_bound(2.0 * omega, 0.7, 0.0, 123.0).unwrap();
            assert_eq!(2.0 * b2, b1);
        }
    }

    #[test]
    fn bound_validation() {
        assert!(error_bound(0.0, 1.0, 0.0, 1.0).is_err());
        assert!(error_bound(1.0, -1.0, 0.0, 1.0).is_err());
        assert!(error_bound(1.0, 1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn step_guards() {
        let cfg = ObserverConfig::new(10.0);
        let st = ObserverState::from_xi(0.0, &cfg, 0.0);
        assert!(observer_step(&st, &cfg, 0.0, 0.0, 0.0).is_err());
        assert!(observer_step(&st, &cfg, 0.0, 0.0, 0.25).is_err()); // >= 2/omega_o
        assert!(observer_step(&st, &cfg, f64::NAN, 0.0, 0.01).is_err());
        assert!(observer_step(&st, &cfg, 0.0, f64::INFINITY, 0.01).is_err());
    }

    #[test]
    fn measured_error_stays_under_bound() {
        // In-class sinusoidal disturbances, Euler at dt = 0.01/omega_o.
        for (amp, nu) in [(1.0, 0.5), (0.4, 3.0), (2.0, 1.0)] {
            let cfg = ObserverConfig::new(8.0);
            let dt = 0.01 / cfg.omega_o;
            let l_f = amp * nu;
            let mut x2 = 0.3;
            let mut st = ObserverState::zeroed(&cfg, x2);
            let f = |t: f64| amp * (nu * t).sin();
            let e_f0 = (st.f_hat - f(0.0)).abs();
            let mut t: f64 = 0.0;
            for _ in 0..((6.0 / dt) as usize) {
                let u = 0.5 * (0.3 * t).sin();
                st = observer_step(&st, &cfg, x2, u, dt).unwrap();
                x2 += dt * (f(t) - u);
                t += dt;
                let e_f = (st.f_hat - f(t)).abs();
                let bound = error_bound(cfg.omega_o, l_f, e_f0, t).unwrap();
                assert!(e_f <= bound * 1.05, "t={t}: {e_f} > 1.05 * {bound}");
            }
        }
    }

    #[test]
    fn stepped_estimate_matches_integrated_form() {
        // With the tracking control law in force, the stepped estimate equals
        // omega_o*k_ad*(x1-r) + omega_o*(x2-r') + omega_o*k_ap*Int(x1-r).
        use crate::reference::{make_reference, ReferenceParams};
        let (k_ap, k_ad) = (0.1, 0.5);
        let cfg = ObserverConfig::new(5.0);
        let p = ReferenceParams::new(0.2, 1.0, 4.0, -0.2);
        let traj = make_reference(p).unwrap();
        let f = |t: f64| 0.5 + 0.3 * (0.4 * t).sin();

        // Joint state: [x1, x2, xi, integral of (x1 - r)].
        let dt = 1e-3;
        let mut y = [p.x1_0, p.x2_0, -cfg.omega_o * p.x2_0, 0.0];
        let mut t: f64 = 0.0;
        for step in 0..30_000 {
            let rhs = |tt: f64, s: &[f64; 4]| {
                let rp = traj.eval(tt).unwrap();
                let f_hat = s[2] + cfg.omega_o * s[1];
                let u = k_ap * (s[0] - rp.r) + k_ad * (s[1] - rp.dr) + f_hat - rp.ddr;
                [s[1], f(tt) - u, xi_dot(&cfg, s[2], s[1], u), s[0] - rp.r]
            };
            y = rk4_step(t, &y, dt, rhs);
            t += dt;
            if step % 100 == 0 {
                let rp = traj.eval(t).unwrap();
                let stepped = y[2] + cfg.omega_o * y[1];
                let integrated = cfg.omega_o * k_ad * (y[0] - rp.r)
                    + cfg.omega_o * (y[1] - rp.dr)
                    + cfg.omega_o * k_ap * y[3];
                assert!(
                    (stepped - integrated).abs() < 1e-6 * stepped.abs().max(1.0),
                    "t={t}: {stepped} vs {integrated}"
                );
            }
        }
    }
}
