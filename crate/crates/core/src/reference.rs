//! Critically damped reference trajectory for the cost budget.
//!
//! Instead of asking the multiplier to enforce the cost limit `d` from the
//! first iteration, the budget is tightened gradually: the reference starts
//! at the initial cost level and slope and converges to `d` without
//! oscillation. The trajectory solves
//!
//! ```text
//! r̈ = -2·c_r·ṙ - c_r²·(r - d),    r(0) = x1_0,  ṙ(0) = x2_0,
//! ```
//!
//! whose closed form is `r(t) = d + (A + B·t)·e^(-c_r·t)` with
//! `A = x1_0 - d` and `B = x2_0 + c_r·A`. The closed form is the source of
//! truth; numeric integration of the ODE appears only as a test oracle.

use crate::error::{ensure_finite, Error, Result};

/// Parameters of the tightening schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceParams {
    /// Tightening rate (1/time). Larger values reach `d` faster.
    pub c_r: f64,
    /// Cost threshold the schedule converges to.
    pub d: f64,
    /// Initial cumulative cost, matched exactly by `r(0)`.
    pub x1_0: f64,
    /// Initial cost rate, matched exactly by `ṙ(0)`.
    pub x2_0: f64,
}

impl ReferenceParams {
    pub fn new(c_r: f64, d: f64, x1_0: f64, x2_0: f64) -> Self {
        Self { c_r, d, x1_0, x2_0 }
    }

    fn validate(&self) -> Result<()> {
        ensure_finite("c_r", self.c_r)?;
        ensure_finite("d", self.d)?;
        ensure_finite("x1_0", self.x1_0)?;
        ensure_finite("x2_0", self.x2_0)?;
        if self.c_r <= 0.0 {
            return Err(Error::parameter(format!(
                "tightening rate c_r must be positive, got {}",
                self.c_r
            )));
        }
        Ok(())
    }
}

/// Value of the reference and its first two derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefPoint {
    pub r: f64,
    pub dr: f64,
    pub ddr: f64,
}

impl RefPoint {
    /// Constant reference at `d` (the classical / PID setpoint).
    pub fn constant(d: f64) -> Self {
        Self {
            r: d,
            dr: 0.0,
            ddr: 0.0,
        }
    }
}

/// Precomputed closed-form trajectory. Immutable after construction; safe to
/// share across threads.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceTrajectory {
    params: ReferenceParams,
    /// A = x1_0 - d
    a: f64,
    /// B = x2_0 + c_r (x1_0 - d)
    b: f64,
}

impl ReferenceTrajectory {
    /// Builds the trajectory, validating the parameters.
    pub fn new(params: ReferenceParams) -> Result<Self> {
        params.validate()?;
        let a = params.x1_0 - params.d;
        let b = params.x2_0 + params.c_r * a;
        Ok(Self { params, a, b })
    }

    /// Same schedule with the target shifted to `d - margin`, for runs that
    /// keep a fixed safety margin below the threshold.
    pub fn with_margin(params: ReferenceParams, margin: f64) -> Result<Self> {
        ensure_finite("margin", margin)?;
        let shifted = ReferenceParams {
            d: params.d - margin,
            ..params
        };
        Self::new(shifted)
    }

    pub fn params(&self) -> &ReferenceParams {
        &self.params
    }

    /// Coefficient `A = x1_0 - d` of the closed form.
    pub fn coeff_a(&self) -> f64 {
        self.a
    }

    /// Coefficient `B = x2_0 + c_r (x1_0 - d)` of the closed form.
    pub fn coeff_b(&self) -> f64 {
        self.b
    }

    /// Evaluates `(r, ṙ, r̈)` at `t ≥ 0`.
    ///
    /// The triple satisfies `r̈ + 2 c_r ṙ + c_r² (r - d) = 0` to machine
    /// precision, and `r(0) = x1_0`, `ṙ(0) = x2_0` hold bit-exactly.
    pub fn eval(&self, t: f64) -> Result<RefPoint> {
        ensure_finite("t", t)?;
        if t < 0.0 {
            return Err(Error::Domain(format!("reference evaluated at t = {t} < 0")));
        }
        let p = &self.params;
        if t == 0.0 {
            // Initial conditions hold bit-exactly; d + (x1_0 - d) may not.
            return Ok(RefPoint {
                r: p.x1_0,
                dr: p.x2_0,
                ddr: -2.0 * p.c_r * p.x2_0 - p.c_r * p.c_r * (p.x1_0 - p.d),
            });
        }
        let decay = (-p.c_r * t).exp();
        let poly = self.a + self.b * t;
        Ok(RefPoint {
            r: p.d + poly * decay,
            dr: (self.b - p.c_r * poly) * decay,
            ddr: (p.c_r * p.c_r * poly - 2.0 * p.c_r * self.b) * decay,
        })
    }

    /// Earliest time after which `|r(t) - d|` is non-increasing.
    ///
    /// Candidates are the zero of `ṙ` and the zero of `r - d`; past both, the
    /// envelope decays monotonically to the threshold.
    pub fn monotone_tail_start(&self) -> f64 {
        let mut t_star: f64 = 0.0;
        if self.b != 0.0 {
            // ṙ = 0 at (B - c_r A) / (c_r B); r = d at -A/B.
            let dr_zero = (self.b - self.params.c_r * self.a) / (self.params.c_r * self.b);
            let crossing = -self.a / self.b;
            t_star = t_star.max(dr_zero).max(crossing);
        }
        t_star
    }
}

/// Builds a [`ReferenceTrajectory`]. Free-function alias for [`ReferenceTrajectory::new`].
pub fn make_reference(params: ReferenceParams) -> Result<ReferenceTrajectory> {
    ReferenceTrajectory::new(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::rk4_step;

    /// Test oracle: integrates r̈ = -2 c_r ṙ - c_r² (r - d) with RK4.
    fn integrate_ode(p: &ReferenceParams, t_end: f64, dt: f64) -> Vec<(f64, f64, f64)> {
        let steps = (t_end / dt).round() as usize;
        let mut y = [p.x1_0, p.x2_0];
        let mut t = 0.0;
        let mut out = Vec::with_capacity(steps + 1);
        out.push((t, y[0], y[1]));
        for _ in 0..steps {
            y = rk4_step(t, &y, dt, |_, s| {
                [s[1], -2.0 * p.c_r * s[1] - p.c_r * p.c_r * (s[0] - p.d)]
            });
            t += dt;
            out.push((t, y[0], y[1]));
        }
        out
    }

    #[test]
    fn fixed_point_at_threshold() {
        let traj = make_reference(ReferenceParams::new(0.1, 25.0, 25.0, 0.0)).unwrap();
        for k in 0..200 {
            let pt = traj.eval(k as f64 * 0.5).unwrap();
            assert_eq!(pt.r, 25.0);
            assert_eq!(pt.dr, 0.0);
            assert_eq!(pt.ddr, 0.0);
        }
    }

    #[test]
    fn closed_form_value_at_unit_time() {
        // c_r=1, d=0, x1_0=1, x2_0=0: r(1) = 2 e^-1.
        let traj = make_reference(ReferenceParams::new(1.0, 0.0, 1.0, 0.0)).unwrap();
        let pt = traj.eval(1.0).unwrap();
        assert!((pt.r - 0.7357588823428847).abs() < 1e-15);
    }

    #[test]
    fn initial_conditions_match_bit_exactly() {
        let traj = make_reference(ReferenceParams::new(0.1, 25.0, 80.0, 0.0)).unwrap();
        let pt = traj.eval(0.0).unwrap();
        assert_eq!(pt.r, 80.0);
        assert_eq!(pt.dr, 0.0);

        // Including initial values that do not round-trip through d + (x1_0 - d).
        let traj = make_reference(ReferenceParams::new(0.7, 25.0, 0.1, -0.3)).unwrap();
        let pt = traj.eval(0.0).unwrap();
        assert_eq!(pt.r, 0.1);
        assert_eq!(pt.dr, -0.3);
    }

    #[test]
    fn initial_acceleration_from_ode() {
        let p = ReferenceParams::new(0.3, 25.0, 80.0, 5.0);
        let traj = make_reference(p).unwrap();
        let pt = traj.eval(0.0).unwrap();
        let expected = -2.0 * p.c_r * p.x2_0 - p.c_r * p.c_r * (p.x1_0 - p.d);
        assert_eq!(pt.ddr, expected);
    }

    #[test]
    fn converges_to_threshold() {
        let traj = make_reference(ReferenceParams::new(1.0, 0.0, 1.0, 0.0)).unwrap();
        let pt = traj.eval(200.0).unwrap();
        assert!(pt.r.abs() < 1e-12);
        assert!(pt.dr.abs() < 1e-12);
        assert!(pt.ddr.abs() < 1e-12);
    }

    #[test]
    fn matches_rk4_oracle() {
        // Numeric ODE oracle at dt = 1e-3; closed form must agree to 1e-8.
        let p = ReferenceParams::new(0.1, 25.0, 80.0, 5.0);
        let traj = make_reference(p).unwrap();
        let grid = integrate_ode(&p, 10.0, 1e-3);
        let (t, r_num, dr_num) = *grid.last().unwrap();
        assert!((t - 10.0).abs() < 1e-9);
        let pt = traj.eval(10.0).unwrap();
        assert!((pt.r - r_num).abs() < 1e-8, "r: {} vs {}", pt.r, r_num);
        assert!((pt.dr - dr_num).abs() < 1e-8);
    }

    #[test]
    fn margin_variant_shifts_target() {
        let p = ReferenceParams::new(0.5, 25.0, 40.0, 0.0);
        let traj = ReferenceTrajectory::with_margin(p, 2.0).unwrap();
        assert_eq!(traj.params().d, 23.0);
        // Initial conditions are still matched exactly.
        assert_eq!(traj.eval(0.0).unwrap().r, 40.0);
        let far = traj.eval(100.0).unwrap();
        assert!((far.r - 23.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_reference(ReferenceParams::new(0.0, 25.0, 30.0, 0.0)).is_err());
        assert!(make_reference(ReferenceParams::new(-1.0, 25.0, 30.0, 0.0)).is_err());
        assert!(make_reference(ReferenceParams::new(f64::NAN, 25.0, 30.0, 0.0)).is_err());
        let traj = make_reference(ReferenceParams::new(1.0, 0.0, 1.0, 0.0)).unwrap();
        assert!(traj.eval(-0.1).is_err());
    }

    #[test]
    fn monotone_after_tail_start() {
        for (c_r, d, x1_0, x2_0) in [
            (0.1, 25.0, 80.0, 5.0),
            (0.1, 25.0, 10.0, -8.0),
            (1.0, 0.0, 1.0, 0.0),
            (0.5, -3.0, -10.0, 12.0),
        ] {
            let traj = make_reference(ReferenceParams::new(c_r, d, x1_0, x2_0)).unwrap();
            let t0 = traj.monotone_tail_start() + 1e-9;
            let span = 50.0 / c_r;
            let mut prev = f64::INFINITY;
            for k in 0..=200 {
                let t = t0 + span * k as f64 / 200.0;
                let gap = (traj.eval(t).unwrap().r - d).abs();
                assert!(
                    gap <= prev + 1e-12 * prev.max(1.0),
                    "|r-d| grew at t={t}: {gap} > {prev}"
                );
                prev = gap;
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn ode_residual_and_envelope(
            c_r in 0.01f64..10.0,
            d in -50.0f64..50.0,
            gap in -60.0f64..60.0,
            x2_0 in -5.0f64..5.0,
            u in 0.0f64..1.0,
        ) {
            let p = ReferenceParams::new(c_r, d, d + gap, x2_0);
            let traj = make_reference(p).unwrap();
            let t = u * 100.0 / c_r;
            let pt = traj.eval(t).unwrap();

            // ODE residual stays at machine precision.
            let res = pt.ddr + 2.0 * c_r * pt.dr + c_r * c_r * (pt.r - d);
            proptest::prop_assert!(res.abs() <= 1e-9 * (pt.r - d).abs().max(1.0));

            // Exponential envelope |r - d| <= (|A| + |B| t) e^(-c_r t).
            let envelope = (traj.coeff_a().abs() + traj.coeff_b().abs() * t)
                * (-c_r * t).exp();
            // Absolute slack covers the representation noise of d + tiny - d.
            let slack = 1e-14 * d.abs().max(1.0);
            proptest::prop_assert!((pt.r - d).abs() <= envelope * (1.0 + 1e-12) + slack);
        }
    }
}
