//! Closed-loop surrogate of the cost channel, with theory checkers.
//!
//! The surrogate treats the population cost return as a relative-degree-2
//! channel `ẋ1 = x2, ẋ2 = f(t) - λ(t)` (negative feedback: raising the
//! multiplier pushes the cost down), where `f` lumps every unmodeled effect.
//! The multiplier is piecewise constant: it changes only at controller
//! update instants, `dt_update` apart, and is held between them.
//!
//! For the continuous ADRC law the tracking error obeys
//! `ë + k_ad·ė + k_ap·e = -e_f`, a stable second-order filter driven by the
//! observer's estimation error, which yields:
//!
//! - an ISS-type tube: `limsup |e| ≤ ‖h‖_L1·L_f/ω_o` ([`iss_tube_check`]),
//!   with `‖h‖_L1 = 1/k_ap` in the non-oscillatory case `k_ad² ≥ 4·k_ap`;
//! - a time-average violation bound with the same radius
//!   ([`avg_violation_check`]);
//! - eventual strict feasibility when the reference targets `d - ε` with
//!   `ε` above the tube radius (the first violation-free suffix reported by
//!   [`SimTrace::first_clean_suffix_start`]);
//! - a computable envelope for the disturbance rate `L_f` in terms of the
//!   trust-region radius, batch size, and update interval ([`lf_envelope`]).
//!
//! Saturation of the continuous law is not modeled: the raw law value is
//! applied so the error equation above holds identically. The discrete
//! controller modes project as usual.
//!
//! Every simulated step audits the disturbance against its declared class
//! bounds, so theory checks can only run on in-class disturbances.

use std::io::{self, Write};

use crate::controller::{
    update_lambda, ControllerConfig, ControllerMode, ControllerState, GainSet, GainSpec,
};
use crate::error::{ensure_finite, Error, Result};
use crate::observer::{xi_dot, FeedbackSign, ObserverConfig};
use crate::ode::rk4_step;
use crate::reference::{ReferenceParams, ReferenceTrajectory};

/// Instantaneous state of the surrogate cost channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    /// Cumulative cost level.
    pub x1: f64,
    /// Cost rate.
    pub x2: f64,
    /// Time.
    pub t: f64,
}

impl PlantState {
    pub fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2, t: 0.0 }
    }
}

/// Declared class bounds of a disturbance: sensitivities to `x1`/`x2`, the
/// magnitude/rate bound of the pure time signal, and the rate bound on the
/// lumped disturbance itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeclaredBounds {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l_f: f64,
}

/// Shape of the lumped disturbance `f(x1, x2, t) = h(x1, x2) + w(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisturbanceKind {
    /// `w(t) = level`.
    Constant { level: f64 },
    /// `w(t) = offset + amplitude·sin(freq·t + phase)`.
    Sinusoid {
        offset: f64,
        amplitude: f64,
        freq: f64,
        phase: f64,
    },
    /// `h = a1·x1 + a2·x2`.
    LinearState { a1: f64, a2: f64 },
    /// `h + w` with both parts above.
    Composite {
        a1: f64,
        a2: f64,
        offset: f64,
        amplitude: f64,
        freq: f64,
        phase: f64,
    },
}

/// A member of the disturbance class, carrying its declared bounds.
///
/// The constructors compute tight bounds where they are intrinsic (pure
/// time signals); state-dependent kinds take the trajectory-dependent `L_f`
/// as a declaration, which the simulator audits online.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceSpec {
    pub kind: DisturbanceKind,
    pub bounds: DeclaredBounds,
    /// Nominal limit of the time signal; carried by the class definition but
    /// unused by the checkers.
    pub asymptote_k: f64,
}

impl DisturbanceSpec {
    pub fn constant(level: f64) -> Self {
        Self {
            kind: DisturbanceKind::Constant { level },
            bounds: DeclaredBounds {
                l1: 0.0,
                l2: 0.0,
                l3: level.abs(),
                l_f: 0.0,
            },
            asymptote_k: level,
        }
    }

    pub fn sinusoid(offset: f64, amplitude: f64, freq: f64, phase: f64) -> Self {
        let a = amplitude.abs();
        let l3 = (offset.abs() + a).max(a * freq.abs());
        Self {
            kind: DisturbanceKind::Sinusoid {
                offset,
                amplitude,
                freq,
                phase,
            },
            bounds: DeclaredBounds {
                l1: 0.0,
                l2: 0.0,
                l3,
                l_f: a * freq.abs(),
            },
            asymptote_k: offset,
        }
    }

    pub fn linear_state(a1: f64, a2: f64, l_f: f64) -> Self {
        Self {
            kind: DisturbanceKind::LinearState { a1, a2 },
            bounds: DeclaredBounds {
                l1: a1.abs(),
                l2: a2.abs(),
                l3: 0.0,
                l_f,
            },
            asymptote_k: 0.0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn composite(
        a1: f64,
        a2: f64,
        offset: f64,
        amplitude: f64,
        freq: f64,
        phase: f64,
        l_f: f64,
    ) -> Self {
        let a = amplitude.abs();
        let l3 = (offset.abs() + a).max(a * freq.abs());
        Self {
            kind: DisturbanceKind::Composite {
                a1,
                a2,
                offset,
                amplitude,
                freq,
                phase,
            },
            bounds: DeclaredBounds {
                l1: a1.abs(),
                l2: a2.abs(),
                l3,
                l_f,
            },
            asymptote_k: offset,
        }
    }

    /// `f(x1, x2, t)`.
    pub fn value(&self, x1: f64, x2: f64, t: f64) -> f64 {
        match self.kind {
            DisturbanceKind::Constant { level } => level,
            DisturbanceKind::Sinusoid {
                offset,
                amplitude,
                freq,
                phase,
            } => offset + amplitude * (freq * t + phase).sin(),
            DisturbanceKind::LinearState { a1, a2 } => a1 * x1 + a2 * x2,
            DisturbanceKind::Composite {
                a1,
                a2,
                offset,
                amplitude,
                freq,
                phase,
            } => a1 * x1 + a2 * x2 + offset + amplitude * (freq * t + phase).sin(),
        }
    }

    /// Analytic partials `(∂h/∂x1, ∂h/∂x2)`.
    pub fn state_partials(&self) -> (f64, f64) {
        match self.kind {
            DisturbanceKind::Constant { .. } | DisturbanceKind::Sinusoid { .. } => (0.0, 0.0),
            DisturbanceKind::LinearState { a1, a2 } | DisturbanceKind::Composite { a1, a2, .. } => {
                (a1, a2)
            }
        }
    }

    /// `(w(t), ẇ(t))` of the pure time part.
    pub fn time_part(&self, t: f64) -> (f64, f64) {
        match self.kind {
            DisturbanceKind::Constant { level } => (level, 0.0),
            DisturbanceKind::LinearState { .. } => (0.0, 0.0),
            DisturbanceKind::Sinusoid {
                offset,
                amplitude,
                freq,
                phase,
            }
            | DisturbanceKind::Composite {
                offset,
                amplitude,
                freq,
                phase,
                ..
            } => (
                offset + amplitude * (freq * t + phase).sin(),
                amplitude * freq * (freq * t + phase).cos(),
            ),
        }
    }

    /// Total derivative `ḟ = ∂h/∂x1·ẋ1 + ∂h/∂x2·ẋ2 + ẇ` along a trajectory.
    pub fn f_dot(&self, x2: f64, x2_dot: f64, t: f64) -> f64 {
        let (dh1, dh2) = self.state_partials();
        dh1 * x2 + dh2 * x2_dot + self.time_part(t).1
    }

    /// Verifies the realized values against the declared bounds; a breach
    /// aborts the simulation (theory checks must only see in-class inputs).
    pub fn audit(&self, x2: f64, x2_dot: f64, t: f64) -> Result<()> {
        let slack = |b: f64| b + 1e-9 * b.max(1.0);
        let (dh1, dh2) = self.state_partials();
        let (w, w_dot) = self.time_part(t);
        let f_dot = self.f_dot(x2, x2_dot, t);
        let checks = [
            ("|dh/dx1|", dh1.abs(), self.bounds.l1),
            ("|dh/dx2|", dh2.abs(), self.bounds.l2),
            ("|w|", w.abs(), self.bounds.l3),
            ("|dw/dt|", w_dot.abs(), self.bounds.l3),
            ("|df/dt|", f_dot.abs(), self.bounds.l_f),
        ];
        for (name, realized, bound) in checks {
            if realized > slack(bound) {
                return Err(Error::parameter(format!(
                    "disturbance left its declared class at t = {t}: {name} = {realized} > {bound}"
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        for (name, v) in [("L1", b.l1), ("L2", b.l2), ("L3", b.l3), ("L_f", b.l_f)] {
            ensure_finite(name, v)?;
            if v < 0.0 {
                return Err(Error::parameter(format!(
                    "declared {name} must be >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Time series produced by [`simulate`], one row per integration step.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub dt: f64,
    pub dt_update: f64,
    pub t: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub lambda: Vec<f64>,
    pub f: Vec<f64>,
    pub f_hat: Vec<f64>,
    /// Tracking error `x1 - r`.
    pub e: Vec<f64>,
    /// Estimation error `f̂ - f`.
    pub e_f: Vec<f64>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.t.last().copied().unwrap_or(0.0)
    }

    /// Largest `|e(t)|` over `t >= tail_start`.
    pub fn tail_max_abs_e(&self, tail_start: f64) -> f64 {
        self.t
            .iter()
            .zip(&self.e)
            .filter(|(t, _)| **t >= tail_start)
            .map(|(_, e)| e.abs())
            .fold(0.0, f64::max)
    }

    /// Trapezoidal time average of `(x1 - d)₊` over `t >= tail_start`.
    pub fn tail_avg_violation(&self, d: f64, tail_start: f64) -> f64 {
        let mut area = 0.0;
        let mut span = 0.0;
        for i in 1..self.len() {
            if self.t[i - 1] < tail_start {
                continue;
            }
            let dt = self.t[i] - self.t[i - 1];
            let a = (self.x1[i - 1] - d).max(0.0);
            let b = (self.x1[i] - d).max(0.0);
            area += 0.5 * (a + b) * dt;
            span += dt;
        }
        if span > 0.0 {
            area / span
        } else {
            0.0
        }
    }

    /// Start of the first suffix with no violation (`x1 ≤ d` throughout),
    /// or `None` if the trace still violates at its end.
    pub fn first_clean_suffix_start(&self, d: f64) -> Option<f64> {
        let last_violation = self
            .t
            .iter()
            .zip(&self.x1)
            .rev()
            .find(|(_, x1)| **x1 > d)
            .map(|(t, _)| *t);
        match last_violation {
            None => self.t.first().copied(),
            Some(tv) => {
                if tv >= self.duration() {
                    None
                } else {
                    self.t.iter().copied().find(|&t| t > tv)
                }
            }
        }
    }

    /// Writes the trace as CSV with the given significant-digit count.
    pub fn write_csv(&self, w: &mut impl Write, sig_digits: usize) -> io::Result<()> {
        writeln!(w, "t,x1,x2,lambda,f,f_hat,e,e_f")?;
        let p = sig_digits.max(1) - 1;
        for i in 0..self.len() {
            writeln!(
                w,
                "{:.p$e},{:.p$e},{:.p$e},{:.p$e},{:.p$e},{:.p$e},{:.p$e},{:.p$e}",
                self.t[i],
                self.x1[i],
                self.x2[i],
                self.lambda[i],
                self.f[i],
                self.f_hat[i],
                self.e[i],
                self.e_f[i],
            )?;
        }
        Ok(())
    }
}

/// Runs the surrogate closed loop.
///
/// The controller mode in `ctrl` selects the law. `AdrcContinuous` applies
/// the raw tracking law `λ = k_ap·e + k_ad·ė + f̂ - r̈` with the live ESO;
/// the discrete modes sample `x1` every `ctrl.dt` and go through
/// [`update_lambda`]. In every case `λ` is held constant between update
/// instants (zero-order hold), and the observer runs alongside the plant.
///
/// Guards: `dt ≤ 0.1·ctrl.dt` and, when the observer drives the law,
/// `dt ≤ 0.01/ω_o`.
pub fn simulate(
    plant0: PlantState,
    dist: &DisturbanceSpec,
    ctrl: &ControllerConfig,
    ref_params: ReferenceParams,
    obs: &ObserverConfig,
    horizon: f64,
    dt: f64,
) -> Result<SimTrace> {
    ctrl.validate()?;
    obs.validate()?;
    dist.validate()?;
    ensure_finite("x1(0)", plant0.x1)?;
    ensure_finite("x2(0)", plant0.x2)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::parameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::parameter(format!("dt must be positive, got {dt}")));
    }
    let dt_update = ctrl.dt;
    let continuous = ctrl.mode == ControllerMode::AdrcContinuous;
    // The observer integrates alongside the plant in every mode, so both
    // parts of the step guard always apply.
    let dt_cap = (0.1 * dt_update).min(0.01 / obs.omega_o);
    if dt > dt_cap * (1.0 + 1e-12) {
        return Err(Error::parameter(format!(
            "dt = {dt} violates the step guard dt <= {dt_cap} (min of 0.1*dt_update and 0.01/omega_o)"
        )));
    }

    let traj = ReferenceTrajectory::new(ref_params)?;
    let update_every = (dt_update / dt).round().max(1.0) as usize;
    let n_steps = (horizon / dt).round() as usize;

    let gains: Option<GainSet> = match (&ctrl.gains, continuous) {
        (GainSpec::Adrc(g), true) => Some(*g),
        (_, true) => unreachable!("validated: continuous mode carries ADRC gains"),
        _ => None,
    };

    // Plant sign: the multiplier acts as negative feedback in the corrected
    // convention, or enters positively per the uncorrected channel.
    let input_sign = match obs.feedback_sign {
        FeedbackSign::NegativeFeedback => -1.0,
        FeedbackSign::PositiveInput => 1.0,
    };

    let mut y = [plant0.x1, plant0.x2, -obs.omega_o * plant0.x2]; // f_hat(0) = 0
    let mut lambda = ctrl.lambda_init;
    let mut ctrl_state = ControllerState::new(ctrl);

    let mut trace = SimTrace {
        dt,
        dt_update: update_every as f64 * dt,
        t: Vec::with_capacity(n_steps + 1),
        x1: Vec::with_capacity(n_steps + 1),
        x2: Vec::with_capacity(n_steps + 1),
        lambda: Vec::with_capacity(n_steps + 1),
        f: Vec::with_capacity(n_steps + 1),
        f_hat: Vec::with_capacity(n_steps + 1),
        e: Vec::with_capacity(n_steps + 1),
        e_f: Vec::with_capacity(n_steps + 1),
    };

    for k in 0..=n_steps {
        let t = k as f64 * dt;
        let rp = traj.eval(t)?;
        let f_hat = y[2] + obs.omega_o * y[1];

        if k % update_every == 0 {
            lambda = match gains {
                Some(g) => k_law(&g, y[0] - rp.r, y[1] - rp.dr, f_hat, rp.ddr),
                None => {
                    // Classical/PID track the (possibly margin-shifted)
                    // constant target; the discrete ADRC law follows the
                    // full trajectory.
                    let reference = match ctrl.mode {
                        ControllerMode::AdrcDiscrete => Some(rp),
                        _ => Some(crate::reference::RefPoint::constant(ref_params.d)),
                    };
                    let (next, lam) = update_lambda(&ctrl_state, ctrl, y[0], reference)?;
                    ctrl_state = next;
                    lam
                }
            };
        }

        let f_val = dist.value(y[0], y[1], t);
        let x2_dot = f_val + input_sign * lambda;
        dist.audit(y[1], x2_dot, t)?;

        trace.t.push(t);
        trace.x1.push(y[0]);
        trace.x2.push(y[1]);
        trace.lambda.push(lambda);
        trace.f.push(f_val);
        trace.f_hat.push(f_hat);
        trace.e.push(y[0] - rp.r);
        trace.e_f.push(f_hat - f_val);

        if k == n_steps {
            break;
        }
        let lam = lambda;
        y = rk4_step(t, &y, dt, |tt, s| {
            let f = dist.value(s[0], s[1], tt);
            [s[1], f + input_sign * lam, xi_dot(obs, s[2], s[1], lam)]
        });
        if !(y[0].is_finite() && y[1].is_finite() && y[2].is_finite()) {
            return Err(Error::Divergence {
                step: k + 1,
                detail: format!("state left the finite range near t = {}", t + dt),
            });
        }
    }
    Ok(trace)
}

/// Raw continuous tracking law (no projection; saturation analysis is out of
/// scope for the surrogate).
fn k_law(g: &GainSet, e: f64, e_dot: f64, f_hat: f64, ddr: f64) -> f64 {
    g.k_ap * e + g.k_ad * e_dot + f_hat - ddr
}

// ---------------------------------------------------------------------------
// Impulse-response L1 norm of H(s) = 1/(s^2 + k_ad s + k_ap)
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let combined = left + right;
    if depth == 0 || (combined - whole).abs() <= 15.0 * tol {
        combined + (combined - whole) / 15.0
    } else {
        adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let tol = rel_tol * whole.abs().max(1e-300);
    adaptive_simpson(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// `‖h‖_L1` for the second-order tracking filter.
///
/// Non-oscillatory case (`k_ad² ≥ 4·k_ap`): the impulse response is
/// nonnegative, so the norm equals `H(0) = 1/k_ap` exactly. Underdamped
/// case: quadrature of `|h(t)| = e^(-σt)·|sin(ω_d t)|/ω_d` over one
/// half-period; successive half-period integrals form an exact geometric
/// sequence with ratio `q = e^(-σπ/ω_d)`, so the tail sums in closed form.
pub fn impulse_l1_norm(k_ap: f64, k_ad: f64) -> Result<f64> {
    ensure_finite("k_ap", k_ap)?;
    ensure_finite("k_ad", k_ad)?;
    if k_ap <= 0.0 || k_ad <= 0.0 {
        return Err(Error::parameter(format!(
            "impulse_l1_norm needs a Hurwitz pair k_ap, k_ad > 0, got ({k_ap}, {k_ad})"
        )));
    }
    if k_ad * k_ad >= 4.0 * k_ap {
        return Ok(1.0 / k_ap);
    }
    let sigma = 0.5 * k_ad;
    let omega_d = (k_ap - sigma * sigma).sqrt();
    let half_period = std::f64::consts::PI / omega_d;
    let q = (-sigma * half_period).exp();
    let h = |t: f64| (-sigma * t).exp() * (omega_d * t).sin() / omega_d;
    let first = integrate(h, 0.0, half_period, 1e-10);
    Ok(first / (1.0 - q))
}

/// Report of [`iss_tube_check`].
#[derive(Debug, Clone, Copy)]
pub struct IssReport {
    /// Tube radius `‖h‖_L1·L_f/ω_o`.
    pub radius: f64,
    pub h_l1_norm: f64,
    /// `k_ad² ≥ 4·k_ap` (closed-form norm branch).
    pub non_oscillatory: bool,
    pub tail_start: f64,
    pub tail_max_e: f64,
    /// `tail_max_e ≤ 1.05·radius` (with a 1e-9 absolute floor).
    pub passed: bool,
}

/// Slack factor applied to the theoretical radii in the numeric checks.
pub const TUBE_SLACK: f64 = 1.05;

fn slow_pole_rate(g: &GainSet) -> f64 {
    let disc = g.k_ad * g.k_ad - 4.0 * g.k_ap;
    if disc >= 0.0 {
        0.5 * (g.k_ad - disc.sqrt())
    } else {
        0.5 * g.k_ad
    }
}

/// Checks the tail of `|e(t)|` against the ISS tube radius.
///
/// The tail starts at `10/min(ω_o, ρ)` where `ρ` is the slow pole of the
/// tracking filter; the trace must extend comfortably past that. Use
/// [`iss_tube_check_with_tail`] to push the window further out (e.g. for
/// `L_f = 0`, where the tail must decay below the absolute floor).
pub fn iss_tube_check(trace: &SimTrace, gains: &GainSet, l_f: f64) -> Result<IssReport> {
    let rho = slow_pole_rate(gains);
    let tail_start = 10.0 / gains.omega_o.min(rho);
    iss_tube_check_with_tail(trace, gains, l_f, tail_start)
}

/// [`iss_tube_check`] with an explicit tail window start.
pub fn iss_tube_check_with_tail(
    trace: &SimTrace,
    gains: &GainSet,
    l_f: f64,
    tail_start: f64,
) -> Result<IssReport> {
    gains.validate()?;
    ensure_finite("l_f", l_f)?;
    if l_f < 0.0 {
        return Err(Error::parameter(format!(
            "L_f must be nonnegative, got {l_f}"
        )));
    }
    if trace.duration() < tail_start * 1.1 {
        return Err(Error::parameter(format!(
            "trace of length {} is too short for transients to decay (needs > {})",
            trace.duration(),
            tail_start * 1.1
        )));
    }
    let h_l1_norm = impulse_l1_norm(gains.k_ap, gains.k_ad)?;
    let radius = h_l1_norm * l_f / gains.omega_o;
    let tail_max_e = trace.tail_max_abs_e(tail_start);
    Ok(IssReport {
        radius,
        h_l1_norm,
        non_oscillatory: gains.k_ad * gains.k_ad >= 4.0 * gains.k_ap,
        tail_start,
        tail_max_e,
        passed: tail_max_e <= TUBE_SLACK * radius + 1e-9,
    })
}

/// Report of [`avg_violation_check`].
#[derive(Debug, Clone, Copy)]
pub struct AvgViolationReport {
    /// Tail time-average of `(x1 - d)₊`.
    pub tail_avg: f64,
    pub radius: f64,
    pub tail_start: f64,
    pub passed: bool,
    /// Start of the first violation-free suffix, if one exists.
    pub first_clean_suffix: Option<f64>,
    /// Fraction of the trace duration covered by that suffix.
    pub clean_fraction: f64,
}

/// Compares the tail time-average of `(x1 - d)₊` against the tube radius
/// and locates the first violation-free suffix (for margin runs).
pub fn avg_violation_check(
    trace: &SimTrace,
    d: f64,
    radius: f64,
    tail_start: f64,
) -> Result<AvgViolationReport> {
    ensure_finite("d", d)?;
    ensure_finite("radius", radius)?;
    ensure_finite("tail_start", tail_start)?;
    if trace.is_empty() {
        return Err(Error::parameter("empty trace"));
    }
    let tail_avg = trace.tail_avg_violation(d, tail_start);
    let first_clean_suffix = trace.first_clean_suffix_start(d);
    let clean_fraction = match first_clean_suffix {
        Some(t0) if trace.duration() > 0.0 => (trace.duration() - t0) / trace.duration(),
        _ => 0.0,
    };
    Ok(AvgViolationReport {
        tail_avg,
        radius,
        tail_start,
        passed: tail_avg <= TUBE_SLACK * radius + 1e-9,
        first_clean_suffix,
        clean_fraction,
    })
}

// ---------------------------------------------------------------------------
// Disturbance-rate envelope from training hyperparameters
// ---------------------------------------------------------------------------

/// Hyperparameters entering the disturbance-rate envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryInputs {
    /// Trust-region radius δ.
    pub delta: f64,
    /// Trajectories per cost estimate.
    pub n: usize,
    /// Update interval Δt.
    pub dt_update: f64,
    /// Bound on the discounted cost return.
    pub b_c: f64,
    /// Discount factor in (0, 1).
    pub gamma: f64,
    /// Multiplier cap.
    pub lambda_max: f64,
    /// Horizon (number of updates covered by the bound).
    pub horizon_k: usize,
    /// Confidence level η in (0, 1).
    pub eta: f64,
}

impl TheoryInputs {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("delta", self.delta)?;
        ensure_finite("dt_update", self.dt_update)?;
        ensure_finite("b_c", self.b_c)?;
        ensure_finite("gamma", self.gamma)?;
        ensure_finite("lambda_max", self.lambda_max)?;
        ensure_finite("eta", self.eta)?;
        if self.delta < 0.0 {
            return Err(Error::parameter("delta must be >= 0"));
        }
        if self.n == 0 {
            return Err(Error::parameter("n must be >= 1"));
        }
        if self.dt_update <= 0.0 {
            return Err(Error::parameter("dt_update must be positive"));
        }
        if self.b_c <= 0.0 {
            return Err(Error::parameter("b_c must be positive"));
        }
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::parameter("gamma must lie in (0, 1)"));
        }
        if self.lambda_max < 0.0 {
            return Err(Error::parameter("lambda_max must be >= 0"));
        }
        if self.horizon_k == 0 {
            return Err(Error::parameter("horizon_k must be >= 1"));
        }
        if !(0.0 < self.eta && self.eta < 1.0) {
            return Err(Error::parameter("eta must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Output of [`lf_envelope`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LfEnvelope {
    /// Per-update population cost drift bound `D_TR = (2·B_c/(1-γ))·√(2δ)`.
    pub d_tr: f64,
    /// Estimation half-width `ε_N = B_c·√(log(2K/η)/(2N))`.
    pub eps_n: f64,
    /// High-probability bound on the proxy variation:
    /// `(4/Δt³)(D_TR + 2·ε_N) + 2·λ_max/Δt`.
    pub l_f_bound: f64,
}

/// Evaluates the disturbance-rate envelope exactly per its defining
/// formulas.
pub fn lf_envelope(inputs: &TheoryInputs) -> Result<LfEnvelope> {
    inputs.validate()?;
    let d_tr = 2.0 * inputs.b_c / (1.0 - inputs.gamma) * (2.0 * inputs.delta).sqrt();
    let eps_n = inputs.b_c
        * ((2.0 * inputs.horizon_k as f64 / inputs.eta).ln() / (2.0 * inputs.n as f64)).sqrt();
    let dt = inputs.dt_update;
    let l_f_bound = 4.0 / (dt * dt * dt) * (d_tr + 2.0 * eps_n) + 2.0 * inputs.lambda_max / dt;
    Ok(LfEnvelope {
        d_tr,
        eps_n,
        l_f_bound,
    })
}

/// Output of [`finite_difference_proxy`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProxySeries {
    /// `f̂_k = (Ĵ_{k+1} - 2Ĵ_k + Ĵ_{k-1})/Δt² + λ_k` for interior `k`.
    pub values: Vec<f64>,
    /// `max_k |f̂_{k+1} - f̂_k| / Δt`.
    pub max_variation: f64,
}

/// Empirical second-difference proxy of the lumped disturbance, for
/// comparison against [`lf_envelope`].
pub fn finite_difference_proxy(
    costs: &[f64],
    lambdas: &[f64],
    dt_update: f64,
) -> Result<ProxySeries> {
    if costs.len() < 3 {
        return Err(Error::parameter(format!(
            "proxy needs at least 3 cost samples, got {}",
            costs.len()
        )));
    }
    if lambdas.len() != costs.len() {
        return Err(Error::parameter(format!(
            "lambda series length {} does not match cost series length {}",
            lambdas.len(),
            costs.len()
        )));
    }
    if !(dt_update > 0.0 && dt_update.is_finite()) {
        return Err(Error::parameter(format!(
            "dt_update must be positive, got {dt_update}"
        )));
    }
    for (i, &c) in costs.iter().enumerate() {
        ensure_finite(&format!("cost[{i}]"), c)?;
    }
    let dt2 = dt_update * dt_update;
    let values: Vec<f64> = (1..costs.len() - 1)
        .map(|k| (costs[k + 1] - 2.0 * costs[k] + costs[k - 1]) / dt2 + lambdas[k])
        .collect();
    let max_variation = values
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / dt_update)
        .fold(0.0, f64::max);
    Ok(ProxySeries {
        values,
        max_variation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::ControllerConfig;
    use crate::observer::ObserverConfig;
    use crate::reference::ReferenceParams;

    fn continuous_cfg(gains: GainSet, dt_update: f64) -> ControllerConfig {
        let mut cfg = ControllerConfig::adrc(gains).raw();
        cfg.mode = ControllerMode::AdrcContinuous;
        cfg.dt = dt_update;
        cfg
    }

    #[test]
    fn equilibrium_stays_put() {
        let gains = GainSet::new(0.04, 0.4, 10.0);
        let ctrl = continuous_cfg(gains, 0.05);
        let obs = ObserverConfig::new(10.0);
        let trace = simulate(
            PlantState::new(25.0, 0.0),
            &DisturbanceSpec::constant(0.0),
            &ctrl,
            ReferenceParams::new(0.1, 25.0, 25.0, 0.0),
            &obs,
            20.0,
            1e-3,
        )
        .unwrap();
        for (&x1, &lam) in trace.x1.iter().zip(&trace.lambda) {
            assert!((x1 - 25.0).abs() < 1e-12);
            assert!(lam.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_disturbance_converges_to_threshold() {
        let gains = GainSet::new(0.04, 0.4, 10.0);
        let ctrl = continuous_cfg(gains, 0.02);
        let obs = ObserverConfig::new(10.0);
        let trace = simulate(
            PlantState::new(30.0, 0.0),
            &DisturbanceSpec::constant(0.8),
            &ctrl,
            ReferenceParams::new(0.1, 25.0, 30.0, 0.0),
            &obs,
            250.0,
            1e-3,
        )
        .unwrap();
        let n = trace.len();
        assert!(
            (trace.x1[n - 1] - 25.0).abs() < 1e-3,
            "x1 end {}",
            trace.x1[n - 1]
        );
        assert!(trace.x2[n - 1].abs() < 1e-3);
        // Steady multiplier cancels the disturbance.
        assert!((trace.lambda[n - 1] - 0.8).abs() < 1e-3);
    }

    #[test]
    fn error_equation_holds_at_update_instants() {
        let gains = GainSet::new(0.1, 0.5, 8.0);
        let ctrl = continuous_cfg(gains, 0.05);
        let obs = ObserverConfig::new(8.0);
        let p = ReferenceParams::new(0.2, 25.0, 32.0, 0.0);
        let traj = crate::reference::ReferenceTrajectory::new(p).unwrap();
        let trace = simulate(
            PlantState::new(32.0, 0.0),
            &DisturbanceSpec::sinusoid(0.5, 0.3, 0.7, 0.2),
            &ctrl,
            p,
            &obs,
            60.0,
            1e-3,
        )
        .unwrap();
        let every = (trace.dt_update / trace.dt).round() as usize;
        for (i, &t) in trace.t.iter().enumerate().step_by(every) {
            let rp = traj.eval(t).unwrap();
            let e_dot = trace.x2[i] - rp.dr;
            let e_ddot = trace.f[i] - trace.lambda[i] - rp.ddr;
            let residual = e_ddot + gains.k_ad * e_dot + gains.k_ap * trace.e[i] + trace.e_f[i];
            assert!(residual.abs() < 1e-10, "t={t}: residual {residual}");
        }
    }

    #[test]
    fn adrc_beats_classical_on_overshoot() {
        let d = 25.0;
        let dist = DisturbanceSpec::sinusoid(0.0, 1.0, 0.2, 0.0);
        let p = ReferenceParams::new(0.1, d, d, 0.0);

        let mut classical = ControllerConfig::classical(0.035).raw();
        classical.cost_limit = d;
        classical.dt = 0.5;
        let obs = ObserverConfig::new(10.0);
        let trace_cl = simulate(
            PlantState::new(d, 0.0),
            &dist,
            &classical,
            p,
            &obs,
            100.0,
            1e-3,
        )
        .unwrap();

        let adrc = continuous_cfg(GainSet::new(0.1, 0.5, 10.0), 0.05);
        let trace_ad =
            simulate(PlantState::new(d, 0.0), &dist, &adrc, p, &obs, 100.0, 1e-3).unwrap();

        let peak = |tr: &SimTrace| tr.x1.iter().map(|x| (x - d).max(0.0)).fold(0.0, f64::max);
        let (p_cl, p_ad) = (peak(&trace_cl), peak(&trace_ad));
        assert!(p_ad < p_cl, "ADRC peak {p_ad} vs classical peak {p_cl}");
    }

    #[test]
    fn l1_norm_closed_form_branch() {
        // Critically damped example: radius (1/0.04)(0.1/10) = 0.25.
        assert_eq!(impulse_l1_norm(0.04, 0.4).unwrap(), 25.0);
        let gains = GainSet::new(0.04, 0.4, 10.0);
        let h = impulse_l1_norm(gains.k_ap, gains.k_ad).unwrap();
        assert_eq!(h * 0.1 / gains.omega_o, 0.25);
    }

    #[test]
    fn l1_norm_quadrature_matches_geometric_closed_form() {
        // For the damped sinusoid the half-period integrals are geometric:
        // ||h||_1 = (1/k_ap) (1+q)/(1-q), an independent closed form.
        for (k_ap, k_ad) in [(1.0, 0.5), (0.1, 0.01), (2.0, 1.0)] {
            let sigma: f64 = 0.5 * k_ad;
            let omega_d = (k_ap - sigma * sigma as f64).sqrt();
            let q = (-sigma * std::f64::consts::PI / omega_d).exp();
            let expected = (1.0 + q) / ((1.0 - q) * k_ap);
            let got = impulse_l1_norm(k_ap, k_ad).unwrap();
            assert!(
                (got - expected).abs() <= 1e-7 * expected,
                "({k_ap},{k_ad}): {got} vs {expected}"
            );
        }
    }

    #[test]
    fn iss_tube_zero_rate_disturbance() {
        // Constant disturbance: L_f = 0, radius 0, and the tail of |e| must
        // decay to nothing once the transients are given room.
        let gains = GainSet::new(0.04, 0.4, 10.0);
        let ctrl = continuous_cfg(gains, 0.02);
        let obs = ObserverConfig::new(10.0);
        let trace = simulate(
            PlantState::new(27.0, 0.0),
            &DisturbanceSpec::constant(0.6),
            &ctrl,
            ReferenceParams::new(0.1, 25.0, 27.0, 0.0),
            &obs,
            400.0,
            1e-3,
        )
        .unwrap();
        let report = iss_tube_check_with_tail(&trace, &gains, 0.0, 300.0).unwrap();
        assert_eq!(report.radius, 0.0);
        assert!(report.passed, "tail max {}", report.tail_max_e);
    }

    #[test]
    fn iss_tube_sinusoid_within_radius() {
        let gains = GainSet::new(0.04, 0.4, 10.0);
        let ctrl = continuous_cfg(gains, 0.02);
        let obs = ObserverConfig::new(10.0);
        let dist = DisturbanceSpec::sinusoid(1.0, 0.5, 0.8, 0.3);
        let trace = simulate(
            PlantState::new(28.0, 0.0),
            &dist,
            &ctrl,
            ReferenceParams::new(0.1, 25.0, 28.0, 0.0),
            &obs,
            300.0,
            1e-3,
        )
        .unwrap();
        let report = iss_tube_check(&trace, &gains, dist.bounds.l_f).unwrap();
        assert!(
            report.passed,
            "tail {} vs radius {}",
            report.tail_max_e, report.radius
        );
        assert!(report.tail_max_e > 0.0);

        let avg = avg_violation_check(&trace, 25.0, report.radius, 200.0).unwrap();
        assert!(avg.passed, "avg {} vs radius {}", avg.tail_avg, avg.radius);
    }

    #[test]
    fn margin_gives_clean_suffix() {
        let gains = GainSet::new(0.04, 0.4, 10.0);
        let ctrl = continuous_cfg(gains, 0.02);
        let obs = ObserverConfig::new(10.0);
        let dist = DisturbanceSpec::sinusoid(1.0, 0.5, 0.8, 0.0);
        let radius =
            impulse_l1_norm(gains.k_ap, gains.k_ad).unwrap() * dist.bounds.l_f / gains.omega_o;
        let eps = 2.0 * radius;
        let d = 25.0;
        let p = ReferenceParams::new(0.1, d - eps, 30.0, 0.0);
        let trace = simulate(
            PlantState::new(30.0, 0.0),
            &dist,
            &ctrl,
            p,
            &obs,
            300.0,
            1e-3,
        )
        .unwrap();
        let report = avg_violation_check(&trace, d, radius, 200.0).unwrap();
        let t0 = report
            .first_clean_suffix
            .expect("margin run should become feasible");
        assert!(
            report.clean_fraction >= 0.5,
            "clean suffix starts at {t0}, fraction {}",
            report.clean_fraction
        );
        // No violation in the tail window: the average is exactly zero.
        assert_eq!(report.tail_avg, 0.0);
    }

    #[test]
    fn grid_refinement_converges() {
        let gains = GainSet::new(0.04, 0.4, 10.0);
        let ctrl = continuous_cfg(gains, 0.02);
        let obs = ObserverConfig::new(10.0);
        let dist = DisturbanceSpec::sinusoid(1.0, 0.5, 0.8, 0.0);
        let p = ReferenceParams::new(0.1, 25.0, 28.0, 0.0);
        let run = |dt: f64| {
            simulate(PlantState::new(28.0, 0.0), &dist, &ctrl, p, &obs, 260.0, dt)
                .unwrap()
                .tail_max_abs_e(200.0)
        };
        let coarse = run(1e-3);
        let fine = run(5e-4);
        assert!(
            (coarse - fine).abs() <= 0.01 * fine.abs().max(1e-12),
            "{coarse} vs {fine}"
        );
    }

    #[test]
    fn audit_rejects_underdeclared_disturbance() {
        let gains = GainSet::new(0.04, 0.4, 10.0);
        let ctrl = continuous_cfg(gains, 0.02);
        let obs = ObserverConfig::new(10.0);
        let mut dist = DisturbanceSpec::sinusoid(0.0, 1.0, 2.0, 0.0);
        dist.bounds.l_f = 0.5; // true rate bound is 2.0
        let p = ReferenceParams::new(0.1, 25.0, 25.0, 0.0);
        let err = simulate(
            PlantState::new(25.0, 0.0),
            &dist,
            &ctrl,
            p,
            &obs,
            10.0,
            1e-3,
        );
        assert!(err.is_err());
    }

    #[test]
    fn step_guard_enforced() {
        let gains = GainSet::new(0.04, 0.4, 10.0);
        let ctrl = continuous_cfg(gains, 0.02);
        let obs = ObserverConfig::new(10.0);
        let p = ReferenceParams::new(0.1, 25.0, 25.0, 0.0);
        // 0.01/omega_o = 1e-3; dt = 5e-3 violates the guard.
        let err = simulate(
            PlantState::new(25.0, 0.0),
            &DisturbanceSpec::constant(0.0),
            &ctrl,
            p,
            &obs,
            10.0,
            5e-3,
        );
        assert!(err.is_err());
    }

    #[test]
    fn positive_input_channel_is_available_and_unstable() {
        // The uncorrected sign convention feeds the error back positively;
        // the simulator either diverges or the state grows without bound.
        let gains = GainSet::new(0.1, 0.5, 5.0);
        let ctrl = continuous_cfg(gains, 0.02);
        let obs = ObserverConfig::with_sign(5.0, FeedbackSign::PositiveInput);
        let p = ReferenceParams::new(0.1, 25.0, 26.0, 0.0);
        let result = simulate(
            PlantState::new(26.0, 0.0),
            &DisturbanceSpec::constant(0.5),
            &ctrl,
            p,
            &obs,
            40.0,
            1e-3,
        );
        match result {
            Err(Error::Divergence { .. }) => {}
            Ok(trace) => {
                let max_e = trace.e.iter().fold(0.0f64, |m, e| m.max(e.abs()));
                assert!(
                    max_e > 1e3,
                    "positive-input loop unexpectedly bounded: {max_e}"
                );
            }
            Err(other) => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn envelope_formulas() {
        let inputs = TheoryInputs {
            delta: 0.02,
            n: 200,
            dt_update: 1.0,
            b_c: 100.0,
            gamma: 0.99,
            lambda_max: 100.0,
            horizon_k: 100,
            eta: 0.05,
        };
        let env = lf_envelope(&inputs).unwrap();
        assert!((env.d_tr - 4000.0).abs() < 1e-9, "{}", env.d_tr);

        let inputs = TheoryInputs { b_c: 1.0, ..inputs };
        let env = lf_envelope(&inputs).unwrap();
        assert!(
            (env.eps_n - 0.1439969586493238).abs() < 1e-12,
            "{}",
            env.eps_n
        );

        // All slack terms vanish: delta = 0, huge N, lambda_max = 0.
        let inputs = TheoryInputs {
            delta: 0.0,
            n: 1_000_000_000_000,
            lambda_max: 0.0,
            ..inputs
        };
        let env = lf_envelope(&inputs).unwrap();
        assert!(env.l_f_bound < 1e-4, "{}", env.l_f_bound);
    }

    #[test]
    fn envelope_validation() {
        let bad = TheoryInputs {
            delta: -0.1,
            n: 10,
            dt_update: 1.0,
            b_c: 1.0,
            gamma: 0.9,
            lambda_max: 1.0,
            horizon_k: 10,
            eta: 0.05,
        };
        assert!(lf_envelope(&bad).is_err());
        assert!(lf_envelope(&TheoryInputs {
            gamma: 1.0,
            delta: 0.1,
            ..bad
        })
        .is_err());
    }

    #[test]
    fn proxy_constant_series() {
        let costs = vec![5.0; 10];
        let lambdas = vec![2.0; 10];
        let p = finite_difference_proxy(&costs, &lambdas, 1.0).unwrap();
        assert!(p.values.iter().all(|&v| (v - 2.0).abs() < 1e-15));
        assert_eq!(p.max_variation, 0.0);
    }

    #[test]
    fn proxy_quadratic_series() {
        // J_k = a k^2 has exact second difference 2a.
        let a = 0.5;
        let costs: Vec<f64> = (0..20).map(|k| a * (k * k) as f64).collect();
        let lambdas = vec![0.0; 20];
        let p = finite_difference_proxy(&costs, &lambdas, 1.0).unwrap();
        for v in &p.values {
            assert!((v - 2.0 * a).abs() < 1e-12);
        }
        assert!(p.max_variation < 1e-12);
    }

    #[test]
    fn proxy_validation() {
        assert!(finite_difference_proxy(&[1.0, 2.0], &[0.0, 0.0], 1.0).is_err());
        assert!(finite_difference_proxy(&[1.0, 2.0, 3.0], &[0.0; 2], 1.0).is_err());
        assert!(finite_difference_proxy(&[1.0, 2.0, 3.0], &[0.0; 3], 0.0).is_err());
    }

    #[test]
    fn csv_roundtrip_shape() {
        let gains = GainSet::new(0.04, 0.4, 10.0);
        let ctrl = continuous_cfg(gains, 0.02);
        let obs = ObserverConfig::new(10.0);
        let p = ReferenceParams::new(0.1, 25.0, 26.0, 0.0);
        let trace = simulate(
            PlantState::new(26.0, 0.0),
            &DisturbanceSpec::constant(0.2),
            &ctrl,
            p,
            &obs,
            1.0,
            1e-3,
        )
        .unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, 17).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,x2,lambda,f,f_hat,e,e_f");
        assert_eq!(lines.len(), trace.len() + 1);
        assert_eq!(lines[1].split(',').count(), 8);
    }
}
