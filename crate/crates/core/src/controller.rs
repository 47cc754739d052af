//! Dual-variable update laws.
//!
//! Four multiplier controllers share one state machine and one entry point,
//! [`update_lambda`]:
//!
//! - `ClassicalLag`: pure integral ascent `λ ← (λ + α·Δ·dt)₊`.
//! - `PidLag`: discrete PID on the violation signal with clamped integral
//!   and derivative channels.
//! - `AdrcDiscrete`: the observer-augmented law in clamped discrete form.
//!   Its P/I/D coefficients derive from the gain triple
//!   `(k_ap, k_ad, ω_o)` as `K_P = k_ap + ω_o·k_ad`, `K_I = ω_o·k_ap`,
//!   `K_D = k_ad + ω_o`, and the reference feedforward `-r̈` is applied.
//! - `AdrcContinuous`: same coefficients with raw (unclamped) channels,
//!   discretizing the continuous law directly.
//!
//! With a constant reference and mapped gains, `AdrcDiscrete` reproduces
//! `PidLag` step for step; with the P/D channels inactive the chain reduces
//! further to `ClassicalLag`. Updates are pure: `(state, cost) -> state`,
//! so controllers can run concurrently in parameter sweeps.
//!
//! The derivative coefficient default is `K_D = k_ad + ω_o`, which is the
//! value consistent with the continuous law and the observer substitution.
//! A circulating variant of the discrete update uses `ω_o + k_ap` there
//! instead; `kd_from_kap` switches to it for comparison runs.

use std::collections::VecDeque;

use crate::error::{ensure_finite, Error, Result};
use crate::reference::RefPoint;

/// ADRC gain triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSet {
    /// Proportional-like gain, >= 0.
    pub k_ap: f64,
    /// Derivative-like gain, >= 0.
    pub k_ad: f64,
    /// Observer gain, > 0.
    pub omega_o: f64,
}

impl GainSet {
    pub fn new(k_ap: f64, k_ad: f64, omega_o: f64) -> Self {
        Self {
            k_ap,
            k_ad,
            omega_o,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("k_ap", self.k_ap)?;
        ensure_finite("k_ad", self.k_ad)?;
        ensure_finite("omega_o", self.omega_o)?;
        if self.k_ap < 0.0 || self.k_ad < 0.0 {
            return Err(Error::parameter(format!(
                "gains must be nonnegative, got k_ap = {}, k_ad = {}",
                self.k_ap, self.k_ad
            )));
        }
        if self.omega_o <= 0.0 {
            return Err(Error::parameter(format!(
                "omega_o must be positive, got {}",
                self.omega_o
            )));
        }
        Ok(())
    }
}

impl Default for GainSet {
    /// Default gain pair (k_ap = 0.1, k_ad = 0.01) with a nominal observer
    /// bandwidth of 10.
    fn default() -> Self {
        Self {
            k_ap: 0.1,
            k_ad: 0.01,
            omega_o: 10.0,
        }
    }
}

/// PID gain triple (also hosts the continuous I/P/D coefficients α, β, γ
/// as `k_i = α`, `k_p = β`, `k_d = γ` under unit-step discretization).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
}

impl PidGains {
    pub fn new(k_p: f64, k_i: f64, k_d: f64) -> Self {
        Self { k_p, k_i, k_d }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k_p", self.k_p), ("k_i", self.k_i), ("k_d", self.k_d)] {
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

/// Which gain parametrization a controller carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainSpec {
    Adrc(GainSet),
    Pid(PidGains),
}

/// Multiplier update law selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerMode {
    ClassicalLag,
    PidLag,
    AdrcContinuous,
    AdrcDiscrete,
}

/// Full controller configuration. `Default` gives the library's standard
/// parameter set: k_p/k_ap = 0.1, k_d/k_ad = 0.01 (classical learning rate
/// 0.035), delay 10, EMA α = 0.95 on both channels, sum normalization on,
/// derivative normalization off, cost limit 25.0, max penalty 100.0,
/// initial multiplier 0.001.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub mode: ControllerMode,
    pub gains: GainSpec,
    /// Cap applied after projection. Use `f64::INFINITY` for no cap.
    pub lambda_max: f64,
    pub lambda_init: f64,
    /// Cost threshold d; also the constant reference for the classical and
    /// PID laws when no trajectory is supplied.
    pub cost_limit: f64,
    /// Number of initial cost observations absorbed before the first
    /// multiplier update.
    pub delay: usize,
    /// EMA coefficient on the proportional channel (weight of the OLD value;
    /// 0 disables smoothing).
    pub ema_alpha_p: f64,
    /// EMA coefficient on the derivative channel.
    pub ema_alpha_d: f64,
    /// Divide the integral channel by (1 + accumulated |Δ|).
    pub sum_normalization: bool,
    /// Divide the derivative channel by (1 + accumulated |∂|).
    pub derivative_normalization: bool,
    /// Use the variant derivative coefficient `K_D = ω_o + k_ap` instead
    /// of the derivation-consistent `k_ad + ω_o`.
    pub kd_from_kap: bool,
    /// Time step between cost observations (iteration units).
    pub dt: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            mode: ControllerMode::AdrcDiscrete,
            gains: GainSpec::Adrc(GainSet::default()),
            lambda_max: 100.0,
            lambda_init: 0.001,
            cost_limit: 25.0,
            delay: 10,
            ema_alpha_p: 0.95,
            ema_alpha_d: 0.95,
            sum_normalization: true,
            derivative_normalization: false,
            kd_from_kap: false,
            dt: 1.0,
        }
    }
}

impl ControllerConfig {
    /// Classical Lagrangian with learning rate `alpha` (default 0.035).
    pub fn classical(alpha: f64) -> Self {
        Self {
            mode: ControllerMode::ClassicalLag,
            gains: GainSpec::Pid(PidGains::new(0.0, alpha, 0.0)),
            ..Self::default()
        }
    }

    /// PID Lagrangian with the given gains.
    pub fn pid(gains: PidGains) -> Self {
        Self {
            mode: ControllerMode::PidLag,
            gains: GainSpec::Pid(gains),
            ..Self::default()
        }
    }

    /// ADRC law (clamped discrete form) with the given gains.
    pub fn adrc(gains: GainSet) -> Self {
        Self {
            mode: ControllerMode::AdrcDiscrete,
            gains: GainSpec::Adrc(gains),
            ..Self::default()
        }
    }

    /// Strips every practical smoothing device: no EMA, no normalization,
    /// no warmup delay, no cap. This is the configuration under which the
    /// algebraic reductions (ADRC -> PID -> classical) hold exactly.
    pub fn raw(mut self) -> Self {
        self.ema_alpha_p = 0.0;
        self.ema_alpha_d = 0.0;
        self.sum_normalization = false;
        self.derivative_normalization = false;
        self.delay = 0;
        self.lambda_max = f64::INFINITY;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match &self.gains {
            GainSpec::Adrc(g) => g.validate()?,
            GainSpec::Pid(p) => p.validate()?,
        }
        ensure_finite("lambda_init", self.lambda_init)?;
        ensure_finite("cost_limit", self.cost_limit)?;
        ensure_finite("dt", self.dt)?;
        if self.lambda_max < 0.0 || self.lambda_max.is_nan() {
            return Err(Error::parameter(format!(
                "lambda_max must be nonnegative, got {}",
                self.lambda_max
            )));
        }
        if self.lambda_init < 0.0 {
            return Err(Error::parameter(format!(
                "lambda_init must be nonnegative, got {}",
                self.lambda_init
            )));
        }
        if self.lambda_init > self.lambda_max {
            return Err(Error::parameter(format!(
                "lambda_init = {} exceeds lambda_max = {}",
                self.lambda_init, self.lambda_max
            )));
        }
        for (name, a) in [
            ("ema_alpha_p", self.ema_alpha_p),
            ("ema_alpha_d", self.ema_alpha_d),
        ] {
            if !(0.0..1.0).contains(&a) {
                return Err(Error::parameter(format!(
                    "{name} must be in [0, 1), got {a}"
                )));
            }
        }
        if self.dt <= 0.0 {
            return Err(Error::parameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        match (self.mode, &self.gains) {
            (ControllerMode::PidLag, GainSpec::Adrc(_)) => Err(Error::parameter(
                "PidLag mode requires PID gains (map ADRC gains explicitly first)",
            )),
            (ControllerMode::AdrcContinuous | ControllerMode::AdrcDiscrete, GainSpec::Pid(_)) => {
                Err(Error::parameter(
                    "ADRC modes require a GainSet (use solve_adrc_from_pid to convert)",
                ))
            }
            _ => Ok(()),
        }
    }

    /// Learning rate used in `ClassicalLag` mode: `k_i` for PID gains, or
    /// the reduction value `ω_o·k_ap` for ADRC gains.
    fn classical_alpha(&self) -> f64 {
        match &self.gains {
            GainSpec::Pid(p) => p.k_i,
            GainSpec::Adrc(g) => g.omega_o * g.k_ap,
        }
    }

    /// Effective (K_P, K_I, K_D) for the PID-form channel combination.
    fn channel_coefficients(&self) -> (f64, f64, f64) {
        match (&self.gains, self.mode) {
            (GainSpec::Pid(p), _) => (p.k_p, p.k_i, p.k_d),
            (GainSpec::Adrc(g), _) => {
                let k_d = if self.kd_from_kap {
                    g.omega_o + g.k_ap
                } else {
                    g.omega_o + g.k_ad
                };
                (g.k_ap + g.omega_o * g.k_ad, g.omega_o * g.k_ap, k_d)
            }
        }
    }
}

/// Mutable controller state. Plain value; updates are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Current multiplier, always in `[0, lambda_max]`.
    pub lambda: f64,
    /// Integral accumulator (clamped nonnegative in the discrete modes).
    pub integral_acc: f64,
    /// Last observed cost, if any.
    pub prev_cost: Option<f64>,
    /// EMA of the proportional channel.
    pub ema_p: f64,
    /// EMA of the derivative channel.
    pub ema_d: f64,
    /// Updates processed so far (including warmup observations).
    pub step_count: u64,
    /// Ring of the most recent costs, length `delay`.
    pub delay_buffer: VecDeque<f64>,
    /// Accumulated |Δ| for sum normalization.
    pub sum_mag: f64,
    /// Accumulated |∂| for derivative normalization.
    pub deriv_mag: f64,
}

impl ControllerState {
    pub fn new(cfg: &ControllerConfig) -> Self {
        Self {
            lambda: cfg.lambda_init,
            integral_acc: 0.0,
            prev_cost: None,
            ema_p: 0.0,
            ema_d: 0.0,
            step_count: 0,
            delay_buffer: VecDeque::with_capacity(cfg.delay),
            sum_mag: 0.0,
            deriv_mag: 0.0,
        }
    }
}

fn project_nonneg(x: f64) -> f64 {
    x.max(0.0)
}

/// One controller update.
///
/// `reference` carries `(r, ṙ, r̈)` at the current iteration time. `None`
/// falls back to the constant threshold `(d, 0, 0)` for the classical and
/// PID laws; `AdrcContinuous` requires an explicit trajectory.
///
/// Returns the advanced state and the new multiplier. The multiplier is
/// projected to `[0, lambda_max]` in every mode.
pub fn update_lambda(
    state: &ControllerState,
    cfg: &ControllerConfig,
    j_c: f64,
    reference: Option<RefPoint>,
) -> Result<(ControllerState, f64)> {
    cfg.validate()?;
    ensure_finite("J_C", j_c)?;
    let rp = match reference {
        Some(rp) => {
            ensure_finite("r", rp.r)?;
            ensure_finite("dr", rp.dr)?;
            ensure_finite("ddr", rp.ddr)?;
            rp
        }
        None => {
            if cfg.mode == ControllerMode::AdrcContinuous {
                return Err(Error::parameter(
                    "AdrcContinuous requires a reference trajectory",
                ));
            }
            RefPoint::constant(cfg.cost_limit)
        }
    };

    let mut next = state.clone();
    if cfg.delay > 0 {
        next.delay_buffer.push_back(j_c);
        while next.delay_buffer.len() > cfg.delay {
            next.delay_buffer.pop_front();
        }
    }

    // Warmup: absorb the observation, leave the multiplier untouched.
    if (next.step_count as usize) < cfg.delay {
        next.prev_cost = Some(j_c);
        next.step_count += 1;
        return Ok((next.clone(), next.lambda));
    }

    let lambda = match cfg.mode {
        ControllerMode::ClassicalLag => {
            let delta = j_c - rp.r;
            let alpha = cfg.classical_alpha();
            project_nonneg(next.lambda + alpha * delta * cfg.dt).min(cfg.lambda_max)
        }
        ControllerMode::PidLag | ControllerMode::AdrcDiscrete | ControllerMode::AdrcContinuous => {
            let (k_p, k_i, k_d) = cfg.channel_coefficients();
            let clamped = cfg.mode != ControllerMode::AdrcContinuous;

            let delta = j_c - rp.r;
            let deriv_raw = match next.prev_cost {
                Some(prev) => (j_c - prev) / cfg.dt - rp.dr,
                None => 0.0,
            };
            let deriv = if clamped {
                project_nonneg(deriv_raw)
            } else {
                deriv_raw
            };
            let integral = next.integral_acc + delta * cfg.dt;
            next.integral_acc = if clamped {
                project_nonneg(integral)
            } else {
                integral
            };

            next.ema_p = cfg.ema_alpha_p * next.ema_p + (1.0 - cfg.ema_alpha_p) * delta;
            next.ema_d = cfg.ema_alpha_d * next.ema_d + (1.0 - cfg.ema_alpha_d) * deriv;
            next.sum_mag += delta.abs();
            next.deriv_mag += deriv.abs();

            let i_term = if cfg.sum_normalization {
                next.integral_acc / (1.0 + next.sum_mag)
            } else {
                next.integral_acc
            };
            let d_term = if cfg.derivative_normalization {
                next.ema_d / (1.0 + next.deriv_mag)
            } else {
                next.ema_d
            };

            let raw = k_p * next.ema_p + k_i * i_term + k_d * d_term - rp.ddr;
            project_nonneg(raw).min(cfg.lambda_max)
        }
    };

    next.lambda = lambda;
    next.prev_cost = Some(j_c);
    next.step_count += 1;
    Ok((next, lambda))
}

/// Rescaled penalized objective `(J - λ·J_c) / (1 + λ)`.
pub fn rescaled_penalty(lambda: f64, j: f64, j_c: f64) -> Result<f64> {
    ensure_finite("lambda", lambda)?;
    ensure_finite("J", j)?;
    ensure_finite("J_c", j_c)?;
    if lambda < 0.0 {
        return Err(Error::parameter(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    Ok((j - lambda * j_c) / (1.0 + lambda))
}
