//! Flat key-value scenario configuration.
//!
//! The file format is one `section.key = value` assignment per line, with
//! `#` comments. Every key is schema-checked on load, so typos fail fast,
//! and single keys can be overridden from the command line with
//! `--set key=value`. The flat layout keeps sweep configs diff-friendly.
//!
//! Defaults give the library's standard parameter set: gains 0.1/0.01 (PID
//! integral gain 0.01, classical learning rate 0.035), delay 10, EMA 0.95,
//! sum normalization on, derivative normalization off, cost limit 25,
//! multiplier cap 100, initial multiplier 0.001.

use std::collections::BTreeMap;
use std::path::Path;

use adrc_lag::controller::{ControllerConfig, ControllerMode, GainSet, GainSpec, PidGains};
use adrc_lag::gains::{
    estimate_l1_l2_windowed, omega_star, DisturbanceBounds, QuarticCoefficients,
};
use adrc_lag::observer::{FeedbackSign, ObserverConfig};
use adrc_lag::reference::ReferenceParams;
use adrc_lag::surrogate::DisturbanceSpec;

/// Every key the configuration accepts, with its default value.
pub const SCHEMA: &[(&str, &str)] = &[
    ("controller.mode", "adrc_discrete"),
    ("controller.k_ap", "0.1"),
    ("controller.k_ad", "0.01"),
    ("controller.k_p", "0.1"),
    ("controller.k_i", ""), // 0.01 for pid_lag, 0.035 for classical_lag
    ("controller.k_d", "0.01"),
    ("controller.lambda_max", "100.0"),
    ("controller.lambda_init", "0.001"),
    ("controller.delay", "10"),
    ("controller.ema_alpha_p", "0.95"),
    ("controller.ema_alpha_d", "0.95"),
    ("controller.sum_normalization", "true"),
    ("controller.derivative_normalization", "false"),
    ("controller.kd_from_kap", "false"),
    ("reference.c_r", "0.1"),
    ("reference.d", "25.0"),
    ("reference.x1_0", "50.0"),
    ("reference.x2_0", "0.0"),
    ("reference.margin", "0.0"),
    ("reference.t_max", "50.0"),
    ("reference.samples", "501"),
    ("observer.omega_o", "10.0"), // a number, or "auto"
    ("observer.feedback_sign", "negative"),
    ("observer.omega_min", "10.0"),
    ("observer.safety_factor", "2.0"),
    ("bounds.l1", "0.0"),
    ("bounds.l2", "0.0"),
    ("bounds.l3", "0.0"),
    ("bounds.source", "declared"), // or "trace"
    ("bounds.trace_path", ""),
    ("bounds.trace_dt", "1.0"),
    ("bounds.window", "32"),
    ("manifold.enabled", "false"),
    ("manifold.n0", "0.0"),
    ("manifold.n1", "0.0"),
    ("manifold.n2", "0.0"),
    ("manifold.n3", "0.0"),
    ("manifold.n4", "0.0"),
    ("disturbance.kind", "sinusoid"),
    ("disturbance.level", "1.0"),
    ("disturbance.offset", "1.0"),
    ("disturbance.amplitude", "0.5"),
    ("disturbance.freq", "0.8"),
    ("disturbance.phase", "0.0"),
    ("disturbance.a1", "0.0"),
    ("disturbance.a2", "0.0"),
    ("disturbance.l_f", "0.0"),
    ("simulation.dt", "0.001"),
    ("simulation.dt_update", "0.02"),
    ("simulation.horizon", "300.0"),
    ("simulation.x1_0", ""), // defaults to reference.x1_0
    ("simulation.x2_0", "0.0"),
    ("freq.grid_lo", "0.001"),
    ("freq.grid_hi", "1000.0"),
    ("freq.grid_points", "200"),
    ("sweep.parameter", "c_r"),
    ("sweep.values", "0.05,0.1,0.15,0.2,0.25"),
    ("sweep.seeds", "3"),
    ("train.epochs", "120"),
    ("train.episodes", "16"),
    ("train.seed", "0"),
    ("train.step_size", "0.15"),
    ("train.dt_update", "1.0"),
    ("cmdp.path", ""),
    ("output.dir", ""),
    ("output.precision", "17"),
    ("output.timestamp", "true"),
];

/// Configuration error (maps to exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type CResult<T> = Result<T, ConfigError>;

/// Validated scenario configuration.
#[derive(Debug, Clone, Default)]
pub struct ScenarioConfig {
    values: BTreeMap<String, String>,
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> CResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_checked(&text)
    }

    pub fn from_str_checked(text: &str) -> CResult<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    idx + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// True when the key was set explicitly (file or override) rather than
    /// defaulted.
    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Sets one key, validating it against the schema.
    pub fn set(&mut self, key: &str, value: &str) -> CResult<()> {
        if !SCHEMA.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `--set key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> CResult<()> {
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                ConfigError(format!("override '{item}' is not of the form key=value"))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> &str {
        if let Some(v) = self.values.get(key) {
            return v;
        }
        SCHEMA
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, d)| *d)
            .unwrap_or_else(|| panic!("key '{key}' missing from schema"))
    }

    pub fn get_str(&self, key: &str) -> String {
        self.raw(key).to_string()
    }

    pub fn get_f64(&self, key: &str) -> CResult<f64> {
        let raw = self.raw(key);
        raw.parse::<f64>()
            .map_err(|_| ConfigError(format!("key '{key}': expected a number, got '{raw}'")))
    }

    pub fn get_usize(&self, key: &str) -> CResult<usize> {
        let raw = self.raw(key);
        raw.parse::<usize>()
            .map_err(|_| ConfigError(format!("key '{key}': expected an integer, got '{raw}'")))
    }

    pub fn get_u64(&self, key: &str) -> CResult<u64> {
        let raw = self.raw(key);
        raw.parse::<u64>()
            .map_err(|_| ConfigError(format!("key '{key}': expected an integer, got '{raw}'")))
    }

    pub fn get_bool(&self, key: &str) -> CResult<bool> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(ConfigError(format!(
                "key '{key}': expected a boolean, got '{other}'"
            ))),
        }
    }

    // -- typed sections ----------------------------------------------------

    pub fn controller_mode(&self) -> CResult<ControllerMode> {
        match self.raw("controller.mode") {
            "adrc_discrete" => Ok(ControllerMode::AdrcDiscrete),
            "adrc_continuous" => Ok(ControllerMode::AdrcContinuous),
            "pid_lag" => Ok(ControllerMode::PidLag),
            "classical_lag" => Ok(ControllerMode::ClassicalLag),
            other => Err(ConfigError(format!("unknown controller.mode '{other}'"))),
        }
    }

    pub fn feedback_sign(&self) -> CResult<FeedbackSign> {
        match self.raw("observer.feedback_sign") {
            "negative" => Ok(FeedbackSign::NegativeFeedback),
            "positive" => Ok(FeedbackSign::PositiveInput),
            other => Err(ConfigError(format!(
                "unknown observer.feedback_sign '{other}'"
            ))),
        }
    }

    pub fn disturbance_bounds(&self) -> CResult<DisturbanceBounds> {
        match self.raw("bounds.source") {
            "declared" => Ok(DisturbanceBounds::new(
                self.get_f64("bounds.l1")?,
                self.get_f64("bounds.l2")?,
                self.get_f64("bounds.l3")?,
            )),
            "trace" => {
                let path = self.get_str("bounds.trace_path");
                if path.is_empty() {
                    return Err(ConfigError(
                        "bounds.source = trace requires bounds.trace_path".into(),
                    ));
                }
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| ConfigError(format!("cannot read {path}: {e}")))?;
                let samples: Result<Vec<f64>, _> = text
                    .lines()
                    .map(|l| l.split('#').next().unwrap_or("").trim())
                    .filter(|l| !l.is_empty())
                    .map(str::parse::<f64>)
                    .collect();
                let samples =
                    samples.map_err(|e| ConfigError(format!("trace file {path}: {e}")))?;
                let est = estimate_l1_l2_windowed(
                    &samples,
                    self.get_f64("bounds.trace_dt")?,
                    self.get_usize("bounds.window")?,
                )
                .map_err(|e| ConfigError(format!("L1/L2 estimation failed: {e}")))?;
                Ok(DisturbanceBounds::new(
                    est.l1,
                    est.l2,
                    self.get_f64("bounds.l3")?,
                ))
            }
            other => Err(ConfigError(format!("unknown bounds.source '{other}'"))),
        }
    }

    pub fn manifold(&self) -> CResult<Option<QuarticCoefficients>> {
        if !self.get_bool("manifold.enabled")? {
            return Ok(None);
        }
        Ok(Some(QuarticCoefficients::new(
            self.get_f64("manifold.n0")?,
            self.get_f64("manifold.n1")?,
            self.get_f64("manifold.n2")?,
            self.get_f64("manifold.n3")?,
            self.get_f64("manifold.n4")?,
        )))
    }

    /// Resolves `observer.omega_o`, honoring `auto` via the stability lower
    /// bound: `omega_o = max(omega_min, safety_factor * omega_star)`.
    pub fn resolve_omega_o(&self) -> CResult<(f64, Option<f64>)> {
        let raw = self.raw("observer.omega_o");
        if raw != "auto" {
            let v = self.get_f64("observer.omega_o")?;
            return Ok((v, None));
        }
        let bounds = self.disturbance_bounds()?;
        let manifold = self.manifold()?;
        let star = omega_star(
            self.get_f64("controller.k_ap")?,
            self.get_f64("controller.k_ad")?,
            &bounds,
            manifold.as_ref(),
        )
        .map_err(|e| ConfigError(format!("omega_star: {e}")))?;
        let omega = (self.get_f64("observer.safety_factor")? * star)
            .max(self.get_f64("observer.omega_min")?);
        Ok((omega, Some(star)))
    }

    pub fn observer_config(&self) -> CResult<ObserverConfig> {
        let (omega_o, _) = self.resolve_omega_o()?;
        Ok(ObserverConfig::with_sign(omega_o, self.feedback_sign()?))
    }

    pub fn gain_set(&self) -> CResult<GainSet> {
        let (omega_o, _) = self.resolve_omega_o()?;
        Ok(GainSet::new(
            self.get_f64("controller.k_ap")?,
            self.get_f64("controller.k_ad")?,
            omega_o,
        ))
    }

    pub fn pid_gains(&self) -> CResult<PidGains> {
        let k_i = if self.raw("controller.k_i").is_empty() {
            match self.controller_mode()? {
                ControllerMode::ClassicalLag => 0.035,
                _ => 0.01,
            }
        } else {
            self.get_f64("controller.k_i")?
        };
        Ok(PidGains::new(
            self.get_f64("controller.k_p")?,
            k_i,
            self.get_f64("controller.k_d")?,
        ))
    }

    /// Builds the controller for the given update interval (iteration step).
    pub fn controller_config(&self, dt_update: f64) -> CResult<ControllerConfig> {
        let mode = self.controller_mode()?;
        let gains = match mode {
            ControllerMode::AdrcDiscrete | ControllerMode::AdrcContinuous => {
                GainSpec::Adrc(self.gain_set()?)
            }
            ControllerMode::PidLag => GainSpec::Pid(self.pid_gains()?),
            ControllerMode::ClassicalLag => {
                GainSpec::Pid(PidGains::new(0.0, self.pid_gains()?.k_i, 0.0))
            }
        };
        let cfg = ControllerConfig {
            mode,
            gains,
            lambda_max: self.get_f64("controller.lambda_max")?,
            lambda_init: self.get_f64("controller.lambda_init")?,
            cost_limit: self.get_f64("reference.d")?,
            delay: self.get_usize("controller.delay")?,
            ema_alpha_p: self.get_f64("controller.ema_alpha_p")?,
            ema_alpha_d: self.get_f64("controller.ema_alpha_d")?,
            sum_normalization: self.get_bool("controller.sum_normalization")?,
            derivative_normalization: self.get_bool("controller.derivative_normalization")?,
            kd_from_kap: self.get_bool("controller.kd_from_kap")?,
            dt: dt_update,
        };
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    /// Reference parameters; the margin (if any) is already folded into the
    /// target.
    pub fn reference_params(&self) -> CResult<ReferenceParams> {
        let margin = self.get_f64("reference.margin")?;
        Ok(ReferenceParams::new(
            self.get_f64("reference.c_r")?,
            self.get_f64("reference.d")? - margin,
            self.get_f64("reference.x1_0")?,
            self.get_f64("reference.x2_0")?,
        ))
    }

    pub fn plant_init(&self) -> CResult<(f64, f64)> {
        let x1 = if self.raw("simulation.x1_0").is_empty() {
            self.get_f64("reference.x1_0")?
        } else {
            self.get_f64("simulation.x1_0")?
        };
        Ok((x1, self.get_f64("simulation.x2_0")?))
    }

    pub fn disturbance(&self) -> CResult<DisturbanceSpec> {
        let kind = self.raw("disturbance.kind");
        let spec = match kind {
            "constant" => DisturbanceSpec::constant(self.get_f64("disturbance.level")?),
            "sinusoid" => DisturbanceSpec::sinusoid(
                self.get_f64("disturbance.offset")?,
                self.get_f64("disturbance.amplitude")?,
                self.get_f64("disturbance.freq")?,
                self.get_f64("disturbance.phase")?,
            ),
            "linear_state" => DisturbanceSpec::linear_state(
                self.get_f64("disturbance.a1")?,
                self.get_f64("disturbance.a2")?,
                self.get_f64("disturbance.l_f")?,
            ),
            "composite" => DisturbanceSpec::composite(
                self.get_f64("disturbance.a1")?,
                self.get_f64("disturbance.a2")?,
                self.get_f64("disturbance.offset")?,
                self.get_f64("disturbance.amplitude")?,
                self.get_f64("disturbance.freq")?,
                self.get_f64("disturbance.phase")?,
                self.get_f64("disturbance.l_f")?,
            ),
            other => return Err(ConfigError(format!("unknown disturbance.kind '{other}'"))),
        };
        Ok(spec)
    }
}

/// Renders a controller back to its `controller.*` key-value lines (the
/// inverse of [`ScenarioConfig::controller_config`] up to the gain keys the
/// mode reads).
pub fn render_controller(cfg: &ControllerConfig) -> String {
    let mut out = String::new();
    let mode = match cfg.mode {
        ControllerMode::AdrcDiscrete => "adrc_discrete",
        ControllerMode::AdrcContinuous => "adrc_continuous",
        ControllerMode::PidLag => "pid_lag",
        ControllerMode::ClassicalLag => "classical_lag",
    };
    out.push_str(&format!("controller.mode = {mode}\n"));
    match &cfg.gains {
        GainSpec::Adrc(g) => {
            out.push_str(&format!("controller.k_ap = {}\n", g.k_ap));
            out.push_str(&format!("controller.k_ad = {}\n", g.k_ad));
            out.push_str(&format!("observer.omega_o = {}\n", g.omega_o));
        }
        GainSpec::Pid(p) => {
            out.push_str(&format!("controller.k_p = {}\n", p.k_p));
            out.push_str(&format!("controller.k_i = {}\n", p.k_i));
            out.push_str(&format!("controller.k_d = {}\n", p.k_d));
        }
    }
    out.push_str(&format!("controller.lambda_max = {}\n", cfg.lambda_max));
    out.push_str(&format!("controller.lambda_init = {}\n", cfg.lambda_init));
    out.push_str(&format!("reference.d = {}\n", cfg.cost_limit));
    out.push_str(&format!("controller.delay = {}\n", cfg.delay));
    out.push_str(&format!("controller.ema_alpha_p = {}\n", cfg.ema_alpha_p));
    out.push_str(&format!("controller.ema_alpha_d = {}\n", cfg.ema_alpha_d));
    out.push_str(&format!(
        "controller.sum_normalization = {}\n",
        cfg.sum_normalization
    ));
    out.push_str(&format!(
        "controller.derivative_normalization = {}\n",
        cfg.derivative_normalization
    ));
    out.push_str(&format!("controller.kd_from_kap = {}\n", cfg.kd_from_kap));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_standard_set() {
        let cfg = ScenarioConfig::default();
        let ctrl = cfg.controller_config(1.0).unwrap();
        assert_eq!(ctrl.lambda_max, 100.0);
        assert_eq!(ctrl.lambda_init, 0.001);
        assert_eq!(ctrl.cost_limit, 25.0);
        assert_eq!(ctrl.delay, 10);
        assert_eq!(ctrl.ema_alpha_p, 0.95);
        assert!(ctrl.sum_normalization);
        assert!(!ctrl.derivative_normalization);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ScenarioConfig::from_str_checked("controller.k_ap = 0.1\nnope.key = 3\n");
        assert!(err.is_err());
    }

    #[test]
    fn overrides_and_comments() {
        let mut cfg =
            ScenarioConfig::from_str_checked("# comment\nreference.c_r = 0.2   # inline comment\n")
                .unwrap();
        cfg.apply_overrides(&["reference.d=30".to_string()])
            .unwrap();
        let p = cfg.reference_params().unwrap();
        assert_eq!(p.c_r, 0.2);
        assert_eq!(p.d, 30.0);
    }

    #[test]
    fn classical_default_learning_rate() {
        let cfg = ScenarioConfig::from_str_checked("controller.mode = classical_lag\n").unwrap();
        assert_eq!(cfg.pid_gains().unwrap().k_i, 0.035);
        let cfg = ScenarioConfig::from_str_checked("controller.mode = pid_lag\n").unwrap();
        assert_eq!(cfg.pid_gains().unwrap().k_i, 0.01);
    }

    #[test]
    fn auto_omega_resolves_from_bounds() {
        let cfg = ScenarioConfig::from_str_checked(
            "observer.omega_o = auto\nbounds.l1 = 0.2\nbounds.l2 = 0.05\n",
        )
        .unwrap();
        let (omega, star) = cfg.resolve_omega_o().unwrap();
        // omega_star = (0.2 - 0.1)/0.01 = 10; safety factor 2 -> 20.
        assert_eq!(star, Some(10.0));
        assert_eq!(omega, 20.0);
    }

    #[test]
    fn controller_round_trips_through_config_text() {
        let mut base = ScenarioConfig::from_str_checked(
            "controller.mode = adrc_continuous\ncontroller.k_ap = 0.04\n\
             controller.k_ad = 0.4\nobserver.omega_o = 12.5\ncontroller.delay = 3\n",
        )
        .unwrap();
        base.set("controller.ema_alpha_p", "0.5").unwrap();
        let ctrl = base.controller_config(0.25).unwrap();
        let rendered = render_controller(&ctrl);
        let reparsed = ScenarioConfig::from_str_checked(&rendered)
            .unwrap()
            .controller_config(0.25)
            .unwrap();
        assert_eq!(ctrl, reparsed);
    }

    #[test]
    fn margin_shifts_reference_target() {
        let cfg = ScenarioConfig::from_str_checked("reference.margin = 2.0\n").unwrap();
        assert_eq!(cfg.reference_params().unwrap().d, 23.0);
    }
}
