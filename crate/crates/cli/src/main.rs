//! Command-line front end: scenario configs, subcommands, CSV emission.
//!
//! Exit codes: 0 success, 1 usage, 2 configuration, 3 numeric failure or
//! divergence, 4 acceptance (self-test) failure.

mod config;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use adrc_lag::acceptance;
use adrc_lag::controller::ControllerMode;
use adrc_lag::freq;
use adrc_lag::gains::{self, pid_equivalent_gains};
use adrc_lag::metrics::{average_cost, violation_magnitude, violation_rate, EpisodeCosts};
use adrc_lag::reference::{make_reference, ReferenceParams};
use adrc_lag::surrogate::{avg_violation_check, iss_tube_check, simulate, PlantState};
use adrc_lag::toycmdp::{exact_returns, train, SoftmaxPolicy, TabularCmdp, TrainLog};
use adrc_lag::Error as CoreError;

use config::{render_controller, ConfigError, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "adrc-lag",
    version,
    about = "ADRC-based Lagrange multiplier controllers: reference shaping, gain bounds, \
             frequency-domain certification, surrogate simulation, and a tabular CMDP demo"
)]
struct Cli {
    /// Scenario configuration file (flat `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one key, e.g. --set controller.k_ap=0.2 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (overrides ADRC_LAG_OUT_DIR and output.dir).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Suppress the `# generated-at-unix` header line.
    #[arg(long, global = true)]
    no_timestamp: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the budget-tightening reference trajectory as CSV.
    Reference,
    /// Print the observer-gain lower bound and PID-equivalent gains.
    Gains,
    /// Sweep the error-channel transfer functions over a frequency grid.
    Freq,
    /// Run the surrogate closed loop and the tube/violation checkers.
    Simulate,
    /// Sweep one parameter over the toy CMDP and summarize safety metrics.
    Sweep,
    /// Train the toy CMDP once and emit the per-epoch log plus metrics.
    ToyCmdp,
    /// Run the full acceptance suite (exit 4 on any failure).
    Selftest,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

enum CliError {
    Config(ConfigError),
    Core(CoreError),
    Io(std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                CoreError::NonFinite(_)
                | CoreError::Divergence { .. }
                | CoreError::Singular(_)
                | CoreError::Estimation(_) => 3,
                CoreError::Parameter(_) | CoreError::Domain(_) | CoreError::Infeasible(_) => 2,
            },
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

type CliResult<T> = Result<T, CliError>;

/// Where CSV goes and how numbers are printed.
struct OutputCtx {
    dir: Option<PathBuf>,
    precision: usize,
    timestamp: bool,
}

impl OutputCtx {
    fn new(cli: &Cli, cfg: &ScenarioConfig) -> CliResult<Self> {
        let dir = cli
            .out_dir
            .clone()
            .or_else(|| std::env::var("ADRC_LAG_OUT_DIR").ok().map(PathBuf::from))
            .or_else(|| {
                let d = cfg.get_str("output.dir");
                if d.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(d))
                }
            });
        let timestamp = !cli.no_timestamp && cfg.get_bool("output.timestamp")?;
        Ok(Self {
            dir,
            precision: cfg.get_usize("output.precision")?,
            timestamp,
        })
    }

    fn fmt(&self, x: f64) -> String {
        format!("{:.*e}", self.precision.max(1) - 1, x)
    }

    /// Opens the named output (a file under the output directory, or
    /// stdout), emitting the timestamp header when enabled. Returns the
    /// writer and whether it is stdout.
    fn open(&self, filename: &str) -> CliResult<(Box<dyn Write>, bool)> {
        let (mut w, is_stdout): (Box<dyn Write>, bool) = match &self.dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join(filename);
                (Box::new(fs::File::create(path)?), false)
            }
            None => (Box::new(std::io::stdout().lock()), true),
        };
        if self.timestamp {
            let t = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .unwrap_or_default();
            writeln!(w, "# generated-at-unix {}", t.as_secs())?;
        }
        Ok((w, is_stdout))
    }
}

fn load_config(cli: &Cli) -> CliResult<ScenarioConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<u8> {
    let cfg = load_config(&cli)?;
    let out = OutputCtx::new(&cli, &cfg)?;
    match cli.command {
        Command::Reference => cmd_reference(&cfg, &out),
        Command::Gains => cmd_gains(&cfg, &out),
        Command::Freq => cmd_freq(&cfg, &out),
        Command::Simulate => cmd_simulate(&cfg, &out),
        Command::Sweep => cmd_sweep(&cfg, &out),
        Command::ToyCmdp => cmd_toy_cmdp(&cfg, &out),
        Command::Selftest => cmd_selftest(&out),
    }
}

fn cmd_reference(cfg: &ScenarioConfig, out: &OutputCtx) -> CliResult<u8> {
    let traj = make_reference(cfg.reference_params()?)?;
    let t_max = cfg.get_f64("reference.t_max")?;
    let samples = cfg.get_usize("reference.samples")?.max(2);
    let (mut w, _) = out.open("reference.csv")?;
    writeln!(w, "t,r,dr,ddr")?;
    for i in 0..samples {
        let t = t_max * i as f64 / (samples - 1) as f64;
        let p = traj.eval(t)?;
        writeln!(
            w,
            "{},{},{},{}",
            out.fmt(t),
            out.fmt(p.r),
            out.fmt(p.dr),
            out.fmt(p.ddr)
        )?;
    }
    Ok(0)
}

fn cmd_gains(cfg: &ScenarioConfig, out: &OutputCtx) -> CliResult<u8> {
    let bounds = cfg.disturbance_bounds()?;
    let manifold = cfg.manifold()?;
    let k_ap = cfg.get_f64("controller.k_ap")?;
    let k_ad = cfg.get_f64("controller.k_ad")?;
    let star = gains::omega_star(k_ap, k_ad, &bounds, manifold.as_ref())?;
    let (omega_o, _) = cfg.resolve_omega_o()?;
    let g = adrc_lag::controller::GainSet::new(k_ap, k_ad, omega_o);
    let pid = pid_equivalent_gains(&g);

    let (mut w, _) = out.open("gains.csv")?;
    writeln!(w, "quantity,value")?;
    writeln!(w, "l1,{}", out.fmt(bounds.l1))?;
    writeln!(w, "l2,{}", out.fmt(bounds.l2))?;
    writeln!(w, "omega_star,{}", out.fmt(star))?;
    writeln!(w, "omega_o,{}", out.fmt(omega_o))?;
    writeln!(w, "pid_k_p,{}", out.fmt(pid.k_p))?;
    writeln!(w, "pid_k_i,{}", out.fmt(pid.k_i))?;
    writeln!(w, "pid_k_d,{}", out.fmt(pid.k_d))?;
    if let Some(c) = &manifold {
        for (i, root) in gains::real_roots(&c.n).iter().enumerate() {
            writeln!(w, "manifold_root_{i},{}", out.fmt(*root))?;
        }
    }
    Ok(0)
}

fn cmd_freq(cfg: &ScenarioConfig, out: &OutputCtx) -> CliResult<u8> {
    let g = cfg.gain_set()?;
    let pid = pid_equivalent_gains(&g);
    let grid = freq::log_grid(
        cfg.get_f64("freq.grid_lo")?,
        cfg.get_f64("freq.grid_hi")?,
        cfg.get_usize("freq.grid_points")?,
    )?;
    let report = freq::ratio_and_phase_check(&grid, &g, &pid)?;
    let (mut w, is_stdout) = out.open("freq.csv")?;
    writeln!(
        w,
        "omega,mag_ef,mag_efi,ratio_sq,phase_ef,phase_efi,side_condition,asserted_branch,magnitude_ok,phase_ok"
    )?;
    for p in &report.points {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            out.fmt(p.omega),
            out.fmt(p.mag_ef),
            out.fmt(p.mag_efi),
            out.fmt(p.ratio_sq),
            out.fmt(p.phase_ef),
            out.fmt(p.phase_efi),
            p.side_condition,
            p.asserted_branch,
            p.magnitude_ok,
            p.phase_ok.map_or(String::new(), |b| b.to_string()),
        )?;
    }
    drop(w);
    let summary = format!(
        "freq: {} grid points, {} magnitude violations, {} phase violations, steady-state ratio {}",
        report.points.len(),
        report.magnitude_violations.len(),
        report.phase_violations.len(),
        out.fmt(report.steady_state_ratio),
    );
    if is_stdout {
        eprintln!("{summary}");
    } else {
        println!("{summary}");
    }
    Ok(0)
}

fn cmd_simulate(cfg: &ScenarioConfig, out: &OutputCtx) -> CliResult<u8> {
    let ctrl = cfg.controller_config(cfg.get_f64("simulation.dt_update")?)?;
    let obs = cfg.observer_config()?;
    let dist = cfg.disturbance()?;
    let ref_params = cfg.reference_params()?;
    let (x1_0, x2_0) = cfg.plant_init()?;
    let horizon = cfg.get_f64("simulation.horizon")?;
    let dt = cfg.get_f64("simulation.dt")?;

    let trace = simulate(
        PlantState::new(x1_0, x2_0),
        &dist,
        &ctrl,
        ref_params,
        &obs,
        horizon,
        dt,
    )?;

    let (mut w, is_stdout) = out.open("trace.csv")?;
    trace.write_csv(&mut w, out.precision)?;
    drop(w);

    // Record the resolved controller next to the trace for reproducibility.
    if let Some(dir) = &out.dir {
        fs::write(dir.join("controller.conf"), render_controller(&ctrl))?;
    }

    let mut report_lines = Vec::new();
    let d = cfg.get_f64("reference.d")?;
    let tail_start = (20.0 / ref_params.c_r).min(0.8 * horizon);
    if ctrl.mode == ControllerMode::AdrcContinuous {
        let g = cfg.gain_set()?;
        match iss_tube_check(&trace, &g, dist.bounds.l_f) {
            Ok(iss) => {
                report_lines.push(format!(
                    "iss-tube: radius {} (||h||_1 = {}), tail max |e| = {} from t = {}: {}",
                    out.fmt(iss.radius),
                    out.fmt(iss.h_l1_norm),
                    out.fmt(iss.tail_max_e),
                    out.fmt(iss.tail_start),
                    if iss.passed {
                        "within tube"
                    } else {
                        "OUTSIDE tube"
                    },
                ));
                let avg = avg_violation_check(&trace, d, iss.radius, tail_start)?;
                report_lines.push(format!(
                    "avg-violation: tail average {} vs radius {}: {}",
                    out.fmt(avg.tail_avg),
                    out.fmt(avg.radius),
                    if avg.passed {
                        "within bound"
                    } else {
                        "OUTSIDE bound"
                    },
                ));
            }
            Err(e) => report_lines.push(format!("iss-tube: skipped ({e})")),
        }
    }
    let peak = trace
        .x1
        .iter()
        .map(|x| (x - d).max(0.0))
        .fold(0.0, f64::max);
    report_lines.push(format!(
        "trace: {} steps, final x1 = {}, peak (x1-d)+ = {}",
        trace.len(),
        out.fmt(*trace.x1.last().unwrap()),
        out.fmt(peak),
    ));
    match trace.first_clean_suffix_start(d) {
        Some(t0) => report_lines.push(format!(
            "clean-suffix: violation-free from t = {} ({}% of horizon)",
            out.fmt(t0),
            out.fmt(100.0 * (trace.duration() - t0) / trace.duration().max(1e-300)),
        )),
        None => report_lines.push("clean-suffix: still violating at the end".to_string()),
    }
    for line in report_lines {
        if is_stdout {
            eprintln!("{line}");
        } else {
            println!("{line}");
        }
    }
    Ok(0)
}

/// Loads the CMDP instance and fills in reference defaults from it: the
/// threshold defaults to the instance's cost limit and the starting level to
/// the exact cost return of the initial policy.
fn toy_setup(cfg: &ScenarioConfig) -> CliResult<(TabularCmdp, SoftmaxPolicy, ReferenceParams)> {
    let path = cfg.get_str("cmdp.path");
    let cmdp = if path.is_empty() {
        TabularCmdp::reference_instance()
    } else {
        TabularCmdp::from_file(std::path::Path::new(&path))?
    };
    let policy = SoftmaxPolicy::uniform(
        cmdp.n_states,
        cmdp.n_actions,
        cfg.get_f64("train.step_size")?,
        cfg.get_u64("train.seed")?,
    );
    let d = if cfg.is_set("reference.d") {
        cfg.get_f64("reference.d")?
    } else {
        cmdp.d
    };
    let x1_0 = if cfg.is_set("reference.x1_0") {
        cfg.get_f64("reference.x1_0")?
    } else {
        exact_returns(&cmdp, &policy)?.1
    };
    let margin = cfg.get_f64("reference.margin")?;
    let params = ReferenceParams::new(cfg.get_f64("reference.c_r")?, d - margin, x1_0, 0.0);
    Ok((cmdp, policy, params))
}

fn toy_train_once(
    cfg: &ScenarioConfig,
    cmdp: &TabularCmdp,
    policy: &SoftmaxPolicy,
    params: ReferenceParams,
    seed: u64,
) -> CliResult<TrainLog> {
    let mut ctrl = cfg.controller_config(cfg.get_f64("train.dt_update")?)?;
    ctrl.cost_limit = cmdp.d;
    Ok(train(
        cmdp,
        policy,
        &ctrl,
        params,
        cfg.get_usize("train.epochs")?,
        cfg.get_usize("train.episodes")?,
        seed,
    )?)
}

fn cmd_toy_cmdp(cfg: &ScenarioConfig, out: &OutputCtx) -> CliResult<u8> {
    let (cmdp, policy, params) = toy_setup(cfg)?;
    let log = toy_train_once(cfg, &cmdp, &policy, params, cfg.get_u64("train.seed")?)?;

    let (mut w, is_stdout) = out.open("training.csv")?;
    writeln!(w, "epoch,j_hat,jc_hat,exact_j,exact_jc,lambda")?;
    for (i, e) in log.epochs.iter().enumerate() {
        writeln!(
            w,
            "{i},{},{},{},{},{}",
            out.fmt(e.j_hat),
            out.fmt(e.jc_hat),
            out.fmt(e.exact_j),
            out.fmt(e.exact_jc),
            out.fmt(e.lambda),
        )?;
    }
    drop(w);

    let ep = EpisodeCosts::new(log.all_episode_costs(), cmdp.d);
    let summary = format!(
        "toy-cmdp: {} epochs, vio_rate {}, magnitude {}, avg_cost {}, final exact (J, J_c) = ({}, {})",
        log.epochs.len(),
        out.fmt(violation_rate(&ep)?),
        out.fmt(violation_magnitude(&ep)?),
        out.fmt(average_cost(&ep)?),
        out.fmt(log.epochs.last().map(|e| e.exact_j).unwrap_or(0.0)),
        out.fmt(log.epochs.last().map(|e| e.exact_jc).unwrap_or(0.0)),
    );
    if is_stdout {
        eprintln!("{summary}");
    } else {
        println!("{summary}");
    }
    Ok(0)
}

fn cmd_sweep(cfg: &ScenarioConfig, out: &OutputCtx) -> CliResult<u8> {
    let parameter = cfg.get_str("sweep.parameter");
    let key = match parameter.as_str() {
        "c_r" => "reference.c_r",
        "k_ap" => "controller.k_ap",
        "k_ad" => "controller.k_ad",
        "omega_o" => "observer.omega_o",
        other => {
            return Err(ConfigError(format!(
                "sweep.parameter must be one of c_r, k_ap, k_ad, omega_o; got '{other}'"
            ))
            .into())
        }
    };
    let values: Result<Vec<f64>, _> = cfg
        .get_str("sweep.values")
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect();
    let values = values.map_err(|e| ConfigError(format!("sweep.values: {e}")))?;
    if values.is_empty() {
        return Err(ConfigError("sweep.values is empty".into()).into());
    }
    let seeds = cfg.get_u64("sweep.seeds")?.max(1);

    // Grid points run concurrently; rows stay ordered by grid index.
    let rows: Vec<CliResult<String>> = values
        .par_iter()
        .map(|&value| {
            let mut local = cfg.clone();
            local.set(key, &format!("{value}"))?;
            let (cmdp, policy, params) = toy_setup(&local)?;
            let mut rates = Vec::new();
            let mut mags = Vec::new();
            let mut avgs = Vec::new();
            for seed in 0..seeds {
                let log = toy_train_once(&local, &cmdp, &policy, params, seed)?;
                let ep = EpisodeCosts::new(log.all_episode_costs(), cmdp.d);
                rates.push(violation_rate(&ep)?);
                mags.push(violation_magnitude(&ep)?);
                avgs.push(average_cost(&ep)?);
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            Ok(format!(
                "{parameter},{},{seeds},{},{},{}",
                out.fmt(value),
                out.fmt(mean(&rates)),
                out.fmt(mean(&mags)),
                out.fmt(mean(&avgs)),
            ))
        })
        .collect();

    let (mut w, _) = out.open("sweep.csv")?;
    writeln!(w, "parameter,value,seeds,vio_rate,magnitude,avg_cost")?;
    for row in rows {
        writeln!(w, "{}", row?)?;
    }
    Ok(0)
}

fn cmd_selftest(out: &OutputCtx) -> CliResult<u8> {
    let results = acceptance::run_selftest();
    if out.timestamp {
        let t = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default();
        println!("# generated-at-unix {}", t.as_secs());
    }
    print!("{}", acceptance::report_string(&results));
    if results.iter().all(|r| r.passed) {
        Ok(0)
    } else {
        Ok(4)
    }
}
