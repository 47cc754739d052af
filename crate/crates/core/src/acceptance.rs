//! Self-test suite: every release-gating check, runnable from the CLI
//! (`selftest`) and from the integration tests.
//!
//! Each criterion is a pure function returning a [`CriterionResult`] with a
//! deterministic detail string, so two runs of the suite produce identical
//! reports and the CLI can diff them byte for byte.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::controller::{update_lambda, ControllerConfig, ControllerState, GainSet, PidGains};
use crate::freq;
use crate::gains::{self, oracle, DisturbanceBounds, QuarticCoefficients};
use crate::metrics::{average_cost, violation_magnitude, violation_rate, EpisodeCosts};
use crate::observer::{error_bound, observer_step, ObserverConfig, ObserverState};
use crate::ode::rk4_step;
use crate::reference::{make_reference, RefPoint, ReferenceParams};
use crate::surrogate::{
    avg_violation_check, finite_difference_proxy, impulse_l1_norm, iss_tube_check, lf_envelope,
    simulate, DisturbanceSpec, PlantState, TheoryInputs,
};
use crate::toycmdp::{exact_returns, train, SoftmaxPolicy, TabularCmdp};

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    fn new(id: u32, name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            id,
            name,
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:>2} {:<22} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

/// Runs criteria 1-11 (criterion 12 re-runs the suite; see [`run_selftest`]).
pub fn run_all() -> Vec<CriterionResult> {
    vec![
        criterion_1_reference_fidelity(),
        criterion_2_eso_bound(),
        criterion_3_proposition1_reduction(),
        criterion_4_magnitude_ratio(),
        criterion_5_phase_lag(),
        criterion_6_quartic_oracle(),
        criterion_7_iss_tube_and_average(),
        criterion_8_margin_feasibility(),
        criterion_9_lf_envelope(),
        criterion_10_toy_cmdp_ordering(),
        criterion_11_metrics_arithmetic(),
    ]
}

/// Deterministic multi-line report for a finished run.
pub fn report_string(results: &[CriterionResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&r.line());
        out.push('\n');
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    out.push_str(&format!(
        "{} criteria, {} passed, {} failed\n",
        results.len(),
        results.len() - failed,
        failed
    ));
    out
}

/// Full self-test: runs the suite twice, appends the determinism criterion
/// (byte-identical reports), and returns all results.
pub fn run_selftest() -> Vec<CriterionResult> {
    let first = run_all();
    let second = run_all();
    let identical = report_string(&first) == report_string(&second);
    let mut results = first;
    results.push(CriterionResult::new(
        12,
        "determinism",
        identical,
        if identical {
            "two full runs produced byte-identical reports".into()
        } else {
            "reports differed between runs".into()
        },
    ));
    results
}

// ---------------------------------------------------------------------------
// Criterion 1: reference closed form vs numeric ODE integration
// ---------------------------------------------------------------------------

fn criterion_1_reference_fidelity() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut exact_ic = true;
    for _ in 0..50 {
        let c_r = rng.gen_range(0.05..2.0);
        let d = rng.gen_range(-10.0..50.0);
        let x1_0 = d + rng.gen_range(-60.0..60.0);
        let x2_0 = rng.gen_range(-5.0..5.0);
        let params = ReferenceParams::new(c_r, d, x1_0, x2_0);
        let traj = make_reference(params).unwrap();

        let p0 = traj.eval(0.0).unwrap();
        exact_ic &= p0.r == x1_0 && p0.dr == x2_0;

        let dt = 1e-3;
        let t_end = 10.0 / c_r;
        let steps = (t_end / dt).ceil() as usize;
        let mut y = [x1_0, x2_0];
        let mut t = 0.0;
        for _ in 0..steps {
            y = rk4_step(t, &y, dt, |_, s| {
                [s[1], -2.0 * c_r * s[1] - c_r * c_r * (s[0] - d)]
            });
            t += dt;
            let pt = traj.eval(t).unwrap();
            worst = worst.max((pt.r - y[0]).abs());
        }
    }
    let passed = worst < 1e-8 && exact_ic;
    CriterionResult::new(
        1,
        "reference-fidelity",
        passed,
        format!("max |closed form - RK4| = {worst:.3e} (< 1e-8), exact initial match: {exact_ic}"),
    )
}

// ---------------------------------------------------------------------------
// Criterion 2: ESO estimation error under in-class disturbances
// ---------------------------------------------------------------------------

fn criterion_2_eso_bound() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let omega_o = 10.0;
    let cfg = ObserverConfig::new(omega_o);
    let dt = 0.005 / omega_o;
    let mut worst_ratio = 0.0f64;
    for case in 0..20 {
        // Half steps (constant switched on at t = 0), half sinusoids.
        let (f, l_f): (Box<dyn Fn(f64) -> f64>, f64) = if case < 10 {
            let c = rng.gen_range(-2.0..2.0);
            (Box::new(move |_t| c), 0.0)
        } else {
            let a = rng.gen_range(0.2..1.5);
            let nu = rng.gen_range(0.2..3.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (Box::new(move |t: f64| a * (nu * t + phase).sin()), a * nu)
        };
        let mut x2 = rng.gen_range(-1.0..1.0);
        let mut st = ObserverState::zeroed(&cfg, x2);
        let e_f0 = (st.f_hat - f(0.0)).abs();
        let mut t: f64 = 0.0;
        for _ in 0..((4.0 / dt) as usize) {
            let u = 0.4 * (0.5 * t).sin();
            st = observer_step(&st, &cfg, x2, u, dt).unwrap();
            x2 += dt * (f(t) - u);
            t += dt;
            // Pair xi with the measurement at the new time.
            st = ObserverState::from_xi(st.xi, &cfg, x2);
            let err = (st.f_hat - f(t)).abs();
            let bound = error_bound(omega_o, l_f, e_f0, t).unwrap();
            // The pure-step bound decays below what f64 cancellation in
            // xi + omega_o*x2 can resolve (~1e-13); allow an absolute
            // numerical-zero floor ten orders under the disturbance scale.
            worst_ratio = worst_ratio.max(err / (bound + 1e-10 / 1.05));
        }
    }
    let passed = worst_ratio <= 1.05;
    CriterionResult::new(
        2,
        "eso-error-bound",
        passed,
        format!(
            "20 in-class disturbances, max |e_f|/(bound + 1e-10 floor) = {worst_ratio:.6} (<= 1.05)"
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 3: discrete ADRC law vs mapped PID on random cost streams
// ---------------------------------------------------------------------------

fn criterion_3_proposition1_reduction() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let d = 25.0;
    let rp = Some(RefPoint::constant(d));
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let g = GainSet::new(
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..0.5),
            rng.gen_range(0.1..20.0),
        );
        let pid = gains::pid_equivalent_gains(&g);
        let adrc_cfg = ControllerConfig::adrc(g).raw();
        let pid_cfg = ControllerConfig::pid(pid).raw();
        let mut sa = ControllerState::new(&adrc_cfg);
        let mut sp = ControllerState::new(&pid_cfg);
        let mut cost = d + rng.gen_range(-5.0..5.0);
        for _ in 0..100 {
            cost += rng.gen_range(-1.0..1.0);
            let (na, la) = update_lambda(&sa, &adrc_cfg, cost, rp).unwrap();
            let (np, lp) = update_lambda(&sp, &pid_cfg, cost, rp).unwrap();
            sa = na;
            sp = np;
            worst = worst.max((la - lp).abs());
        }
    }
    let passed = worst <= 1e-12;
    CriterionResult::new(
        3,
        "pid-reduction",
        passed,
        format!(
            "10^4 random streams x 100 steps, max |lambda difference| = {worst:.3e} (<= 1e-12)"
        ),
    )
}

// ---------------------------------------------------------------------------
// Criteria 4 & 5: frequency-domain certification of the two channels
// ---------------------------------------------------------------------------

fn certification_setup() -> (GainSet, PidGains) {
    let (k_ap, k_ad) = (0.1, 0.01);
    // No manifold supplied and loose sensitivities: the affine terms are
    // negative, so omega* = 0 and the working gain is max(10, 2*omega*).
    let bounds = DisturbanceBounds::new(0.05, 0.005, 1.0);
    let w_star = gains::omega_star(k_ap, k_ad, &bounds, None).unwrap();
    let omega_o = (2.0 * w_star).max(10.0);
    let g = GainSet::new(k_ap, k_ad, omega_o);
    let pid = gains::pid_equivalent_gains(&g);
    (g, pid)
}

fn criterion_4_magnitude_ratio() -> CriterionResult {
    let (g, pid) = certification_setup();
    let grid = freq::default_grid();
    let report = match freq::ratio_and_phase_check(&grid, &g, &pid) {
        Ok(r) => r,
        Err(e) => return CriterionResult::new(4, "magnitude-ratio", false, e.to_string()),
    };
    let max_ratio = report.points.iter().map(|p| p.ratio_sq).fold(0.0, f64::max);
    let sim_ratio = match freq::error_channel_ratio_sim(&g, &pid, 3000.0, 0.01) {
        Ok(r) => r,
        Err(e) => return CriterionResult::new(4, "magnitude-ratio", false, e.to_string()),
    };
    let expected = freq::steady_state_ratio(&g);
    let ss_ok = (sim_ratio - expected).abs() <= 0.02 * expected.abs();
    let passed = report.all_magnitude_ok() && ss_ok;
    CriterionResult::new(
        4,
        "magnitude-ratio",
        passed,
        format!(
            "ratio^2 < 1 at {}: max {max_ratio:.6}; steady-state ratio {sim_ratio:.6} vs {expected:.6}",
            if report.all_magnitude_ok() { "all 200 grid points" } else { "NOT all points" }
        ),
    )
}

fn criterion_5_phase_lag() -> CriterionResult {
    let (g, pid) = certification_setup();
    let grid = freq::default_grid();
    let report = match freq::ratio_and_phase_check(&grid, &g, &pid) {
        Ok(r) => r,
        Err(e) => return CriterionResult::new(5, "phase-lag", false, e.to_string()),
    };
    let asserted = report.points.iter().filter(|p| p.asserted_branch).count();
    let passed = report.all_phase_ok() && asserted > 0;
    CriterionResult::new(
        5,
        "phase-lag",
        passed,
        format!(
            "{asserted} admissible grid points on the branch omega^2 < k_ap, {} violations",
            report.phase_violations.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 6: quartic max-real-root vs the companion/bisection oracle
// ---------------------------------------------------------------------------

fn criterion_6_quartic_oracle() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0f64;
    let mut existence_mismatches = 0usize;
    let mut checked = 0usize;
    for _ in 0..10_000 {
        let c = QuarticCoefficients::new(
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
        );
        if c.is_zero() {
            continue;
        }
        checked += 1;
        let ours = gains::max_real_root(&c).unwrap();
        let reference = oracle::max_real_root_oracle(&c);
        match (ours, reference) {
            (None, None) => {}
            (Some(a), Some(b)) => worst = worst.max((a - b).abs() / b.abs().max(1.0)),
            _ => existence_mismatches += 1,
        }
    }
    let passed = worst < 1e-9 && existence_mismatches == 0;
    CriterionResult::new(
        6,
        "quartic-oracle",
        passed,
        format!(
            "{checked} random quartics: max root error {worst:.3e} (< 1e-9), {existence_mismatches} existence mismatches"
        ),
    )
}

// ---------------------------------------------------------------------------
// Criteria 7 & 8: ISS tube, average violation, margin feasibility
// ---------------------------------------------------------------------------

struct TubeDraw {
    dist: DisturbanceSpec,
    radius: f64,
}

fn tube_gains() -> GainSet {
    GainSet::new(0.04, 0.4, 10.0) // critically damped: k_ad^2 = 4 k_ap
}

fn tube_draws(n: usize, seed: u64) -> Vec<TubeDraw> {
    let g = tube_gains();
    let h_l1 = impulse_l1_norm(g.k_ap, g.k_ad).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let offset = rng.gen_range(0.5..1.5);
            let amp = rng.gen_range(0.2..0.8);
            let nu = rng.gen_range(0.2..2.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let dist = DisturbanceSpec::sinusoid(offset, amp, nu, phase);
            let radius = h_l1 * dist.bounds.l_f / g.omega_o;
            TubeDraw { dist, radius }
        })
        .collect()
}

fn tube_controller(g: GainSet) -> ControllerConfig {
    let mut ctrl = ControllerConfig::adrc(g).raw();
    ctrl.mode = crate::controller::ControllerMode::AdrcContinuous;
    ctrl.dt = 0.02;
    ctrl
}

fn criterion_7_iss_tube_and_average() -> CriterionResult {
    let g = tube_gains();
    let ctrl = tube_controller(g);
    let obs = ObserverConfig::new(g.omega_o);
    let d = 25.0;
    let mut worst_tube = 0.0f64;
    let mut worst_avg = 0.0f64;
    let mut all_ok = true;
    for draw in tube_draws(10, 707) {
        let p = ReferenceParams::new(0.1, d, 28.0, 0.0);
        let trace = match simulate(
            PlantState::new(28.0, 0.0),
            &draw.dist,
            &ctrl,
            p,
            &obs,
            300.0,
            1e-3,
        ) {
            Ok(t) => t,
            Err(e) => return CriterionResult::new(7, "iss-tube", false, e.to_string()),
        };
        let iss = iss_tube_check(&trace, &g, draw.dist.bounds.l_f).unwrap();
        let avg = avg_violation_check(&trace, d, draw.radius, 200.0).unwrap();
        all_ok &= iss.passed && avg.passed;
        worst_tube = worst_tube.max(iss.tail_max_e / draw.radius);
        worst_avg = worst_avg.max(avg.tail_avg / draw.radius);
    }
    CriterionResult::new(
        7,
        "iss-tube",
        all_ok,
        format!(
            "10 draws: max tail|e|/radius = {worst_tube:.4}, max avg violation/radius = {worst_avg:.4} (<= 1.05)"
        ),
    )
}

fn criterion_8_margin_feasibility() -> CriterionResult {
    let g = tube_gains();
    let ctrl = tube_controller(g);
    let obs = ObserverConfig::new(g.omega_o);
    let d = 25.0;
    let mut min_fraction = 1.0f64;
    let mut all_clean = true;
    for draw in tube_draws(10, 808) {
        let eps = 2.0 * draw.radius;
        let p = ReferenceParams::new(0.1, d - eps, 30.0, 0.0);
        let trace = match simulate(
            PlantState::new(30.0, 0.0),
            &draw.dist,
            &ctrl,
            p,
            &obs,
            300.0,
            1e-3,
        ) {
            Ok(t) => t,
            Err(e) => return CriterionResult::new(8, "margin-feasibility", false, e.to_string()),
        };
        let report = avg_violation_check(&trace, d, draw.radius, 200.0).unwrap();
        match report.first_clean_suffix {
            Some(_) => min_fraction = min_fraction.min(report.clean_fraction),
            None => all_clean = false,
        }
    }
    let passed = all_clean && min_fraction >= 0.5;
    CriterionResult::new(
        8,
        "margin-feasibility",
        passed,
        format!(
            "10 margin runs (eps = 2x radius): smallest violation-free suffix fraction {min_fraction:.3} (>= 0.5)"
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 9: disturbance-rate envelope arithmetic and coverage
// ---------------------------------------------------------------------------

fn criterion_9_lf_envelope() -> CriterionResult {
    let env_a = lf_envelope(&TheoryInputs {
        delta: 0.02,
        n: 200,
        dt_update: 1.0,
        b_c: 100.0,
        gamma: 0.99,
        lambda_max: 100.0,
        horizon_k: 100,
        eta: 0.05,
    })
    .unwrap();
    let dtr_ok = (env_a.d_tr - 4000.0).abs() < 1e-9;

    let inputs = TheoryInputs {
        delta: 0.02,
        n: 200,
        dt_update: 1.0,
        b_c: 1.0,
        gamma: 0.99,
        lambda_max: 1.0,
        horizon_k: 100,
        eta: 0.05,
    };
    let env_b = lf_envelope(&inputs).unwrap();
    // Frozen from the defining formula B_c*sqrt(ln(2K/eta)/(2N)).
    let eps_ok = (env_b.eps_n - 0.1439969586493238).abs() < 1e-9;

    // Monte-Carlo coverage: synthetic series satisfying the premises
    // (bounded drift, N-sample estimates in [0, B_c], capped multipliers).
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut covered = 0usize;
    let resamples = 100;
    for _ in 0..resamples {
        let k = inputs.horizon_k;
        let mut costs = Vec::with_capacity(k + 1);
        let mut lambdas = Vec::with_capacity(k + 1);
        let mut population: f64 = 0.5;
        for _ in 0..=k {
            population = (population + rng.gen_range(-0.02..0.02)).clamp(0.35, 0.65);
            let mut sum: f64 = 0.0;
            for _ in 0..inputs.n {
                sum += (population + rng.gen_range(-0.3..0.3)).clamp(0.0, inputs.b_c);
            }
            costs.push(sum / inputs.n as f64);
            lambdas.push(rng.gen_range(0.0..inputs.lambda_max));
        }
        let proxy = finite_difference_proxy(&costs, &lambdas, inputs.dt_update).unwrap();
        if proxy.max_variation <= env_b.l_f_bound {
            covered += 1;
        }
    }
    let coverage = covered as f64 / resamples as f64;
    let coverage_ok = coverage >= 1.0 - inputs.eta;
    let passed = dtr_ok && eps_ok && coverage_ok;
    CriterionResult::new(
        9,
        "lf-envelope",
        passed,
        format!(
            "D_TR = {:.9e} (4000 +/- 1e-9: {dtr_ok}), eps_N = {:.12} ({eps_ok}), proxy coverage {coverage:.2}",
            env_a.d_tr, env_b.eps_n
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 10: toy CMDP controller ordering (statistical)
// ---------------------------------------------------------------------------

fn criterion_10_toy_cmdp_ordering() -> CriterionResult {
    let cmdp = TabularCmdp::reference_instance();
    let policy0 = SoftmaxPolicy::uniform(cmdp.n_states, cmdp.n_actions, 0.15, 0);
    let (_, jc0) = exact_returns(&cmdp, &policy0).unwrap();
    let ref_params = ReferenceParams::new(0.1, cmdp.d, jc0, 0.0);
    let (epochs, episodes) = (120, 16);

    let run = |mut ctrl: ControllerConfig, seed: u64| -> Result<f64, crate::Error> {
        ctrl.cost_limit = cmdp.d;
        let log = train(&cmdp, &policy0, &ctrl, ref_params, epochs, episodes, seed)?;
        violation_rate(&EpisodeCosts::new(log.all_episode_costs(), cmdp.d))
    };

    let mut adrc_rates = Vec::new();
    let mut classical_rates = Vec::new();
    for seed in 0..10u64 {
        let adrc = ControllerConfig::adrc(GainSet::default());
        match run(adrc, seed) {
            Ok(r) => adrc_rates.push(r),
            Err(e) => return CriterionResult::new(10, "toy-cmdp-ordering", false, e.to_string()),
        }
        let classical = ControllerConfig::classical(0.035);
        match run(classical, seed) {
            Ok(r) => classical_rates.push(r),
            Err(e) => return CriterionResult::new(10, "toy-cmdp-ordering", false, e.to_string()),
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m_adrc, m_classical) = (mean(&adrc_rates), mean(&classical_rates));
    let passed = m_adrc < m_classical;
    CriterionResult::new(
        10,
        "toy-cmdp-ordering",
        passed,
        format!(
            "mean violation rate over 10 seeds: ADRC {m_adrc:.4} vs classical {m_classical:.4} (direction only)"
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 11: metric fixtures
// ---------------------------------------------------------------------------

fn criterion_11_metrics_arithmetic() -> CriterionResult {
    let checks = [
        violation_rate(&EpisodeCosts::new(vec![30.0, 20.0, 30.0, 20.0], 25.0)).unwrap() == 0.5,
        violation_rate(&EpisodeCosts::new(vec![10.0, 25.0], 25.0)).unwrap() == 0.0,
        violation_rate(&EpisodeCosts::new(vec![26.0, 30.0], 25.0)).unwrap() == 1.0,
        violation_magnitude(&EpisodeCosts::new(vec![30.0, 20.0, 35.0], 25.0)).unwrap() == 7.5,
        violation_magnitude(&EpisodeCosts::new(vec![26.0], 25.0)).unwrap() == 1.0,
        violation_magnitude(&EpisodeCosts::new(vec![10.0], 25.0)).unwrap() == 0.0,
        average_cost(&EpisodeCosts::new(vec![10.0, 20.0, 30.0], 25.0)).unwrap() == 20.0,
        average_cost(&EpisodeCosts::new(vec![25.0], 25.0)).unwrap() == 25.0,
        average_cost(&EpisodeCosts::new(vec![0.0, 0.0], 25.0)).unwrap() == 0.0,
    ];
    let failed = checks.iter().filter(|&&ok| !ok).count();
    CriterionResult::new(
        11,
        "metrics-arithmetic",
        failed == 0,
        format!(
            "{} hand-computed fixtures, {failed} mismatches",
            checks.len()
        ),
    )
}
