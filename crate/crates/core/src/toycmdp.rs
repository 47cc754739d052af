//! Desk-scale tabular constrained MDP with a REINFORCE trainer.
//!
//! The point of this module is not the optimizer: it is a genuine stochastic
//! learning loop in which the multiplier controllers can be compared. The
//! policy is a per-state softmax trained by likelihood-ratio gradients on
//! the rescaled penalized objective `(J - λ·J_c)/(1 + λ)`, with a per-state
//! value baseline and no trust region. The multiplier updates once per
//! epoch from the sampled cost return.
//!
//! Discounted returns are computed exactly (linear solve) as the oracle for
//! the sampled estimates; episodes are truncated at the horizon where the
//! tail `γ^T·B_c` drops below 1e-6.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::controller::{update_lambda, ControllerConfig, ControllerMode, ControllerState};
use crate::error::{ensure_finite, Error, Result};
use crate::reference::{ReferenceParams, ReferenceTrajectory};

/// Tabular CMDP: dense transition/reward/cost tables plus the constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularCmdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row-major `[s][a][s']`, each row a distribution.
    transition: Vec<f64>,
    /// Row-major `[s][a]`.
    reward: Vec<f64>,
    /// Row-major `[s][a]`, nonnegative.
    cost: Vec<f64>,
    /// Initial state distribution.
    pub mu: Vec<f64>,
    pub gamma: f64,
    /// Cost limit d.
    pub d: f64,
}

impl TabularCmdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        cost: Vec<f64>,
        mu: Vec<f64>,
        gamma: f64,
        d: f64,
    ) -> Result<Self> {
        let cmdp = Self {
            n_states,
            n_actions,
            transition,
            reward,
            cost,
            mu,
            gamma,
            d,
        };
        cmdp.validate()?;
        Ok(cmdp)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 {
            return Err(Error::parameter("CMDP needs at least one state and action"));
        }
        if self.transition.len() != s * a * s
            || self.reward.len() != s * a
            || self.cost.len() != s * a
            || self.mu.len() != s
        {
            return Err(Error::parameter("CMDP table sizes are inconsistent"));
        }
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::parameter(format!(
                "gamma must be in (0,1), got {}",
                self.gamma
            )));
        }
        ensure_finite("d", self.d)?;
        for (i, &c) in self.cost.iter().enumerate() {
            ensure_finite(&format!("cost[{i}]"), c)?;
            if c < 0.0 {
                return Err(Error::parameter(format!("costs must be >= 0, got {c}")));
            }
        }
        for state in 0..s {
            for action in 0..a {
                let row = self.transition_row(state, action);
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::parameter(format!(
                        "transition row ({state},{action}) sums to {sum}, not 1"
                    )));
                }
                if row.iter().any(|&p| p < 0.0) {
                    return Err(Error::parameter(format!(
                        "transition row ({state},{action}) has a negative probability"
                    )));
                }
            }
        }
        let mu_sum: f64 = self.mu.iter().sum();
        if (mu_sum - 1.0).abs() > 1e-12 || self.mu.iter().any(|&p| p < 0.0) {
            return Err(Error::parameter("mu is not a distribution"));
        }
        Ok(())
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    pub fn reward_at(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn cost_at(&self, s: usize, a: usize) -> f64 {
        self.cost[s * self.n_actions + a]
    }

    /// Upper bound on the discounted cost return, `max cost/(1-γ)`.
    pub fn b_c(&self) -> f64 {
        let max_cost = self.cost.iter().cloned().fold(0.0, f64::max);
        max_cost / (1.0 - self.gamma)
    }

    /// Horizon at which the discounted tail `γ^T·B_c` drops below `tol`.
    pub fn truncation_horizon(&self, tol: f64) -> usize {
        let b_c = self.b_c().max(1.0);
        ((tol / b_c).ln() / self.gamma.ln()).ceil().max(1.0) as usize
    }

    /// Parses the plain-text table format (see `data/risky_chain.cmdp`).
    pub fn from_table_str(text: &str) -> Result<Self> {
        let mut n_states = None;
        let mut n_actions = None;
        let mut gamma = None;
        let mut d = None;
        let mut mu = None;
        let mut rewards = Vec::new();
        let mut costs = Vec::new();
        let mut transitions = Vec::new();

        let parse_f = |tok: &str, line_no: usize| -> Result<f64> {
            tok.parse::<f64>().map_err(|_| {
                Error::parameter(format!("line {line_no}: expected a number, got '{tok}'"))
            })
        };
        let parse_u = |tok: &str, line_no: usize| -> Result<usize> {
            tok.parse::<usize>().map_err(|_| {
                Error::parameter(format!("line {line_no}: expected an index, got '{tok}'"))
            })
        };

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "states" if toks.len() == 2 => n_states = Some(parse_u(toks[1], line_no)?),
                "actions" if toks.len() == 2 => n_actions = Some(parse_u(toks[1], line_no)?),
                "gamma" if toks.len() == 2 => gamma = Some(parse_f(toks[1], line_no)?),
                "cost_limit" if toks.len() == 2 => d = Some(parse_f(toks[1], line_no)?),
                "mu" => {
                    let row: Result<Vec<f64>> =
                        toks[1..].iter().map(|t| parse_f(t, line_no)).collect();
                    mu = Some(row?);
                }
                "reward" if toks.len() == 4 => rewards.push((
                    parse_u(toks[1], line_no)?,
                    parse_u(toks[2], line_no)?,
                    parse_f(toks[3], line_no)?,
                )),
                "cost" if toks.len() == 4 => costs.push((
                    parse_u(toks[1], line_no)?,
                    parse_u(toks[2], line_no)?,
                    parse_f(toks[3], line_no)?,
                )),
                "transition" if toks.len() == 5 => transitions.push((
                    parse_u(toks[1], line_no)?,
                    parse_u(toks[2], line_no)?,
                    parse_u(toks[3], line_no)?,
                    parse_f(toks[4], line_no)?,
                )),
                other => {
                    return Err(Error::parameter(format!(
                        "line {line_no}: unknown or malformed directive '{other}'"
                    )))
                }
            }
        }

        let s = n_states.ok_or_else(|| Error::parameter("missing 'states' directive"))?;
        let a = n_actions.ok_or_else(|| Error::parameter("missing 'actions' directive"))?;
        let gamma = gamma.ok_or_else(|| Error::parameter("missing 'gamma' directive"))?;
        let d = d.ok_or_else(|| Error::parameter("missing 'cost_limit' directive"))?;
        let mu = mu.ok_or_else(|| Error::parameter("missing 'mu' directive"))?;

        let bounds = |st: usize, ac: usize| -> Result<()> {
            if st >= s || ac >= a {
                return Err(Error::parameter(format!("index ({st},{ac}) out of range")));
            }
            Ok(())
        };
        let mut reward = vec![0.0; s * a];
        for (st, ac, v) in rewards {
            bounds(st, ac)?;
            reward[st * a + ac] = v;
        }
        let mut cost = vec![0.0; s * a];
        for (st, ac, v) in costs {
            bounds(st, ac)?;
            cost[st * a + ac] = v;
        }
        let mut transition = vec![0.0; s * a * s];
        for (st, ac, ns, p) in transitions {
            bounds(st, ac)?;
            if ns >= s {
                return Err(Error::parameter(format!("next state {ns} out of range")));
            }
            transition[(st * a + ac) * s + ns] = p;
        }
        Self::new(s, a, transition, reward, cost, mu, gamma, d)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::parameter(format!("cannot read {}: {e}", path.display())))?;
        Self::from_table_str(&text)
    }

    /// The instance shipped with the repository (also at
    /// `data/risky_chain.cmdp`).
    pub fn reference_instance() -> Self {
        Self::from_table_str(include_str!("../data/risky_chain.cmdp"))
            .expect("bundled instance is valid")
    }
}

/// Per-state softmax policy over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    /// Row-major `[s][a]`.
    pub logits: Vec<f64>,
    pub n_states: usize,
    pub n_actions: usize,
    /// Gradient-ascent step size.
    pub step_size: f64,
    /// Base RNG seed associated with this policy (training may combine it
    /// with its own run seed).
    pub seed: u64,
}

impl SoftmaxPolicy {
    pub fn uniform(n_states: usize, n_actions: usize, step_size: f64, seed: u64) -> Self {
        Self {
            logits: vec![0.0; n_states * n_actions],
            n_states,
            n_actions,
            step_size,
            seed,
        }
    }

    /// Action probabilities at `s` (numerically stable softmax).
    pub fn probs(&self, s: usize) -> Vec<f64> {
        let row = &self.logits[s * self.n_actions..(s + 1) * self.n_actions];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    fn prob_table(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| self.probs(s)).collect()
    }
}

/// Exact discounted returns `(J, J_c)` under a policy, from the linear
/// fixed-point equations (no sampling). This is the oracle for the sampled
/// estimates.
pub fn exact_returns(cmdp: &TabularCmdp, policy: &SoftmaxPolicy) -> Result<(f64, f64)> {
    cmdp.validate()?;
    if policy.n_states != cmdp.n_states || policy.n_actions != cmdp.n_actions {
        return Err(Error::parameter("policy shape does not match the CMDP"));
    }
    let s = cmdp.n_states;
    let probs = policy.prob_table();

    // Policy-averaged transition matrix and immediate vectors.
    let mut p_pi = nalgebra::DMatrix::<f64>::zeros(s, s);
    let mut r_pi = nalgebra::DVector::<f64>::zeros(s);
    let mut c_pi = nalgebra::DVector::<f64>::zeros(s);
    for st in 0..s {
        for (ac, &pa) in probs[st].iter().enumerate() {
            r_pi[st] += pa * cmdp.reward_at(st, ac);
            c_pi[st] += pa * cmdp.cost_at(st, ac);
            for (ns, &p) in cmdp.transition_row(st, ac).iter().enumerate() {
                p_pi[(st, ns)] += pa * p;
            }
        }
    }
    let system = nalgebra::DMatrix::<f64>::identity(s, s) - cmdp.gamma * p_pi;
    let lu = system.lu();
    let v_r = lu
        .solve(&r_pi)
        .ok_or_else(|| Error::Singular("discounted fixed-point system is singular".into()))?;
    let v_c = lu
        .solve(&c_pi)
        .ok_or_else(|| Error::Singular("discounted fixed-point system is singular".into()))?;
    let j: f64 = (0..s).map(|st| cmdp.mu[st] * v_r[st]).sum();
    let j_c: f64 = (0..s).map(|st| cmdp.mu[st] * v_c[st]).sum();
    Ok((j, j_c))
}

/// One sampled step record: state, action, reward, cost.
type Step = (usize, usize, f64, f64);

struct Episode {
    steps: Vec<Step>,
    reward_return: f64,
    cost_return: f64,
}

fn episode_seed(seed: u64, epoch: usize, episode: usize) -> u64 {
    // splitmix-style mixing keeps per-episode streams independent of the
    // thread schedule.
    let mut z = seed
        .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((episode as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn sample_episode(
    cmdp: &TabularCmdp,
    probs: &[Vec<f64>],
    horizon: usize,
    rng: &mut impl Rng,
) -> Episode {
    let mut steps = Vec::with_capacity(horizon);
    let mut state = sample_categorical(rng, &cmdp.mu);
    let mut reward_return = 0.0;
    let mut cost_return = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        let action = sample_categorical(rng, &probs[state]);
        let r = cmdp.reward_at(state, action);
        let c = cmdp.cost_at(state, action);
        steps.push((state, action, r, c));
        reward_return += discount * r;
        cost_return += discount * c;
        discount *= cmdp.gamma;
        state = sample_categorical(rng, cmdp.transition_row(state, action));
    }
    Episode {
        steps,
        reward_return,
        cost_return,
    }
}

/// Per-epoch record in the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// Sampled mean discounted reward return of the sampling policy.
    pub j_hat: f64,
    /// Sampled mean discounted cost return.
    pub jc_hat: f64,
    /// Exact returns of the sampling policy (oracle).
    pub exact_j: f64,
    pub exact_jc: f64,
    /// Multiplier after this epoch's controller update.
    pub lambda: f64,
    /// Per-episode discounted cost returns (metrics input).
    pub episode_costs: Vec<f64>,
}

/// Full training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub horizon: usize,
    pub final_policy: SoftmaxPolicy,
}

impl TrainLog {
    /// All per-episode cost returns, concatenated over epochs.
    pub fn all_episode_costs(&self) -> Vec<f64> {
        self.epochs
            .iter()
            .flat_map(|e| e.episode_costs.iter().copied())
            .collect()
    }
}

/// Trains the softmax policy for `epochs` epochs of `episodes_per_epoch`
/// episodes, updating the multiplier once per epoch through the configured
/// controller.
///
/// Episodes within an epoch run in parallel with per-episode RNG streams
/// derived from `(seed, epoch, episode)`; gradients are reduced in episode
/// order, so the result is bit-identical for a given seed regardless of
/// thread scheduling.
pub fn train(
    cmdp: &TabularCmdp,
    policy0: &SoftmaxPolicy,
    ctrl: &ControllerConfig,
    ref_params: ReferenceParams,
    epochs: usize,
    episodes_per_epoch: usize,
    seed: u64,
) -> Result<TrainLog> {
    cmdp.validate()?;
    ctrl.validate()?;
    if episodes_per_epoch == 0 {
        return Err(Error::parameter("episodes_per_epoch must be >= 1"));
    }
    let traj = ReferenceTrajectory::new(ref_params)?;
    let horizon = cmdp.truncation_horizon(1e-6);
    let mut policy = policy0.clone();
    let mut ctrl_state = ControllerState::new(ctrl);
    let mut log = TrainLog {
        epochs: Vec::with_capacity(epochs),
        horizon,
        final_policy: policy0.clone(),
    };

    for epoch in 0..epochs {
        let probs = policy.prob_table();
        let episodes: Vec<Episode> = (0..episodes_per_epoch)
            .into_par_iter()
            .map(|ep| {
                let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, epoch, ep));
                sample_episode(cmdp, &probs, horizon, &mut rng)
            })
            .collect();

        let n = episodes.len() as f64;
        let j_hat = episodes.iter().map(|e| e.reward_return).sum::<f64>() / n;
        let jc_hat = episodes.iter().map(|e| e.cost_return).sum::<f64>() / n;
        let (exact_j, exact_jc) = exact_returns(cmdp, &policy)?;

        // Dual update from the sampled cost return.
        let reference = match ctrl.mode {
            ControllerMode::AdrcDiscrete | ControllerMode::AdrcContinuous => {
                Some(traj.eval(epoch as f64 * ctrl.dt)?)
            }
            _ => None,
        };
        let (next_state, lambda) = update_lambda(&ctrl_state, ctrl, jc_hat, reference)?;
        ctrl_state = next_state;

        // Likelihood-ratio ascent on the rescaled penalized objective with a
        // per-state baseline. Two passes: returns-to-go, then gradients.
        let scale = 1.0 / (1.0 + lambda);
        let mut state_sum = vec![0.0; cmdp.n_states];
        let mut state_cnt = vec![0usize; cmdp.n_states];
        let mut returns: Vec<Vec<f64>> = Vec::with_capacity(episodes.len());
        for e in &episodes {
            let mut g = 0.0;
            let mut rtg = vec![0.0; e.steps.len()];
            for (i, &(s, _, r, c)) in e.steps.iter().enumerate().rev() {
                g = scale * (r - lambda * c) + cmdp.gamma * g;
                rtg[i] = g;
                state_sum[s] += g;
                state_cnt[s] += 1;
            }
            returns.push(rtg);
        }
        let baseline: Vec<f64> = state_sum
            .iter()
            .zip(&state_cnt)
            .map(|(sum, &cnt)| if cnt > 0 { sum / cnt as f64 } else { 0.0 })
            .collect();

        let mut grad = vec![0.0; cmdp.n_states * cmdp.n_actions];
        for (e, rtg) in episodes.iter().zip(&returns) {
            let mut discount = 1.0;
            for (i, &(s, a, _, _)) in e.steps.iter().enumerate() {
                let advantage = rtg[i] - baseline[s];
                let row = &probs[s];
                for action in 0..cmdp.n_actions {
                    let indicator = if action == a { 1.0 } else { 0.0 };
                    grad[s * cmdp.n_actions + action] +=
                        discount * advantage * (indicator - row[action]);
                }
                discount *= cmdp.gamma;
            }
        }
        for (logit, g) in policy.logits.iter_mut().zip(&grad) {
            *logit += policy.step_size * g / n;
            if logit.abs() > 50.0 {
                return Err(Error::Divergence {
                    step: epoch,
                    detail: format!("policy logits diverged (|logit| = {} > 50)", logit.abs()),
                });
            }
        }

        log.epochs.push(EpochLog {
            j_hat,
            jc_hat,
            exact_j,
            exact_jc,
            lambda,
            episode_costs: episodes.iter().map(|e| e.cost_return).collect(),
        });
    }
    log.final_policy = policy;
    Ok(log)
}

/// Monte-Carlo estimate of `(J, J_c)` for a fixed policy: `n_episodes`
/// truncated rollouts. Exposed for oracle tests and coverage experiments.
pub fn monte_carlo_returns(
    cmdp: &TabularCmdp,
    policy: &SoftmaxPolicy,
    n_episodes: usize,
    seed: u64,
) -> Result<(f64, f64, Vec<f64>)> {
    cmdp.validate()?;
    let probs = policy.prob_table();
    let horizon = cmdp.truncation_horizon(1e-6);
    let costs: Vec<(f64, f64)> = (0..n_episodes)
        .into_par_iter()
        .map(|ep| {
            let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, 0, ep));
            let e = sample_episode(cmdp, &probs, horizon, &mut rng);
            (e.reward_return, e.cost_return)
        })
        .collect();
    let n = costs.len() as f64;
    let j = costs.iter().map(|c| c.0).sum::<f64>() / n;
    let j_c = costs.iter().map(|c| c.1).sum::<f64>() / n;
    Ok((j, j_c, costs.into_iter().map(|c| c.1).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::GainSet;

    fn single_state_cmdp(reward: f64, gamma: f64) -> TabularCmdp {
        TabularCmdp::new(
            1,
            1,
            vec![1.0],
            vec![reward],
            vec![0.0],
            vec![1.0],
            gamma,
            25.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_reward_gives_zero_return() {
        let cmdp = single_state_cmdp(0.0, 0.9);
        let policy = SoftmaxPolicy::uniform(1, 1, 0.1, 0);
        let (j, j_c) = exact_returns(&cmdp, &policy).unwrap();
        assert_eq!(j, 0.0);
        assert_eq!(j_c, 0.0);
    }

    #[test]
    fn geometric_series_return() {
        let cmdp = single_state_cmdp(1.0, 0.9);
        let policy = SoftmaxPolicy::uniform(1, 1, 0.1, 0);
        let (j, _) = exact_returns(&cmdp, &policy).unwrap();
        assert!((j - 10.0).abs() < 1e-12);
    }

    #[test]
    fn reference_instance_loads_and_is_risky() {
        let cmdp = TabularCmdp::reference_instance();
        assert_eq!(cmdp.n_states, 6);
        assert_eq!(cmdp.n_actions, 2);
        assert_eq!(cmdp.d, 6.0);
        assert!((cmdp.b_c() - 15.0).abs() < 1e-12);

        // Uniform policy already violates the limit; the all-safe policy is
        // comfortably feasible, so the constrained optimum is interior.
        let uniform = SoftmaxPolicy::uniform(6, 2, 0.1, 0);
        let (_, jc_uniform) = exact_returns(&cmdp, &uniform).unwrap();
        assert!(jc_uniform > cmdp.d, "uniform J_c = {jc_uniform}");

        let mut safe = SoftmaxPolicy::uniform(6, 2, 0.1, 0);
        for s in 0..6 {
            safe.logits[s * 2] = 25.0; // all mass on the safe action
        }
        let (j_safe, jc_safe) = exact_returns(&cmdp, &safe).unwrap();
        assert!(jc_safe < 1e-6);

        let mut risky = SoftmaxPolicy::uniform(6, 2, 0.1, 0);
        for s in 0..6 {
            risky.logits[s * 2 + 1] = 25.0;
        }
        let (j_risky, jc_risky) = exact_returns(&cmdp, &risky).unwrap();
        assert!((jc_risky - 15.0).abs() < 1e-9, "risky J_c = {jc_risky}");
        assert!(j_risky > j_safe, "risky must out-earn safe unconstrained");
    }

    #[test]
    fn monte_carlo_matches_exact_returns() {
        // Oracle agreement within 3 standard errors at one million episodes.
        let cmdp = TabularCmdp::reference_instance();
        let policy = SoftmaxPolicy::uniform(6, 2, 0.1, 0);
        let (j_exact, jc_exact) = exact_returns(&cmdp, &policy).unwrap();
        let n = 1_000_000;
        let (j_mc, jc_mc, costs) = monte_carlo_returns(&cmdp, &policy, n, 2024).unwrap();

        let mean = jc_mc;
        let var = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (jc_mc - jc_exact).abs() < 3.0 * se + 1e-6,
            "J_c: {jc_mc} vs {jc_exact} (se {se})"
        );
        // Reward returns have comparable spread; reuse the cost standard
        // error scale for a coarse 4-sigma gate.
        assert!(
            (j_mc - j_exact).abs() < 4.0 * se + 1e-6,
            "J: {j_mc} vs {j_exact}"
        );
    }

    #[test]
    fn unconstrained_training_improves_reward() {
        // lambda capped at 0: plain policy gradient; reward should rise.
        let cmdp = TabularCmdp::reference_instance();
        let policy = SoftmaxPolicy::uniform(6, 2, 0.2, 0);
        let mut ctrl = ControllerConfig::classical(0.035).raw();
        ctrl.lambda_max = 0.0;
        ctrl.lambda_init = 0.0;
        ctrl.cost_limit = cmdp.d;
        let p = ReferenceParams::new(0.1, cmdp.d, 7.5, 0.0);
        let log = train(&cmdp, &policy, &ctrl, p, 40, 16, 3).unwrap();
        let first = log.epochs[0].exact_j;
        let last = log.epochs.last().unwrap().exact_j;
        assert!(last > first + 0.5, "J did not improve: {first} -> {last}");
        assert!(log.epochs.iter().all(|e| e.lambda == 0.0));
    }

    #[test]
    fn deterministic_replay() {
        let cmdp = TabularCmdp::reference_instance();
        let policy = SoftmaxPolicy::uniform(6, 2, 0.15, 0);
        let mut ctrl = ControllerConfig::adrc(GainSet::default());
        ctrl.cost_limit = cmdp.d;
        let p = ReferenceParams::new(0.1, cmdp.d, 7.5, 0.0);
        let a = train(&cmdp, &policy, &ctrl, p, 12, 8, 42).unwrap();
        let b = train(&cmdp, &policy, &ctrl, p, 12, 8, 42).unwrap();
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.final_policy, b.final_policy);
    }

    #[test]
    fn lambda_trace_replays_offline() {
        let cmdp = TabularCmdp::reference_instance();
        let policy = SoftmaxPolicy::uniform(6, 2, 0.15, 0);
        let mut ctrl = ControllerConfig::adrc(GainSet::default());
        ctrl.cost_limit = cmdp.d;
        let p = ReferenceParams::new(0.1, cmdp.d, 7.5, 0.0);
        let log = train(&cmdp, &policy, &ctrl, p, 25, 8, 7).unwrap();

        let traj = ReferenceTrajectory::new(p).unwrap();
        let mut st = ControllerState::new(&ctrl);
        for (epoch, entry) in log.epochs.iter().enumerate() {
            let rp = traj.eval(epoch as f64 * ctrl.dt).unwrap();
            let (next, lam) = update_lambda(&st, &ctrl, entry.jc_hat, Some(rp)).unwrap();
            st = next;
            assert_eq!(lam, entry.lambda, "epoch {epoch}");
        }
    }

    #[test]
    fn hoeffding_consistency_coverage() {
        // |J_c_hat - J_c| <= eps_N jointly over K batches, with coverage at
        // least 1 - eta across trials.
        use crate::surrogate::{lf_envelope, TheoryInputs};
        let cmdp = TabularCmdp::reference_instance();
        let policy = SoftmaxPolicy::uniform(6, 2, 0.1, 0);
        let (_, jc_exact) = exact_returns(&cmdp, &policy).unwrap();
        let (k_batches, n, eta) = (10usize, 100usize, 0.05);
        let env = lf_envelope(&TheoryInputs {
            delta: 0.0,
            n,
            dt_update: 1.0,
            b_c: cmdp.b_c(),
            gamma: cmdp.gamma,
            lambda_max: 0.0,
            horizon_k: k_batches,
            eta,
        })
        .unwrap();
        let trials = 100;
        let mut covered = 0;
        for trial in 0..trials {
            let mut ok = true;
            for batch in 0..k_batches {
                let seed = 10_000 + (trial * k_batches + batch) as u64;
                let (_, jc_hat, _) = monte_carlo_returns(&cmdp, &policy, n, seed).unwrap();
                if (jc_hat - jc_exact).abs() > env.eps_n {
                    ok = false;
                    break;
                }
            }
            if ok {
                covered += 1;
            }
        }
        let coverage = covered as f64 / trials as f64;
        assert!(coverage >= 1.0 - eta, "coverage {coverage}");
    }

    #[test]
    fn divergence_guard_fires() {
        let cmdp = TabularCmdp::reference_instance();
        let mut policy = SoftmaxPolicy::uniform(6, 2, 1e6, 0); // absurd step size
        policy.logits[0] = 49.9;
        let mut ctrl = ControllerConfig::classical(0.035).raw();
        ctrl.cost_limit = cmdp.d;
        let p = ReferenceParams::new(0.1, cmdp.d, 7.5, 0.0);
        let err = train(&cmdp, &policy, &ctrl, p, 10, 4, 0);
        assert!(matches!(err, Err(Error::Divergence { .. })));
    }

    #[test]
    fn table_parser_rejects_bad_input() {
        assert!(TabularCmdp::from_table_str("states 2\nactions 1\n").is_err());
        let bad_row = "states 1\nactions 1\ngamma 0.9\ncost_limit 1\nmu 1\n\
                       reward 0 0 1\ncost 0 0 0\ntransition 0 0 0 0.5\n";
        assert!(TabularCmdp::from_table_str(bad_row).is_err());
        let unknown = "states 1\nwhat 3\n";
        assert!(TabularCmdp::from_table_str(unknown).is_err());
    }
}
