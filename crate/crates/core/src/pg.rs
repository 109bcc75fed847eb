//! Policy gradients on left/right worlds with one parameter per state:
//! π(left|s) = 0.5 + θ_s, π(right|s) = 0.5 − θ_s.

use std::str::FromStr;

use rand::Rng;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::mdp::{returns_to_go, ActionId, StartDistribution, StateId, TabularPolicy, Trajectory, TransitionModel};

/// Distance kept from ±0.5 while training so neither action reaches
/// probability 0.
pub const TRAINING_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipMode {
    /// θ ∈ [−0.499, 0.499].
    Training,
    /// θ ∈ [−0.5, 0.5].
    PaperTrace,
}

impl ClipMode {
    fn bounds(self) -> (f64, f64) {
        match self {
            ClipMode::Training => (-0.5 + TRAINING_MARGIN, 0.5 - TRAINING_MARGIN),
            ClipMode::PaperTrace => (-0.5, 0.5),
        }
    }
}

/// How a state's action distribution is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateParam {
    Terminal,
    /// Only one action is available; it is taken with probability 1.
    Fixed(ActionId),
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPolicy {
    params: Vec<StateParam>,
    theta: Vec<f64>,
    left: ActionId,
    right: ActionId,
    mode: ClipMode,
}

impl ThetaPolicy {
    /// θ = 0 everywhere. Every non-terminal state must offer `left`, `right`
    /// or both, and nothing else.
    pub fn new(model: &TransitionModel, mode: ClipMode) -> Result<Self> {
        let left = model.action("left")?;
        let right = model.action("right")?;
        let mut params = Vec::with_capacity(model.n_states());
        for s in model.states() {
            if model.is_terminal(s) {
                params.push(StateParam::Terminal);
                continue;
            }
            let acts: Vec<ActionId> = model.actions_at(s).collect();
            let p = match acts.as_slice() {
                [a, b] if *a == left && *b == right => StateParam::Linear,
                [a] if *a == left || *a == right => StateParam::Fixed(*a),
                _ => {
                    return Err(Error::InvalidModel(format!(
                        "state `{}` must offer only left and right",
                        model.state_label(s)
                    )))
                }
            };
            params.push(p);
        }
        Ok(Self {
            theta: vec![0.0; params.len()],
            params,
            left,
            right,
            mode,
        })
    }

    pub fn mode(&self) -> ClipMode {
        self.mode
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.mode.bounds()
    }

    pub fn param(&self, s: StateId) -> StateParam {
        self.params[s.0]
    }

    pub fn theta(&self, s: StateId) -> f64 {
        self.theta[s.0]
    }

    /// Stores θ_s clipped to the mode's bounds and returns the stored value.
    /// Only parameterized states accept a value.
    pub fn set_theta(&mut self, s: StateId, value: f64) -> Result<f64> {
        if self.params[s.0] != StateParam::Linear {
            return Err(Error::InvalidParameter(format!("state {} has no free parameter", s.0)));
        }
        if !value.is_finite() {
            return Err(Error::InvalidParameter("theta must be finite".into()));
        }
        let (lo, hi) = self.bounds();
        self.theta[s.0] = value.clamp(lo, hi);
        Ok(self.theta[s.0])
    }

    /// Action distribution at `s`; empty for terminal states. The two
    /// probabilities always sum to exactly 1.
    pub fn probs(&self, s: StateId) -> Vec<(ActionId, f64)> {
        match self.params[s.0] {
            StateParam::Terminal => Vec::new(),
            StateParam::Fixed(a) => vec![(a, 1.0)],
            StateParam::Linear => {
                let t = self.theta[s.0];
                let (pl, pr) = if t >= 0.0 {
                    let pl = 0.5 + t;
                    (pl, 1.0 - pl)
                } else {
                    let pr = 0.5 - t;
                    (1.0 - pr, pr)
                };
                vec![(self.left, pl), (self.right, pr)]
            }
        }
    }

    pub fn prob(&self, s: StateId, a: ActionId) -> f64 {
        self.probs(s).iter().find(|(b, _)| *b == a).map_or(0.0, |(_, p)| *p)
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: StateId, rng: &mut R) -> Option<ActionId> {
        let probs = self.probs(s);
        match probs.as_slice() {
            [] => None,
            [(a, _)] => Some(*a),
            [(l, pl), (r, _)] => Some(if rng.random::<f64>() < *pl { *l } else { *r }),
            _ => unreachable!("at most two actions"),
        }
    }

    /// ∂/∂θ_s log π(a|s).
    pub fn log_grad(&self, model: &TransitionModel, s: StateId, a: ActionId) -> Result<f64> {
        let singular = || Error::SingularGradient {
            state: model.state_label(s).into(),
            action: model.action_label(a).into(),
        };
        match self.params[s.0] {
            StateParam::Terminal => Err(Error::TerminalState(model.state_label(s).into())),
            StateParam::Fixed(b) if b == a => Ok(0.0),
            StateParam::Fixed(_) => Err(singular()),
            StateParam::Linear => {
                let t = self.theta[s.0];
                if a == self.left {
                    let p = 0.5 + t;
                    if p > 0.0 {
                        Ok(1.0 / p)
                    } else {
                        Err(singular())
                    }
                } else if a == self.right {
                    let p = 0.5 - t;
                    if p > 0.0 {
                        Ok(-1.0 / p)
                    } else {
                        Err(singular())
                    }
                } else {
                    Err(singular())
                }
            }
        }
    }

    /// The more likely action at `s`; `None` at θ_s = 0 or a terminal state.
    pub fn preferred(&self, s: StateId) -> Option<ActionId> {
        match self.params[s.0] {
            StateParam::Terminal => None,
            StateParam::Fixed(a) => Some(a),
            StateParam::Linear => {
                let t = self.theta[s.0];
                if t > 0.0 {
                    Some(self.left)
                } else if t < 0.0 {
                    Some(self.right)
                } else {
                    None
                }
            }
        }
    }

    pub fn to_tabular(&self) -> TabularPolicy {
        TabularPolicy::from_rows((0..self.params.len()).map(|s| self.probs(StateId(s))).collect())
    }

    /// θ keyed by state label, parameterized states only.
    pub fn theta_json(&self, model: &TransitionModel) -> Value {
        let mut out = Map::new();
        for s in model.states() {
            if self.params[s.0] == StateParam::Linear {
                out.insert(model.state_label(s).into(), json!(self.theta[s.0]));
            }
        }
        Value::Object(out)
    }

    pub fn probs_json(&self, model: &TransitionModel) -> Value {
        self.to_tabular().to_json(model)
    }
}

/// π(·|s) under `policy`.
pub fn theta_policy_probs(policy: &ThetaPolicy, s: StateId) -> Vec<(ActionId, f64)> {
    policy.probs(s)
}

/// ∂/∂θ_s log π(a|s): 1/(0.5+θ) for left, −1/(0.5−θ) for right.
pub fn log_policy_grad(policy: &ThetaPolicy, model: &TransitionModel, s: StateId, a: ActionId) -> Result<f64> {
    policy.log_grad(model, s, a)
}

/// Tabular state values for the critic, with its step size β.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticTable {
    values: Vec<f64>,
    pub beta: f64,
}

impl CriticTable {
    pub fn new(model: &TransitionModel, beta: f64) -> Self {
        Self {
            values: vec![0.0; model.n_states()],
            beta,
        }
    }

    pub fn value(&self, s: StateId) -> f64 {
        self.values[s.0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    fn bootstrap(&self, model: &TransitionModel, s: StateId) -> f64 {
        if model.is_terminal(s) {
            0.0
        } else {
            self.values[s.0]
        }
    }

    pub fn to_json(&self, model: &TransitionModel) -> Value {
        let mut out = Map::new();
        for s in model.states() {
            out.insert(model.state_label(s).into(), json!(self.values[s.0]));
        }
        Value::Object(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub state: StateId,
    pub action: ActionId,
    pub reward: f64,
    pub next: StateId,
    /// TD error used for the critic update.
    pub delta: f64,
    /// Signal used for the actor update.
    pub advantage: f64,
    pub theta_before: f64,
    pub theta_after: f64,
    pub v_before: f64,
    pub v_after: f64,
}

impl StepRecord {
    pub fn to_json(&self, model: &TransitionModel) -> Value {
        json!({
            "state": model.state_label(self.state),
            "action": model.action_label(self.action),
            "reward": self.reward,
            "next": model.state_label(self.next),
            "delta": self.delta,
            "advantage": self.advantage,
            "theta_before": self.theta_before,
            "theta_after": self.theta_after,
            "v_before": self.v_before,
            "v_after": self.v_after,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub episodes: usize,
    pub max_steps: usize,
}

impl Default for PgConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.1,
            gamma: 0.9,
            episodes: 5000,
            max_steps: 100,
        }
    }
}

impl PgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        Ok(())
    }
}

fn sample_episode<R: Rng + ?Sized>(
    model: &TransitionModel,
    policy: &ThetaPolicy,
    start: StateId,
    max_steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut steps = Vec::new();
    let mut s = start;
    while steps.len() < max_steps && !model.is_terminal(s) {
        let a = policy
            .sample(s, rng)
            .ok_or_else(|| Error::TerminalState(model.state_label(s).into()))?;
        let (next, reward) = model.sample(s, a, rng)?;
        steps.push(crate::mdp::Step { state: s, action: a, reward });
        s = next;
    }
    Ok(Trajectory {
        start_state: start,
        steps,
        final_state: s,
        terminated: model.is_terminal(s),
    })
}

/// θ_{s_t} ← clip(θ_{s_t} + α G_t ∇ log π(a_t|s_t)) for every step of one
/// episode. Gradients are taken at the parameters the episode was
/// generated with.
pub fn reinforce_update(
    model: &TransitionModel,
    policy: &mut ThetaPolicy,
    episode: &Trajectory,
    alpha: f64,
    gamma: f64,
) -> Result<()> {
    let snapshot = policy.clone();
    let g = returns_to_go(&episode.rewards(), gamma);
    for (t, step) in episode.steps.iter().enumerate() {
        let grad = snapshot.log_grad(model, step.state, step.action)?;
        if policy.param(step.state) == StateParam::Linear {
            let next = policy.theta(step.state) + alpha * g[t] * grad;
            policy.set_theta(step.state, next)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceResult {
    pub policy: ThetaPolicy,
    /// Discounted return of each episode.
    pub episode_returns: Vec<f64>,
}

/// Monte Carlo policy gradient without a baseline.
pub fn reinforce<R: Rng + ?Sized>(
    model: &TransitionModel,
    policy0: &ThetaPolicy,
    starts: &StartDistribution,
    config: &PgConfig,
    rng: &mut R,
) -> Result<ReinforceResult> {
    config.validate()?;
    let mut policy = policy0.clone();
    let mut episode_returns = Vec::with_capacity(config.episodes);
    for _ in 0..config.episodes {
        let episode = sample_episode(model, &policy, starts.sample(rng), config.max_steps, rng)?;
        episode_returns.push(episode.discounted_return(config.gamma));
        reinforce_update(model, &mut policy, &episode, config.alpha, config.gamma)?;
    }
    Ok(ReinforceResult {
        policy,
        episode_returns,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcMode {
    /// Critic then actor after every transition, δ_t as the advantage.
    Online,
    /// All critic updates along the episode first, then actor updates with
    /// advantages recomputed from the updated critic.
    PaperTrace,
}

impl FromStr for AcMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "online" => Ok(AcMode::Online),
            "paper-trace" | "paper_trace" => Ok(AcMode::PaperTrace),
            _ => Err(Error::InvalidParameter(format!(
                "unknown actor-critic mode `{s}`; valid: online, paper-trace"
            ))),
        }
    }
}

impl AcMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AcMode::Online => "online",
            AcMode::PaperTrace => "paper-trace",
        }
    }
}

fn td_error(model: &TransitionModel, critic: &CriticTable, s: StateId, r: f64, next: StateId, gamma: f64) -> f64 {
    r + gamma * critic.bootstrap(model, next) - critic.value(s)
}

fn actor_step(
    model: &TransitionModel,
    policy: &mut ThetaPolicy,
    s: StateId,
    a: ActionId,
    advantage: f64,
    alpha: f64,
) -> Result<(f64, f64)> {
    let before = policy.theta(s);
    let grad = policy.log_grad(model, s, a)?;
    let after = if policy.param(s) == StateParam::Linear {
        policy.set_theta(s, before + alpha * advantage * grad)?
    } else {
        before
    };
    Ok((before, after))
}

fn online_step(
    model: &TransitionModel,
    policy: &mut ThetaPolicy,
    critic: &mut CriticTable,
    step: (StateId, ActionId, f64, StateId),
    alpha: f64,
    gamma: f64,
) -> Result<StepRecord> {
    let (s, a, r, next) = step;
    let v_before = critic.value(s);
    let delta = td_error(model, critic, s, r, next, gamma);
    critic.values[s.0] += critic.beta * delta;
    let (theta_before, theta_after) = actor_step(model, policy, s, a, delta, alpha)?;
    Ok(StepRecord {
        state: s,
        action: a,
        reward: r,
        next,
        delta,
        advantage: delta,
        theta_before,
        theta_after,
        v_before,
        v_after: critic.value(s),
    })
}

/// Applies one episode's worth of actor-critic updates to a supplied
/// trajectory. No randomness is involved.
pub fn actor_critic_episode(
    model: &TransitionModel,
    policy: &mut ThetaPolicy,
    critic: &mut CriticTable,
    episode: &Trajectory,
    alpha: f64,
    gamma: f64,
    mode: AcMode,
) -> Result<Vec<StepRecord>> {
    let steps: Vec<(StateId, ActionId, f64, StateId)> = episode
        .steps
        .iter()
        .enumerate()
        .map(|(t, st)| (st.state, st.action, st.reward, episode.successor(t)))
        .collect();
    match mode {
        AcMode::Online => steps
            .into_iter()
            .map(|step| online_step(model, policy, critic, step, alpha, gamma))
            .collect(),
        AcMode::PaperTrace => {
            let mut critic_pass = Vec::with_capacity(steps.len());
            for &(s, _, r, next) in &steps {
                let v_before = critic.value(s);
                let delta = td_error(model, critic, s, r, next, gamma);
                critic.values[s.0] += critic.beta * delta;
                critic_pass.push((v_before, delta, critic.value(s)));
            }
            let mut trace = Vec::with_capacity(steps.len());
            for (&(s, a, r, next), &(v_before, delta, v_after)) in steps.iter().zip(&critic_pass) {
                let advantage = td_error(model, critic, s, r, next, gamma);
                let (theta_before, theta_after) = actor_step(model, policy, s, a, advantage, alpha)?;
                trace.push(StepRecord {
                    state: s,
                    action: a,
                    reward: r,
                    next,
                    delta,
                    advantage,
                    theta_before,
                    theta_after,
                    v_before,
                    v_after,
                });
            }
            Ok(trace)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticResult {
    pub policy: ThetaPolicy,
    pub critic: CriticTable,
    pub trace: Vec<StepRecord>,
    pub episode_returns: Vec<f64>,
}

/// Tabular actor-critic on sampled episodes. In online mode every
/// transition is learned from as soon as it is observed.
#[allow(clippy::too_many_arguments)]
pub fn actor_critic<R: Rng + ?Sized>(
    model: &TransitionModel,
    policy0: &ThetaPolicy,
    critic0: &CriticTable,
    starts: &StartDistribution,
    config: &PgConfig,
    mode: AcMode,
    rng: &mut R,
) -> Result<ActorCriticResult> {
    config.validate()?;
    let mut policy = policy0.clone();
    let mut critic = critic0.clone();
    let mut trace = Vec::new();
    let mut episode_returns = Vec::with_capacity(config.episodes);
    for _ in 0..config.episodes {
        let start = starts.sample(rng);
        match mode {
            AcMode::Online => {
                let mut s = start;
                let mut g = 0.0;
                let mut discount = 1.0;
                for _ in 0..config.max_steps {
                    if model.is_terminal(s) {
                        break;
                    }
                    let a = policy
                        .sample(s, rng)
                        .ok_or_else(|| Error::TerminalState(model.state_label(s).into()))?;
                    let (next, r) = model.sample(s, a, rng)?;
                    g += discount * r;
                    discount *= config.gamma;
                    trace.push(online_step(model, &mut policy, &mut critic, (s, a, r, next), config.alpha, config.gamma)?);
                    s = next;
                }
                episode_returns.push(g);
            }
            AcMode::PaperTrace => {
                let episode = sample_episode(model, &policy, start, config.max_steps, rng)?;
                episode_returns.push(episode.discounted_return(config.gamma));
                trace.extend(actor_critic_episode(
                    model,
                    &mut policy,
                    &mut critic,
                    &episode,
                    config.alpha,
                    config.gamma,
                    mode,
                )?);
            }
        }
    }
    Ok(ActorCriticResult {
        policy,
        critic,
        trace,
        episode_returns,
    })
}
