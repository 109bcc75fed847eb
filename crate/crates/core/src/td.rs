//! Temporal-difference learning: TD(0) evaluation, SARSA and Q-learning.
//!
//! Updates are applied online, after every transition. A terminal
//! successor always bootstraps from 0.

use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp::{greedy_policy, QTable, ValueTable};
use crate::error::{Error, Result};
use crate::mdp::{ActionId, StartDistribution, StateId, TabularPolicy, Trajectory, TransitionModel};
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    /// Always `alpha`.
    Constant,
    /// 1/n after the n-th update of the same entry.
    InverseCount,
    /// n^(−ω) after the n-th update of the same entry, ω in (0.5, 1].
    Polynomial(f64),
}

impl FromStr for StepSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(StepSize::Constant),
            "inverse_count" | "1/n" => Ok(StepSize::InverseCount),
            _ => {
                if let Some(w) = s.strip_prefix("poly:").and_then(|w| w.parse::<f64>().ok()) {
                    return Ok(StepSize::Polynomial(w));
                }
                Err(Error::InvalidParameter(format!(
                    "unknown step size `{s}`; valid: constant, inverse_count, poly:<omega>"
                )))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub episodes: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Multiplies ε after every episode.
    pub epsilon_decay: Option<f64>,
    pub step_size: StepSize,
    /// Starting value of every non-terminal q entry.
    pub q_init: f64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 0.9,
            epsilon: 0.1,
            episodes: 2000,
            max_steps: 100,
            seed: 0,
            epsilon_decay: Some(0.995),
            step_size: StepSize::Constant,
            q_init: 0.0,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if let Some(d) = self.epsilon_decay {
            if !(0.0..=1.0).contains(&d) {
                return bad("epsilon_decay must lie in [0, 1]");
            }
        }
        if let StepSize::Polynomial(w) = self.step_size {
            if !(w > 0.5 && w <= 1.0) {
                return bad("polynomial step-size exponent must lie in (0.5, 1]");
            }
        }
        if !self.q_init.is_finite() {
            return bad("q_init must be finite");
        }
        Ok(())
    }

    fn rate(&self, n: u64) -> f64 {
        match self.step_size {
            StepSize::Constant => self.alpha,
            StepSize::InverseCount => 1.0 / n as f64,
            StepSize::Polynomial(w) => (n as f64).powf(-w),
        }
    }
}

/// v(s) ← v(s) + α (r + γ v(s') − v(s)); returns the TD error.
pub fn td0_update(model: &TransitionModel, v: &mut [f64], s: StateId, reward: f64, next: StateId, alpha: f64, gamma: f64) -> f64 {
    let bootstrap = if model.is_terminal(next) { 0.0 } else { v[next.0] };
    let delta = reward + gamma * bootstrap - v[s.0];
    v[s.0] += alpha * delta;
    delta
}

/// TD(0) over supplied episodes, starting from `v0` or zeros.
pub fn td0_replay(
    model: &TransitionModel,
    episodes: &[Trajectory],
    alpha: f64,
    gamma: f64,
    v0: Option<&ValueTable>,
) -> Result<ValueTable> {
    let mut v = match v0 {
        Some(t) => t.as_slice().to_vec(),
        None => vec![0.0; model.n_states()],
    };
    for e in episodes {
        for (t, step) in e.steps.iter().enumerate() {
            td0_update(model, &mut v, step.state, step.reward, e.successor(t), alpha, gamma);
        }
    }
    ValueTable::from_values(model, v)
}

/// Samples `config.episodes` episodes under `policy` and applies the TD(0)
/// update after each transition.
pub fn td0_evaluate(
    model: &TransitionModel,
    policy: &TabularPolicy,
    starts: &StartDistribution,
    config: &LearningConfig,
) -> Result<ValueTable> {
    config.validate()?;
    policy.check(model)?;
    let mut rng = seeded_rng(config.seed);
    let mut v = vec![0.0; model.n_states()];
    let mut visits = vec![0u64; model.n_states()];
    for _ in 0..config.episodes {
        let start = starts.sample(&mut rng);
        let mut s = start;
        for _ in 0..config.max_steps {
            let a = policy
                .sample(s, &mut rng)
                .ok_or_else(|| Error::MissingPolicyRow(model.state_label(s).into()))?;
            let (next, r) = model.sample(s, a, &mut rng)?;
            visits[s.0] += 1;
            let alpha = config.rate(visits[s.0]);
            td0_update(model, &mut v, s, r, next, alpha, config.gamma);
            if model.is_terminal(next) {
                break;
            }
            s = next;
        }
    }
    ValueTable::from_values(model, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMethod {
    Sarsa,
    QLearning,
}

/// q(s,a) ← q(s,a) + α (r + γ q(s',a') − q(s,a)); returns the TD error.
/// `next_action` is ignored when `next` is terminal.
#[allow(clippy::too_many_arguments)]
pub fn sarsa_update(
    model: &TransitionModel,
    q: &mut QTable,
    s: StateId,
    a: ActionId,
    reward: f64,
    next: StateId,
    next_action: Option<ActionId>,
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    let bootstrap = match next_action {
        Some(b) if !model.is_terminal(next) => q.get(next, b).ok_or_else(|| missing(model, next, b))?,
        _ => 0.0,
    };
    apply(model, q, s, a, reward + gamma * bootstrap, alpha)
}

/// q(s,a) ← q(s,a) + α (r + γ max_b q(s',b) − q(s,a)); returns the TD error.
pub fn q_learning_update(
    model: &TransitionModel,
    q: &mut QTable,
    s: StateId,
    a: ActionId,
    reward: f64,
    next: StateId,
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    let bootstrap = if model.is_terminal(next) { 0.0 } else { q.max_value(next) };
    apply(model, q, s, a, reward + gamma * bootstrap, alpha)
}

fn apply(model: &TransitionModel, q: &mut QTable, s: StateId, a: ActionId, target: f64, alpha: f64) -> Result<f64> {
    let entry = q.get_mut(s, a).ok_or_else(|| missing(model, s, a))?;
    let delta = target - *entry;
    *entry += alpha * delta;
    Ok(delta)
}

fn missing(model: &TransitionModel, s: StateId, a: ActionId) -> Error {
    Error::MissingTransition {
        state: model.state_label(s).into(),
        action: model.action_label(a).into(),
    }
}

/// Uniform over the available actions with probability ε, otherwise
/// greedy (lowest index on ties).
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &QTable, s: StateId, epsilon: f64, rng: &mut R) -> Option<ActionId> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        q.row(s).choose(rng).map(|(a, _)| *a)
    } else {
        q.greedy_action(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlResult {
    pub q: QTable,
    pub greedy_policy: TabularPolicy,
    /// Discounted return of each training episode.
    pub episode_returns: Vec<f64>,
}

/// One SARSA or Q-learning run, episode by episode.
#[derive(Debug, Clone)]
pub struct ControlLearner<'m> {
    model: &'m TransitionModel,
    config: LearningConfig,
    method: ControlMethod,
    q: QTable,
    visits: Vec<Vec<u64>>,
    epsilon: f64,
}

impl<'m> ControlLearner<'m> {
    pub fn new(model: &'m TransitionModel, config: LearningConfig, method: ControlMethod) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            q: QTable::new(model, config.q_init),
            visits: vec![vec![0; model.n_actions()]; model.n_states()],
            epsilon: config.epsilon,
            model,
            config,
            method,
        })
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Runs one episode from `start`, updating q after every transition,
    /// then decays ε. Returns the episode's discounted return.
    pub fn run_episode<R: Rng + ?Sized>(&mut self, start: StateId, rng: &mut R) -> Result<f64> {
        let m = self.model;
        let gamma = self.config.gamma;
        let mut s = start;
        let mut a = epsilon_greedy(&self.q, s, self.epsilon, rng).ok_or_else(|| Error::TerminalState(m.state_label(s).into()))?;
        let mut g = 0.0;
        let mut discount = 1.0;
        for _ in 0..self.config.max_steps {
            let (next, r) = m.sample(s, a, rng)?;
            g += discount * r;
            discount *= gamma;
            self.visits[s.0][a.0] += 1;
            let alpha = self.config.rate(self.visits[s.0][a.0]);
            let terminal = m.is_terminal(next);
            let next_action = if terminal {
                None
            } else {
                epsilon_greedy(&self.q, next, self.epsilon, rng)
            };
            match self.method {
                ControlMethod::Sarsa => sarsa_update(m, &mut self.q, s, a, r, next, next_action, alpha, gamma)?,
                ControlMethod::QLearning => q_learning_update(m, &mut self.q, s, a, r, next, alpha, gamma)?,
            };
            match next_action {
                Some(b) => {
                    s = next;
                    a = b;
                }
                None => break,
            }
        }
        if let Some(d) = self.config.epsilon_decay {
            self.epsilon *= d;
        }
        Ok(g)
    }

    pub fn finish(self) -> (QTable, TabularPolicy) {
        let p = greedy_policy(&self.q);
        (self.q, p)
    }
}

pub fn learn_control(
    model: &TransitionModel,
    starts: &StartDistribution,
    config: &LearningConfig,
    method: ControlMethod,
) -> Result<ControlResult> {
    let mut rng = seeded_rng(config.seed);
    let mut learner = ControlLearner::new(model, config.clone(), method)?;
    let mut episode_returns = Vec::with_capacity(config.episodes);
    for _ in 0..config.episodes {
        let start = starts.sample(&mut rng);
        episode_returns.push(learner.run_episode(start, &mut rng)?);
    }
    let (q, greedy_policy) = learner.finish();
    Ok(ControlResult {
        q,
        greedy_policy,
        episode_returns,
    })
}

pub fn sarsa(model: &TransitionModel, starts: &StartDistribution, config: &LearningConfig) -> Result<ControlResult> {
    learn_control(model, starts, config, ControlMethod::Sarsa)
}

pub fn q_learning(model: &TransitionModel, starts: &StartDistribution, config: &LearningConfig) -> Result<ControlResult> {
    learn_control(model, starts, config, ControlMethod::QLearning)
}
