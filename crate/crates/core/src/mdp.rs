//! Core MDP vocabulary: state and action ids, transition models with
//! rewards attached to transitions, tabular policies, trajectories and
//! discounted returns.
//!
//! Everything here is an immutable value once built. Sampling takes an
//! explicit RNG handle so runs are reproducible from a seed.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

/// Tolerance used when checking that probability rows sum to one.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

/// One branch of p(s', r | s, a).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: StateId,
    pub reward: f64,
    pub prob: f64,
}

/// A finite episodic MDP given by its state-reward transition probabilities.
///
/// `rows[s][a]` is `None` when action `a` is not available in state `s`.
/// Terminal states have no available actions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    states: Vec<String>,
    actions: Vec<String>,
    rows: Vec<Vec<Option<Vec<Outcome>>>>,
    terminal: Vec<bool>,
    gamma_default: f64,
}

pub struct ModelBuilder {
    states: Vec<String>,
    actions: Vec<String>,
    rows: Vec<Vec<Option<Vec<Outcome>>>>,
    terminal: Vec<bool>,
    gamma_default: f64,
    problems: Vec<Error>,
}

impl ModelBuilder {
    pub fn terminal(mut self, state: &str) -> Self {
        match self.state_index(state) {
            Some(s) => self.terminal[s] = true,
            None => self.problems.push(Error::UnknownState(state.into())),
        }
        self
    }

    /// Adds one `(next, reward, prob)` branch to the row of `(state, action)`.
    pub fn outcome(mut self, state: &str, action: &str, next: &str, reward: f64, prob: f64) -> Self {
        let (s, a, n) = match (self.state_index(state), self.action_index(action), self.state_index(next)) {
            (Some(s), Some(a), Some(n)) => (s, a, n),
            (None, _, _) => {
                self.problems.push(Error::UnknownState(state.into()));
                return self;
            }
            (_, None, _) => {
                self.problems.push(Error::UnknownAction(action.into()));
                return self;
            }
            (_, _, None) => {
                self.problems.push(Error::UnknownState(next.into()));
                return self;
            }
        };
        self.rows[s][a].get_or_insert_with(Vec::new).push(Outcome {
            next: StateId(n),
            reward,
            prob,
        });
        self
    }

    /// Shorthand for a deterministic move.
    pub fn step(self, state: &str, action: &str, next: &str, reward: f64) -> Self {
        self.outcome(state, action, next, reward, 1.0)
    }

    pub fn gamma(mut self, gamma: f64) -> Self {
        self.gamma_default = gamma;
        self
    }

    pub fn build(self) -> Result<TransitionModel> {
        if let Some(e) = self.problems.into_iter().next() {
            return Err(e);
        }
        let model = TransitionModel {
            states: self.states,
            actions: self.actions,
            rows: self.rows,
            terminal: self.terminal,
            gamma_default: self.gamma_default,
        };
        model.check()?;
        Ok(model)
    }

    fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    fn action_index(&self, label: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == label)
    }
}

impl TransitionModel {
    pub fn builder<S: AsRef<str>, A: AsRef<str>>(states: &[S], actions: &[A]) -> ModelBuilder {
        let states: Vec<String> = states.iter().map(|s| s.as_ref().to_string()).collect();
        let actions: Vec<String> = actions.iter().map(|a| a.as_ref().to_string()).collect();
        ModelBuilder {
            rows: vec![vec![None; actions.len()]; states.len()],
            terminal: vec![false; states.len()],
            states,
            actions,
            gamma_default: 1.0,
            problems: Vec::new(),
        }
    }

    fn check(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidModel(msg));
        if self.states.is_empty() {
            return invalid("model has no states".into());
        }
        if !(0.0..=1.0).contains(&self.gamma_default) {
            return invalid(format!("discount {} outside [0, 1]", self.gamma_default));
        }
        let mut seen = HashMap::new();
        for (i, label) in self.states.iter().enumerate() {
            if let Some(j) = seen.insert(label.as_str(), i) {
                return invalid(format!("state label `{label}` used by states {j} and {i}"));
            }
        }
        let mut seen = HashMap::new();
        for (i, label) in self.actions.iter().enumerate() {
            if let Some(j) = seen.insert(label.as_str(), i) {
                return invalid(format!("action label `{label}` used by actions {j} and {i}"));
            }
        }
        for s in 0..self.states.len() {
            let label = &self.states[s];
            let available = self.rows[s].iter().filter(|r| r.is_some()).count();
            if self.terminal[s] {
                if available > 0 {
                    return invalid(format!("terminal state `{label}` has outgoing transitions"));
                }
                continue;
            }
            if available == 0 {
                return invalid(format!("non-terminal state `{label}` has no actions"));
            }
            for (a, row) in self.rows[s].iter().enumerate() {
                let Some(row) = row else { continue };
                let action = &self.actions[a];
                let mut total = 0.0;
                for o in row {
                    if !o.reward.is_finite() {
                        return invalid(format!("non-finite reward on ({label}, {action})"));
                    }
                    if !o.prob.is_finite() || o.prob < 0.0 {
                        return invalid(format!("bad probability {} on ({label}, {action})", o.prob));
                    }
                    total += o.prob;
                }
                if (total - 1.0).abs() > PROB_TOL {
                    return invalid(format!(
                        "probabilities on ({label}, {action}) sum to {total}, not 1"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.states.len()).map(StateId)
    }

    pub fn non_terminal_states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.states().filter(|&s| !self.is_terminal(s))
    }

    pub fn terminals(&self) -> Vec<StateId> {
        self.states().filter(|&s| self.is_terminal(s)).collect()
    }

    pub fn state_label(&self, s: StateId) -> &str {
        &self.states[s.0]
    }

    pub fn action_label(&self, a: ActionId) -> &str {
        &self.actions[a.0]
    }

    pub fn state_labels(&self) -> &[String] {
        &self.states
    }

    pub fn action_labels(&self) -> &[String] {
        &self.actions
    }

    pub fn state(&self, label: &str) -> Result<StateId> {
        self.states
            .iter()
            .position(|s| s == label)
            .map(StateId)
            .ok_or_else(|| Error::UnknownState(label.into()))
    }

    pub fn action(&self, label: &str) -> Result<ActionId> {
        self.actions
            .iter()
            .position(|a| a == label)
            .map(ActionId)
            .ok_or_else(|| Error::UnknownAction(label.into()))
    }

    pub fn is_terminal(&self, s: StateId) -> bool {
        self.terminal[s.0]
    }

    pub fn gamma_default(&self) -> f64 {
        self.gamma_default
    }

    /// Actions available in `s`, in the model's fixed action order.
    pub fn actions_at(&self, s: StateId) -> impl Iterator<Item = ActionId> + '_ {
        self.rows[s.0]
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_some())
            .map(|(a, _)| ActionId(a))
    }

    pub fn outcomes(&self, s: StateId, a: ActionId) -> Option<&[Outcome]> {
        self.rows.get(s.0)?.get(a.0)?.as_deref()
    }

    /// p(s' | s, a), obtained by summing p(s', r | s, a) over rewards.
    pub fn next_state_probs(&self, s: StateId, a: ActionId) -> Vec<(StateId, f64)> {
        let mut out: Vec<(StateId, f64)> = Vec::new();
        for o in self.outcomes(s, a).unwrap_or(&[]) {
            match out.iter_mut().find(|(n, _)| *n == o.next) {
                Some(entry) => entry.1 += o.prob,
                None => out.push((o.next, o.prob)),
            }
        }
        out
    }

    pub fn expected_reward(&self, s: StateId, a: ActionId) -> f64 {
        self.outcomes(s, a)
            .unwrap_or(&[])
            .iter()
            .map(|o| o.prob * o.reward)
            .sum()
    }

    /// Draws `(s', r)` from the row of `(s, a)`.
    pub fn sample<R: Rng + ?Sized>(&self, s: StateId, a: ActionId, rng: &mut R) -> Result<(StateId, f64)> {
        if self.is_terminal(s) {
            return Err(Error::TerminalState(self.state_label(s).into()));
        }
        let row = self.outcomes(s, a).ok_or_else(|| Error::MissingTransition {
            state: self.state_label(s).into(),
            action: self.action_label(a).into(),
        })?;
        if let [only] = row {
            return Ok((only.next, only.reward));
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for o in row {
            acc += o.prob;
            if u < acc {
                return Ok((o.next, o.reward));
            }
        }
        let last = row.last().expect("validated rows are non-empty");
        Ok((last.next, last.reward))
    }

    /// Returns the states from which no terminal state can be reached when
    /// only actions in `allowed(s)` are taken. Empty means every state can
    /// terminate.
    pub fn states_unable_to_terminate<F>(&self, allowed: F) -> Vec<StateId>
    where
        F: Fn(StateId, ActionId) -> bool,
    {
        let n = self.n_states();
        let mut can = self.terminal.clone();
        loop {
            let mut changed = false;
            for s in self.non_terminal_states() {
                if can[s.0] {
                    continue;
                }
                let reaches = self.actions_at(s).filter(|&a| allowed(s, a)).any(|a| {
                    self.outcomes(s, a)
                        .unwrap_or(&[])
                        .iter()
                        .any(|o| o.prob > 0.0 && can[o.next.0])
                });
                if reaches {
                    can[s.0] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        (0..n).filter(|&s| !can[s]).map(StateId).collect()
    }

    /// Serializes to the dictionary layout
    /// `state -> action -> [[next, reward, prob], ...]`.
    pub fn to_json(&self) -> Value {
        let mut transitions = Map::new();
        for s in self.states() {
            let mut row = Map::new();
            for a in self.actions_at(s) {
                let outs: Vec<Value> = self
                    .outcomes(s, a)
                    .unwrap_or(&[])
                    .iter()
                    .map(|o| json!([self.state_label(o.next), o.reward, o.prob]))
                    .collect();
                row.insert(self.action_label(a).to_string(), Value::Array(outs));
            }
            transitions.insert(self.state_label(s).to_string(), Value::Object(row));
        }
        let terminals: Vec<&str> = self.terminals().into_iter().map(|s| self.state_label(s)).collect();
        json!({
            "states": self.states,
            "actions": self.actions,
            "terminals": terminals,
            "gamma": self.gamma_default,
            "transitions": transitions,
        })
    }

    /// Inverse of [`to_json`](Self::to_json). Also accepts the two-element
    /// `[next, prob]` form and the deterministic `"action": "next"` form, both
    /// of which take their reward from a top-level `default_reward`.
    pub fn from_json(value: &Value) -> Result<Self> {
        let bad = |msg: &str| Error::Json(msg.to_string());
        let obj = value.as_object().ok_or_else(|| bad("model must be an object"))?;
        let transitions = obj
            .get("transitions")
            .and_then(Value::as_object)
            .ok_or_else(|| bad("missing `transitions` object"))?;
        let states: Vec<String> = match obj.get("states") {
            Some(v) => string_list(v)?,
            None => transitions.keys().cloned().collect(),
        };
        let actions: Vec<String> = match obj.get("actions") {
            Some(v) => string_list(v)?,
            None => {
                let mut acts: Vec<String> = Vec::new();
                for row in transitions.values() {
                    for a in row.as_object().into_iter().flat_map(|r| r.keys()) {
                        if !acts.contains(a) {
                            acts.push(a.clone());
                        }
                    }
                }
                acts
            }
        };
        let default_reward = obj.get("default_reward").and_then(Value::as_f64);
        let mut b = TransitionModel::builder(&states, &actions);
        if let Some(g) = obj.get("gamma") {
            b = b.gamma(g.as_f64().ok_or_else(|| bad("`gamma` must be a number"))?);
        }
        if let Some(terms) = obj.get("terminals") {
            for t in string_list(terms)? {
                b = b.terminal(&t);
            }
        }
        for (s, row) in transitions {
            let row = row.as_object().ok_or_else(|| bad("transition row must be an object"))?;
            for (a, entry) in row {
                match entry {
                    Value::String(next) => {
                        let r = default_reward.ok_or_else(|| bad("deterministic entries need `default_reward`"))?;
                        b = b.step(s, a, next, r);
                    }
                    Value::Array(items) => {
                        for item in items {
                            let parts = item.as_array().ok_or_else(|| bad("outcome must be an array"))?;
                            let next = parts
                                .first()
                                .and_then(Value::as_str)
                                .ok_or_else(|| bad("outcome must start with a state label"))?;
                            let num = |i: usize| {
                                parts
                                    .get(i)
                                    .and_then(Value::as_f64)
                                    .ok_or_else(|| bad("outcome fields must be numbers"))
                            };
                            let (reward, prob) = match parts.len() {
                                2 => (
                                    default_reward
                                        .ok_or_else(|| bad("[next, prob] entries need `default_reward`"))?,
                                    num(1)?,
                                ),
                                3 => (num(1)?, num(2)?),
                                _ => return Err(bad("outcome must be [next, prob] or [next, reward, prob]")),
                            };
                            b = b.outcome(s, a, next, reward, prob);
                        }
                    }
                    _ => return Err(bad("transition entry must be a label or a list")),
                }
            }
        }
        b.build()
    }
}

fn string_list(v: &Value) -> Result<Vec<String>> {
    v.as_array()
        .ok_or_else(|| Error::Json("expected a list of labels".into()))?
        .iter()
        .map(|x| {
            x.as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::Json("expected a string label".into()))
        })
        .collect()
}

/// π(a|s) as explicit per-state rows. Rows are not validated on
/// construction; see [`validate_policy`].
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    rows: Vec<Vec<(ActionId, f64)>>,
}

impl TabularPolicy {
    pub fn from_rows(rows: Vec<Vec<(ActionId, f64)>>) -> Self {
        Self { rows }
    }

    /// Uniform over the actions available in each non-terminal state.
    pub fn uniform(model: &TransitionModel) -> Self {
        let rows = model
            .states()
            .map(|s| {
                let acts: Vec<ActionId> = model.actions_at(s).collect();
                let p = 1.0 / acts.len().max(1) as f64;
                acts.into_iter().map(|a| (a, p)).collect()
            })
            .collect();
        Self { rows }
    }

    /// Puts all mass on `choice[s]`; `None` gives an empty row.
    pub fn deterministic(choice: &[Option<ActionId>]) -> Self {
        let rows = choice
            .iter()
            .map(|c| c.map(|a| vec![(a, 1.0)]).unwrap_or_default())
            .collect();
        Self { rows }
    }

    /// Builds a policy from `(state, [(action, prob)])` label pairs.
    /// States not mentioned get an empty row.
    pub fn from_labels(model: &TransitionModel, rows: &[(&str, &[(&str, f64)])]) -> Result<Self> {
        let mut out = vec![Vec::new(); model.n_states()];
        for (s, dist) in rows {
            let s = model.state(s)?;
            out[s.0] = dist
                .iter()
                .map(|(a, p)| Ok((model.action(a)?, *p)))
                .collect::<Result<_>>()?;
        }
        Ok(Self { rows: out })
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, s: StateId) -> &[(ActionId, f64)] {
        self.rows.get(s.0).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn prob(&self, s: StateId, a: ActionId) -> f64 {
        self.row(s).iter().filter(|(b, _)| *b == a).map(|(_, p)| p).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: StateId, rng: &mut R) -> Option<ActionId> {
        let row = self.row(s);
        let support: Vec<&(ActionId, f64)> = row.iter().filter(|(_, p)| *p > 0.0).collect();
        match support.as_slice() {
            [] => None,
            [only] => Some(only.0),
            _ => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (a, p) in &support {
                    acc += p;
                    if u < acc {
                        return Some(*a);
                    }
                }
                support.last().map(|(a, _)| *a)
            }
        }
    }

    /// Errors with the first validation issue, if any.
    pub fn check(&self, model: &TransitionModel) -> Result<()> {
        let report = validate_policy(self, model);
        match report.issues.first() {
            None => Ok(()),
            Some(issue) => Err(Error::InvalidPolicy(issue.to_string())),
        }
    }

    pub fn to_json(&self, model: &TransitionModel) -> Value {
        let mut out = Map::new();
        for s in model.states() {
            let mut row = Map::new();
            for (a, p) in self.row(s) {
                row.insert(model.action_label(*a).to_string(), json!(p));
            }
            out.insert(model.state_label(s).to_string(), Value::Object(row));
        }
        Value::Object(out)
    }

    /// Reads `state -> action -> prob`. Missing states get empty rows.
    pub fn from_json(model: &TransitionModel, value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Json("policy must be an object".into()))?;
        let mut rows = vec![Vec::new(); model.n_states()];
        for (s, dist) in obj {
            let s = model.state(s)?;
            let dist = dist
                .as_object()
                .ok_or_else(|| Error::Json("policy row must be an object".into()))?;
            for (a, p) in dist {
                let p = p
                    .as_f64()
                    .ok_or_else(|| Error::Json("probability must be a number".into()))?;
                rows[s.0].push((model.action(a)?, p));
            }
        }
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IssueKind {
    MissingRow,
    NotNormalized { sum: f64 },
    NegativeProbability { action: String, prob: f64 },
    NonFiniteProbability { action: String },
    UnavailableAction { action: String },
    TerminalNotEmpty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyIssue {
    pub state: StateId,
    pub label: String,
    pub kind: IssueKind,
}

impl fmt::Display for PolicyIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.label;
        match &self.kind {
            IssueKind::MissingRow => write!(f, "{s}: no row in policy"),
            IssueKind::NotNormalized { sum } => write!(f, "{s}: probabilities sum to {sum}"),
            IssueKind::NegativeProbability { action, prob } => {
                write!(f, "{s}: negative probability {prob} for `{action}`")
            }
            IssueKind::NonFiniteProbability { action } => {
                write!(f, "{s}: non-finite probability for `{action}`")
            }
            IssueKind::UnavailableAction { action } => {
                write!(f, "{s}: mass on `{action}`, which the model does not define here")
            }
            IssueKind::TerminalNotEmpty => write!(f, "{s}: terminal state must have an empty distribution"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<PolicyIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn states(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for i in &self.issues {
            if !out.contains(&i.label.as_str()) {
                out.push(&i.label);
            }
        }
        out
    }
}

/// Lists every state whose action distribution is not a proper
/// distribution over the actions the model defines there, and every
/// terminal state with a non-empty distribution.
pub fn validate_policy(policy: &TabularPolicy, model: &TransitionModel) -> ValidationReport {
    let mut issues = Vec::new();
    for s in model.states() {
        let label = model.state_label(s).to_string();
        let mut push = |kind| {
            issues.push(PolicyIssue {
                state: s,
                label: label.clone(),
                kind,
            })
        };
        if s.0 >= policy.n_states() {
            if !model.is_terminal(s) {
                push(IssueKind::MissingRow);
            }
            continue;
        }
        let row = policy.row(s);
        if model.is_terminal(s) {
            if !row.is_empty() {
                push(IssueKind::TerminalNotEmpty);
            }
            continue;
        }
        let mut sum = 0.0;
        for &(a, p) in row {
            let action = model.action_label(a).to_string();
            if !p.is_finite() {
                push(IssueKind::NonFiniteProbability { action });
                continue;
            }
            if p < 0.0 {
                push(IssueKind::NegativeProbability { action: action.clone(), prob: p });
            }
            if p != 0.0 && model.outcomes(s, a).is_none() {
                push(IssueKind::UnavailableAction { action });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_TOL {
            push(IssueKind::NotNormalized { sum });
        }
    }
    ValidationReport { issues }
}

/// Σ_k γ^k · rewards[k]; zero for an empty slice.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |g, r| r + gamma * g)
}

/// G_t for every t, computed backwards with G_t = r_{t+1} + γ G_{t+1}.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        g = r + gamma * g;
        out[t] = g;
    }
    out
}

/// One `(s_t, a_t, r_{t+1})` record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: StateId,
    pub action: ActionId,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start_state: StateId,
    pub steps: Vec<Step>,
    /// State reached after the last step.
    pub final_state: StateId,
    pub terminated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        discounted_return(&self.rewards(), gamma)
    }

    /// The state entered after step `t`.
    pub fn successor(&self, t: usize) -> StateId {
        self.steps.get(t + 1).map(|s| s.state).unwrap_or(self.final_state)
    }

    /// Builds a trajectory from `(state, action, reward)` labels. The state
    /// entered after the last step is `final_state` or, when omitted, the
    /// unique successor the model allows for the last move.
    pub fn from_labels(model: &TransitionModel, steps: &[(&str, &str, f64)], final_state: Option<&str>) -> Result<Self> {
        let parsed: Vec<Step> = steps
            .iter()
            .map(|(s, a, r)| {
                Ok(Step {
                    state: model.state(s)?,
                    action: model.action(a)?,
                    reward: *r,
                })
            })
            .collect::<Result<_>>()?;
        let first = parsed
            .first()
            .ok_or_else(|| Error::InvalidParameter("trajectory has no steps".into()))?;
        let final_state = match final_state {
            Some(label) => model.state(label)?,
            None => {
                let last = parsed.last().expect("non-empty");
                match model.next_state_probs(last.state, last.action).as_slice() {
                    [(n, _)] => *n,
                    _ => {
                        return Err(Error::InvalidParameter(
                            "final state is ambiguous; give it explicitly".into(),
                        ))
                    }
                }
            }
        };
        Ok(Self {
            start_state: first.state,
            final_state,
            terminated: model.is_terminal(final_state),
            steps: parsed,
        })
    }

    /// Reads `{"steps": [[state, action, reward], ...], "final_state": label}`
    /// or a bare list of steps.
    pub fn from_json(model: &TransitionModel, value: &Value) -> Result<Self> {
        let (steps, final_state) = match value {
            Value::Array(items) => (items, None),
            Value::Object(obj) => (
                obj.get("steps")
                    .and_then(Value::as_array)
                    .ok_or_else(|| Error::Json("missing `steps` list".into()))?,
                obj.get("final_state").and_then(Value::as_str),
            ),
            _ => return Err(Error::Json("trajectory must be a list or an object".into())),
        };
        let mut parsed = Vec::with_capacity(steps.len());
        for item in steps {
            let parts = item.as_array().filter(|p| p.len() == 3);
            let (s, a, r) = parts
                .and_then(|p| Some((p[0].as_str()?, p[1].as_str()?, p[2].as_f64()?)))
                .ok_or_else(|| Error::Json("each step must be [state, action, reward]".into()))?;
            parsed.push((s, a, r));
        }
        Self::from_labels(model, &parsed, final_state)
    }

    pub fn to_json(&self, model: &TransitionModel) -> Value {
        let steps: Vec<Value> = self
            .steps
            .iter()
            .map(|s| json!([model.state_label(s.state), model.action_label(s.action), s.reward]))
            .collect();
        json!({
            "steps": steps,
            "final_state": model.state_label(self.final_state),
            "terminated": self.terminated,
        })
    }
}

/// Samples one episode: a ~ π(·|s), then (s', r) ~ p(·,·|s,a), until a
/// terminal state is entered or `max_steps` moves have been made.
pub fn rollout<R: Rng + ?Sized>(
    model: &TransitionModel,
    policy: &TabularPolicy,
    start: StateId,
    max_steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if model.is_terminal(start) {
        return Err(Error::TerminalState(model.state_label(start).into()));
    }
    if max_steps == 0 {
        return Err(Error::InvalidParameter("max_steps must be at least 1".into()));
    }
    let mut steps = Vec::new();
    let mut s = start;
    while steps.len() < max_steps {
        let a = policy
            .sample(s, rng)
            .ok_or_else(|| Error::MissingPolicyRow(model.state_label(s).into()))?;
        let (next, reward) = model.sample(s, a, rng)?;
        steps.push(Step { state: s, action: a, reward });
        s = next;
        if model.is_terminal(s) {
            break;
        }
    }
    Ok(Trajectory {
        start_state: start,
        steps,
        final_state: s,
        terminated: model.is_terminal(s),
    })
}

/// Where episodes begin: a weighted choice over non-terminal states.
#[derive(Debug, Clone, PartialEq)]
pub struct StartDistribution {
    states: Vec<StateId>,
    cumulative: Vec<f64>,
}

impl StartDistribution {
    pub fn uniform(model: &TransitionModel) -> Self {
        let states: Vec<StateId> = model.non_terminal_states().collect();
        let w = vec![1.0; states.len()];
        Self::weighted(model, &states, &w).expect("uniform start weights are valid")
    }

    pub fn single(model: &TransitionModel, s: StateId) -> Result<Self> {
        Self::weighted(model, &[s], &[1.0])
    }

    pub fn weighted(model: &TransitionModel, states: &[StateId], weights: &[f64]) -> Result<Self> {
        if states.is_empty() || states.len() != weights.len() {
            return Err(Error::InvalidParameter("start distribution needs one weight per state".into()));
        }
        let mut total = 0.0;
        let mut cumulative = Vec::with_capacity(weights.len());
        for (&s, &w) in states.iter().zip(weights) {
            if s.0 >= model.n_states() {
                return Err(Error::InvalidParameter(format!("state index {} out of range", s.0)));
            }
            if model.is_terminal(s) {
                return Err(Error::TerminalState(model.state_label(s).into()));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter("start weights must be finite and non-negative".into()));
            }
            total += w;
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Err(Error::InvalidParameter("start weights sum to zero".into()));
        }
        Ok(Self {
            states: states.to_vec(),
            cumulative: cumulative.into_iter().map(|c| c / total).collect(),
        })
    }

    pub fn states(&self) -> &[StateId] {
        &self.states
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StateId {
        if self.states.len() == 1 {
            return self.states[0];
        }
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.states[i.min(self.states.len() - 1)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn line() -> TransitionModel {
        TransitionModel::builder(&["a", "b", "end"], &["left", "right"])
            .terminal("end")
            .step("a", "right", "b", -1.0)
            .step("a", "left", "a", -1.0)
            .outcome("b", "right", "end", 2.0, 0.75)
            .outcome("b", "right", "end", 0.0, 0.25)
            .step("b", "left", "a", -1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn builder_rejects_unnormalized_rows() {
        let err = TransitionModel::builder(&["a", "t"], &["go"])
            .terminal("t")
            .outcome("a", "go", "t", 1.0, 0.5)
            .outcome("a", "go", "a", 1.0, 0.4)
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)), "{err}");
    }

    #[test]
    fn builder_rejects_terminal_with_actions() {
        let err = TransitionModel::builder(&["a", "t"], &["go"])
            .terminal("t")
            .step("a", "go", "t", 1.0)
            .step("t", "go", "a", 1.0)
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn builder_rejects_unknown_labels_and_bad_gamma() {
        let err = TransitionModel::builder(&["a", "t"], &["go"])
            .step("a", "jump", "t", 1.0)
            .build()
            .unwrap_err();
        assert_eq!(err, Error::UnknownAction("jump".into()));
        let err = TransitionModel::builder(&["a", "t"], &["go"])
            .terminal("t")
            .step("a", "go", "t", 1.0)
            .gamma(1.5)
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn reward_marginal_matches_state_transition() {
        let m = line();
        let b = m.state("b").unwrap();
        let right = m.action("right").unwrap();
        let probs = m.next_state_probs(b, right);
        assert_eq!(probs, vec![(m.state("end").unwrap(), 1.0)]);
        assert_eq!(m.expected_reward(b, right), 1.5);
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[-1.0, -1.0, -1.0, 5.0], 1.0), 2.0);
        assert_eq!(discounted_return(&[], 0.3), 0.0);
        // -1 + 0.9 * 5
        assert!((discounted_return(&[-1.0, 5.0], 0.9) - 3.5).abs() < 1e-15);
    }

    #[test]
    fn returns_to_go_satisfy_recursion() {
        let r = [1.0, -2.0, 0.5, 4.0];
        let g = returns_to_go(&r, 0.7);
        for t in 0..r.len() - 1 {
            assert!((g[t] - (r[t] + 0.7 * g[t + 1])).abs() < 1e-12);
        }
        assert_eq!(g[3], 4.0);
    }

    #[test]
    fn validate_flags_bad_rows() {
        let m = line();
        let p = TabularPolicy::from_labels(
            &m,
            &[("a", &[("right", 0.5), ("left", 0.6)]), ("b", &[("right", 1.0)]), ("end", &[("left", 1.0)])],
        )
        .unwrap();
        let report = validate_policy(&p, &m);
        assert_eq!(report.states(), vec!["a", "end"]);
        assert!(validate_policy(&TabularPolicy::uniform(&m), &m).is_valid());
    }

    #[test]
    fn validate_flags_negative_and_missing_rows() {
        let m = line();
        let p = TabularPolicy::from_labels(&m, &[("a", &[("right", 1.5), ("left", -0.5)])]).unwrap();
        let report = validate_policy(&p, &m);
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i.kind, IssueKind::NegativeProbability { .. }) && i.label == "a"));
        // b has an empty row
        assert!(report.states().contains(&"b"));
        let short = TabularPolicy::from_rows(vec![]);
        assert_eq!(validate_policy(&short, &m).states(), vec!["a", "b"]);
    }

    #[test]
    fn rollout_rejects_terminal_start() {
        let m = line();
        let p = TabularPolicy::uniform(&m);
        let mut rng = seeded_rng(0);
        let err = rollout(&m, &p, m.state("end").unwrap(), 10, &mut rng).unwrap_err();
        assert_eq!(err, Error::TerminalState("end".into()));
    }

    #[test]
    fn rollout_reports_missing_policy_row() {
        let m = line();
        let p = TabularPolicy::from_labels(&m, &[("a", &[("right", 1.0)])]).unwrap();
        let mut rng = seeded_rng(0);
        let err = rollout(&m, &p, m.state("a").unwrap(), 10, &mut rng).unwrap_err();
        assert_eq!(err, Error::MissingPolicyRow("b".into()));
    }

    #[test]
    fn rollout_truncates_at_max_steps() {
        let m = line();
        let p = TabularPolicy::from_labels(&m, &[("a", &[("left", 1.0)]), ("b", &[("left", 1.0)])]).unwrap();
        let mut rng = seeded_rng(3);
        let t = rollout(&m, &p, m.state("a").unwrap(), 7, &mut rng).unwrap();
        assert_eq!(t.len(), 7);
        assert!(!t.terminated);
    }

    #[test]
    fn json_round_trip_and_short_forms() {
        let m = line();
        let back = TransitionModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);

        let dict = serde_json::json!({
            "default_reward": -1.0,
            "terminals": ["s3"],
            "transitions": {
                "s1": {"right": "s2"},
                "s2": {"right": [["s3", 0.5], ["s1", 0.5]]},
                "s3": {}
            }
        });
        let m2 = TransitionModel::from_json(&dict).unwrap();
        assert_eq!(m2.n_states(), 3);
        assert_eq!(m2.expected_reward(StateId(1), ActionId(0)), -1.0);

        let p = TabularPolicy::uniform(&m);
        assert_eq!(TabularPolicy::from_json(&m, &p.to_json(&m)).unwrap(), p);
    }

    #[test]
    fn trajectory_json_infers_deterministic_final_state() {
        let m = line();
        let v = serde_json::json!([["a", "right", -1.0], ["b", "left", -1.0]]);
        let t = Trajectory::from_json(&m, &v).unwrap();
        assert_eq!(t.final_state, m.state("a").unwrap());
        assert!(!t.terminated);
        assert_eq!(Trajectory::from_json(&m, &t.to_json(&m)).unwrap(), t);
    }
}
