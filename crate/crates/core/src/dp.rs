//! Model-based evaluation and control.
//!
//! All iterative routines use synchronous (Jacobi) sweeps: every backup in a
//! sweep reads the previous sweep's table. Terminal values are pinned to 0
//! and never updated.

use nalgebra::{DMatrix, DVector};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::mdp::{ActionId, StateId, TabularPolicy, TransitionModel};

/// Two action values closer than this are treated as tied; the tie goes to
/// the lower action index.
pub const TIE_TOL: f64 = 1e-12;

/// v(s) for every state of a model. Terminal entries are exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(model: &TransitionModel) -> Self {
        Self {
            values: vec![0.0; model.n_states()],
        }
    }

    pub fn from_values(model: &TransitionModel, values: Vec<f64>) -> Result<Self> {
        if values.len() != model.n_states() {
            return Err(Error::InvalidParameter(format!(
                "value table has {} entries for {} states",
                values.len(),
                model.n_states()
            )));
        }
        for s in model.states() {
            let v = values[s.0];
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "value of `{}` is not finite",
                    model.state_label(s)
                )));
            }
            if model.is_terminal(s) && v != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "terminal state `{}` must have value 0",
                    model.state_label(s)
                )));
            }
        }
        Ok(Self { values })
    }

    /// Unlisted states get 0.
    pub fn from_labels(model: &TransitionModel, entries: &[(&str, f64)]) -> Result<Self> {
        let mut values = vec![0.0; model.n_states()];
        for (label, v) in entries {
            values[model.state(label)?.0] = *v;
        }
        Self::from_values(model, values)
    }

    pub fn get(&self, s: StateId) -> f64 {
        self.values[s.0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs_diff(&self, other: &ValueTable) -> f64 {
        sup_norm_diff(&self.values, &other.values)
    }

    pub fn to_json(&self, model: &TransitionModel) -> Value {
        let mut out = Map::new();
        for s in model.states() {
            out.insert(model.state_label(s).to_string(), Value::from(self.values[s.0]));
        }
        Value::Object(out)
    }
}

/// q(s, a) for every action the model defines in a non-terminal state.
/// Terminal states have empty rows and contribute 0 to any backup.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    rows: Vec<Vec<(ActionId, f64)>>,
}

impl QTable {
    pub fn new(model: &TransitionModel, init: f64) -> Self {
        let rows = model
            .states()
            .map(|s| model.actions_at(s).map(|a| (a, init)).collect())
            .collect();
        Self { rows }
    }

    pub fn row(&self, s: StateId) -> &[(ActionId, f64)] {
        &self.rows[s.0]
    }

    pub fn get(&self, s: StateId, a: ActionId) -> Option<f64> {
        self.rows[s.0].iter().find(|(b, _)| *b == a).map(|(_, q)| *q)
    }

    pub fn get_mut(&mut self, s: StateId, a: ActionId) -> Option<&mut f64> {
        self.rows[s.0].iter_mut().find(|(b, _)| *b == a).map(|(_, q)| q)
    }

    /// max_a q(s, a), or 0 for a state with no actions.
    pub fn max_value(&self, s: StateId) -> f64 {
        self.greedy_action(s)
            .and_then(|a| self.get(s, a))
            .unwrap_or(0.0)
    }

    /// argmax_a q(s, a), lowest action index on ties.
    pub fn greedy_action(&self, s: StateId) -> Option<ActionId> {
        argmax_lowest(self.rows[s.0].iter().copied(), TIE_TOL)
    }

    /// Every action within [`TIE_TOL`] of the maximum.
    pub fn greedy_set(&self, s: StateId) -> Vec<ActionId> {
        let best = self.max_value(s);
        self.rows[s.0]
            .iter()
            .filter(|(_, q)| *q >= best - TIE_TOL)
            .map(|(a, _)| *a)
            .collect()
    }

    pub fn to_json(&self, model: &TransitionModel) -> Value {
        let mut out = Map::new();
        for s in model.states() {
            let mut row = Map::new();
            for (a, q) in self.row(s) {
                row.insert(model.action_label(*a).to_string(), Value::from(*q));
            }
            out.insert(model.state_label(s).to_string(), Value::Object(row));
        }
        Value::Object(out)
    }
}

fn argmax_lowest(items: impl Iterator<Item = (ActionId, f64)>, tol: f64) -> Option<ActionId> {
    let mut best: Option<(ActionId, f64)> = None;
    for (a, q) in items {
        match best {
            Some((_, b)) if q <= b + tol => {}
            _ => best = Some((a, q)),
        }
    }
    best.map(|(a, _)| a)
}

fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("gamma {gamma} outside [0, 1]")))
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")))
    }
}

/// Σ_{s', r} p(s', r | s, a) [r + γ v(s')].
fn action_backup(model: &TransitionModel, s: StateId, a: ActionId, gamma: f64, v: &[f64]) -> f64 {
    model
        .outcomes(s, a)
        .unwrap_or(&[])
        .iter()
        .filter(|o| o.prob > 0.0)
        .map(|o| o.prob * (o.reward + gamma * v[o.next.0]))
        .sum()
}

/// Right-hand side of the Bellman expectation equation at `s`.
pub fn bellman_backup(model: &TransitionModel, policy: &TabularPolicy, gamma: f64, v: &[f64], s: StateId) -> f64 {
    if model.is_terminal(s) {
        return 0.0;
    }
    policy
        .row(s)
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|&(a, p)| p * action_backup(model, s, a, gamma, v))
        .sum()
}

/// max over states of |v(s) − (r_π + γ P_π v)(s)|.
pub fn bellman_residual(model: &TransitionModel, policy: &TabularPolicy, gamma: f64, values: &ValueTable) -> f64 {
    model
        .states()
        .map(|s| (values.get(s) - bellman_backup(model, policy, gamma, values.as_slice(), s)).abs())
        .fold(0.0, f64::max)
}

fn improper_states(model: &TransitionModel, policy: &TabularPolicy) -> Vec<StateId> {
    model.states_unable_to_terminate(|s, a| policy.prob(s, a) > 0.0)
}

fn improper_error(model: &TransitionModel, states: &[StateId]) -> Error {
    Error::ImproperPolicy {
        states: states.iter().map(|&s| model.state_label(s).to_string()).collect(),
    }
}

/// Solves v = r_π + γ P_π v over the states in `solve_for`; other
/// non-terminal states keep whatever `fixed` holds.
fn solve_linear(
    model: &TransitionModel,
    policy: &TabularPolicy,
    gamma: f64,
    solve_for: &[StateId],
    fixed: &[f64],
) -> Result<Vec<f64>> {
    let n = solve_for.len();
    let mut index = vec![usize::MAX; model.n_states()];
    for (i, s) in solve_for.iter().enumerate() {
        index[s.0] = i;
    }
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (i, &s) in solve_for.iter().enumerate() {
        for &(act, pa) in policy.row(s) {
            if pa <= 0.0 {
                continue;
            }
            for o in model.outcomes(s, act).unwrap_or(&[]) {
                let w = pa * o.prob;
                b[i] += w * o.reward;
                let j = index[o.next.0];
                if j != usize::MAX {
                    a[(i, j)] -= gamma * w;
                } else {
                    b[i] += gamma * w * fixed[o.next.0];
                }
            }
        }
    }
    let x = a.lu().solve(&b).ok_or(Error::SingularSystem)?;
    let mut out = fixed.to_vec();
    for (i, &s) in solve_for.iter().enumerate() {
        out[s.0] = x[i];
    }
    Ok(out)
}

/// Exact v_π from the linear system v = r_π + γ P_π v, terminal rows
/// pinned to 0. With γ = 1 the policy must reach a terminal state from
/// every state; otherwise the error names the states that cannot.
pub fn analytic_policy_evaluation(model: &TransitionModel, policy: &TabularPolicy, gamma: f64) -> Result<ValueTable> {
    check_gamma(gamma)?;
    policy.check(model)?;
    if gamma == 1.0 {
        let bad = improper_states(model, policy);
        if !bad.is_empty() {
            return Err(improper_error(model, &bad));
        }
    }
    let states: Vec<StateId> = model.non_terminal_states().collect();
    let values = solve_linear(model, policy, gamma, &states, &vec![0.0; model.n_states()])?;
    ValueTable::from_values(model, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativeEvaluation {
    pub values: ValueTable,
    pub sweeps: usize,
    pub converged: bool,
}

/// Repeated synchronous Bellman backups from `v0` (zeros by default) until
/// the sup-norm change of a sweep drops below `tol` or `max_sweeps` sweeps
/// have run.
pub fn iterative_policy_evaluation(
    model: &TransitionModel,
    policy: &TabularPolicy,
    gamma: f64,
    tol: f64,
    max_sweeps: usize,
    v0: Option<&ValueTable>,
) -> Result<IterativeEvaluation> {
    check_gamma(gamma)?;
    check_tol(tol)?;
    policy.check(model)?;
    if gamma == 1.0 {
        let bad = improper_states(model, policy);
        if !bad.is_empty() {
            return Err(improper_error(model, &bad));
        }
    }
    let mut v = match v0 {
        Some(t) if t.len() == model.n_states() => t.as_slice().to_vec(),
        Some(_) => return Err(Error::InvalidParameter("v0 does not match the model".into())),
        None => vec![0.0; model.n_states()],
    };
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        let next: Vec<f64> = model
            .states()
            .map(|s| bellman_backup(model, policy, gamma, &v, s))
            .collect();
        let delta = sup_norm_diff(&next, &v);
        v = next;
        sweeps += 1;
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok(IterativeEvaluation {
        values: ValueTable::from_values(model, v)?,
        sweeps,
        converged,
    })
}

/// One-step lookahead q(s, a) = Σ p(s', r | s, a) [r + γ v(s')].
pub fn q_from_v(model: &TransitionModel, v: &ValueTable, gamma: f64) -> QTable {
    q_from_slice(model, v.as_slice(), gamma)
}

fn q_from_slice(model: &TransitionModel, v: &[f64], gamma: f64) -> QTable {
    let rows = model
        .states()
        .map(|s| {
            model
                .actions_at(s)
                .map(|a| (a, action_backup(model, s, a, gamma, v)))
                .collect()
        })
        .collect();
    QTable { rows }
}

/// Deterministic policy on argmax_a q(s, a); ties go to the lowest action
/// index. States without actions get an empty row.
pub fn greedy_policy(q: &QTable) -> TabularPolicy {
    let choice: Vec<Option<ActionId>> = (0..q.rows.len()).map(|s| q.greedy_action(StateId(s))).collect();
    TabularPolicy::deterministic(&choice)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyIterationResult {
    pub policy: TabularPolicy,
    pub values: ValueTable,
    /// Evaluate-improve rounds, counting the final one that found the
    /// policy stable.
    pub iterations: usize,
    /// v_{π_k} for each evaluated policy. Entries may be −∞ for states
    /// that never terminate under an improper starting policy at γ = 1.
    pub value_history: Vec<Vec<f64>>,
    pub converged: bool,
}

const MAX_POLICY_ITERATIONS: usize = 10_000;

/// Alternates exact evaluation and greedy improvement until the policy
/// stops changing. `initial` defaults to the uniform policy.
///
/// At γ = 1 an improper starting policy is allowed: states that cannot
/// terminate with probability one under it are scored −∞, and wherever
/// every action scores −∞ the improvement step moves one step closer to a
/// terminal state. Every policy after the first is therefore proper.
/// An action is only replaced when another beats it by more than `tol`.
pub fn policy_iteration(
    model: &TransitionModel,
    gamma: f64,
    tol: f64,
    initial: Option<&TabularPolicy>,
) -> Result<PolicyIterationResult> {
    check_gamma(gamma)?;
    check_tol(tol)?;
    let mut policy = match initial {
        Some(p) => {
            p.check(model)?;
            p.clone()
        }
        None => TabularPolicy::uniform(model),
    };
    let distance = distance_to_terminal(model);
    let mut value_history = Vec::new();
    for iteration in 1..=MAX_POLICY_ITERATIONS {
        let v = evaluate_allowing_improper(model, &policy, gamma)?;
        let q = q_from_slice(model, &v, gamma);
        let mut choice = Vec::with_capacity(model.n_states());
        for s in model.states() {
            if model.is_terminal(s) {
                choice.push(None);
                continue;
            }
            let row = q.row(s);
            let best = row.iter().map(|(_, x)| *x).fold(f64::NEG_INFINITY, f64::max);
            let current = single_action(&policy, s);
            let pick = if best == f64::NEG_INFINITY {
                nearest_exit(model, s, &distance)
            } else {
                match current {
                    Some(a) if q.get(s, a).is_some_and(|x| x >= best - tol) => Some(a),
                    _ => argmax_lowest(row.iter().copied(), tol),
                }
            };
            choice.push(pick);
        }
        value_history.push(v);
        let improved = TabularPolicy::deterministic(&choice);
        if improved == policy {
            let v = value_history.last().expect("pushed above").clone();
            if v.iter().any(|x| !x.is_finite()) {
                let bad: Vec<StateId> = model.states().filter(|s| !v[s.0].is_finite()).collect();
                return Err(improper_error(model, &bad));
            }
            return Ok(PolicyIterationResult {
                policy,
                values: ValueTable::from_values(model, v)?,
                iterations: iteration,
                value_history,
                converged: true,
            });
        }
        policy = improved;
    }
    let v = evaluate_allowing_improper(model, &policy, gamma)?;
    Ok(PolicyIterationResult {
        values: ValueTable::from_values(model, v)?,
        policy,
        iterations: MAX_POLICY_ITERATIONS,
        value_history,
        converged: false,
    })
}

fn single_action(policy: &TabularPolicy, s: StateId) -> Option<ActionId> {
    match policy.row(s) {
        [(a, p)] if *p == 1.0 => Some(*a),
        _ => None,
    }
}

/// v_π where states that terminate with probability one get their exact
/// value and the rest −∞. Only γ = 1 can produce −∞.
fn evaluate_allowing_improper(model: &TransitionModel, policy: &TabularPolicy, gamma: f64) -> Result<Vec<f64>> {
    let mut fixed = vec![0.0; model.n_states()];
    if gamma < 1.0 {
        let states: Vec<StateId> = model.non_terminal_states().collect();
        return solve_linear(model, policy, gamma, &states, &fixed);
    }
    let bad = improper_states(model, policy);
    // anything that can reach a non-terminating state is doomed as well
    let mut doomed = vec![false; model.n_states()];
    for s in &bad {
        doomed[s.0] = true;
    }
    loop {
        let mut changed = false;
        for s in model.non_terminal_states() {
            if doomed[s.0] {
                continue;
            }
            let reaches = policy.row(s).iter().filter(|(_, p)| *p > 0.0).any(|&(a, _)| {
                model
                    .outcomes(s, a)
                    .unwrap_or(&[])
                    .iter()
                    .any(|o| o.prob > 0.0 && doomed[o.next.0])
            });
            if reaches {
                doomed[s.0] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let solve_for: Vec<StateId> = model.non_terminal_states().filter(|s| !doomed[s.0]).collect();
    for s in model.states().filter(|s| doomed[s.0]) {
        fixed[s.0] = f64::NEG_INFINITY;
    }
    solve_linear(model, policy, gamma, &solve_for, &fixed)
}

/// Fewest moves to a terminal state over the support of the model,
/// `usize::MAX` where none is reachable.
fn distance_to_terminal(model: &TransitionModel) -> Vec<usize> {
    let mut dist: Vec<usize> = model
        .states()
        .map(|s| if model.is_terminal(s) { 0 } else { usize::MAX })
        .collect();
    loop {
        let mut changed = false;
        for s in model.non_terminal_states() {
            let best = model
                .actions_at(s)
                .flat_map(|a| model.outcomes(s, a).unwrap_or(&[]).iter())
                .filter(|o| o.prob > 0.0 && dist[o.next.0] != usize::MAX)
                .map(|o| dist[o.next.0] + 1)
                .min();
            if let Some(d) = best {
                if d < dist[s.0] {
                    dist[s.0] = d;
                    changed = true;
                }
            }
        }
        if !changed {
            return dist;
        }
    }
}

fn nearest_exit(model: &TransitionModel, s: StateId, dist: &[usize]) -> Option<ActionId> {
    let score = |a: ActionId| {
        model
            .outcomes(s, a)
            .unwrap_or(&[])
            .iter()
            .filter(|o| o.prob > 0.0)
            .map(|o| dist[o.next.0])
            .min()
            .unwrap_or(usize::MAX)
    };
    let mut best: Option<(ActionId, usize)> = None;
    for a in model.actions_at(s) {
        let d = score(a);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((a, d));
        }
    }
    best.map(|(a, _)| a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueIterationResult {
    pub values: ValueTable,
    pub policy: TabularPolicy,
    pub sweeps: usize,
    pub converged: bool,
    /// Sup-norm change of each sweep.
    pub deltas: Vec<f64>,
}

/// Synchronous max-backups v_{k+1}(s) = max_a Σ p [r + γ v_k(s')] from
/// v_0 = 0, stopping once a sweep changes no value by `tol` or more. The
/// returned policy is greedy with respect to the final table.
pub fn value_iteration(model: &TransitionModel, gamma: f64, tol: f64, max_sweeps: usize) -> Result<ValueIterationResult> {
    check_gamma(gamma)?;
    check_tol(tol)?;
    let mut v = vec![0.0; model.n_states()];
    let mut deltas = Vec::new();
    let mut converged = false;
    while deltas.len() < max_sweeps {
        let next: Vec<f64> = model
            .states()
            .map(|s| {
                model
                    .actions_at(s)
                    .map(|a| action_backup(model, s, a, gamma, &v))
                    .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
                    .unwrap_or(0.0)
            })
            .collect();
        let delta = sup_norm_diff(&next, &v);
        v = next;
        deltas.push(delta);
        if delta < tol {
            converged = true;
            break;
        }
    }
    let values = ValueTable::from_values(model, v)?;
    let policy = greedy_policy(&q_from_v(model, &values, gamma));
    Ok(ValueIterationResult {
        values,
        policy,
        sweeps: deltas.len(),
        converged,
        deltas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub x: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates x_{k+1} = f(x_k) until |x_{k+1} − x_k| < tol or `max_iter`
/// evaluations of `f`.
pub fn fixed_point<F: FnMut(f64) -> f64>(mut f: F, x0: f64, tol: f64, max_iter: usize) -> FixedPoint {
    let mut x = x0;
    for k in 1..=max_iter {
        let next = f(x);
        let step = (next - x).abs();
        x = next;
        if step < tol {
            return FixedPoint {
                x,
                iterations: k,
                converged: true,
            };
        }
    }
    FixedPoint {
        x,
        iterations: max_iter,
        converged: false,
    }
}
