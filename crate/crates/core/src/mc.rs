//! Monte Carlo policy evaluation: average the returns observed after
//! visits to each state.

use std::str::FromStr;

use rand::Rng;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::mdp::{rollout, StartDistribution, StateId, TabularPolicy, Trajectory, TransitionModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisitMode {
    First,
    Every,
}

impl FromStr for VisitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(VisitMode::First),
            "every" => Ok(VisitMode::Every),
            _ => Err(Error::InvalidParameter(format!("unknown visit mode `{s}`; valid: first, every"))),
        }
    }
}

impl VisitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            VisitMode::First => "first",
            VisitMode::Every => "every",
        }
    }
}

/// Per-state sum of returns and visit count N(s).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnAccumulator {
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl ReturnAccumulator {
    pub fn new(n_states: usize) -> Self {
        Self {
            sums: vec![0.0; n_states],
            counts: vec![0; n_states],
        }
    }

    pub fn add(&mut self, s: StateId, g: f64) {
        self.sums[s.0] += g;
        self.counts[s.0] += 1;
    }

    pub fn merge(&mut self, other: &ReturnAccumulator) {
        assert_eq!(self.sums.len(), other.sums.len(), "accumulators cover different state sets");
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn count(&self, s: StateId) -> u64 {
        self.counts[s.0]
    }

    pub fn sum(&self, s: StateId) -> f64 {
        self.sums[s.0]
    }

    /// Mean return, or `None` for a state never visited.
    pub fn estimate(&self, s: StateId) -> Option<f64> {
        match self.counts[s.0] {
            0 => None,
            n => Some(self.sums[s.0] / n as f64),
        }
    }

    /// Adds the returns of one episode, computed in a single backward pass.
    pub fn add_episode(&mut self, episode: &Trajectory, gamma: f64, mode: VisitMode) {
        let first = match mode {
            VisitMode::First => {
                let mut first = vec![usize::MAX; self.sums.len()];
                for (t, step) in episode.steps.iter().enumerate() {
                    if first[step.state.0] == usize::MAX {
                        first[step.state.0] = t;
                    }
                }
                Some(first)
            }
            VisitMode::Every => None,
        };
        let mut g = 0.0;
        for (t, step) in episode.steps.iter().enumerate().rev() {
            g = step.reward + gamma * g;
            if first.as_ref().is_none_or(|f| f[step.state.0] == t) {
                self.add(step.state, g);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub accumulator: ReturnAccumulator,
    pub episodes: usize,
    /// Sampled episodes cut off at `max_steps` before terminating; their
    /// returns are not used.
    pub truncated: usize,
}

impl McEstimate {
    pub fn value(&self, s: StateId) -> Option<f64> {
        self.accumulator.estimate(s)
    }

    pub fn visited(&self, model: &TransitionModel) -> Vec<StateId> {
        model.states().filter(|&s| self.accumulator.count(s) > 0).collect()
    }

    /// `{"values": {...}, "counts": {...}}`; unvisited states are left out.
    pub fn to_json(&self, model: &TransitionModel) -> Value {
        let mut values = Map::new();
        let mut counts = Map::new();
        for s in self.visited(model) {
            let label = model.state_label(s).to_string();
            values.insert(label.clone(), json!(self.value(s)));
            counts.insert(label, json!(self.accumulator.count(s)));
        }
        json!({ "values": values, "counts": counts })
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("gamma {gamma} outside [0, 1]")))
    }
}

/// Averages returns over supplied episodes.
pub fn mc_replay(model: &TransitionModel, episodes: &[Trajectory], gamma: f64, mode: VisitMode) -> Result<McEstimate> {
    check_gamma(gamma)?;
    let mut acc = ReturnAccumulator::new(model.n_states());
    for e in episodes {
        acc.add_episode(e, gamma, mode);
    }
    if acc.counts.iter().all(|&c| c == 0) {
        return Err(Error::EmptyEstimate);
    }
    Ok(McEstimate {
        accumulator: acc,
        episodes: episodes.len(),
        truncated: 0,
    })
}

/// Samples `episodes` episodes under `policy` and averages their returns.
pub fn mc_evaluate<R: Rng + ?Sized>(
    model: &TransitionModel,
    policy: &TabularPolicy,
    gamma: f64,
    episodes: usize,
    mode: VisitMode,
    starts: &StartDistribution,
    max_steps: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    check_gamma(gamma)?;
    if episodes == 0 {
        return Err(Error::InvalidParameter("episodes must be at least 1".into()));
    }
    policy.check(model)?;
    let mut acc = ReturnAccumulator::new(model.n_states());
    let mut truncated = 0;
    for _ in 0..episodes {
        let start = starts.sample(rng);
        let episode = rollout(model, policy, start, max_steps, rng)?;
        if episode.terminated {
            acc.add_episode(&episode, gamma, mode);
        } else {
            truncated += 1;
        }
    }
    if acc.counts.iter().all(|&c| c == 0) {
        return Err(Error::EmptyEstimate);
    }
    Ok(McEstimate {
        accumulator: acc,
        episodes,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::analytic_policy_evaluation;
    use crate::environments::{make_env, Overrides};
    use crate::seeded_rng;

    fn grid3x3() -> TransitionModel {
        make_env("grid3x3", &Overrides::new()).unwrap().model
    }

    fn three_trajectories(m: &TransitionModel) -> Vec<Trajectory> {
        let red = [("s3", "down", -1.0), ("s6", "left", -1.0), ("s5", "left", -1.0), ("s4", "down", 3.0)];
        let blue = [("s3", "down", -1.0), ("s6", "left", -1.0), ("s5", "down", -1.0), ("s8", "left", 3.0)];
        let green = [("s3", "down", -1.0), ("s6", "down", -1.0), ("s9", "left", -1.0), ("s8", "left", 3.0)];
        [&red[..], &blue[..], &green[..]]
            .iter()
            .map(|t| Trajectory::from_labels(m, t, None).unwrap())
            .collect()
    }

    #[test]
    fn three_trajectory_replay() {
        let m = grid3x3();
        let est = mc_replay(&m, &three_trajectories(&m), 1.0, VisitMode::First).unwrap();
        assert_eq!(est.value(m.state("s6").unwrap()), Some(1.0));
        assert_eq!(est.value(m.state("s5").unwrap()), Some(2.0));
        assert_eq!(est.value(m.state("s3").unwrap()), Some(0.0));
        assert_eq!(est.value(m.state("s1").unwrap()), None);
        let every = mc_replay(&m, &three_trajectories(&m), 1.0, VisitMode::Every).unwrap();
        assert_eq!(every, est);
    }

    #[test]
    fn first_and_every_visit_differ_on_loops() {
        let m = grid3x3();
        // bump into the top wall once, then walk to the goal
        let e = Trajectory::from_labels(
            &m,
            &[("s1", "up", -1.0), ("s1", "down", -1.0), ("s4", "down", 3.0)],
            None,
        )
        .unwrap();
        let first = mc_replay(&m, std::slice::from_ref(&e), 1.0, VisitMode::First).unwrap();
        let every = mc_replay(&m, &[e], 1.0, VisitMode::Every).unwrap();
        let s1 = m.state("s1").unwrap();
        assert_eq!(first.value(s1), Some(1.0));
        assert_eq!(every.value(s1), Some(1.5));
        assert_eq!(every.accumulator.count(s1), 2);
    }

    #[test]
    fn merge_matches_single_pass() {
        let m = grid3x3();
        let eps = three_trajectories(&m);
        let mut a = ReturnAccumulator::new(m.n_states());
        a.add_episode(&eps[0], 0.9, VisitMode::First);
        let mut b = ReturnAccumulator::new(m.n_states());
        b.add_episode(&eps[1], 0.9, VisitMode::First);
        b.add_episode(&eps[2], 0.9, VisitMode::First);
        a.merge(&b);
        let all = mc_replay(&m, &eps, 0.9, VisitMode::First).unwrap();
        assert_eq!(a, all.accumulator);
    }

    #[test]
    fn sampled_estimate_2x2() {
        let m = make_env("grid2x2", &Overrides::new()).unwrap().model;
        let p = TabularPolicy::uniform(&m);
        let exact = analytic_policy_evaluation(&m, &p, 1.0).unwrap();
        let mut rng = seeded_rng(3);
        let est = mc_evaluate(&m, &p, 1.0, 200_000, VisitMode::First, &StartDistribution::uniform(&m), 100, &mut rng)
            .unwrap();
        for s in m.non_terminal_states() {
            assert!((est.value(s).unwrap() - exact.get(s)).abs() < 0.05);
        }
        assert_eq!(est.value(m.state("s4").unwrap()), None);
        assert_eq!(est.truncated, 0);
    }

    #[test]
    fn truncated_episodes_are_dropped() {
        let e = make_env("grid1d9", &Overrides::new()).unwrap();
        let p = crate::environments::named_policy(&e, "table1").unwrap();
        let starts = StartDistribution::single(&e.model, e.model.state("s9").unwrap()).unwrap();
        let r = mc_evaluate(&e.model, &p, 1.0, 5, VisitMode::First, &starts, 20, &mut seeded_rng(0));
        assert_eq!(r, Err(Error::EmptyEstimate));
    }
}
