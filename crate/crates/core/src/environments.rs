//! The grid worlds used throughout, built as [`TransitionModel`]s.
//!
//! | name                   | layout                 | terminals | rewards (step, entering terminal) |
//! |------------------------|------------------------|-----------|-----------------------------------|
//! | `grid1d9`              | 1×9 line               | s5        | −1, +5                            |
//! | `grid1d9_stochastic`   | 1×9 line, slippery     | s5        | −1, +5                            |
//! | `grid2x2`              | 2×2, two moves/state   | s4        | −1, +3                            |
//! | `grid3x3`              | 3×3 row-major, 4 moves | s7        | −1, +3                            |
//! | `grid1d8_two_terminal` | 1×8 line               | s4, s8    | −1, +5                            |
//!
//! Off-grid moves stay in place and cost the step reward.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::dp::ValueTable;
use crate::error::{Error, Result};
use crate::mdp::{ActionId, StateId, TabularPolicy, TransitionModel};

pub const ENV_NAMES: [&str; 5] = [
    "grid1d9",
    "grid1d9_stochastic",
    "grid2x2",
    "grid3x3",
    "grid1d8_two_terminal",
];

/// Action order shared by every environment; greedy tie-breaking follows it.
pub const ACTIONS: [&str; 4] = ["left", "right", "up", "down"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvName {
    Grid1d9,
    Grid1d9Stochastic,
    Grid2x2,
    Grid3x3,
    Grid1d8TwoTerminal,
}

impl EnvName {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::Grid1d9 => "grid1d9",
            EnvName::Grid1d9Stochastic => "grid1d9_stochastic",
            EnvName::Grid2x2 => "grid2x2",
            EnvName::Grid3x3 => "grid3x3",
            EnvName::Grid1d8TwoTerminal => "grid1d8_two_terminal",
        }
    }

    fn default_terminal_reward(self) -> f64 {
        match self {
            EnvName::Grid2x2 | EnvName::Grid3x3 => 3.0,
            _ => 5.0,
        }
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "grid1d9" => EnvName::Grid1d9,
            "grid1d9_stochastic" => EnvName::Grid1d9Stochastic,
            "grid2x2" => EnvName::Grid2x2,
            "grid3x3" => EnvName::Grid3x3,
            "grid1d8_two_terminal" => EnvName::Grid1d8TwoTerminal,
            _ => {
                return Err(Error::UnknownEnvironment {
                    name: s.to_string(),
                    valid: ENV_NAMES.iter().map(|n| n.to_string()).collect(),
                })
            }
        })
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Recognised override keys: `terminal_reward`, `step_reward`, `gamma`.
pub type Overrides = BTreeMap<String, f64>;

#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub name: EnvName,
    pub model: TransitionModel,
    pub start_states: Vec<StateId>,
    /// Known optimal values, when the default rewards are in use.
    pub optimal_values: Option<ValueTable>,
    pub terminal_reward: f64,
    pub step_reward: f64,
}

pub fn make_env(name: &str, overrides: &Overrides) -> Result<EnvSpec> {
    let name: EnvName = name.parse()?;
    let mut terminal_reward = name.default_terminal_reward();
    let mut step_reward = -1.0;
    let mut gamma = 1.0;
    for (key, &value) in overrides {
        if !value.is_finite() {
            return Err(Error::InvalidParameter(format!("override `{key}` must be finite")));
        }
        match key.as_str() {
            "terminal_reward" => terminal_reward = value,
            "step_reward" => step_reward = value,
            "gamma" => gamma = value,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown override `{key}`; valid keys: terminal_reward, step_reward, gamma"
                )))
            }
        }
    }
    let model = match name {
        EnvName::Grid1d9 => line_world(9, &[5], &[], step_reward, terminal_reward, gamma)?,
        EnvName::Grid1d9Stochastic => stochastic_line(step_reward, terminal_reward, gamma)?,
        EnvName::Grid2x2 => grid2x2(step_reward, terminal_reward, gamma)?,
        EnvName::Grid3x3 => grid3x3(step_reward, terminal_reward, gamma)?,
        EnvName::Grid1d8TwoTerminal => line_world(8, &[4, 8], &[1], step_reward, terminal_reward, gamma)?,
    };
    let default_rewards = step_reward == -1.0 && terminal_reward == name.default_terminal_reward();
    let optimal_values = match name {
        EnvName::Grid1d9 if default_rewards && gamma == 1.0 => Some(ValueTable::from_values(
            &model,
            vec![2.0, 3.0, 4.0, 5.0, 0.0, 5.0, 4.0, 3.0, 2.0],
        )?),
        _ => None,
    };
    Ok(EnvSpec {
        name,
        start_states: model.non_terminal_states().collect(),
        model,
        optimal_values,
        terminal_reward,
        step_reward,
    })
}

fn labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("s{i}")).collect()
}

/// A 1×n corridor. States listed in `right_only` have no `left` move.
fn line_world(
    n: usize,
    terminals: &[usize],
    right_only: &[usize],
    step_reward: f64,
    terminal_reward: f64,
    gamma: f64,
) -> Result<TransitionModel> {
    let names = labels(n);
    let mut b = TransitionModel::builder(&names, &ACTIONS[..2]).gamma(gamma);
    let reward = |k: usize| if terminals.contains(&k) { terminal_reward } else { step_reward };
    for k in 1..=n {
        let s = &names[k - 1];
        if terminals.contains(&k) {
            b = b.terminal(s);
            continue;
        }
        let left = if k == 1 { 1 } else { k - 1 };
        let right = if k == n { n } else { k + 1 };
        if !right_only.contains(&k) {
            b = b.step(s, "left", &names[left - 1], reward(left));
        }
        b = b.step(s, "right", &names[right - 1], reward(right));
    }
    b.build()
}

fn stochastic_line(step_reward: f64, terminal_reward: f64, gamma: f64) -> Result<TransitionModel> {
    let names = labels(9);
    let r = |s: &str| if s == "s5" { terminal_reward } else { step_reward };
    // (state, action, [(next, prob)])
    let table: [(&str, &str, &[(&str, f64)]); 16] = [
        ("s1", "right", &[("s2", 0.7), ("s1", 0.3)]),
        ("s1", "left", &[("s1", 1.0)]),
        ("s2", "right", &[("s3", 0.8), ("s1", 0.2)]),
        ("s2", "left", &[("s1", 1.0)]),
        ("s3", "right", &[("s4", 0.9), ("s2", 0.1)]),
        ("s3", "left", &[("s2", 1.0)]),
        ("s4", "right", &[("s5", 1.0)]),
        ("s4", "left", &[("s3", 1.0)]),
        ("s6", "right", &[("s7", 0.6), ("s5", 0.4)]),
        ("s6", "left", &[("s5", 1.0)]),
        ("s7", "right", &[("s8", 0.7), ("s6", 0.3)]),
        ("s7", "left", &[("s6", 1.0)]),
        ("s8", "right", &[("s9", 0.8), ("s7", 0.2)]),
        ("s8", "left", &[("s7", 1.0)]),
        ("s9", "right", &[("s9", 1.0)]),
        ("s9", "left", &[("s8", 1.0)]),
    ];
    let mut b = TransitionModel::builder(&names, &ACTIONS[..2])
        .gamma(gamma)
        .terminal("s5");
    for (s, a, outs) in table {
        for &(next, p) in outs {
            b = b.outcome(s, a, next, r(next), p);
        }
    }
    b.build()
}

fn grid2x2(step_reward: f64, terminal_reward: f64, gamma: f64) -> Result<TransitionModel> {
    TransitionModel::builder(&labels(4), &ACTIONS)
        .gamma(gamma)
        .terminal("s4")
        .step("s1", "right", "s2", step_reward)
        .step("s1", "down", "s3", step_reward)
        .step("s2", "left", "s1", step_reward)
        .step("s2", "down", "s4", terminal_reward)
        .step("s3", "right", "s4", terminal_reward)
        .step("s3", "up", "s1", step_reward)
        .build()
}

fn grid3x3(step_reward: f64, terminal_reward: f64, gamma: f64) -> Result<TransitionModel> {
    let names = labels(9);
    let mut b = TransitionModel::builder(&names, &ACTIONS)
        .gamma(gamma)
        .terminal("s7");
    for idx in 0..9 {
        if idx == 6 {
            continue;
        }
        let (row, col) = (idx / 3, idx % 3);
        for action in ACTIONS {
            let (r, c) = match action {
                "left" if col > 0 => (row, col - 1),
                "right" if col < 2 => (row, col + 1),
                "up" if row > 0 => (row - 1, col),
                "down" if row < 2 => (row + 1, col),
                _ => (row, col),
            };
            let next = r * 3 + c;
            let reward = if next == 6 { terminal_reward } else { step_reward };
            b = b.step(&names[idx], action, &names[next], reward);
        }
    }
    b.build()
}

/// Samples one transition of the environment.
pub fn step<R: Rng + ?Sized>(env: &EnvSpec, state: StateId, action: ActionId, rng: &mut R) -> Result<(StateId, f64, bool)> {
    let (next, reward) = env.model.sample(state, action, rng)?;
    Ok((next, reward, env.model.is_terminal(next)))
}

/// Built-in policies: `uniform` for every environment; `table1` (always
/// right) and `improved` (head for the terminal) for the 1×9 corridors.
pub fn named_policy(env: &EnvSpec, name: &str) -> Result<TabularPolicy> {
    let model = &env.model;
    let corridor = matches!(env.name, EnvName::Grid1d9 | EnvName::Grid1d9Stochastic);
    match name {
        "uniform" => Ok(TabularPolicy::uniform(model)),
        "table1" | "improved" if corridor => {
            let left = model.action("left")?;
            let right = model.action("right")?;
            let goal = model.state("s5")?;
            let choice: Vec<Option<ActionId>> = model
                .states()
                .map(|s| {
                    if model.is_terminal(s) {
                        None
                    } else if name == "table1" || s < goal {
                        Some(right)
                    } else {
                        Some(left)
                    }
                })
                .collect();
            Ok(TabularPolicy::deterministic(&choice))
        }
        "table1" | "improved" => Err(Error::InvalidParameter(format!(
            "policy `{name}` is only defined for grid1d9 and grid1d9_stochastic"
        ))),
        _ => Err(Error::InvalidParameter(format!(
            "unknown policy `{name}`; valid names: uniform, table1, improved"
        ))),
    }
}
