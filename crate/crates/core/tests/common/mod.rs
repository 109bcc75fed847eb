#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabular_rl::{ActionId, StateId, TabularPolicy, TransitionModel};

/// A random MDP with `n` non-terminal states, one terminal state `t`, and
/// two or three actions per state. Every state can reach `t` directly.
pub fn random_mdp(seed: u64, n: usize) -> TransitionModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    labels.push("t".into());
    let actions = ["a", "b", "c"];
    let mut b = TransitionModel::builder(&labels, &actions).terminal("t");
    for s in 0..n {
        let k = rng.random_range(2..=3);
        for a in &actions[..k] {
            let fanout = rng.random_range(1..=3);
            let mut targets: Vec<usize> = (0..fanout).map(|_| rng.random_range(0..=n)).collect();
            targets.push(n);
            targets.sort_unstable();
            targets.dedup();
            let weights: Vec<f64> = targets.iter().map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let mut assigned = 0.0;
            for (i, (&next, w)) in targets.iter().zip(&weights).enumerate() {
                let p = if i + 1 == targets.len() { 1.0 - assigned } else { w / total };
                assigned += p;
                let reward = rng.random_range(-2.0..2.0);
                b = b.outcome(&labels[s], a, &labels[next], reward, p);
            }
        }
    }
    b.build().expect("generated model is valid")
}

/// A random stochastic policy over each state's available actions.
pub fn random_policy(model: &TransitionModel, seed: u64) -> TabularPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = model
        .states()
        .map(|s| {
            let acts: Vec<ActionId> = model.actions_at(s).collect();
            let w: Vec<f64> = acts.iter().map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = w.iter().sum();
            acts.into_iter().zip(w.into_iter().map(|x| x / total)).collect()
        })
        .collect();
    TabularPolicy::from_rows(rows)
}

/// Value of a deterministic policy on a deterministic model, by walking
/// the path from each state. A path that closes a loop repeats it forever;
/// the loop's contribution is summed in closed form.
pub fn walk_value(model: &TransitionModel, choice: &[Option<ActionId>], start: StateId, gamma: f64) -> f64 {
    let mut seen: Vec<Option<(f64, f64)>> = vec![None; model.n_states()];
    let mut s = start;
    let mut total = 0.0;
    let mut discount = 1.0;
    loop {
        if model.is_terminal(s) {
            return total;
        }
        if let Some((total_then, discount_then)) = seen[s.0] {
            let lap = total - total_then;
            if gamma == 1.0 {
                return if lap < 0.0 {
                    f64::NEG_INFINITY
                } else if lap > 0.0 {
                    f64::INFINITY
                } else {
                    total_then
                };
            }
            return total_then + lap / (1.0 - discount / discount_then);
        }
        seen[s.0] = Some((total, discount));
        let a = choice[s.0].expect("non-terminal state has an action");
        let o = model.outcomes(s, a).expect("action is available");
        assert_eq!(o.len(), 1, "walk_value needs a deterministic model");
        total += discount * o[0].reward;
        discount *= gamma;
        s = o[0].next;
    }
}

/// Best value of every state over all deterministic policies, and for each
/// state the actions that start an optimal path.
pub fn enumerate_optimal(model: &TransitionModel, gamma: f64) -> (Vec<f64>, Vec<Vec<ActionId>>) {
    let options: Vec<Vec<ActionId>> = model.states().map(|s| model.actions_at(s).collect()).collect();
    let mut best = vec![f64::NEG_INFINITY; model.n_states()];
    let mut best_first: Vec<Vec<ActionId>> = vec![Vec::new(); model.n_states()];
    let mut idx = vec![0usize; model.n_states()];
    loop {
        let choice: Vec<Option<ActionId>> = options
            .iter()
            .zip(&idx)
            .map(|(opts, &i)| opts.get(i).copied())
            .collect();
        for s in model.states() {
            if model.is_terminal(s) {
                best[s.0] = 0.0;
                continue;
            }
            let v = walk_value(model, &choice, s, gamma);
            let a = choice[s.0].unwrap();
            if v > best[s.0] + 1e-9 {
                best[s.0] = v;
                best_first[s.0] = vec![a];
            } else if (v - best[s.0]).abs() <= 1e-9 && !best_first[s.0].contains(&a) {
                best_first[s.0].push(a);
            }
        }
        // odometer over every combination of actions
        let mut k = 0;
        loop {
            if k == idx.len() {
                for f in &mut best_first {
                    f.sort();
                }
                return (best, best_first);
            }
            if options[k].len() > 1 && idx[k] + 1 < options[k].len() {
                idx[k] += 1;
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
