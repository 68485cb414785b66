//! Seeded random game generators and brute-force reference implementations.
//!
//! Everything here is deterministic in the seed. The generators are used by
//! the test suites to cross-check the optimized algorithms against slow,
//! obviously-correct ones; they are exported so downstream test targets can
//! reuse them.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::game::{Game, GameBuilder, PlayerId};
use crate::strategy::ReducedPlan;

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub n_players: usize,
    pub max_depth: usize,
    /// Probability that an internal node is a chance node.
    pub chance_prob: f64,
    /// Probability of stopping early at interior depths.
    pub stop_prob: f64,
    /// Two-player games get payoffs (v, -v) when set.
    pub zero_sum: bool,
}

impl GenConfig {
    /// Small trees suitable for exhaustive oracles.
    pub fn small() -> Self {
        GenConfig { n_players: 2, max_depth: 4, chance_prob: 0.2, stop_prob: 0.25, zero_sum: false }
    }

    pub fn small_zero_sum() -> Self {
        GenConfig { zero_sum: true, ..Self::small() }
    }
}

struct Gen<'a> {
    cfg: &'a GenConfig,
    rng: ChaCha8Rng,
    b: GameBuilder,
    next_node: usize,
    /// (player, recall key) -> (state name, action count).
    states: BTreeMap<(PlayerId, String), (String, usize)>,
    perfect_recall: bool,
}

impl<'a> Gen<'a> {
    fn fresh_node(&mut self) -> String {
        let n = self.next_node;
        self.next_node += 1;
        format!("n{n}")
    }

    fn payoffs(&mut self) -> Vec<f64> {
        // Quarter-step payoffs keep expected values exactly representable
        // enough for tight tolerance checks.
        let v = (self.rng.gen_range(-40..=40) as f64) * 0.25;
        if self.cfg.zero_sum && self.cfg.n_players == 2 {
            vec![v, -v]
        } else {
            (0..self.cfg.n_players)
                .map(|_| (self.rng.gen_range(-40..=40) as f64) * 0.25)
                .collect()
        }
    }

    /// `own_hists[p]` is the recall key of player p: their own
    /// (state, action) history when perfect recall is requested, or a coarse
    /// bucket otherwise.
    fn node(&mut self, depth: usize, own_hists: &[String]) -> String {
        let stop = depth >= self.cfg.max_depth
            || (depth > 0 && self.rng.gen_bool(self.cfg.stop_prob));
        if stop {
            let name = self.fresh_node();
            let pay = self.payoffs();
            self.b.terminal(name.clone(), pay).unwrap();
            return name;
        }
        if self.rng.gen_bool(self.cfg.chance_prob) {
            let name = self.fresh_node();
            let k = self.rng.gen_range(2..=3);
            let weights: Vec<f64> = (0..k).map(|_| self.rng.gen_range(1..=4) as f64).collect();
            let total: f64 = weights.iter().sum();
            let labels: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
            let actions: Vec<(&str, f64)> = labels
                .iter()
                .zip(&weights)
                .map(|(l, w)| (l.as_str(), w / total))
                .collect();
            self.b.chance(name.clone(), &actions).unwrap();
            for (i, label) in labels.iter().enumerate() {
                // Children of a chance move share the parent's recall keys:
                // nobody observes the outcome directly, which produces games
                // where information actually matters.
                let observed: Vec<String> = own_hists
                    .iter()
                    .enumerate()
                    .map(|(p, h)| {
                        if self.perfect_recall && self.rng.gen_bool(0.5) {
                            format!("{h}/c{p}{i}") // this player observes chance
                        } else {
                            h.clone()
                        }
                    })
                    .collect();
                let child = self.node(depth + 1, &observed);
                self.b.edge(name.clone(), label.clone(), child);
            }
            return name;
        }
        let player = self.rng.gen_range(0..self.cfg.n_players);
        let key = if self.perfect_recall {
            own_hists[player].clone()
        } else {
            // Arbitrary-recall bucket: nodes of one player at one depth fall
            // into one of two states regardless of history.
            format!("d{depth}b{}", self.rng.gen_range(0..2))
        };
        let n_states = self.states.len();
        let (state, n_actions) = self
            .states
            .entry((player, key.clone()))
            .or_insert_with(|| {
                // Action count fixed at state creation so all member nodes agree.
                let n = 2 + (n_states % 2);
                (format!("P{player}.s{n_states}"), n)
            })
            .clone();
        let name = self.fresh_node();
        let action_names: Vec<String> = (0..n_actions).map(|i| format!("a{i}")).collect();
        let refs: Vec<&str> = action_names.iter().map(String::as_str).collect();
        self.b.decision(name.clone(), &format!("P{player}"), state.clone(), &refs).unwrap();
        for (i, a) in action_names.iter().enumerate() {
            let mut hists = own_hists.to_vec();
            hists[player] = format!("{}/{}={}", hists[player], state, i);
            let child = self.node(depth + 1, &hists);
            self.b.edge(name.clone(), a.clone(), child);
        }
        name
    }

    fn run(mut self) -> Game {
        let hists = vec![String::new(); self.cfg.n_players];
        let root = self.node(0, &hists);
        self.b.root(root);
        self.b.finish().expect("generated game must validate")
    }
}

fn gen(seed: u64, cfg: &GenConfig, perfect_recall: bool) -> Game {
    let players: Vec<String> = (0..cfg.n_players).map(|p| format!("P{p}")).collect();
    Gen {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(seed),
        b: GameBuilder::new(players),
        next_node: 0,
        states: BTreeMap::new(),
        perfect_recall,
    }
    .run()
}

/// Random game where every player has perfect recall (states group nodes by
/// exact own history, optionally extended with observed chance outcomes).
pub fn random_perfect_recall_game(seed: u64, cfg: &GenConfig) -> Game {
    gen(seed, cfg, true)
}

/// Random game with no recall guarantees: states bucket nodes of a player by
/// depth only, so a player may forget own moves or observations.
pub fn random_game(seed: u64, cfg: &GenConfig) -> Game {
    gen(seed, cfg, false)
}

/// Reference reduced-plan enumeration: list every full assignment over the
/// player's states, restrict each to the states it can actually reach, and
/// deduplicate. Exponential; only for small games.
pub fn oracle_reduced_plans(game: &Game, player: PlayerId) -> Vec<ReducedPlan> {
    let states: Vec<_> = game.states_of(player).to_vec();
    let counts: Vec<usize> = states.iter().map(|&s| game.state(s).n_actions()).collect();
    let total: usize = counts.iter().product();
    assert!(total <= 1_000_000, "oracle enumeration too large: {total}");

    // Own histories per state member, reused across assignments.
    let histories: Vec<Vec<Vec<(usize, usize)>>> = states
        .iter()
        .map(|&s| {
            game.state(s)
                .nodes
                .iter()
                .map(|&v| game.own_history(v, player))
                .collect()
        })
        .collect();

    let mut plans = BTreeSet::new();
    for mut idx in 0..total.max(1) {
        if states.is_empty() {
            plans.insert(ReducedPlan { owner: player, choices: BTreeMap::new() });
            break;
        }
        let mut full: BTreeMap<usize, usize> = BTreeMap::new();
        for (pos, &s) in states.iter().enumerate() {
            full.insert(s, idx % counts[pos]);
            idx /= counts[pos];
        }
        let mut choices = BTreeMap::new();
        for (pos, &s) in states.iter().enumerate() {
            let reachable = histories[pos]
                .iter()
                .any(|h| h.iter().all(|(dep, a)| full.get(dep) == Some(a)));
            if reachable {
                choices.insert(s, full[&s]);
            }
        }
        plans.insert(ReducedPlan { owner: player, choices });
    }
    plans.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        let a = random_perfect_recall_game(7, &GenConfig::small());
        let b = random_perfect_recall_game(7, &GenConfig::small());
        assert_eq!(a, b);
        let c = random_game(7, &GenConfig::small());
        let d = random_game(7, &GenConfig::small());
        assert_eq!(c, d);
    }

    #[test]
    fn perfect_recall_generator_has_consistent_histories() {
        for seed in 0..20 {
            let g = random_perfect_recall_game(seed, &GenConfig::small());
            for st in g.states() {
                let hists: Vec<_> = st.nodes.iter().map(|&v| g.own_history(v, st.owner)).collect();
                for h in &hists {
                    assert_eq!(h, &hists[0], "seed {seed}: state {} mixes histories", st.name);
                }
            }
        }
    }

    #[test]
    fn games_have_some_structure() {
        let mut saw_chance = false;
        let mut saw_multi_node_state = false;
        for seed in 0..20 {
            let g = random_game(seed, &GenConfig::small());
            saw_chance |= (0..g.n_nodes()).any(|n| matches!(g.node(n), crate::game::Node::Chance { .. }));
            saw_multi_node_state |= g.states().iter().any(|s| s.nodes.len() > 1);
        }
        assert!(saw_chance, "no chance nodes in 20 seeds");
        assert!(saw_multi_node_state, "no grouped states in 20 seeds");
    }
}
