//! Self-play trajectory generation on a refined game.
//!
//! Episodes are played on the refined (perfect-recall) game, where the
//! team acts as a single merged player. Stored records are *purged*: each
//! refined observation is replaced by the original-game information state
//! the acting member would really have at execution time, since the extra
//! knowledge the refinement encodes (the teammates' actions) is not
//! available then.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{ActionIdx, Game, Node, NodeId, PlayerId, StateId};
use crate::plans::complete_plan;
use crate::refinement::{recall_report, RefinementMap};
use crate::rng::stage_rng;
use crate::solver::best_response;
use crate::strategy::{BehavioralStrategy, CoordinatedStrategy, StrategyError, StrategyRef};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("buffer capacity must be at least 1")]
    BadCapacity,
    #[error("refined player {0} lacks perfect recall")]
    ImperfectRecall(PlayerId),
    #[error("refined observation {0} is not in the refinement's state map")]
    UnknownObservation(StateId),
    #[error("game does not match the refinement's source at state {0}")]
    MismatchedGames(StateId),
    #[error("strategy team {got:?} does not match the refinement's team {expected:?}")]
    WrongMembers { expected: Vec<PlayerId>, got: Vec<PlayerId> },
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("line {0}: {1}")]
    BadRecord(usize, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One decision of the merged team player during an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrajectoryStep {
    pub refined_obs: StateId,
    pub original_obs: StateId,
    pub action: ActionIdx,
}

/// One episode on the refined game, decisions grouped by the original team
/// member who would act (in that member's decision order).
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    /// Original-game member ids, ascending.
    pub members: Vec<PlayerId>,
    /// Per member, that member's decisions along the realized path.
    pub steps: Vec<Vec<TrajectoryStep>>,
    pub leaf: NodeId,
    pub reward: f64,
}

/// A purged training sample: per member, the original-game observation ids
/// seen along one episode and the actions taken at them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub observations: Vec<Vec<StateId>>,
    pub targets: Vec<Vec<ActionIdx>>,
    pub reward: f64,
}

/// FIFO buffer of sample records with a hard capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBuffer {
    capacity: usize,
    records: VecDeque<SampleRecord>,
}

impl TrajectoryBuffer {
    pub fn new(capacity: usize) -> Result<Self, SamplingError> {
        if capacity == 0 {
            return Err(SamplingError::BadCapacity);
        }
        Ok(TrajectoryBuffer { capacity, records: VecDeque::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Append, evicting the oldest record when full.
    pub fn push(&mut self, record: SampleRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = &SampleRecord> {
        self.records.iter()
    }

    /// One JSON object per line, in insertion order.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), SamplingError> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R, capacity: usize) -> Result<Self, SamplingError> {
        let mut buf = TrajectoryBuffer::new(capacity)?;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line)
                .map_err(|e| SamplingError::BadRecord(i + 1, e.to_string()))?;
            buf.push(rec);
        }
        Ok(buf)
    }
}

/// Tabular learner configuration. The neural parts of the usual
/// self-play setup are replaced by a Q table per refined player and
/// count-based average policies; the episode structure is unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FspConfig {
    /// Q-learning rate.
    pub lr: f64,
    /// Discount; 1 for these finite-horizon games.
    pub gamma: f64,
    /// Anticipatory mixing: probability an episode's learner acts from its
    /// (exploring) best response rather than its average policy.
    pub eta: f64,
    /// Exploration rate, annealed linearly from `eps_start` to `eps_end`
    /// over the episode budget.
    pub eps_start: f64,
    pub eps_end: f64,
    /// Sample buffer capacity.
    pub capacity: usize,
    /// Exploitability is measured every this many episodes.
    pub eval_every: usize,
}

impl Default for FspConfig {
    fn default() -> Self {
        FspConfig {
            lr: 0.1,
            gamma: 1.0,
            eta: 0.1,
            eps_start: 0.06,
            eps_end: 0.0,
            capacity: 20_000,
            eval_every: 50,
        }
    }
}

/// Everything a sampling run produces: the purged buffer, both players'
/// average strategies, and the exploitability series measured along the
/// run as (episode, epsilon) pairs.
#[derive(Debug, Clone)]
pub struct FspOutcome {
    pub buffer: TrajectoryBuffer,
    pub averages: Vec<BehavioralStrategy>,
    pub eps_series: Vec<(usize, f64)>,
}

/// Check that `original` is the game the refinement was built from (merge
/// keeps state ids, names and actions; only owners move to the merged
/// player).
fn check_original(original: &Game, map: &RefinementMap) -> Result<(), SamplingError> {
    if original.n_states() != map.original.n_states() {
        return Err(SamplingError::MismatchedGames(0));
    }
    for s in 0..original.n_states() {
        let a = original.state(s);
        let b = map.original.state(s);
        if a.name != b.name || a.actions != b.actions {
            return Err(SamplingError::MismatchedGames(s));
        }
    }
    Ok(())
}

/// Original-game owners of the refined team player's states, ascending.
/// The state map covers every refined state, so restrict to the merged
/// player's before looking up original owners.
fn team_members(original: &Game, map: &RefinementMap) -> Vec<PlayerId> {
    let owners: BTreeSet<PlayerId> = map
        .state_map
        .iter()
        .filter(|&(&rs, _)| map.refined.state(rs).owner == map.player)
        .map(|(_, &os)| original.state(os).owner)
        .collect();
    owners.into_iter().collect()
}

/// Group the merged player's episode decisions by original member.
fn split_steps(
    original: &Game,
    members: &[PlayerId],
    steps: &[TrajectoryStep],
) -> Vec<Vec<TrajectoryStep>> {
    let mut per: Vec<Vec<TrajectoryStep>> = vec![Vec::new(); members.len()];
    for st in steps {
        let owner = original.state(st.original_obs).owner;
        let i = members.iter().position(|&m| m == owner).unwrap();
        per[i].push(*st);
    }
    per
}

/// Replace each refined observation with its original-game information
/// state; actions are untouched. One record per episode, holding every
/// member's observation/target pair per move index.
pub fn purge(trajectory: &Trajectory, map: &RefinementMap) -> Result<Vec<SampleRecord>, SamplingError> {
    let mut observations = Vec::with_capacity(trajectory.members.len());
    let mut targets = Vec::with_capacity(trajectory.members.len());
    for steps in &trajectory.steps {
        let mut o = Vec::with_capacity(steps.len());
        let mut t = Vec::with_capacity(steps.len());
        for st in steps {
            let orig = *map
                .state_map
                .get(&st.refined_obs)
                .ok_or(SamplingError::UnknownObservation(st.refined_obs))?;
            o.push(orig);
            t.push(st.action);
        }
        observations.push(o);
        targets.push(t);
    }
    Ok(vec![SampleRecord { observations, targets, reward: trajectory.reward }])
}

fn sample_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Average policy at one state: counts normalized, uniform before the
/// first increment.
fn avg_probs(counts: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        counts.iter().map(|c| c / total).collect()
    } else {
        vec![1.0 / counts.len() as f64; counts.len()]
    }
}

fn greedy(q: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = a;
        }
    }
    best
}

fn game_max_payoff(game: &Game, player: PlayerId) -> f64 {
    game.leaves().iter().map(|&z| game.payoff(z, player)).fold(f64::MIN, f64::max)
}

/// Per-refined-player dense tables for the sampler.
struct PlayerTables {
    pos: BTreeMap<StateId, usize>,
    arity: Vec<usize>,
}

impl PlayerTables {
    fn build(game: &Game, player: PlayerId) -> PlayerTables {
        let states = game.states_of(player);
        PlayerTables {
            pos: states.iter().enumerate().map(|(i, &s)| (s, i)).collect(),
            arity: states.iter().map(|&s| game.state(s).actions.len()).collect(),
        }
    }

    fn filled(&self, v: f64) -> Vec<Vec<f64>> {
        self.arity.iter().map(|&k| vec![v; k]).collect()
    }
}

fn counts_to_behavioral(
    game: &Game,
    player: PlayerId,
    tables: &PlayerTables,
    counts: &[Vec<f64>],
) -> BehavioralStrategy {
    let mut b = BehavioralStrategy::uniform(game, player);
    for (&sid, &i) in &tables.pos {
        b.dist.insert(sid, avg_probs(&counts[i]));
    }
    b
}

/// Tabular self-play on the refined two-player zero-sum game.
///
/// Episodes alternate a learning player: the learner acts for the whole
/// episode either from its exploring best response (probability `eta`,
/// epsilon-greedy on its Q table) or from its average policy, updates its
/// Q table from its own transitions by one-step temporal-difference
/// backups, and then appends its greedy (best-response) action at each
/// visited state to its average counts. The other player acts from its
/// average policy. Each episode in which the team player acted purely from
/// its average policy contributes one purged [`SampleRecord`] to the
/// buffer.
///
/// `original` must be the game `map` was built from (the pre-merge game);
/// it supplies the member identities that purging restores.
pub fn sample_fsp(
    original: &Game,
    map: &RefinementMap,
    config: &FspConfig,
    episodes: usize,
    seed: u64,
) -> Result<FspOutcome, SamplingError> {
    check_original(original, map)?;
    let refined = &map.refined;
    for p in 0..refined.n_players() {
        if !recall_report(refined, p).perfect_recall {
            return Err(SamplingError::ImperfectRecall(p));
        }
    }
    let members = team_members(original, map);
    let meta = map.player;
    let tables = [PlayerTables::build(refined, 0), PlayerTables::build(refined, 1)];
    // Optimistic initialization: an untried action looks as good as the
    // best payoff its owner could possibly get, so greedy play keeps
    // rotating through unexplored branches until real returns displace
    // the optimism. Without it the tiny eta * eps exploration budget can
    // leave whole subtrees unvisited and the averages lock onto a pure,
    // exploitable profile.
    let optimistic: Vec<f64> = (0..2)
        .map(|p| {
            game_max_payoff(refined, p)
        })
        .collect();
    let mut q = [tables[0].filled(optimistic[0]), tables[1].filled(optimistic[1])];
    let mut counts = [tables[0].filled(0.0), tables[1].filled(0.0)];
    let mut buffer = TrajectoryBuffer::new(config.capacity)?;
    let mut eps_series = Vec::new();
    let mut rng = stage_rng(seed, "fsp");

    for episode in 0..episodes {
        let learner: PlayerId = episode % 2;
        let frac = if episodes > 1 { episode as f64 / (episodes - 1) as f64 } else { 0.0 };
        let eps_explore = config.eps_start + (config.eps_end - config.eps_start) * frac;
        let br_mode = rng.gen::<f64>() < config.eta;

        let mut node = refined.root();
        let mut meta_steps: Vec<TrajectoryStep> = Vec::new();
        let mut transitions: [Vec<(usize, ActionIdx)>; 2] = [Vec::new(), Vec::new()];
        let reward = loop {
            match refined.node(node) {
                Node::Terminal { .. } => break refined.payoff(node, meta),
                Node::Chance { probs, children, .. } => {
                    node = children[sample_index(&mut rng, probs)];
                }
                Node::Decision { state, children } => {
                    let owner = refined.state(*state).owner;
                    let i = tables[owner].pos[state];
                    let a = if owner == learner && br_mode {
                        if rng.gen::<f64>() < eps_explore {
                            rng.gen_range(0..tables[owner].arity[i])
                        } else {
                            greedy(&q[owner][i])
                        }
                    } else {
                        sample_index(&mut rng, &avg_probs(&counts[owner][i]))
                    };
                    transitions[owner].push((i, a));
                    if owner == meta {
                        meta_steps.push(TrajectoryStep {
                            refined_obs: *state,
                            original_obs: map.state_map[state],
                            action: a,
                        });
                    }
                    node = children[a];
                }
            }
        };

        // One-step TD backups along each player's own transitions; the
        // terminal reward enters at the last step. Sweeping the episode
        // backward lets a terminal reward reach the whole visited path.
        for p in 0..2 {
            let own_reward = if p == meta { reward } else { -reward };
            for k in (0..transitions[p].len()).rev() {
                let (i, a) = transitions[p][k];
                let target = match transitions[p].get(k + 1) {
                    Some(&(j, _)) => {
                        config.gamma * q[p][j].iter().copied().fold(f64::MIN, f64::max)
                    }
                    None => own_reward,
                };
                q[p][i][a] += config.lr * (target - q[p][i][a]);
            }
        }
        // Fictitious-play averaging: the learner's *best-response* action
        // under the freshly updated Q joins the average at every state the
        // episode visited, regardless of which branch actually acted.
        for &(i, _) in &transitions[learner] {
            counts[learner][i][greedy(&q[learner][i])] += 1.0;
        }

        // Record the episode when the team played purely from its average.
        if learner != meta || !br_mode {
            let steps = split_steps(original, &members, &meta_steps);
            let traj = Trajectory { members: members.clone(), steps, leaf: node, reward };
            for rec in purge(&traj, map)? {
                buffer.push(rec);
            }
        }

        if (episode + 1) % config.eval_every == 0 || episode + 1 == episodes {
            let a0 = counts_to_behavioral(refined, 0, &tables[0], &counts[0]);
            let a1 = counts_to_behavioral(refined, 1, &tables[1], &counts[1]);
            let (_, v0) =
                best_response(refined, 0, &[StrategyRef::Behavioral(&a1)]).expect("checked recall");
            let (_, v1) =
                best_response(refined, 1, &[StrategyRef::Behavioral(&a0)]).expect("checked recall");
            eps_series.push((episode + 1, v0 + v1));
        }
    }

    let averages = vec![
        counts_to_behavioral(refined, 0, &tables[0], &counts[0]),
        counts_to_behavioral(refined, 1, &tables[1], &counts[1]),
    ];
    Ok(FspOutcome { buffer, averages, eps_series })
}

/// Play episodes of a fixed strategy pair on the refined game and collect
/// the purged team records. Isolates downstream training from sampler
/// noise when an exact equilibrium is available.
pub fn sample_from_equilibrium(
    original: &Game,
    map: &RefinementMap,
    pi_meta: &BehavioralStrategy,
    pi_opp: &BehavioralStrategy,
    episodes: usize,
    capacity: usize,
    seed: u64,
) -> Result<TrajectoryBuffer, SamplingError> {
    check_original(original, map)?;
    let refined = &map.refined;
    pi_meta.validate(refined)?;
    pi_opp.validate(refined)?;
    let members = team_members(original, map);
    let meta = map.player;
    let strat_of = |p: PlayerId| if p == meta { pi_meta } else { pi_opp };
    let mut buffer = TrajectoryBuffer::new(capacity)?;
    let mut rng = stage_rng(seed, "equilibrium");

    for _ in 0..episodes {
        let mut node = refined.root();
        let mut meta_steps: Vec<TrajectoryStep> = Vec::new();
        let reward = loop {
            match refined.node(node) {
                Node::Terminal { .. } => break refined.payoff(node, meta),
                Node::Chance { probs, children, .. } => {
                    node = children[sample_index(&mut rng, probs)];
                }
                Node::Decision { state, children } => {
                    let owner = refined.state(*state).owner;
                    let a = sample_index(&mut rng, &strat_of(owner).dist[state]);
                    if owner == meta {
                        meta_steps.push(TrajectoryStep {
                            refined_obs: *state,
                            original_obs: map.state_map[state],
                            action: a,
                        });
                    }
                    node = children[a];
                }
            }
        };
        let steps = split_steps(original, &members, &meta_steps);
        let traj = Trajectory { members: members.clone(), steps, leaf: node, reward };
        for rec in purge(&traj, map)? {
            buffer.push(rec);
        }
    }
    Ok(buffer)
}

/// Express a coordinated team strategy as a behavioral strategy of the
/// merged player on the refined game. Each plan tuple becomes a pure
/// refined plan (the member owning the mapped original state supplies the
/// action); realization weights at every refined state are then the
/// mixture mass consistent with the state's own history, which is exact
/// because the merged player has perfect recall there. States no tuple
/// reaches get a uniform distribution.
pub fn coordinated_to_refined_behavioral(
    original: &Game,
    map: &RefinementMap,
    mu: &CoordinatedStrategy,
) -> Result<BehavioralStrategy, SamplingError> {
    check_original(original, map)?;
    mu.validate(original)?;
    let members = team_members(original, map);
    if mu.team != members {
        return Err(SamplingError::WrongMembers { expected: members, got: mu.team.clone() });
    }
    let refined = &map.refined;
    let meta = map.player;
    let meta_states = refined.states_of(meta);
    // All nodes of a refined state share the owner's history after refinement.
    let hist: BTreeMap<StateId, Vec<(StateId, ActionIdx)>> = meta_states
        .iter()
        .map(|&s| (s, refined.own_history(refined.state(s).nodes[0], meta)))
        .collect();

    let mut mass: BTreeMap<StateId, f64> = BTreeMap::new();
    let mut action_mass: BTreeMap<StateId, Vec<f64>> = BTreeMap::new();
    for (tuple, w) in mu.support() {
        let mut choices: BTreeMap<StateId, ActionIdx> = BTreeMap::new();
        for &rs in meta_states {
            let os = map.state_map[&rs];
            let j = members
                .iter()
                .position(|&m| m == original.state(os).owner)
                .expect("mapped state is owned by a team member");
            if let Some(a) = tuple[j].choice(os) {
                choices.insert(rs, a);
            }
        }
        let plan = complete_plan(refined, meta, &choices);
        for &rs in meta_states {
            if hist[&rs].iter().any(|&(s2, a2)| plan.choice(s2) != Some(a2)) {
                continue;
            }
            let a = plan.choice(rs).expect("history-consistent state is in the plan's domain");
            *mass.entry(rs).or_insert(0.0) += w;
            action_mass.entry(rs).or_insert_with(|| vec![0.0; refined.state(rs).n_actions()])[a] +=
                w;
        }
    }

    let mut dist = BTreeMap::new();
    for &rs in meta_states {
        let n = refined.state(rs).n_actions();
        let d = match mass.get(&rs) {
            Some(&total) if total > 0.0 => {
                action_mass[&rs].iter().map(|&x| x / total).collect()
            }
            _ => vec![1.0 / n as f64; n],
        };
        dist.insert(rs, d);
    }
    Ok(BehavioralStrategy { owner: meta, dist })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{coordination_game, CoordinationSpec};
    use crate::refinement::perfect_recall_refinement;
    use crate::values::expected_value;

    fn refined_coordination(horizon: usize, k_right: f64) -> (Game, RefinementMap) {
        let g = coordination_game(&CoordinationSpec::new(horizon, 100.0, k_right)).unwrap();
        let map = perfect_recall_refinement(&g, &[0, 1]).unwrap();
        (g, map)
    }

    /// The exact equilibrium of the refined coordination game: mix at the
    /// first own state, then repeat that first action at every later copy
    /// (copy names carry `~k` suffixes matching the action that reaches
    /// them under the builder's construction order).
    fn matching_meta(map: &RefinementMap, p_first: f64) -> BehavioralStrategy {
        let refined = &map.refined;
        let meta = map.player;
        let mut b = BehavioralStrategy::uniform(refined, meta);
        let root = refined.states_of(meta)[0];
        for &s in refined.states_of(meta) {
            if s == root {
                b.dist.insert(s, vec![p_first, 1.0 - p_first]);
            } else {
                // Follow the action taken at the first own ancestor state.
                let hist = refined.own_history(refined.state(s).nodes[0], meta);
                let first = hist[0].1;
                let mut d = vec![0.0; refined.state(s).actions.len()];
                d[first] = 1.0;
                b.dist.insert(s, d);
            }
        }
        b
    }

    #[test]
    fn fsp_average_strategies_approach_the_optimum() {
        let (g, map) = refined_coordination(2, 100.0);
        let out = sample_fsp(&g, &map, &FspConfig::default(), 20_000, 7).unwrap();
        let ev = expected_value(
            &map.refined,
            &[
                StrategyRef::Behavioral(&out.averages[map.player]),
                StrategyRef::Behavioral(&out.averages[1 - map.player]),
            ],
        )
        .unwrap()[map.player];
        assert!((ev - 50.0).abs() <= 2.0, "average-strategy team value {ev}");
        assert!(!out.buffer.is_empty());
        assert!(out.buffer.len() <= FspConfig::default().capacity);
        assert_eq!(out.eps_series.len(), 20_000 / 50);
    }

    #[test]
    fn buffer_is_fifo_with_hard_capacity() {
        assert!(matches!(TrajectoryBuffer::new(0), Err(SamplingError::BadCapacity)));
        let rec = |k: usize| SampleRecord {
            observations: vec![vec![k]],
            targets: vec![vec![0]],
            reward: 0.0,
        };
        let mut b = TrajectoryBuffer::new(1).unwrap();
        b.push(rec(1));
        b.push(rec(2));
        assert_eq!(b.len(), 1);
        assert_eq!(b.records().next().unwrap().observations[0][0], 2, "newest record survives");
        let mut b3 = TrajectoryBuffer::new(3).unwrap();
        for k in 0..5 {
            b3.push(rec(k));
        }
        let kept: Vec<usize> = b3.records().map(|r| r.observations[0][0]).collect();
        assert_eq!(kept, vec![2, 3, 4], "oldest records evicted in order");
    }

    #[test]
    fn forced_exploration_yields_uniform_records() {
        let (g, map) = refined_coordination(2, 100.0);
        let config = FspConfig { eta: 1.0, eps_start: 1.0, eps_end: 1.0, ..FspConfig::default() };
        let out = sample_fsp(&g, &map, &config, 4_000, 11).unwrap();
        let n = out.buffer.len() as f64;
        assert!(n > 500.0, "expected plenty of recorded episodes, got {n}");
        let first_action_l = out
            .buffer
            .records()
            .filter(|r| r.targets[0][0] == 0)
            .count() as f64;
        let sigma = (n * 0.25).sqrt();
        assert!(
            (first_action_l - n / 2.0).abs() <= 3.0 * sigma,
            "uniform play expected: {first_action_l} of {n} chose the first action"
        );
    }

    #[test]
    fn equilibrium_records_never_mix_actions() {
        let (g, map) = refined_coordination(2, 100.0);
        let pi_meta = matching_meta(&map, 0.5);
        let pi_opp = BehavioralStrategy::uniform(&map.refined, 1 - map.player);
        let buf = sample_from_equilibrium(&g, &map, &pi_meta, &pi_opp, 10_000, 10_000, 3).unwrap();
        assert_eq!(buf.len(), 10_000);
        let mut matched = [0usize; 2];
        for r in buf.records() {
            let (a1, a2) = (r.targets[0][0], r.targets[1][0]);
            assert_eq!(a1, a2, "a mixed pair was sampled: ({a1}, {a2})");
            matched[a1] += 1;
        }
        let n = buf.len() as f64;
        let sigma = (n * 0.25).sqrt();
        assert!(
            (matched[0] as f64 - n / 2.0).abs() <= 3.0 * sigma,
            "split {matched:?} is not an even mixture"
        );
    }

    #[test]
    fn pure_equilibrium_gives_identical_records() {
        let (g, map) = refined_coordination(2, 100.0);
        let pi_meta = matching_meta(&map, 1.0);
        let pi_opp = BehavioralStrategy::uniform(&map.refined, 1 - map.player);
        let buf = sample_from_equilibrium(&g, &map, &pi_meta, &pi_opp, 100, 100, 5).unwrap();
        let first = buf.records().next().unwrap().clone();
        for r in buf.records() {
            assert_eq!(r.observations, first.observations);
            assert_eq!(r.targets, first.targets);
        }
    }

    #[test]
    fn imbalanced_equilibrium_frequencies_follow_the_mixture() {
        let (g, map) = refined_coordination(2, 50.0);
        let pi_meta = matching_meta(&map, 1.0 / 3.0);
        let pi_opp = BehavioralStrategy::uniform(&map.refined, 1 - map.player);
        let buf = sample_from_equilibrium(&g, &map, &pi_meta, &pi_opp, 9_000, 9_000, 9).unwrap();
        let ll = buf.records().filter(|r| r.targets[0][0] == 0).count() as f64;
        let n = buf.len() as f64;
        let sigma = (n * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        assert!(
            (ll - n / 3.0).abs() <= 3.0 * sigma,
            "(L,L) frequency {ll} of {n} is off the 1:2 mixture"
        );
    }

    #[test]
    fn purge_collapses_refined_copies_to_one_observation() {
        let (g, map) = refined_coordination(2, 100.0);
        let pi_meta = matching_meta(&map, 0.5);
        let pi_opp = BehavioralStrategy::uniform(&map.refined, 1 - map.player);
        let buf = sample_from_equilibrium(&g, &map, &pi_meta, &pi_opp, 2_000, 2_000, 13).unwrap();
        let t1 = g.state_index("T1.m1").unwrap();
        let t2 = g.state_index("T2.m2").unwrap();
        for r in buf.records() {
            assert_eq!(r.observations, vec![vec![t1], vec![t2]]);
            for (m, ts) in r.targets.iter().enumerate() {
                for (&o, &t) in r.observations[m].iter().zip(ts) {
                    assert!(t < g.state(o).actions.len(), "illegal target at {o}");
                }
            }
        }
        // The refined game really has two distinct T2 copies; both reach
        // the same purged observation.
        let copies = map.refined_of(t2);
        assert_eq!(copies.len(), 2);
    }

    #[test]
    fn purge_examples_and_errors() {
        let (g, map) = refined_coordination(2, 100.0);
        let t2 = g.state_index("T2.m2").unwrap();
        let copies = map.refined_of(t2);
        let root_refined = map.refined.states_of(map.player)[0];
        // Team plays L at the first move, then R at the copy reached under
        // the opponent's R branch: purging keeps the actions and maps both
        // observations to member states.
        let traj = Trajectory {
            members: vec![0, 1],
            steps: vec![
                vec![TrajectoryStep {
                    refined_obs: root_refined,
                    original_obs: map.state_map[&root_refined],
                    action: 0,
                }],
                vec![TrajectoryStep { refined_obs: copies[1], original_obs: t2, action: 1 }],
            ],
            leaf: 0,
            reward: 0.0,
        };
        let recs = purge(&traj, &map).unwrap();
        assert_eq!(recs.len(), 1, "one record per episode");
        assert_eq!(recs[0].observations[1], vec![t2]);
        assert_eq!(recs[0].targets, vec![vec![0], vec![1]]);

        let bad = Trajectory {
            members: vec![0],
            steps: vec![vec![TrajectoryStep { refined_obs: 9999, original_obs: 0, action: 0 }]],
            leaf: 0,
            reward: 0.0,
        };
        assert!(matches!(purge(&bad, &map), Err(SamplingError::UnknownObservation(9999))));
    }

    #[test]
    fn identity_refinement_purges_to_itself() {
        // A perfect-recall "team" of one player refines to itself, so
        // purged observations equal the refined ones.
        let mut b = crate::game::GameBuilder::new(["A", "B"]);
        b.root("r");
        b.decision("r", "A", "A.s", &["h", "t"]).unwrap();
        for a in ["h", "t"] {
            b.decision(format!("n{a}"), "B", "B.s", &["h", "t"]).unwrap();
            b.edge("r", a, format!("n{a}"));
            for bb in ["h", "t"] {
                let u = if a == bb { 1.0 } else { -1.0 };
                b.terminal(format!("z{a}{bb}"), vec![u, -u]).unwrap();
                b.edge(format!("n{a}"), bb, format!("z{a}{bb}"));
            }
        }
        let g = b.finish().unwrap();
        let map = perfect_recall_refinement(&g, &[0]).unwrap();
        let out = sample_fsp(&g, &map, &FspConfig::default(), 200, 17).unwrap();
        for r in out.buffer.records() {
            for (o, t) in r.observations.iter().zip(&r.targets) {
                assert_eq!(o.len(), t.len());
                for &s in o {
                    assert_eq!(map.state_map[&s], s, "identity refinement must purge to itself");
                }
            }
        }
    }

    #[test]
    fn longer_horizons_collapse_to_one_observation_per_move() {
        let (g, map) = refined_coordination(4, 100.0);
        let pi_meta = matching_meta(&map, 0.5);
        let pi_opp = BehavioralStrategy::uniform(&map.refined, 1 - map.player);
        let buf = sample_from_equilibrium(&g, &map, &pi_meta, &pi_opp, 500, 500, 21).unwrap();
        let mut seen: Vec<BTreeSet<StateId>> = vec![BTreeSet::new(); 4];
        for r in buf.records() {
            for (m, obs) in r.observations.iter().enumerate() {
                assert_eq!(obs.len(), 2, "each member moves twice");
                for (k, &o) in obs.iter().enumerate() {
                    seen[2 * m + k].insert(o);
                }
            }
        }
        for (k, s) in seen.iter().enumerate() {
            assert_eq!(s.len(), 1, "move slot {k} purges to several observations: {s:?}");
        }
    }

    #[test]
    fn fsp_exploitability_trends_down() {
        // The running minimum of the epsilon series, checked at every
        // window of 10 measurements, must not increase (tolerating one
        // float-level violation per seed), and it must actually fall well
        // below where it started: sampled self-play oscillates through the
        // equilibrium, so the lower envelope is the stable trend statistic.
        let (g, map) = refined_coordination(2, 100.0);
        for seed in 0..10 {
            let out = sample_fsp(&g, &map, &FspConfig::default(), 10_000, seed).unwrap();
            let eps: Vec<f64> = out.eps_series.iter().map(|&(_, e)| e).collect();
            let mut running = f64::MAX;
            let mut checkpoints = Vec::new();
            for w in eps.chunks(10) {
                running = running.min(w.iter().copied().fold(f64::MAX, f64::min));
                checkpoints.push(running);
            }
            let violations = checkpoints.windows(2).filter(|p| p[1] > p[0] + 1e-9).count();
            assert!(violations <= 1, "seed {seed}: running minimum rose: {checkpoints:?}");
            assert!(
                *checkpoints.last().unwrap() <= 5.0,
                "seed {seed}: epsilon never approached the optimum: {checkpoints:?}"
            );
        }
    }

    #[test]
    fn buffers_replay_bit_identically_per_seed() {
        let (g, map) = refined_coordination(2, 100.0);
        let dump = |seed: u64| {
            let out = sample_fsp(&g, &map, &FspConfig::default(), 1_000, seed).unwrap();
            let mut bytes = Vec::new();
            out.buffer.write_jsonl(&mut bytes).unwrap();
            bytes
        };
        assert_eq!(dump(5), dump(5), "same seed must reproduce the buffer exactly");
        assert_ne!(dump(5), dump(6), "different seeds should explore differently");
        let text = String::from_utf8(dump(5)).unwrap();
        let reread =
            TrajectoryBuffer::read_jsonl(std::io::BufReader::new(text.as_bytes()), 20_000).unwrap();
        assert_eq!(reread.len(), text.lines().count());
    }

    #[test]
    fn lifted_behavioral_keeps_the_leaf_distribution() {
        use crate::plans::enumerate_reduced_plans;
        use crate::strategy::CoordinatedStrategy;
        use crate::values::leaf_reach;

        // The refined tree is node-for-node the original tree, so the two
        // leaf-reach vectors are directly comparable.
        for horizon in [2usize, 4] {
            let (g, map) = refined_coordination(horizon, 100.0);
            let p1 = enumerate_reduced_plans(&g, 0).unwrap();
            let p2 = enumerate_reduced_plans(&g, 1).unwrap();
            let mut rng = stage_rng(33, "lift-test");
            for trial in 0..20 {
                let k = 1 + (trial % 4);
                let mut entries = Vec::new();
                for _ in 0..k {
                    let a = rng.gen_range(0..p1.len());
                    let b = rng.gen_range(0..p2.len());
                    let w: f64 = rng.gen_range(0.1..1.0);
                    entries.push((vec![p1[a].clone(), p2[b].clone()], w));
                }
                let total: f64 = entries.iter().map(|(_, w)| w).sum();
                for e in &mut entries {
                    e.1 /= total;
                }
                let mu = CoordinatedStrategy::new(vec![0, 1], entries);
                let lifted = coordinated_to_refined_behavioral(&g, &map, &mu).unwrap();
                lifted.validate(&map.refined).unwrap();
                let want = leaf_reach(&g, StrategyRef::Coordinated(&mu));
                let got = leaf_reach(&map.refined, StrategyRef::Behavioral(&lifted));
                for (i, (x, y)) in want.iter().zip(&got).enumerate() {
                    assert!(
                        (x - y).abs() <= 1e-9,
                        "horizon {horizon} trial {trial} leaf {i}: {x} vs {y}"
                    );
                }
            }
        }
    }

    #[test]
    fn lift_rejects_a_foreign_team() {
        let (g, map) = refined_coordination(2, 100.0);
        let plan = crate::plans::enumerate_reduced_plans(&g, 2).unwrap().remove(0);
        let mu = crate::strategy::CoordinatedStrategy::new(vec![2], vec![(vec![plan], 1.0)]);
        match coordinated_to_refined_behavioral(&g, &map, &mu) {
            Err(SamplingError::WrongMembers { expected, got }) => {
                assert_eq!(expected, vec![0, 1]);
                assert_eq!(got, vec![2]);
            }
            other => panic!("expected a team mismatch, got {other:?}"),
        }
    }
}
