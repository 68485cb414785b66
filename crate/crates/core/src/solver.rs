//! Equilibrium computation.
//!
//! Three layers, each checkable against the next:
//!
//! * [`best_response`] — exact pure best response for a perfect-recall
//!   player against arbitrary fixed strategies of everyone else, via one
//!   bottom-up pass over externally-weighted leaf values.
//! * [`solve_zero_sum`] — fictitious play with exact best responses on a
//!   two-player zero-sum game, averaging in realization space so the
//!   reported averages are the true uniform mixture of past responses.
//! * [`tmecor_bruteforce`] / [`tmecor_via_refinement`] — optimal coordinated
//!   team play, either directly on the joint-plan matrix game or through
//!   the merge → inflate → solve → project pipeline. The former is the
//!   oracle for the latter.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::game::{ActionIdx, Game, Node, NodeId, PlayerId, StateId};
use crate::plans::{complete_plan, enumerate_reduced_plans, PlanError};
use crate::refinement::{
    merge_team, perfect_recall_refinement, recall_report, RefinementError,
};
use crate::strategy::{
    BehavioralStrategy, CoordinatedStrategy, NormalFormStrategy, ReducedPlan, Strategy,
    StrategyRef,
};
use crate::values::{behavioral_to_normal_form, expected_value, leaf_reach, ValueError};

/// Largest joint-plan × opponent-plan product the matrix construction
/// accepts.
pub const MATRIX_CAP: usize = 1_000_000;

/// Default iteration budget for the iterative solvers.
pub const DEFAULT_MAX_ITERS: usize = 100_000;

/// Scale-free default stopping tolerance: a fraction of the payoff spread.
pub fn default_tol(game: &Game) -> f64 {
    1e-3 * game.payoff_range()
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("player {0} has imperfect recall; exact tree-walk responses need perfect recall")]
    ImperfectRecall(PlayerId),
    #[error("game is not zero-sum at leaf node {0}")]
    NotZeroSum(NodeId),
    #[error("expected exactly two players, found {0}")]
    NeedTwoPlayers(usize),
    #[error("expected exactly one non-team player, found {0}")]
    NeedSingleOpponent(usize),
    #[error("plan matrix has {size} entries, over the cap of {cap}; use the refinement pipeline")]
    TooLarge { size: usize, cap: usize },
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Refinement(#[from] RefinementError),
}

/// `[lower, upper]` bound on the maximizer's game value at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueBracket {
    pub iteration: usize,
    pub lower: f64,
    pub upper: f64,
}

/// Outcome of a solve: strategies, the team value they achieve, and the
/// deviation bound `epsilon` actually certified (sum of both players'
/// best-response gains at the final iterate).
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub team_strategy: Strategy,
    pub opponent_strategy: Strategy,
    pub value: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub trace: Vec<ValueBracket>,
    pub warnings: Vec<String>,
}

fn check_others_cover(
    game: &Game,
    responder: PlayerId,
    others: &[StrategyRef<'_>],
) -> Result<(), SolverError> {
    let mut covered = vec![false; game.n_players()];
    covered[responder] = true;
    for s in others {
        for p in s.owners() {
            if covered[p] {
                return Err(ValueError::PlayerCoveredTwice(p).into());
            }
            covered[p] = true;
        }
    }
    if let Some(p) = covered.iter().position(|&c| !c) {
        return Err(ValueError::PlayerNotCovered(p).into());
    }
    Ok(())
}

/// Exact best response of `responder` against fixed strategies of all other
/// players (any mix of forms, correlation included). Returns the pure
/// response as a behavioral strategy together with its expected value.
///
/// Each leaf is weighted by chance times the others' reach and credited to
/// the responder's last (state, action) step on its path; states are then
/// folded bottom-up (deepest own level first), taking the max per state
/// with ties broken toward the lowest action id.
pub fn best_response(
    game: &Game,
    responder: PlayerId,
    others: &[StrategyRef<'_>],
) -> Result<(BehavioralStrategy, f64), SolverError> {
    if !recall_report(game, responder).perfect_recall {
        return Err(SolverError::ImperfectRecall(responder));
    }
    check_others_cover(game, responder, others)?;

    let mut ext: Vec<f64> = game.leaf_paths().iter().map(|p| p.chance_reach).collect();
    for s in others {
        for (e, r) in ext.iter_mut().zip(leaf_reach(game, *s)) {
            *e *= r;
        }
    }

    let states = game.states_of(responder);
    let pos: BTreeMap<StateId, usize> =
        states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    // Own history of a state (identical across its nodes by perfect recall).
    let hist: Vec<Vec<(StateId, ActionIdx)>> = states
        .iter()
        .map(|&s| game.own_history(game.state(s).nodes[0], responder))
        .collect();

    let mut q: Vec<Vec<f64>> = states
        .iter()
        .map(|&s| vec![0.0; game.state(s).actions.len()])
        .collect();
    let mut constant = 0.0;
    for (i, path) in game.leaf_paths().iter().enumerate() {
        let w = ext[i] * game.payoff(path.node, responder);
        let last = path.steps.iter().rev().find(|&&(p, _, _)| p == responder);
        match last {
            Some(&(_, s, a)) => q[pos[&s]][a] += w,
            None => constant += w,
        }
    }

    let mut order: Vec<usize> = (0..states.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(hist[i].len()));
    let mut choice: BTreeMap<StateId, ActionIdx> = BTreeMap::new();
    let mut value = constant;
    for &i in &order {
        let (mut best_a, mut best_v) = (0, q[i][0]);
        for (a, &v) in q[i].iter().enumerate().skip(1) {
            if v > best_v {
                best_a = a;
                best_v = v;
            }
        }
        choice.insert(states[i], best_a);
        match hist[i].last() {
            Some(&(ps, pa)) => q[pos[&ps]][pa] += best_v,
            None => value += best_v,
        }
    }
    Ok((BehavioralStrategy::pure(game, responder, &choice), value))
}

/// Per-player lookup tables for the fictitious-play inner loop, so each
/// iteration touches only dense arrays.
struct FpTables {
    states: Vec<StateId>,
    arity: Vec<usize>,
    /// Own parent sequence of each state (position, action), if any.
    parent: Vec<Option<(usize, ActionIdx)>>,
    /// State positions sorted by own depth, deepest first.
    depth_desc: Vec<usize>,
    /// Same, shallowest first (reach propagation order).
    depth_asc: Vec<usize>,
    /// Last own step on each leaf path, if any.
    leaf_last: Vec<Option<(usize, ActionIdx)>>,
    /// All own steps on each leaf path (for reach products).
    leaf_steps: Vec<Vec<(usize, ActionIdx)>>,
    /// Own payoff at each leaf.
    leaf_pay: Vec<f64>,
}

impl FpTables {
    fn build(game: &Game, player: PlayerId) -> FpTables {
        let states = game.states_of(player).to_vec();
        let pos: BTreeMap<StateId, usize> =
            states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let hist: Vec<Vec<(StateId, ActionIdx)>> = states
            .iter()
            .map(|&s| game.own_history(game.state(s).nodes[0], player))
            .collect();
        let parent: Vec<Option<(usize, ActionIdx)>> =
            hist.iter().map(|h| h.last().map(|&(s, a)| (pos[&s], a))).collect();
        let mut depth_asc: Vec<usize> = (0..states.len()).collect();
        depth_asc.sort_by_key(|&i| hist[i].len());
        let mut depth_desc = depth_asc.clone();
        depth_desc.reverse();
        let mut leaf_last = Vec::with_capacity(game.n_leaves());
        let mut leaf_steps = Vec::with_capacity(game.n_leaves());
        let mut leaf_pay = Vec::with_capacity(game.n_leaves());
        for path in game.leaf_paths() {
            let steps: Vec<(usize, ActionIdx)> = path
                .steps
                .iter()
                .filter(|&&(p, _, _)| p == player)
                .map(|&(_, s, a)| (pos[&s], a))
                .collect();
            leaf_last.push(steps.last().copied());
            leaf_steps.push(steps);
            leaf_pay.push(game.payoff(path.node, player));
        }
        FpTables {
            arity: states.iter().map(|&s| game.state(s).actions.len()).collect(),
            states,
            parent,
            depth_desc,
            depth_asc,
            leaf_last,
            leaf_steps,
            leaf_pay,
        }
    }

    /// Normalized behavior at every state from accumulated sequence
    /// weights, uniform where nothing was ever credited.
    fn probs(&self, w: &[Vec<f64>]) -> Vec<Vec<f64>> {
        w.iter()
            .enumerate()
            .map(|(i, acc)| {
                let total: f64 = acc.iter().sum();
                if total > 0.0 {
                    acc.iter().map(|x| x / total).collect()
                } else {
                    vec![1.0 / self.arity[i] as f64; self.arity[i]]
                }
            })
            .collect()
    }

    /// This player's reach of each leaf under per-state behavior.
    fn leaf_reach(&self, probs: &[Vec<f64>]) -> Vec<f64> {
        self.leaf_steps
            .iter()
            .map(|steps| steps.iter().map(|&(i, a)| probs[i][a]).product())
            .collect()
    }

    /// Exact best response given external leaf weights (chance times the
    /// opponent's reach): fold leaf values bottom-up, ties to the lowest
    /// action id. Returns per-state choices and the response value.
    fn best_response(&self, ext: &[f64]) -> (Vec<ActionIdx>, f64) {
        let mut q: Vec<Vec<f64>> = self.arity.iter().map(|&k| vec![0.0; k]).collect();
        let mut value = 0.0;
        for (z, last) in self.leaf_last.iter().enumerate() {
            let w = ext[z] * self.leaf_pay[z];
            match last {
                Some((i, a)) => q[*i][*a] += w,
                None => value += w,
            }
        }
        let mut choice = vec![0; self.states.len()];
        for &i in &self.depth_desc {
            let (mut best_a, mut best_v) = (0, q[i][0]);
            for (a, &v) in q[i].iter().enumerate().skip(1) {
                if v > best_v {
                    best_a = a;
                    best_v = v;
                }
            }
            choice[i] = best_a;
            match self.parent[i] {
                Some((p, a)) => q[p][a] += best_v,
                None => value += best_v,
            }
        }
        (choice, value)
    }

    /// Add a pure response's sequence weights: 1 for the chosen action at
    /// every state the response itself reaches.
    fn accumulate(&self, choice: &[ActionIdx], w: &mut [Vec<f64>]) {
        let mut reach = vec![false; self.states.len()];
        for &i in &self.depth_asc {
            reach[i] = match self.parent[i] {
                Some((p, a)) => reach[p] && choice[p] == a,
                None => true,
            };
            if reach[i] {
                w[i][choice[i]] += 1.0;
            }
        }
    }

    fn to_behavioral(&self, game: &Game, owner: PlayerId, probs: &[Vec<f64>]) -> BehavioralStrategy {
        let mut b = BehavioralStrategy::uniform(game, owner);
        for (i, p) in probs.iter().enumerate() {
            b.dist.insert(self.states[i], p.clone());
        }
        b
    }
}

/// Fictitious play with exact best responses on a two-player zero-sum game
/// where both players have perfect recall. Updates alternate: player 0
/// responds to player 1's running average, joins its own average, and
/// player 1 responds to that updated average. Averages are kept exact by
/// accumulating sequence weights. Each response value bounds the game
/// value (`v* <= v0`, `v* >= -v1`), and the returned strategies are the
/// running-best certified pair: `epsilon` is the gap between the best
/// upper and best lower bound seen, `value` their expected outcome for
/// player 0 (always inside the bracket). Stops at `epsilon <= tol` or
/// after `max_iters`, whichever comes first, returning the achieved
/// epsilon either way.
pub fn solve_zero_sum(
    game: &Game,
    tol: f64,
    max_iters: usize,
) -> Result<SolveResult, SolverError> {
    if game.n_players() != 2 {
        return Err(SolverError::NeedTwoPlayers(game.n_players()));
    }
    for &z in game.leaves() {
        if (game.payoff(z, 0) + game.payoff(z, 1)).abs() > 1e-9 {
            return Err(SolverError::NotZeroSum(z));
        }
    }
    for p in 0..2 {
        if !recall_report(game, p).perfect_recall {
            return Err(SolverError::ImperfectRecall(p));
        }
    }

    let chance: Vec<f64> = game.leaf_paths().iter().map(|p| p.chance_reach).collect();
    let tables = [FpTables::build(game, 0), FpTables::build(game, 1)];
    let mut w: [Vec<Vec<f64>>; 2] = [
        tables[0].arity.iter().map(|&k| vec![0.0; k]).collect(),
        tables[1].arity.iter().map(|&k| vec![0.0; k]).collect(),
    ];
    let mut best: [Option<(f64, Vec<Vec<f64>>)>; 2] = [None, None];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        // Player 0 responds to player 1's current average.
        let p1 = tables[1].probs(&w[1]);
        let r1 = tables[1].leaf_reach(&p1);
        let ext0: Vec<f64> = chance.iter().zip(&r1).map(|(c, r)| c * r).collect();
        let (c0, v0) = tables[0].best_response(&ext0);
        // v0 bounds the value from above; it certifies p1.
        if best[1].as_ref().map_or(true, |(u, _)| v0 < *u) {
            best[1] = Some((v0, p1));
        }
        tables[0].accumulate(&c0, &mut w[0]);

        // Player 1 responds to the just-updated average of player 0.
        let p0 = tables[0].probs(&w[0]);
        let r0 = tables[0].leaf_reach(&p0);
        let ext1: Vec<f64> = chance.iter().zip(&r0).map(|(c, r)| c * r).collect();
        let (c1, v1) = tables[1].best_response(&ext1);
        // -v1 bounds the value from below; it certifies p0.
        if best[0].as_ref().map_or(true, |(l, _)| -v1 > *l) {
            best[0] = Some((-v1, p0));
        }
        tables[1].accumulate(&c1, &mut w[1]);

        trace.push(ValueBracket { iteration: iterations, lower: -v1, upper: v0 });
        let (lower, upper) = (best[0].as_ref().unwrap().0, best[1].as_ref().unwrap().0);
        let epsilon = upper - lower;
        if epsilon <= tol || iterations >= max_iters {
            let a0 = tables[0].to_behavioral(game, 0, &best[0].take().unwrap().1);
            let a1 = tables[1].to_behavioral(game, 1, &best[1].take().unwrap().1);
            let value = expected_value(
                game,
                &[StrategyRef::Behavioral(&a0), StrategyRef::Behavioral(&a1)],
            )?[0];
            return Ok(SolveResult {
                team_strategy: Strategy::Behavioral(a0),
                opponent_strategy: Strategy::Behavioral(a1),
                value,
                epsilon,
                iterations,
                trace,
                warnings: Vec::new(),
            });
        }
    }
}

/// The joint-plan payoff matrix: rows are team plan tuples (members in
/// ascending player order, tuples in lexicographic plan order), columns are
/// opponent plans, entries are the team's chance-weighted payoff over the
/// leaves both sides' plans reach.
#[derive(Debug, Clone)]
pub struct MatrixGame {
    pub team: Vec<PlayerId>,
    pub opponent: PlayerId,
    pub row_plans: Vec<Vec<ReducedPlan>>,
    pub col_plans: Vec<ReducedPlan>,
    pub payoff: Vec<Vec<f64>>,
}

/// Leaf indices a fixed plan set reaches (walk following choices at owned
/// states, branching elsewhere), ascending.
fn reached_leaves(
    game: &Game,
    owners: &BTreeSet<PlayerId>,
    choice: impl Fn(PlayerId, StateId) -> Option<ActionIdx>,
) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![game.root()];
    while let Some(n) = stack.pop() {
        match game.node(n) {
            Node::Terminal { .. } => out.push(game.leaf_index(n).unwrap()),
            Node::Chance { children, .. } => stack.extend(children.iter().copied()),
            Node::Decision { state, children } => {
                let owner = game.state(*state).owner;
                if owners.contains(&owner) {
                    if let Some(a) = choice(owner, *state) {
                        stack.push(children[a]);
                    }
                } else {
                    stack.extend(children.iter().copied());
                }
            }
        }
    }
    out.sort_unstable();
    out
}

pub fn build_matrix_game(game: &Game, team: &[PlayerId]) -> Result<MatrixGame, SolverError> {
    // Reuse the merge validation: distinct members, shared payoffs.
    let _ = merge_team(game, team)?;
    let members: Vec<PlayerId> = {
        let set: BTreeSet<PlayerId> = team.iter().copied().collect();
        set.into_iter().collect()
    };
    let opponent = single_opponent(game, &members)?;

    let member_plans: Vec<Vec<ReducedPlan>> = members
        .iter()
        .map(|&m| enumerate_reduced_plans(game, m))
        .collect::<Result<_, _>>()?;
    let col_plans = enumerate_reduced_plans(game, opponent)?;
    let rows: usize = member_plans.iter().map(Vec::len).product();
    let size = rows.checked_mul(col_plans.len()).unwrap_or(usize::MAX);
    if size > MATRIX_CAP {
        return Err(SolverError::TooLarge { size, cap: MATRIX_CAP });
    }

    let mut row_plans: Vec<Vec<ReducedPlan>> = Vec::with_capacity(rows);
    let mut idx = vec![0usize; members.len()];
    loop {
        row_plans.push(idx.iter().enumerate().map(|(m, &i)| member_plans[m][i].clone()).collect());
        // Odometer increment, last member fastest.
        let mut k = members.len();
        loop {
            if k == 0 {
                break;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < member_plans[k].len() {
                break;
            }
            idx[k] = 0;
            if k == 0 {
                k = usize::MAX;
                break;
            }
        }
        if k == usize::MAX || row_plans.len() == rows {
            break;
        }
    }

    let wleaf: Vec<f64> = game
        .leaf_paths()
        .iter()
        .map(|p| p.chance_reach * game.payoff(p.node, members[0]))
        .collect();
    let opp_set = BTreeSet::from([opponent]);
    let col_reach: Vec<Vec<usize>> = col_plans
        .iter()
        .map(|plan| reached_leaves(game, &opp_set, |_, s| plan.choice(s)))
        .collect();
    let mut col_mask: Vec<Vec<bool>> = vec![vec![false; game.n_leaves()]; col_plans.len()];
    for (c, reached) in col_reach.iter().enumerate() {
        for &z in reached {
            col_mask[c][z] = true;
        }
    }

    let member_set: BTreeSet<PlayerId> = members.iter().copied().collect();
    let payoff: Vec<Vec<f64>> = row_plans
        .iter()
        .map(|tuple| {
            let reached = reached_leaves(game, &member_set, |p, s| {
                let i = members.iter().position(|&m| m == p).unwrap();
                tuple[i].choice(s)
            });
            col_mask
                .iter()
                .map(|mask| reached.iter().filter(|&&z| mask[z]).map(|&z| wleaf[z]).sum())
                .collect()
        })
        .collect();

    Ok(MatrixGame { team: members, opponent, row_plans, col_plans, payoff })
}

fn single_opponent(game: &Game, members: &[PlayerId]) -> Result<PlayerId, SolverError> {
    let set: BTreeSet<PlayerId> = members.iter().copied().collect();
    let others: Vec<PlayerId> = (0..game.n_players()).filter(|p| !set.contains(p)).collect();
    if others.len() != 1 {
        return Err(SolverError::NeedSingleOpponent(others.len()));
    }
    Ok(others[0])
}

/// Solution of a matrix game by regret-matching self-play.
#[derive(Debug, Clone)]
pub struct MatrixSolution {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
    pub value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub trace: Vec<ValueBracket>,
}

fn regret_strategy(regrets: &[f64]) -> Vec<f64> {
    let total: f64 = regrets.iter().map(|&r| r.max(0.0)).sum();
    if total > 0.0 {
        regrets.iter().map(|&r| r.max(0.0) / total).collect()
    } else {
        vec![1.0 / regrets.len() as f64; regrets.len()]
    }
}

/// Regret matching with nonnegative regrets and linearly weighted averages;
/// the duality gap of the averages (max row payoff against the column
/// average minus min column payoff against the row average) certifies the
/// stopping condition.
pub fn solve_matrix(payoff: &[Vec<f64>], tol: f64, max_iters: usize) -> MatrixSolution {
    let n = payoff.len();
    let m = payoff[0].len();
    let mut r_row = vec![0.0; n];
    let mut r_col = vec![0.0; m];
    let mut acc_row = vec![0.0; n];
    let mut acc_col = vec![0.0; m];
    let mut acc_weight = 0.0;
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let t = iterations as f64;
        let x = regret_strategy(&r_row);
        let y = regret_strategy(&r_col);
        for (a, &v) in acc_row.iter_mut().zip(&x) {
            *a += t * v;
        }
        for (a, &v) in acc_col.iter_mut().zip(&y) {
            *a += t * v;
        }
        acc_weight += t;

        // Row utilities vs y, column utilities vs x, and the current value.
        let uy: Vec<f64> = payoff.iter().map(|row| dot(row, &y)).collect();
        let mut ux = vec![0.0; m];
        for (i, row) in payoff.iter().enumerate() {
            if x[i] > 0.0 {
                for (u, &p) in ux.iter_mut().zip(row) {
                    *u += x[i] * p;
                }
            }
        }
        let v = dot(&x, &uy);
        for (r, &u) in r_row.iter_mut().zip(&uy) {
            *r = (*r + u - v).max(0.0);
        }
        for (r, &u) in r_col.iter_mut().zip(&ux) {
            *r = (*r + v - u).max(0.0);
        }

        let xbar: Vec<f64> = acc_row.iter().map(|a| a / acc_weight).collect();
        let ybar: Vec<f64> = acc_col.iter().map(|a| a / acc_weight).collect();
        let upper = payoff.iter().map(|row| dot(row, &ybar)).fold(f64::MIN, f64::max);
        let mut lower = f64::MAX;
        for j in 0..m {
            let mut s = 0.0;
            for i in 0..n {
                if xbar[i] > 0.0 {
                    s += xbar[i] * payoff[i][j];
                }
            }
            lower = lower.min(s);
        }
        trace.push(ValueBracket { iteration: iterations, lower, upper });
        let gap = upper - lower;
        if gap <= tol || iterations >= max_iters {
            let value = {
                let mut s = 0.0;
                for (i, &xi) in xbar.iter().enumerate() {
                    if xi > 0.0 {
                        s += xi * dot(&payoff[i], &ybar);
                    }
                }
                s
            };
            return MatrixSolution { row: xbar, col: ybar, value, gap, iterations, trace };
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Optimal coordinated team play by direct solution of the joint-plan
/// matrix game. Exact up to the reported epsilon (the matrix duality gap);
/// refuses games whose plan product exceeds [`MATRIX_CAP`].
pub fn tmecor_bruteforce(
    game: &Game,
    team: &[PlayerId],
    tol: f64,
    max_iters: usize,
) -> Result<SolveResult, SolverError> {
    let mg = build_matrix_game(game, team)?;
    let sol = solve_matrix(&mg.payoff, tol, max_iters);
    let mu_t = CoordinatedStrategy::new(
        mg.team.clone(),
        mg.row_plans.iter().cloned().zip(sol.row.iter().copied()).collect(),
    );
    let mu_o = NormalFormStrategy::new(
        mg.opponent,
        mg.col_plans.iter().cloned().zip(sol.col.iter().copied()).collect(),
    );
    Ok(SolveResult {
        team_strategy: Strategy::Coordinated(mu_t),
        opponent_strategy: Strategy::NormalForm(mu_o),
        value: sol.value,
        epsilon: sol.gap,
        iterations: sol.iterations,
        trace: sol.trace,
        warnings: Vec::new(),
    })
}

/// Optimal coordinated team play via the refinement pipeline: merge the
/// team, restore perfect recall by inflation, solve the resulting
/// two-player zero-sum game with fictitious play, then express the
/// meta-player's average as a mixture over joint plan tuples of the
/// original game (each refined plan projects onto one merged plan, which
/// splits into per-member plans completed with first actions at states only
/// the member alone can reach — the team never actually gets there, so the
/// filling is value-neutral).
pub fn tmecor_via_refinement(
    game: &Game,
    team: &[PlayerId],
    tol: f64,
    max_iters: usize,
) -> Result<SolveResult, SolverError> {
    let map = perfect_recall_refinement(game, team)?;
    let meta = map.player;
    let refined = &map.refined;
    if refined.n_players() != 2 {
        return Err(SolverError::NeedSingleOpponent(refined.n_players() - 1));
    }
    let mut warnings = Vec::new();
    if map.via_information_sharing {
        warnings.push(
            "merged team lacks A-loss recall; used the information-sharing refinement, \
             which may overstate achievable coordination"
                .to_string(),
        );
    }
    let sr = solve_zero_sum(refined, tol, max_iters)?;
    let (meta_strategy, opp_strategy) = if meta == 0 {
        (&sr.team_strategy, &sr.opponent_strategy)
    } else {
        (&sr.opponent_strategy, &sr.team_strategy)
    };
    let Strategy::Behavioral(meta_b) = meta_strategy else { unreachable!() };
    let Strategy::Behavioral(opp_b) = opp_strategy else { unreachable!() };

    let members: Vec<PlayerId> = {
        let set: BTreeSet<PlayerId> = team.iter().copied().collect();
        set.into_iter().collect()
    };
    let orig_opp = single_opponent(game, &members)?;

    let meta_nf = behavioral_to_normal_form(refined, meta_b)?;
    let mut entries: Vec<(Vec<ReducedPlan>, f64)> = Vec::with_capacity(meta_nf.support().len());
    for (plan, weight) in meta_nf.support() {
        // Refined state ids -> original (merged == input) state ids. Under
        // A-loss recall a pure plan reaches at most one copy per original
        // state, so no conflicts arise; with the information-sharing
        // fallback the lowest refined copy wins.
        let mut partial: BTreeMap<StateId, ActionIdx> = BTreeMap::new();
        for (&rs, &a) in &plan.choices {
            partial.entry(map.state_map[&rs]).or_insert(a);
        }
        let merged_plan = complete_plan(&map.original, meta, &partial);
        let tuple: Vec<ReducedPlan> = members
            .iter()
            .map(|&m| {
                let mine: BTreeMap<StateId, ActionIdx> = merged_plan
                    .choices
                    .iter()
                    .filter(|&(&s, _)| game.state(s).owner == m)
                    .map(|(&s, &a)| (s, a))
                    .collect();
                complete_plan(game, m, &mine)
            })
            .collect();
        entries.push((tuple, *weight));
    }
    let mu_t = CoordinatedStrategy::new(members, entries);

    let opp_nf_refined = behavioral_to_normal_form(refined, opp_b)?;
    let opp_entries: Vec<(ReducedPlan, f64)> = opp_nf_refined
        .support()
        .iter()
        .map(|(plan, w)| {
            let choices: BTreeMap<StateId, ActionIdx> =
                plan.choices.iter().map(|(&rs, &a)| (map.state_map[&rs], a)).collect();
            (ReducedPlan { owner: orig_opp, choices }, *w)
        })
        .collect();
    let mu_o = NormalFormStrategy::new(orig_opp, opp_entries);

    let (value, trace) = if meta == 0 {
        (sr.value, sr.trace)
    } else {
        (
            -sr.value,
            sr.trace
                .iter()
                .map(|b| ValueBracket { iteration: b.iteration, lower: -b.upper, upper: -b.lower })
                .collect(),
        )
    };
    Ok(SolveResult {
        team_strategy: Strategy::Coordinated(mu_t),
        opponent_strategy: Strategy::NormalForm(mu_o),
        value,
        epsilon: sr.epsilon,
        iterations: sr.iterations,
        trace,
        warnings,
    })
}

/// Largest gain either side can secure by deviating alone: the team to any
/// joint plan tuple, the opponent to any reduced plan. Zero (to numerical
/// noise) exactly at a coordinated equilibrium.
pub fn epsilon_tmecor(
    game: &Game,
    team: &[PlayerId],
    mu_t: &CoordinatedStrategy,
    mu_o: &NormalFormStrategy,
) -> Result<f64, SolverError> {
    let _ = merge_team(game, team)?;
    let members: Vec<PlayerId> = {
        let set: BTreeSet<PlayerId> = team.iter().copied().collect();
        set.into_iter().collect()
    };
    let opponent = single_opponent(game, &members)?;
    let v = expected_value(
        game,
        &[StrategyRef::Coordinated(mu_t), StrategyRef::NormalForm(mu_o)],
    )?[members[0]];

    let member_plans: Vec<Vec<ReducedPlan>> = members
        .iter()
        .map(|&m| enumerate_reduced_plans(game, m))
        .collect::<Result<_, _>>()?;
    let rows: usize = member_plans.iter().map(Vec::len).product();
    if rows > MATRIX_CAP {
        return Err(SolverError::TooLarge { size: rows, cap: MATRIX_CAP });
    }

    // Team deviation: best joint tuple against the opponent's mixture.
    let opp_reach = leaf_reach(game, StrategyRef::NormalForm(mu_o));
    let w_team: Vec<f64> = game
        .leaf_paths()
        .iter()
        .enumerate()
        .map(|(i, p)| p.chance_reach * game.payoff(p.node, members[0]) * opp_reach[i])
        .collect();
    let member_set: BTreeSet<PlayerId> = members.iter().copied().collect();
    let mut best_team = f64::MIN;
    let mut idx = vec![0usize; members.len()];
    for _ in 0..rows {
        let val: f64 = reached_leaves(game, &member_set, |p, s| {
            let i = members.iter().position(|&m| m == p).unwrap();
            member_plans[i][idx[i]].choice(s)
        })
        .into_iter()
        .map(|z| w_team[z])
        .sum();
        best_team = best_team.max(val);
        let mut k = members.len();
        while k > 0 {
            k -= 1;
            idx[k] += 1;
            if idx[k] < member_plans[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }

    // Opponent deviation: best pure plan against the team's mixture.
    let team_reach = leaf_reach(game, StrategyRef::Coordinated(mu_t));
    let w_opp: Vec<f64> = game
        .leaf_paths()
        .iter()
        .enumerate()
        .map(|(i, p)| p.chance_reach * game.payoff(p.node, members[0]) * team_reach[i])
        .collect();
    let opp_set = BTreeSet::from([opponent]);
    let mut worst_opp = f64::MAX;
    for plan in enumerate_reduced_plans(game, opponent)? {
        let val: f64 = reached_leaves(game, &opp_set, |_, s| plan.choice(s))
            .into_iter()
            .map(|z| w_opp[z])
            .sum();
        worst_opp = worst_opp.min(val);
    }

    Ok((best_team - v).max(v - worst_opp).max(0.0))
}
