//! Strategy-quality metrics: Monte Carlo and closed-form team reward,
//! exploitability against a best-responding opponent, divergence from the
//! optimal coordinated mixture, and final-position heatmaps for grid games.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{ActionIdx, Game, Node, PlayerId, StateId};
use crate::games::PatrollingLayout;
use crate::rng::stage_rng;
use crate::sims::{play_episode, to_coordinated_strategy, SignalMediatedStrategy, SimsError};
use crate::solver::{best_response, tmecor_bruteforce, SolverError};
use crate::strategy::{
    CoordinatedStrategy, NormalFormStrategy, Strategy, StrategyError, StrategyRef,
};
use crate::values::{expected_value, ValueError};

/// Reference probabilities below this are clamped before entering a log.
const KL_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation needs at least one episode and one seed")]
    NoEpisodes,
    #[error("strategy team {got:?} does not match the evaluated team {expected:?}")]
    TeamMismatch { expected: Vec<PlayerId>, got: Vec<PlayerId> },
    #[error("signal {signal} out of range for {n} signals")]
    BadSignal { signal: usize, n: usize },
    #[error("player {0} has no signal policy in the strategy bundle")]
    NotAMember(PlayerId),
    #[error("game does not follow the patrolling layout: no state named {0:?}")]
    NotPatrolling(String),
    #[error("player {0} is covered by neither the team nor the opponent strategy")]
    Uncovered(PlayerId),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error(transparent)]
    Sims(#[from] SimsError),
}

/// Everything the metrics need about the game's optimum, solved once and
/// reused across evaluations: the game value for the team, the optimal
/// coordinated mixture, and the equilibrium opponent it is paired with.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub team: Vec<PlayerId>,
    pub opponent: PlayerId,
    /// Team value of the solved game.
    pub value: f64,
    /// Optimal coordinated mixture over joint plan tuples.
    pub optimum: CoordinatedStrategy,
    /// Equilibrium opponent mixture, the reference opponent for reward runs.
    pub ne_opponent: NormalFormStrategy,
    /// Duality-gap tolerance the solve was run at.
    pub tol: f64,
}

impl EvalContext {
    /// Solve the joint-plan matrix game once and cache the pieces.
    pub fn solve(
        game: &Game,
        team: &[PlayerId],
        tol: f64,
        max_iters: usize,
    ) -> Result<Self, EvalError> {
        let r = tmecor_bruteforce(game, team, tol, max_iters)?;
        let Strategy::Coordinated(optimum) = r.team_strategy else {
            unreachable!("direct solve always yields a coordinated mixture")
        };
        let Strategy::NormalForm(ne_opponent) = r.opponent_strategy else {
            unreachable!("direct solve always yields a plan mixture for the opponent")
        };
        Ok(EvalContext {
            team: optimum.team.clone(),
            opponent: ne_opponent.owner,
            value: r.value,
            optimum,
            ne_opponent,
            tol,
        })
    }
}

/// How much the team gives up by playing `mu_t` instead of the optimum:
/// game value minus the team's value once the opponent best-responds to
/// `mu_t`. Nonnegative up to the context's solve tolerance, and zero at the
/// optimum itself.
pub fn exploitability(
    game: &Game,
    ctx: &EvalContext,
    mu_t: &CoordinatedStrategy,
) -> Result<f64, EvalError> {
    if mu_t.team != ctx.team {
        return Err(EvalError::TeamMismatch { expected: ctx.team.clone(), got: mu_t.team.clone() });
    }
    mu_t.validate(game)?;
    let (br, _) = best_response(game, ctx.opponent, &[StrategyRef::Coordinated(mu_t)])?;
    let ev = expected_value(game, &[StrategyRef::Coordinated(mu_t), StrategyRef::Behavioral(&br)])?
        [ctx.team[0]];
    Ok(ctx.value - ev)
}

/// Kullback-Leibler divergence between two coordinated mixtures over the
/// same joint-plan space, `sum_p mu[p] * ln(mu[p] / mu_star[p])` with the
/// reference clamped at 1e-12 so missing support stays finite. Zero terms
/// of `mu` contribute nothing.
pub fn kl_to_tmecor(
    mu: &CoordinatedStrategy,
    mu_star: &CoordinatedStrategy,
) -> Result<f64, EvalError> {
    if mu.team != mu_star.team {
        return Err(EvalError::TeamMismatch {
            expected: mu_star.team.clone(),
            got: mu.team.clone(),
        });
    }
    let mut total = 0.0;
    for (tuple, p) in mu.support() {
        let q = mu_star.prob_of(tuple).max(KL_CLAMP);
        total += p * (p / q).ln();
    }
    Ok(total)
}

/// The team side of an evaluation: either a signal bundle played move by
/// move, or any explicit strategy form played as a mixture of pure plans.
#[derive(Clone, Copy)]
pub enum TeamPolicy<'a> {
    Signals(&'a SignalMediatedStrategy),
    Mixture(StrategyRef<'a>),
}

impl TeamPolicy<'_> {
    fn owners(&self) -> Vec<PlayerId> {
        match self {
            TeamPolicy::Signals(sms) => sms.team(),
            TeamPolicy::Mixture(r) => r.owners(),
        }
    }
}

/// Closed-form expected team reward of `team` against `opponent`, the
/// deterministic cross-check for [`average_reward`]. The reward is the
/// payoff of the first team member (shared across members in team games).
pub fn exact_reward(
    game: &Game,
    team: TeamPolicy<'_>,
    opponent: StrategyRef<'_>,
) -> Result<f64, EvalError> {
    let owner = *team.owners().first().ok_or(EvalError::NoEpisodes)?;
    let values = match team {
        TeamPolicy::Signals(sms) => {
            let mu = to_coordinated_strategy(sms, game)?;
            expected_value(game, &[StrategyRef::Coordinated(&mu), opponent])?
        }
        TeamPolicy::Mixture(r) => expected_value(game, &[r, opponent])?,
    };
    Ok(values[owner])
}

/// A strategy committed for one episode: mixtures over plans collapse to a
/// drawn pure plan, behavioral strategies stay as-is and are sampled per
/// state.
enum Drawn<'a> {
    PerState(&'a BTreeMap<StateId, Vec<f64>>),
    Pure(BTreeMap<StateId, ActionIdx>),
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn commit<'a>(r: StrategyRef<'a>, rng: &mut ChaCha8Rng) -> Drawn<'a> {
    match r {
        StrategyRef::Behavioral(b) => Drawn::PerState(&b.dist),
        StrategyRef::NormalForm(nf) => {
            let weights: Vec<f64> = nf.support().iter().map(|(_, w)| *w).collect();
            Drawn::Pure(nf.support()[draw(rng, &weights)].0.choices.clone())
        }
        StrategyRef::Coordinated(c) => {
            let weights: Vec<f64> = c.support().iter().map(|(_, w)| *w).collect();
            let mut choices = BTreeMap::new();
            for plan in &c.support()[draw(rng, &weights)].0 {
                choices.extend(plan.choices.iter().map(|(&s, &a)| (s, a)));
            }
            Drawn::Pure(choices)
        }
    }
}

fn act(d: &Drawn<'_>, state: StateId, rng: &mut ChaCha8Rng) -> ActionIdx {
    match d {
        Drawn::PerState(dist) => draw(rng, &dist[&state]),
        // Reduced plans omit states their own earlier choices exclude;
        // those never come up on the walk, so any filler works.
        Drawn::Pure(choices) => choices.get(&state).copied().unwrap_or(0),
    }
}

/// Monte Carlo mean and standard deviation of the team reward over
/// `episodes` episodes for each of `seeds` independently seeded runs,
/// pooled into one sample. The mean converges to [`exact_reward`]; the
/// std is the per-episode population spread.
pub fn average_reward(
    game: &Game,
    team: TeamPolicy<'_>,
    opponent: StrategyRef<'_>,
    episodes: usize,
    seeds: usize,
    seed: u64,
) -> Result<(f64, f64), EvalError> {
    if episodes == 0 || seeds == 0 {
        return Err(EvalError::NoEpisodes);
    }
    let team_owners: BTreeSet<PlayerId> = team.owners().into_iter().collect();
    let reward_owner = *team_owners.first().ok_or(EvalError::NoEpisodes)?;
    let opp_owners: BTreeSet<PlayerId> = opponent.owners().into_iter().collect();
    for p in 0..game.n_players() {
        if !team_owners.contains(&p) && !opp_owners.contains(&p) {
            return Err(EvalError::Uncovered(p));
        }
    }
    opponent.validate(game)?;
    if let TeamPolicy::Mixture(r) = team {
        r.validate(game)?;
    }

    let mut rewards = Vec::with_capacity(episodes * seeds);
    for s in 0..seeds {
        let mut rng = stage_rng(seed, &format!("eval-{s}"));
        for _ in 0..episodes {
            let r = match team {
                TeamPolicy::Signals(sms) => play_episode(sms, game, opponent, &mut rng).1,
                TeamPolicy::Mixture(tr) => {
                    let t = commit(tr, &mut rng);
                    let o = commit(opponent, &mut rng);
                    let mut node = game.root();
                    loop {
                        match game.node(node) {
                            Node::Terminal { .. } => break game.payoff(node, reward_owner),
                            Node::Chance { probs, children, .. } => {
                                node = children[draw(&mut rng, probs)];
                            }
                            Node::Decision { state, children } => {
                                let side = if team_owners.contains(&game.state(*state).owner) {
                                    &t
                                } else {
                                    &o
                                };
                                node = children[act(side, *state, &mut rng)];
                            }
                        }
                    }
                }
            };
            rewards.push(r);
        }
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Where one player's walks end up under one signal: visit frequencies of
/// the player's final grid cell, accumulated over forced-signal episodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Heatmap {
    pub player: PlayerId,
    pub signal: usize,
    /// `grid[row][col]` = fraction of episodes ending on that cell;
    /// nonnegative, sums to one.
    pub grid: Vec<Vec<f64>>,
    pub episodes: usize,
}

impl Heatmap {
    /// Most visited cell, earliest in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut top = f64::NEG_INFINITY;
        for (r, row) in self.grid.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v > top {
                    top = v;
                    best = (r, c);
                }
            }
        }
        best
    }
}

fn patrol_state_name(member: &str, round: usize, hist: &[(usize, usize)]) -> String {
    let code = hist.iter().map(|c| format!("{}{}", c.0, c.1)).collect::<Vec<_>>().join("-");
    format!("{member}.r{round}@{code}")
}

/// Replay `episodes` walks of `player` with the signal forced to `signal`
/// and tally the final cells. The walk consults only the player's own
/// states (grid games never show a defender anyone else's moves), so the
/// tally is the same against every opponent.
pub fn heatmap(
    game: &Game,
    layout: &PatrollingLayout,
    sms: &SignalMediatedStrategy,
    player: PlayerId,
    signal: usize,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Heatmap, EvalError> {
    if episodes == 0 {
        return Err(EvalError::NoEpisodes);
    }
    if signal >= sms.mu_s.n {
        return Err(EvalError::BadSignal { signal, n: sms.mu_s.n });
    }
    let pol =
        sms.policies.iter().find(|p| p.owner == player).ok_or(EvalError::NotAMember(player))?;
    let member = &game.players()[player];

    let side = layout.grid_side;
    let mut counts = vec![vec![0usize; side]; side];
    for _ in 0..episodes {
        let mut hist = vec![layout.start];
        for round in 1..=layout.steps {
            let name = patrol_state_name(member, round, &hist);
            let sid = game.state_index(&name).ok_or(EvalError::NotPatrolling(name))?;
            let dist = pol
                .dist(sid, signal)
                .ok_or_else(|| EvalError::NotPatrolling(game.state(sid).name.clone()))?;
            let action = &game.state(sid).actions[draw(rng, &dist)];
            let next = layout
                .apply(*hist.last().unwrap(), action)
                .ok_or_else(|| EvalError::NotPatrolling(format!("{action} off the grid")))?;
            hist.push(next);
        }
        let end = *hist.last().unwrap();
        counts[end.0][end.1] += 1;
    }
    let grid = counts
        .into_iter()
        .map(|row| row.into_iter().map(|c| c as f64 / episodes as f64).collect())
        .collect();
    Ok(Heatmap { player, signal, grid, episodes })
}

/// One evaluation snapshot of a signal bundle: Monte Carlo reward against
/// the context's equilibrium opponent, exploitability, and divergence from
/// the optimal mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub reward_mean: f64,
    pub reward_std: f64,
    pub exploitability: f64,
    pub kl: f64,
    pub seeds: usize,
    pub episodes_per_eval: usize,
}

/// Run the full metric bundle for a trained signal strategy.
pub fn evaluate(
    game: &Game,
    ctx: &EvalContext,
    sms: &SignalMediatedStrategy,
    episodes: usize,
    seeds: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if sms.team() != ctx.team {
        return Err(EvalError::TeamMismatch { expected: ctx.team.clone(), got: sms.team() });
    }
    let mu = to_coordinated_strategy(sms, game)?;
    let (reward_mean, reward_std) = average_reward(
        game,
        TeamPolicy::Signals(sms),
        StrategyRef::NormalForm(&ctx.ne_opponent),
        episodes,
        seeds,
        seed,
    )?;
    Ok(EvalReport {
        reward_mean,
        reward_std,
        exploitability: exploitability(game, ctx, &mu)?,
        kl: kl_to_tmecor(&mu, &ctx.optimum)?,
        seeds,
        episodes_per_eval: episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{coordination_game, patrolling_game, CoordinationSpec, PatrollingSpec};
    use crate::sims::{SignalDistribution, SignalPolicy};
    use crate::strategy::{BehavioralStrategy, ReducedPlan};

    fn coord2() -> Game {
        coordination_game(&CoordinationSpec::new(2, 100.0, 100.0)).unwrap()
    }

    /// The single-state plan of a coord-2 member picking action `a`.
    fn coord_plan(g: &Game, owner: PlayerId, a: ActionIdx) -> ReducedPlan {
        let states = g.states_of(owner);
        assert_eq!(states.len(), 1, "coord-2 member should have one state");
        ReducedPlan { owner, choices: [(states[0], a)].into_iter().collect() }
    }

    fn diagonal_half(g: &Game) -> CoordinatedStrategy {
        CoordinatedStrategy::new(
            vec![0, 1],
            vec![
                (vec![coord_plan(g, 0, 0), coord_plan(g, 1, 0)], 0.5),
                (vec![coord_plan(g, 0, 1), coord_plan(g, 1, 1)], 0.5),
            ],
        )
    }

    fn uniform_tuples(g: &Game) -> CoordinatedStrategy {
        let mut entries = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                entries.push((vec![coord_plan(g, 0, a), coord_plan(g, 1, b)], 0.25));
            }
        }
        CoordinatedStrategy::new(vec![0, 1], entries)
    }

    /// Per-signal policy for `owner` whose signal-k logits push the named
    /// moves of `walks[k]` by `gain`; every other state stays uniform.
    fn walk_policy(
        g: &Game,
        layout: &PatrollingLayout,
        owner: PlayerId,
        walks: &[Vec<&str>],
        gain: f64,
    ) -> SignalPolicy {
        let n = walks.len();
        let mut phi: BTreeMap<StateId, Vec<Vec<f64>>> = g
            .states_of(owner)
            .iter()
            .map(|&s| (s, vec![vec![0.0; g.state(s).n_actions()]; n]))
            .collect();
        let member = g.players()[owner].clone();
        for (k, walk) in walks.iter().enumerate() {
            let mut hist = vec![layout.start];
            for (round, mv) in walk.iter().enumerate() {
                let name = patrol_state_name(&member, round + 1, &hist);
                let sid = g.state_index(&name).expect("walk stays on named states");
                let idx = g.state(sid).actions.iter().position(|a| a == mv).unwrap();
                phi.get_mut(&sid).unwrap()[k][idx] = gain;
                hist.push(layout.apply(*hist.last().unwrap(), mv).unwrap());
            }
        }
        SignalPolicy { owner, phi }
    }

    #[test]
    fn exploitability_vanishes_at_the_optimum() {
        let g = coord2();
        let ctx = EvalContext::solve(&g, &[0, 1], 1e-4, 500_000).unwrap();
        assert!((ctx.value - 50.0).abs() <= 0.01, "coord-2 value should be 50: {}", ctx.value);
        let e = exploitability(&g, &ctx, &ctx.optimum).unwrap();
        assert!(e.abs() <= 1e-3, "optimum should not be exploitable: {e}");
        assert!(e >= -ctx.tol, "exploitability below the solve tolerance: {e}");
    }

    #[test]
    fn exploitability_prices_weak_mixtures() {
        let g = coord2();
        let ctx = EvalContext::solve(&g, &[0, 1], 1e-4, 500_000).unwrap();

        let uniform = uniform_tuples(&g);
        let e = exploitability(&g, &ctx, &uniform).unwrap();
        assert!((e - 25.0).abs() <= 0.01, "uncorrelated uniform play gives up 25: {e}");

        // The definition decomposes: value = exploitability + reward vs the
        // best response.
        let (br, _) = best_response(&g, ctx.opponent, &[StrategyRef::Coordinated(&uniform)])
            .unwrap();
        let ev = exact_reward(
            &g,
            TeamPolicy::Mixture(StrategyRef::Coordinated(&uniform)),
            StrategyRef::Behavioral(&br),
        )
        .unwrap();
        assert!((e + ev - ctx.value).abs() <= 1e-12, "decomposition broke: {e} + {ev}");

        let point = CoordinatedStrategy::new(
            vec![0, 1],
            vec![(vec![coord_plan(&g, 0, 0), coord_plan(&g, 1, 0)], 1.0)],
        );
        let e = exploitability(&g, &ctx, &point).unwrap();
        assert!((e - 50.0).abs() <= 0.01, "a readable point mass gives up everything: {e}");

        let foreign = CoordinatedStrategy::new(vec![1, 2], Vec::new());
        assert!(
            matches!(
                exploitability(&g, &ctx, &foreign),
                Err(EvalError::TeamMismatch { .. })
            ),
            "wrong team must be rejected"
        );
    }

    #[test]
    fn kl_matches_the_hand_formula() {
        let g = coord2();
        let mu = uniform_tuples(&g);
        let mu_star = diagonal_half(&g);
        let kl = kl_to_tmecor(&mu, &mu_star).unwrap();
        // Two matched tuples at 0.25 vs 0.5, two unmatched against the
        // 1e-12 clamp.
        let expected = 2.0 * 0.25 * (0.25f64 / 0.5).ln() + 2.0 * 0.25 * (0.25f64 / 1e-12).ln();
        assert!((kl - expected).abs() <= 1e-12, "clamped divergence off: {kl} vs {expected}");
        assert!((kl - 12.7758).abs() <= 1e-3, "hand value drifted: {kl}");
    }

    #[test]
    fn kl_is_zero_between_equal_mixtures() {
        let g = coord2();
        let mu = diagonal_half(&g);
        assert_eq!(kl_to_tmecor(&mu, &mu).unwrap(), 0.0, "identical mixtures diverge");

        let third = CoordinatedStrategy::new(
            vec![0, 1],
            vec![
                (vec![coord_plan(&g, 0, 0), coord_plan(&g, 1, 0)], 1.0 / 3.0),
                (vec![coord_plan(&g, 0, 1), coord_plan(&g, 1, 1)], 2.0 / 3.0),
            ],
        );
        assert_eq!(kl_to_tmecor(&third, &third).unwrap(), 0.0, "imbalanced self-divergence");

        // Entry order is irrelevant: the mixtures canonicalize on plans.
        let reversed = CoordinatedStrategy::new(
            vec![0, 1],
            vec![
                (vec![coord_plan(&g, 0, 1), coord_plan(&g, 1, 1)], 0.5),
                (vec![coord_plan(&g, 0, 0), coord_plan(&g, 1, 0)], 0.5),
            ],
        );
        let a = kl_to_tmecor(&uniform_tuples(&g), &mu).unwrap();
        let b = kl_to_tmecor(&uniform_tuples(&g), &reversed).unwrap();
        assert_eq!(a, b, "reindexing the reference changed the divergence");

        let foreign = CoordinatedStrategy::new(vec![1, 2], Vec::new());
        assert!(
            matches!(kl_to_tmecor(&mu, &foreign), Err(EvalError::TeamMismatch { .. })),
            "mismatched plan spaces must be rejected"
        );
    }

    #[test]
    fn reward_examples_match_closed_form() {
        let g = coord2();
        let ctx = EvalContext::solve(&g, &[0, 1], 1e-4, 500_000).unwrap();

        let exact = exact_reward(
            &g,
            TeamPolicy::Mixture(StrategyRef::Coordinated(&ctx.optimum)),
            StrategyRef::NormalForm(&ctx.ne_opponent),
        )
        .unwrap();
        assert!((exact - 50.0).abs() <= 0.01, "equilibrium payoff should be 50: {exact}");
        let (mc, std) = average_reward(
            &g,
            TeamPolicy::Mixture(StrategyRef::Coordinated(&ctx.optimum)),
            StrategyRef::NormalForm(&ctx.ne_opponent),
            2_000,
            3,
            5,
        )
        .unwrap();
        let n = (2_000 * 3) as f64;
        assert!(
            (mc - exact).abs() <= 3.0 * std / n.sqrt() + 1e-9,
            "Monte Carlo mean {mc} strays from {exact} (std {std})"
        );

        let uniform = uniform_tuples(&g);
        let unif_o = BehavioralStrategy::uniform(&g, 2);
        let exact = exact_reward(
            &g,
            TeamPolicy::Mixture(StrategyRef::Coordinated(&uniform)),
            StrategyRef::Behavioral(&unif_o),
        )
        .unwrap();
        assert!((exact - 25.0).abs() <= 1e-12, "uniform-vs-uniform pays 25: {exact}");
        let (mc, std) = average_reward(
            &g,
            TeamPolicy::Mixture(StrategyRef::Coordinated(&uniform)),
            StrategyRef::Behavioral(&unif_o),
            2_000,
            3,
            6,
        )
        .unwrap();
        assert!(
            (mc - exact).abs() <= 3.0 * std / n.sqrt() + 1e-9,
            "Monte Carlo mean {mc} strays from {exact} (std {std})"
        );
        assert!(std >= 0.0, "standard deviation can't be negative");
    }

    #[test]
    fn patrolling_reward_against_the_best_response() {
        let g = patrolling_game(&PatrollingSpec::new(3, 4, 3)).unwrap();
        let ctx = EvalContext::solve(&g, &[0, 1], 0.02, 500_000).unwrap();
        assert!((ctx.value + 0.5).abs() <= 0.01, "patrolling value should be -0.5: {}", ctx.value);

        let (br, _) =
            best_response(&g, ctx.opponent, &[StrategyRef::Coordinated(&ctx.optimum)]).unwrap();
        let exact = exact_reward(
            &g,
            TeamPolicy::Mixture(StrategyRef::Coordinated(&ctx.optimum)),
            StrategyRef::Behavioral(&br),
        )
        .unwrap();
        assert!((exact + 0.5).abs() <= 0.03, "optimum holds the value under attack: {exact}");

        let (mc, std) = average_reward(
            &g,
            TeamPolicy::Mixture(StrategyRef::Coordinated(&ctx.optimum)),
            StrategyRef::Behavioral(&br),
            3_000,
            2,
            9,
        )
        .unwrap();
        let n = (3_000 * 2) as f64;
        assert!(
            (mc - exact).abs() <= 3.0 * std / n.sqrt() + 1e-9,
            "Monte Carlo mean {mc} strays from {exact} (std {std})"
        );
    }

    #[test]
    fn bad_evaluation_setups_are_rejected() {
        let g = coord2();
        let uniform = uniform_tuples(&g);
        let unif_o = BehavioralStrategy::uniform(&g, 2);
        assert!(
            matches!(
                average_reward(
                    &g,
                    TeamPolicy::Mixture(StrategyRef::Coordinated(&uniform)),
                    StrategyRef::Behavioral(&unif_o),
                    0,
                    1,
                    0,
                ),
                Err(EvalError::NoEpisodes)
            ),
            "zero episodes must be rejected"
        );

        // A lone member plus the opponent leaves the other member unplayed.
        let half = NormalFormStrategy::pure(coord_plan(&g, 0, 0));
        assert!(
            matches!(
                average_reward(
                    &g,
                    TeamPolicy::Mixture(StrategyRef::NormalForm(&half)),
                    StrategyRef::Behavioral(&unif_o),
                    10,
                    1,
                    0,
                ),
                Err(EvalError::Uncovered(1))
            ),
            "uncovered players must be rejected"
        );
    }

    #[test]
    fn heatmap_pure_walk_lands_on_its_corner() {
        let spec = PatrollingSpec::new(3, 4, 3);
        let g = patrolling_game(&spec).unwrap();
        let layout = spec.layout().unwrap();
        let walks = vec![vec!["up", "left", "stay"]];
        let sms = SignalMediatedStrategy {
            mu_s: SignalDistribution::uniform(1),
            policies: vec![
                walk_policy(&g, &layout, 0, &walks, 1_000.0),
                walk_policy(&g, &layout, 1, &walks, 1_000.0),
            ],
        };
        let mut rng = stage_rng(7, "eval-heat");
        let h = heatmap(&g, &layout, &sms, 0, 0, 50, &mut rng).unwrap();
        assert_eq!(h.grid[0][0], 1.0, "a forced walk always ends on its corner");
        assert_eq!(h.argmax(), (0, 0), "argmax should be the forced corner");
        let total: f64 = h.grid.iter().flatten().sum();
        assert!((total - 1.0).abs() <= 1e-9, "frequencies must sum to one: {total}");
    }

    #[test]
    fn heatmap_spreads_under_uniform_play() {
        let spec = PatrollingSpec::new(3, 4, 3);
        let g = patrolling_game(&spec).unwrap();
        let layout = spec.layout().unwrap();
        let sms = SignalMediatedStrategy {
            mu_s: SignalDistribution::uniform(1),
            policies: vec![
                walk_policy(&g, &layout, 0, &[Vec::new()], 0.0),
                walk_policy(&g, &layout, 1, &[Vec::new()], 0.0),
            ],
        };
        let mut rng = stage_rng(8, "eval-heat");
        let h = heatmap(&g, &layout, &sms, 1, 0, 4_000, &mut rng).unwrap();
        let total: f64 = h.grid.iter().flatten().sum();
        assert!((total - 1.0).abs() <= 1e-9, "frequencies must sum to one: {total}");
        let max = h.grid.iter().flatten().cloned().fold(f64::MIN, f64::max);
        assert!(max < 0.5, "an aimless walk should not concentrate: max {max}");
        assert!(h.grid.iter().flatten().all(|&v| v >= 0.0), "negative frequency");
    }

    #[test]
    fn heatmap_signals_agree_between_members() {
        let spec = PatrollingSpec::new(3, 4, 3);
        let g = patrolling_game(&spec).unwrap();
        let layout = spec.layout().unwrap();
        // Noisy but biased: both members aim signal 0 at one corner and
        // signal 1 at the opposite one.
        let walks = vec![vec!["up", "left", "stay"], vec!["down", "right", "stay"]];
        let sms = SignalMediatedStrategy {
            mu_s: SignalDistribution::uniform(2),
            policies: vec![
                walk_policy(&g, &layout, 0, &walks, 3.0),
                walk_policy(&g, &layout, 1, &walks, 3.0),
            ],
        };
        let mut rng = stage_rng(9, "eval-heat");
        let sites = [(0, 0), (2, 2)];
        for (signal, site) in sites.iter().enumerate() {
            let h1 = heatmap(&g, &layout, &sms, 0, signal, 4_000, &mut rng).unwrap();
            let h2 = heatmap(&g, &layout, &sms, 1, signal, 4_000, &mut rng).unwrap();
            assert_eq!(
                h1.argmax(),
                h2.argmax(),
                "signal {signal}: members disagree on the destination"
            );
            assert_eq!(h1.argmax(), *site, "signal {signal} should head to {site:?}");
        }
    }

    #[test]
    fn heatmap_rejects_misuse() {
        let spec = PatrollingSpec::new(3, 4, 3);
        let g = patrolling_game(&spec).unwrap();
        let layout = spec.layout().unwrap();
        let sms = SignalMediatedStrategy {
            mu_s: SignalDistribution::uniform(1),
            policies: vec![
                walk_policy(&g, &layout, 0, &[Vec::new()], 0.0),
                walk_policy(&g, &layout, 1, &[Vec::new()], 0.0),
            ],
        };
        let mut rng = stage_rng(10, "eval-heat");
        assert!(
            matches!(
                heatmap(&g, &layout, &sms, 0, 9, 10, &mut rng),
                Err(EvalError::BadSignal { signal: 9, n: 1 })
            ),
            "unknown signal must be rejected"
        );
        assert!(
            matches!(
                heatmap(&g, &layout, &sms, 2, 0, 10, &mut rng),
                Err(EvalError::NotAMember(2))
            ),
            "the opponent has no signal policy"
        );
        assert!(
            matches!(
                heatmap(&g, &layout, &sms, 0, 0, 0, &mut rng),
                Err(EvalError::NoEpisodes)
            ),
            "zero episodes must be rejected"
        );
        let coord = coord2();
        assert!(
            matches!(
                heatmap(&coord, &layout, &sms, 0, 0, 10, &mut rng),
                Err(EvalError::NotPatrolling(_))
            ),
            "a game without the grid naming scheme must be rejected"
        );
    }

    #[test]
    fn evaluate_scores_a_hand_built_optimum() {
        let g = coord2();
        let ctx = EvalContext::solve(&g, &[0, 1], 1e-4, 500_000).unwrap();
        // Signal 0 sends both members left, signal 1 right; the plan
        // mixture this induces is exactly the even diagonal.
        let mut policies = Vec::new();
        for owner in 0..2 {
            let s = g.states_of(owner)[0];
            let phi = [(s, vec![vec![1_000.0, 0.0], vec![0.0, 1_000.0]])].into_iter().collect();
            policies.push(SignalPolicy { owner, phi });
        }
        let sms = SignalMediatedStrategy { mu_s: SignalDistribution::uniform(2), policies };

        let report = evaluate(&g, &ctx, &sms, 500, 4, 21).unwrap();
        assert!(report.exploitability.abs() <= 1e-3, "even diagonal play is unexploitable");
        assert!(report.exploitability >= -ctx.tol, "exploitability under the tolerance floor");
        assert!(report.kl >= -1e-12 && report.kl <= 1e-3, "divergence from the optimum: {}", report.kl);
        let n = (500 * 4) as f64;
        assert!(
            (report.reward_mean - 50.0).abs() <= 3.0 * report.reward_std / n.sqrt() + 1e-9,
            "reward {} ± {} should straddle 50",
            report.reward_mean,
            report.reward_std
        );
        assert_eq!((report.seeds, report.episodes_per_eval), (4, 500), "echoed run shape");

        let foreign = SignalMediatedStrategy {
            mu_s: SignalDistribution::uniform(1),
            policies: vec![SignalPolicy { owner: 2, phi: BTreeMap::new() }],
        };
        assert!(
            matches!(evaluate(&g, &ctx, &foreign, 10, 1, 0), Err(EvalError::TeamMismatch { .. })),
            "bundles for another team must be rejected"
        );
    }
}

