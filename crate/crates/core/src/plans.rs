//! Reduced-plan enumeration.
//!
//! A reduced plan assigns an action to exactly the states its owner can
//! reach given the plan's own earlier choices. The domain is therefore a
//! fixpoint: a state is in the plan iff some member node's own
//! (state, action) history is fully consistent with the plan. Enumeration
//! grows plans one frontier state at a time (lowest state id first, actions
//! in list order), which yields a deterministic order and never materializes
//! choices at unreachable states. Works for imperfect-recall players too: a
//! state reachable under every choice simply stays in every plan's domain.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::game::{ActionIdx, Game, PlayerId, StateId};
use crate::strategy::{ReducedPlan, StrategyError};

/// Hard ceiling on enumerated plans; beyond this the caller should switch to
/// a decomposition that never lists plans explicitly.
pub const PLAN_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("player {0} out of range")]
    BadPlayer(PlayerId),
    #[error("player has more than {cap} reduced plans")]
    TooMany { cap: usize },
}

/// Witness histories per state: one own-(state, action) history per member
/// node. A state is reachable under a partial assignment iff some witness is
/// fully assigned and consistent.
pub(crate) struct Reach {
    witnesses: BTreeMap<StateId, Vec<Vec<(StateId, ActionIdx)>>>,
    /// States whose witnesses mention `s`, so only they can newly become
    /// reachable when `s` is assigned.
    triggers: BTreeMap<StateId, Vec<StateId>>,
    /// States with an empty witness: reachable before anything is assigned.
    roots: BTreeSet<StateId>,
}

impl Reach {
    pub(crate) fn build(game: &Game, player: PlayerId) -> Reach {
        let states: Vec<StateId> = game.states_of(player).to_vec();
        let mut witnesses: BTreeMap<StateId, Vec<Vec<(StateId, ActionIdx)>>> = BTreeMap::new();
        let mut triggers: BTreeMap<StateId, Vec<StateId>> = BTreeMap::new();
        let mut roots = BTreeSet::new();
        for &s in &states {
            let mut wits = Vec::new();
            for &v in &game.state(s).nodes {
                let hist = game.own_history(v, player);
                if hist.is_empty() {
                    roots.insert(s);
                }
                for &(dep, _) in &hist {
                    let t = triggers.entry(dep).or_default();
                    if !t.contains(&s) {
                        t.push(s);
                    }
                }
                if !wits.contains(&hist) {
                    wits.push(hist);
                }
            }
            witnesses.insert(s, wits);
        }
        Reach { witnesses, triggers, roots }
    }

    fn satisfied(&self, s: StateId, assigned: &BTreeMap<StateId, ActionIdx>) -> bool {
        self.witnesses[&s]
            .iter()
            .any(|w| w.iter().all(|(dep, a)| assigned.get(dep) == Some(a)))
    }
}

fn enumerate_rec(
    game: &Game,
    reach: &Reach,
    assigned: &mut BTreeMap<StateId, ActionIdx>,
    frontier: &BTreeSet<StateId>,
    owner: PlayerId,
    cap: usize,
    out: &mut Vec<ReducedPlan>,
) -> Result<(), PlanError> {
    let Some(&s) = frontier.iter().next() else {
        if out.len() >= cap {
            return Err(PlanError::TooMany { cap });
        }
        out.push(ReducedPlan { owner, choices: assigned.clone() });
        return Ok(());
    };
    let mut rest = frontier.clone();
    rest.remove(&s);
    for a in 0..game.state(s).n_actions() {
        assigned.insert(s, a);
        let mut next = rest.clone();
        if let Some(ts) = reach.triggers.get(&s) {
            for &t in ts {
                if !assigned.contains_key(&t) && reach.satisfied(t, assigned) {
                    next.insert(t);
                }
            }
        }
        enumerate_rec(game, reach, assigned, &next, owner, cap, out)?;
        assigned.remove(&s);
    }
    Ok(())
}

/// All reduced plans of `player`, in deterministic order (the recursion
/// assigns the lowest reachable unassigned state first and scans its actions
/// in list order).
pub fn enumerate_reduced_plans(game: &Game, player: PlayerId) -> Result<Vec<ReducedPlan>, PlanError> {
    enumerate_reduced_plans_capped(game, player, PLAN_CAP)
}

pub fn enumerate_reduced_plans_capped(
    game: &Game,
    player: PlayerId,
    cap: usize,
) -> Result<Vec<ReducedPlan>, PlanError> {
    if player >= game.n_players() {
        return Err(PlanError::BadPlayer(player));
    }
    let reach = Reach::build(game, player);
    let mut out = Vec::new();
    let mut assigned = BTreeMap::new();
    enumerate_rec(game, &reach, &mut assigned, &reach.roots.clone(), player, cap, &mut out)?;
    // Lexicographic by (state id, action): late choices can unlock states
    // with smaller ids than earlier ones, so recursion order alone is not
    // canonical.
    out.sort();
    Ok(out)
}

/// Number of reduced plans without materializing them all (still walks the
/// recursion, but drops the plans).
pub fn count_reduced_plans(game: &Game, player: PlayerId) -> Result<usize, PlanError> {
    Ok(enumerate_reduced_plans_capped(game, player, PLAN_CAP)?.len())
}

/// Grow the reachability closure for a fixed choice function. `choose`
/// returns the action taken at a state the moment it becomes reachable.
fn closure(
    reach: &Reach,
    mut choose: impl FnMut(StateId) -> ActionIdx,
) -> BTreeMap<StateId, ActionIdx> {
    let mut assigned: BTreeMap<StateId, ActionIdx> = BTreeMap::new();
    let mut frontier: BTreeSet<StateId> = reach.roots.clone();
    while let Some(&s) = frontier.iter().next() {
        frontier.remove(&s);
        let a = choose(s);
        assigned.insert(s, a);
        if let Some(ts) = reach.triggers.get(&s) {
            for &t in ts {
                if !assigned.contains_key(&t) && reach.satisfied(t, &assigned) {
                    frontier.insert(t);
                }
            }
        }
    }
    assigned
}

/// Check that a plan's domain is exactly the own-reachability closure of its
/// choices and every chosen action is in range.
pub fn validate_plan(game: &Game, plan: &ReducedPlan) -> Result<(), StrategyError> {
    if plan.owner >= game.n_players() {
        return Err(StrategyError::BadPlayer(plan.owner));
    }
    validate_plan_reach(game, &Reach::build(game, plan.owner), plan)
}

/// Like [`validate_plan`] with the owner's reachability index precomputed,
/// so a wide mixture is checked without rebuilding it per plan.
pub(crate) fn validate_plan_reach(
    game: &Game,
    reach: &Reach,
    plan: &ReducedPlan,
) -> Result<(), StrategyError> {
    for (&s, &a) in &plan.choices {
        if game.state(s).owner != plan.owner {
            return Err(StrategyError::ForeignState { state: s });
        }
        let n = game.state(s).n_actions();
        if a >= n {
            return Err(StrategyError::BadAction { state: s, action: a, n });
        }
    }
    // Follow the plan's own choices; a reachable state the plan does not
    // cover breaks the closure, as does a covered state never reached.
    let mut missing = None;
    let grown = closure(reach, |s| match plan.choices.get(&s) {
        Some(&a) => a,
        None => {
            missing.get_or_insert(s);
            0
        }
    });
    if let Some(s) = missing {
        return Err(StrategyError::PlanDomain {
            state: s,
            reason: "state is own-reachable under the plan but unassigned".to_string(),
        });
    }
    if let Some((&s, _)) = plan.choices.iter().find(|(s, _)| !grown.contains_key(s)) {
        return Err(StrategyError::PlanDomain {
            state: s,
            reason: "state is assigned but excluded by an earlier own choice".to_string(),
        });
    }
    Ok(())
}

/// Build a valid reduced plan from a partial choice map: reachable states
/// take the given choice, or action 0 where the map is silent. Used to
/// project merged-team plans onto individual members.
pub fn complete_plan(
    game: &Game,
    owner: PlayerId,
    partial: &BTreeMap<StateId, ActionIdx>,
) -> ReducedPlan {
    let reach = Reach::build(game, owner);
    let choices = closure(&reach, |s| partial.get(&s).copied().unwrap_or(0));
    ReducedPlan { owner, choices }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testgen;
    use crate::text::build_game;

    #[test]
    fn two_level_perfect_recall_player() {
        // A moves, observes own move, moves again: 2 * 2 * 2 = 6 reduced
        // plans? No: the second state reached depends on the first choice,
        // so plans are (first, second-at-reached-state): 2 * 2 + 2 * ... = 4... each
        // first choice exposes one second state with 2 actions: 4 plans,
        // not the 8 full assignments.
        let g = build_game(
            "\
efgdesc v1
players A
root r
node r player=A infostate=s0 actions=L,R
node l player=A infostate=sL actions=a,b
node rr player=A infostate=sR actions=a,b
node z0 terminal payoffs=0
node z1 terminal payoffs=0
node z2 terminal payoffs=0
node z3 terminal payoffs=0
edge r L l
edge r R rr
edge l a z0
edge l b z1
edge rr a z2
edge rr b z3
",
        )
        .unwrap();
        let plans = enumerate_reduced_plans(&g, 0).unwrap();
        assert_eq!(plans.len(), 4);
        for p in &plans {
            assert_eq!(p.choices.len(), 2, "root plus exactly one successor");
            validate_plan(&g, p).unwrap();
        }
        let oracle = testgen::oracle_reduced_plans(&g, 0);
        assert_eq!(plans, oracle);
    }

    #[test]
    fn forgetful_player_keeps_both_states() {
        // A chooses twice but cannot see (or recall) anything: the second
        // state is reachable under either first choice, so plans assign both
        // states: 4 plans.
        let g = build_game(
            "\
efgdesc v1
players A
root r
node r player=A infostate=s0 actions=L,R
node l player=A infostate=s1 actions=a,b
node rr player=A infostate=s1 actions=a,b
node z0 terminal payoffs=0
node z1 terminal payoffs=0
node z2 terminal payoffs=0
node z3 terminal payoffs=0
edge r L l
edge r R rr
edge l a z0
edge l b z1
edge rr a z2
edge rr b z3
",
        )
        .unwrap();
        let plans = enumerate_reduced_plans(&g, 0).unwrap();
        assert_eq!(plans.len(), 4);
        for p in &plans {
            assert_eq!(p.choices.len(), 2);
        }
        assert_eq!(plans, testgen::oracle_reduced_plans(&g, 0));
    }

    #[test]
    fn matches_oracle_on_random_games() {
        for seed in 0..30 {
            let g = testgen::random_perfect_recall_game(seed, &testgen::GenConfig::small());
            for player in 0..g.n_players() {
                let fast = enumerate_reduced_plans(&g, player).unwrap();
                let oracle = testgen::oracle_reduced_plans(&g, player);
                assert_eq!(fast, oracle, "seed {seed} player {player}");
                for p in &fast {
                    validate_plan(&g, p).unwrap();
                }
            }
        }
    }

    #[test]
    fn invalid_plans_rejected() {
        let g = build_game(
            "\
efgdesc v1
players A
root r
node r player=A infostate=s0 actions=L,R
node l player=A infostate=sL actions=a,b
node rr player=A infostate=sR actions=a,b
node z0 terminal payoffs=0
node z1 terminal payoffs=0
node z2 terminal payoffs=0
node z3 terminal payoffs=0
edge r L l
edge r R rr
edge l a z0
edge l b z1
edge rr a z2
edge rr b z3
",
        )
        .unwrap();
        // Missing choice at the reached successor state.
        let p = ReducedPlan { owner: 0, choices: [(0, 0)].into() };
        assert!(matches!(validate_plan(&g, &p), Err(StrategyError::PlanDomain { .. })));
        // Choice at a state excluded by the root choice (L reaches sL=1, not sR=2).
        let p = ReducedPlan { owner: 0, choices: [(0, 0), (1, 0), (2, 0)].into() };
        assert!(matches!(validate_plan(&g, &p), Err(StrategyError::PlanDomain { .. })));
    }

    #[test]
    fn complete_plan_fills_with_first_action() {
        let g = build_game(
            "\
efgdesc v1
players A
root r
node r player=A infostate=s0 actions=L,R
node l player=A infostate=sL actions=a,b
node rr player=A infostate=sR actions=a,b
node z0 terminal payoffs=0
node z1 terminal payoffs=0
node z2 terminal payoffs=0
node z3 terminal payoffs=0
edge r L l
edge r R rr
edge l a z0
edge l b z1
edge rr a z2
edge rr b z3
",
        )
        .unwrap();
        let partial: BTreeMap<StateId, ActionIdx> = [(0, 1)].into();
        let plan = complete_plan(&g, 0, &partial);
        assert_eq!(plan.choices, [(0, 1), (2, 0)].into());
        validate_plan(&g, &plan).unwrap();
    }
}
