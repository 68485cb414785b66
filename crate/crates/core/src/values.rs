//! Expected values and realization (leaf-reach) computations.
//!
//! Every strategy form induces, for its set of owners, a vector of reach
//! contributions over the leaves: the probability that *those players'*
//! choices are consistent with the path to each leaf. Chance reach is kept
//! separate and multiplied in only when taking expectations, so reach
//! vectors of different players compose by pointwise product.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::game::{Game, Node, PlayerId};
use crate::plans::{enumerate_reduced_plans, PlanError};
use crate::strategy::{
    BehavioralStrategy, NormalFormStrategy, ReducedPlan, StrategyRef,
};

/// Tolerance for realization-equivalence comparisons.
pub const REALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ValueError {
    #[error("player {0} is covered by more than one strategy")]
    PlayerCoveredTwice(PlayerId),
    #[error("player {0} is not covered by any strategy")]
    PlayerNotCovered(PlayerId),
    #[error("strategies own different player sets {0:?} vs {1:?}")]
    OwnerSetsDiffer(Vec<PlayerId>, Vec<PlayerId>),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Add `mass` to every leaf the plan set reaches: walk the tree, follow the
/// recorded choice at states owned by `owners`, branch everywhere else.
/// A state that is owner-owned but unassigned contributes nothing below it
/// (a valid reduced plan assigns every own-reachable state, so this only
/// happens for foreign plans and we deliberately drop that mass).
fn add_plan_tuple_reach(
    game: &Game,
    owners: &BTreeSet<PlayerId>,
    choice: impl Fn(PlayerId, usize) -> Option<usize>,
    mass: f64,
    out: &mut [f64],
) {
    let mut stack = vec![game.root()];
    while let Some(n) = stack.pop() {
        match game.node(n) {
            Node::Terminal { .. } => out[game.leaf_index(n).unwrap()] += mass,
            Node::Chance { children, .. } => stack.extend(children.iter().copied()),
            Node::Decision { state, children } => {
                let owner = game.states()[*state].owner;
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
}

/// Leaf-reach vector of a strategy: entry per leaf (in leaf order), the
/// probability that the strategy's owners play consistently with that leaf.
/// Chance probabilities are not included.
pub fn leaf_reach(game: &Game, strategy: StrategyRef<'_>) -> Vec<f64> {
    let mut out = vec![0.0; game.n_leaves()];
    match strategy {
        StrategyRef::Behavioral(b) => {
            for (i, path) in game.leaf_paths().iter().enumerate() {
                let mut r = 1.0;
                for &(p, s, a) in &path.steps {
                    if p == b.owner {
                        r *= b.prob(s, a);
                    }
                }
                out[i] = r;
            }
        }
        StrategyRef::NormalForm(nf) => {
            let owners = BTreeSet::from([nf.owner]);
            for (plan, prob) in nf.support() {
                add_plan_tuple_reach(
                    game,
                    &owners,
                    |_, s| plan.choice(s),
                    *prob,
                    &mut out,
                );
            }
        }
        StrategyRef::Coordinated(c) => {
            let owners: BTreeSet<PlayerId> = c.team.iter().copied().collect();
            for (tuple, prob) in c.support() {
                add_plan_tuple_reach(
                    game,
                    &owners,
                    |p, s| {
                        let idx = c.team.iter().position(|&m| m == p).unwrap();
                        tuple[idx].choice(s)
                    },
                    *prob,
                    &mut out,
                );
            }
        }
    }
    out
}

/// Public alias with the leaf ids attached, for reporting.
pub fn reach_probabilities(game: &Game, strategy: StrategyRef<'_>) -> Vec<(usize, f64)> {
    let reach = leaf_reach(game, strategy);
    game.leaves().iter().copied().zip(reach).collect()
}

/// A complete assignment of strategies to players. Each player must be
/// owned by exactly one entry; entries may be any mix of forms.
pub fn expected_value(game: &Game, profile: &[StrategyRef<'_>]) -> Result<Vec<f64>, ValueError> {
    let mut covered = vec![false; game.n_players()];
    for s in profile {
        for p in s.owners() {
            if covered[p] {
                return Err(ValueError::PlayerCoveredTwice(p));
            }
            covered[p] = true;
        }
    }
    if let Some(p) = covered.iter().position(|&c| !c) {
        return Err(ValueError::PlayerNotCovered(p));
    }

    let reaches: Vec<Vec<f64>> = profile.iter().map(|s| leaf_reach(game, *s)).collect();
    let mut ev = vec![0.0; game.n_players()];
    for (i, &z) in game.leaves().iter().enumerate() {
        let mut r = game.leaf_paths()[i].chance_reach;
        for reach in &reaches {
            r *= reach[i];
        }
        if r == 0.0 {
            continue;
        }
        for (p, acc) in ev.iter_mut().enumerate() {
            *acc += r * game.payoff(z, p);
        }
    }
    Ok(ev)
}

/// Two strategies are realization-equivalent when they own the same players
/// and induce the same leaf-reach vector up to `tol` (sup-norm).
pub fn realization_equivalent(
    game: &Game,
    a: StrategyRef<'_>,
    b: StrategyRef<'_>,
    tol: f64,
) -> Result<bool, ValueError> {
    let (oa, ob) = (a.owners(), b.owners());
    if oa != ob {
        return Err(ValueError::OwnerSetsDiffer(oa, ob));
    }
    let (ra, rb) = (leaf_reach(game, a), leaf_reach(game, b));
    Ok(ra.iter().zip(&rb).all(|(x, y)| (x - y).abs() <= tol))
}

/// Expand a behavioral strategy into the mixture over reduced plans whose
/// weights are the products of the behavioral probabilities of the plan's
/// choices. Zero-weight plans are dropped. The result is realization-
/// equivalent to the input whenever the owner has perfect recall (and can
/// differ otherwise, which is exactly why coordinated forms are needed).
pub fn behavioral_to_normal_form(
    game: &Game,
    b: &BehavioralStrategy,
) -> Result<NormalFormStrategy, ValueError> {
    let plans = enumerate_reduced_plans(game, b.owner)?;
    let entries: Vec<(ReducedPlan, f64)> = plans
        .into_iter()
        .map(|plan| {
            let w: f64 = plan.choices.iter().map(|(&s, &a)| b.prob(s, a)).product();
            (plan, w)
        })
        .collect();
    Ok(NormalFormStrategy::new(b.owner, entries))
}
