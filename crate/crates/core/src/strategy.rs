//! Strategy representations.
//!
//! Four interchangeable forms are used throughout the crate:
//!
//! * [`BehavioralStrategy`]: one probability vector per information state of
//!   the owner.
//! * [`ReducedPlan`]: a deterministic choice at every state the owner can
//!   reach given their own earlier choices, and nothing else.
//! * [`NormalFormStrategy`]: a distribution over the owner's reduced plans.
//! * [`CoordinatedStrategy`]: a joint distribution over tuples of reduced
//!   plans, one per team member. This is strictly richer than a profile of
//!   independent per-member strategies: mass can sit on correlated tuples.
//!
//! Strategies serialize to JSON documents keyed by state, action, and plan
//! names so files stay meaningful independent of internal integer ids.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{ActionIdx, Game, PlayerId, StateId};

/// Distributions must sum to one within this slack.
pub const DIST_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("player {0} out of range")]
    BadPlayer(PlayerId),
    #[error("{what}: probabilities sum to {sum}, expected 1")]
    NotNormalized { what: String, sum: f64 },
    #[error("{what}: negative probability {p}")]
    Negative { what: String, p: f64 },
    #[error("behavioral strategy covers {got} states, owner has {want}")]
    WrongDomain { got: usize, want: usize },
    #[error("state {state}: expected {want} action probabilities, got {got}")]
    WrongArity { state: StateId, want: usize, got: usize },
    #[error("state {state} does not belong to the owner")]
    ForeignState { state: StateId },
    #[error("plan chooses action {action} at state {state}, which has {n} actions")]
    BadAction { state: StateId, action: ActionIdx, n: usize },
    #[error("plan domain mismatch at state {state}: {reason}")]
    PlanDomain { state: StateId, reason: String },
    #[error("team tuple has {got} plans, team has {want} members")]
    TupleLen { got: usize, want: usize },
    #[error("tuple plan {pos} owned by player {got}, expected {want}")]
    TupleOwner { pos: usize, got: PlayerId, want: PlayerId },
    #[error("empty support")]
    EmptySupport,
    #[error("unknown player `{0}`")]
    UnknownPlayer(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("state `{state}` has no action `{action}`")]
    UnknownAction { state: String, action: String },
    #[error("malformed plan string `{0}`")]
    MalformedPlan(String),
    #[error("json: {0}")]
    Json(String),
}

/// A per-state randomized strategy for one player.
#[derive(Debug, Clone, PartialEq)]
pub struct BehavioralStrategy {
    pub owner: PlayerId,
    /// State id -> probability per action, aligned with the state's action list.
    pub dist: BTreeMap<StateId, Vec<f64>>,
}

impl BehavioralStrategy {
    /// Uniform play at every state of `owner`.
    pub fn uniform(game: &Game, owner: PlayerId) -> Self {
        let dist = game
            .states_of(owner)
            .iter()
            .map(|&s| {
                let n = game.state(s).n_actions();
                (s, vec![1.0 / n as f64; n])
            })
            .collect();
        BehavioralStrategy { owner, dist }
    }

    /// Deterministic strategy choosing `choices[s]` at each state (every
    /// state of the owner must be covered).
    pub fn pure(game: &Game, owner: PlayerId, choices: &BTreeMap<StateId, ActionIdx>) -> Self {
        let dist = game
            .states_of(owner)
            .iter()
            .map(|&s| {
                let n = game.state(s).n_actions();
                let mut v = vec![0.0; n];
                v[choices[&s]] = 1.0;
                (s, v)
            })
            .collect();
        BehavioralStrategy { owner, dist }
    }

    pub fn prob(&self, state: StateId, action: ActionIdx) -> f64 {
        self.dist[&state][action]
    }

    pub fn validate(&self, game: &Game) -> Result<(), StrategyError> {
        if self.owner >= game.n_players() {
            return Err(StrategyError::BadPlayer(self.owner));
        }
        let own = game.states_of(self.owner);
        if self.dist.len() != own.len() {
            return Err(StrategyError::WrongDomain { got: self.dist.len(), want: own.len() });
        }
        for (&s, probs) in &self.dist {
            if game.state(s).owner != self.owner {
                return Err(StrategyError::ForeignState { state: s });
            }
            let n = game.state(s).n_actions();
            if probs.len() != n {
                return Err(StrategyError::WrongArity { state: s, want: n, got: probs.len() });
            }
            validate_dist(&format!("state {s}"), probs.iter().copied())?;
        }
        Ok(())
    }
}

fn validate_dist(what: &str, probs: impl Iterator<Item = f64>) -> Result<(), StrategyError> {
    let mut sum = 0.0;
    for p in probs {
        if p < -DIST_TOL {
            return Err(StrategyError::Negative { what: what.to_string(), p });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(StrategyError::NotNormalized { what: what.to_string(), sum });
    }
    Ok(())
}

/// A deterministic choice at exactly the states the owner can reach given
/// their own earlier choices. States excluded by an earlier own choice carry
/// no entry, which is what makes the plan "reduced".
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ReducedPlan {
    pub owner: PlayerId,
    pub choices: BTreeMap<StateId, ActionIdx>,
}

impl ReducedPlan {
    pub fn choice(&self, state: StateId) -> Option<ActionIdx> {
        self.choices.get(&state).copied()
    }

    /// Canonical text form: `stateName=action;...` in state-id order, `-` for
    /// the empty plan.
    pub fn to_plan_string(&self, game: &Game) -> String {
        if self.choices.is_empty() {
            return "-".to_string();
        }
        self.choices
            .iter()
            .map(|(&s, &a)| format!("{}={}", game.state(s).name, game.state(s).actions[a]))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn from_plan_string(game: &Game, owner: PlayerId, s: &str) -> Result<Self, StrategyError> {
        let mut choices = BTreeMap::new();
        if s != "-" {
            for part in s.split(';') {
                let (state, action) = part
                    .split_once('=')
                    .ok_or_else(|| StrategyError::MalformedPlan(s.to_string()))?;
                let sid = game
                    .state_index(state)
                    .ok_or_else(|| StrategyError::UnknownState(state.to_string()))?;
                let aidx = game
                    .state(sid)
                    .actions
                    .iter()
                    .position(|a| a == action)
                    .ok_or_else(|| StrategyError::UnknownAction {
                        state: state.to_string(),
                        action: action.to_string(),
                    })?;
                choices.insert(sid, aidx);
            }
        }
        Ok(ReducedPlan { owner, choices })
    }
}

/// A distribution over reduced plans of one player. The support is kept
/// sorted and duplicate plans merged, so iteration order is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalFormStrategy {
    pub owner: PlayerId,
    support: Vec<(ReducedPlan, f64)>,
}

impl NormalFormStrategy {
    pub fn new(owner: PlayerId, entries: Vec<(ReducedPlan, f64)>) -> Self {
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut support: Vec<(ReducedPlan, f64)> = Vec::with_capacity(entries.len());
        for (plan, p) in entries {
            match support.last_mut() {
                Some((last, q)) if *last == plan => *q += p,
                _ => support.push((plan, p)),
            }
        }
        support.retain(|(_, p)| *p != 0.0);
        NormalFormStrategy { owner, support }
    }

    /// Point mass on a single plan.
    pub fn pure(plan: ReducedPlan) -> Self {
        NormalFormStrategy { owner: plan.owner, support: vec![(plan, 1.0)] }
    }

    pub fn support(&self) -> &[(ReducedPlan, f64)] {
        &self.support
    }

    pub fn prob_of(&self, plan: &ReducedPlan) -> f64 {
        match self.support.binary_search_by(|(p, _)| p.cmp(plan)) {
            Ok(i) => self.support[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn validate(&self, game: &Game) -> Result<(), StrategyError> {
        if self.owner >= game.n_players() {
            return Err(StrategyError::BadPlayer(self.owner));
        }
        if self.support.is_empty() {
            return Err(StrategyError::EmptySupport);
        }
        let reach = crate::plans::Reach::build(game, self.owner);
        for (plan, _) in &self.support {
            if plan.owner != self.owner {
                return Err(StrategyError::BadPlayer(plan.owner));
            }
            crate::plans::validate_plan_reach(game, &reach, plan)?;
        }
        validate_dist("normal-form strategy", self.support.iter().map(|(_, p)| *p))
    }
}

/// A joint distribution over tuples of member plans, aligned with `team`
/// order. Correlation between members is exactly what this type can express
/// and independent profiles cannot.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatedStrategy {
    pub team: Vec<PlayerId>,
    support: Vec<(Vec<ReducedPlan>, f64)>,
}

impl CoordinatedStrategy {
    pub fn new(team: Vec<PlayerId>, entries: Vec<(Vec<ReducedPlan>, f64)>) -> Self {
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut support: Vec<(Vec<ReducedPlan>, f64)> = Vec::with_capacity(entries.len());
        for (tuple, p) in entries {
            match support.last_mut() {
                Some((last, q)) if *last == tuple => *q += p,
                _ => support.push((tuple, p)),
            }
        }
        support.retain(|(_, p)| *p != 0.0);
        CoordinatedStrategy { team, support }
    }

    /// Product distribution of independent per-member strategies.
    pub fn from_independent(members: &[NormalFormStrategy]) -> Self {
        let team: Vec<PlayerId> = members.iter().map(|m| m.owner).collect();
        let mut entries: Vec<(Vec<ReducedPlan>, f64)> = vec![(Vec::new(), 1.0)];
        for m in members {
            let mut next = Vec::with_capacity(entries.len() * m.support.len());
            for (tuple, p) in &entries {
                for (plan, q) in &m.support {
                    let mut t = tuple.clone();
                    t.push(plan.clone());
                    next.push((t, p * q));
                }
            }
            entries = next;
        }
        CoordinatedStrategy::new(team, entries)
    }

    pub fn support(&self) -> &[(Vec<ReducedPlan>, f64)] {
        &self.support
    }

    pub fn prob_of(&self, tuple: &[ReducedPlan]) -> f64 {
        match self.support.binary_search_by(|(t, _)| t.as_slice().cmp(tuple)) {
            Ok(i) => self.support[i].1,
            Err(_) => 0.0,
        }
    }

    /// Marginal normal-form strategy of one member.
    pub fn marginal(&self, member: usize) -> NormalFormStrategy {
        let entries = self
            .support
            .iter()
            .map(|(tuple, p)| (tuple[member].clone(), *p))
            .collect();
        NormalFormStrategy::new(self.team[member], entries)
    }

    pub fn validate(&self, game: &Game) -> Result<(), StrategyError> {
        if self.support.is_empty() {
            return Err(StrategyError::EmptySupport);
        }
        for &m in &self.team {
            if m >= game.n_players() {
                return Err(StrategyError::BadPlayer(m));
            }
        }
        // One reachability index per member, shared across the whole support.
        let reaches: Vec<crate::plans::Reach> =
            self.team.iter().map(|&m| crate::plans::Reach::build(game, m)).collect();
        for (tuple, _) in &self.support {
            if tuple.len() != self.team.len() {
                return Err(StrategyError::TupleLen { got: tuple.len(), want: self.team.len() });
            }
            for (pos, plan) in tuple.iter().enumerate() {
                if plan.owner != self.team[pos] {
                    return Err(StrategyError::TupleOwner { pos, got: plan.owner, want: self.team[pos] });
                }
                crate::plans::validate_plan_reach(game, &reaches[pos], plan)?;
            }
        }
        validate_dist("coordinated strategy", self.support.iter().map(|(_, p)| *p))
    }
}

/// Borrowed view over any strategy representation.
#[derive(Debug, Clone, Copy)]
pub enum StrategyRef<'a> {
    Behavioral(&'a BehavioralStrategy),
    NormalForm(&'a NormalFormStrategy),
    Coordinated(&'a CoordinatedStrategy),
}

impl<'a> StrategyRef<'a> {
    /// Players whose moves this strategy determines, ascending.
    pub fn owners(&self) -> Vec<PlayerId> {
        match self {
            StrategyRef::Behavioral(b) => vec![b.owner],
            StrategyRef::NormalForm(n) => vec![n.owner],
            StrategyRef::Coordinated(c) => {
                let mut t = c.team.clone();
                t.sort_unstable();
                t
            }
        }
    }

    pub fn validate(&self, game: &Game) -> Result<(), StrategyError> {
        match self {
            StrategyRef::Behavioral(b) => b.validate(game),
            StrategyRef::NormalForm(n) => n.validate(game),
            StrategyRef::Coordinated(c) => c.validate(game),
        }
    }
}

/// On-disk JSON form. Everything is keyed by names, values are probabilities.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StrategyDoc {
    Behavioral {
        owner: String,
        states: BTreeMap<String, BTreeMap<String, f64>>,
    },
    NormalForm {
        owner: String,
        plans: BTreeMap<String, f64>,
    },
    Coordinated {
        team: Vec<String>,
        plans: BTreeMap<String, f64>,
    },
}

/// Owned counterpart of [`StrategyRef`] for deserialized strategies.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Behavioral(BehavioralStrategy),
    NormalForm(NormalFormStrategy),
    Coordinated(CoordinatedStrategy),
}

impl Strategy {
    pub fn as_ref(&self) -> StrategyRef<'_> {
        match self {
            Strategy::Behavioral(b) => StrategyRef::Behavioral(b),
            Strategy::NormalForm(n) => StrategyRef::NormalForm(n),
            Strategy::Coordinated(c) => StrategyRef::Coordinated(c),
        }
    }
}

/// Joint tuple key used in coordinated strategy documents.
fn tuple_string(game: &Game, tuple: &[ReducedPlan]) -> String {
    tuple
        .iter()
        .map(|p| p.to_plan_string(game))
        .collect::<Vec<_>>()
        .join(" | ")
}

pub fn strategy_to_json(game: &Game, strategy: StrategyRef<'_>) -> String {
    let doc = match strategy {
        StrategyRef::Behavioral(b) => StrategyDoc::Behavioral {
            owner: game.players()[b.owner].clone(),
            states: b
                .dist
                .iter()
                .map(|(&s, probs)| {
                    let st = game.state(s);
                    let row = st
                        .actions
                        .iter()
                        .zip(probs)
                        .map(|(a, p)| (a.clone(), *p))
                        .collect();
                    (st.name.clone(), row)
                })
                .collect(),
        },
        StrategyRef::NormalForm(n) => StrategyDoc::NormalForm {
            owner: game.players()[n.owner].clone(),
            plans: n
                .support()
                .iter()
                .map(|(plan, p)| (plan.to_plan_string(game), *p))
                .collect(),
        },
        StrategyRef::Coordinated(c) => StrategyDoc::Coordinated {
            team: c.team.iter().map(|&p| game.players()[p].clone()).collect(),
            plans: c
                .support()
                .iter()
                .map(|(tuple, p)| (tuple_string(game, tuple), *p))
                .collect(),
        },
    };
    serde_json::to_string_pretty(&doc).expect("strategy serialization cannot fail")
}

pub fn strategy_from_json(game: &Game, text: &str) -> Result<Strategy, StrategyError> {
    let doc: StrategyDoc = serde_json::from_str(text).map_err(|e| StrategyError::Json(e.to_string()))?;
    let strategy = match doc {
        StrategyDoc::Behavioral { owner, states } => {
            let owner = game
                .player_index(&owner)
                .ok_or(StrategyError::UnknownPlayer(owner))?;
            let mut dist = BTreeMap::new();
            for (state, row) in states {
                let sid = game
                    .state_index(&state)
                    .ok_or_else(|| StrategyError::UnknownState(state.clone()))?;
                let st = game.state(sid);
                let mut probs = vec![0.0; st.n_actions()];
                for (action, p) in row {
                    let aidx = st
                        .actions
                        .iter()
                        .position(|a| *a == action)
                        .ok_or_else(|| StrategyError::UnknownAction { state: state.clone(), action })?;
                    probs[aidx] = p;
                }
                dist.insert(sid, probs);
            }
            let b = BehavioralStrategy { owner, dist };
            b.validate(game)?;
            Strategy::Behavioral(b)
        }
        StrategyDoc::NormalForm { owner, plans } => {
            let owner = game
                .player_index(&owner)
                .ok_or(StrategyError::UnknownPlayer(owner))?;
            let entries = plans
                .into_iter()
                .map(|(s, p)| Ok((ReducedPlan::from_plan_string(game, owner, &s)?, p)))
                .collect::<Result<Vec<_>, StrategyError>>()?;
            let n = NormalFormStrategy::new(owner, entries);
            n.validate(game)?;
            Strategy::NormalForm(n)
        }
        StrategyDoc::Coordinated { team, plans } => {
            let team = team
                .into_iter()
                .map(|t| game.player_index(&t).ok_or(StrategyError::UnknownPlayer(t)))
                .collect::<Result<Vec<_>, _>>()?;
            let mut entries = Vec::new();
            for (key, p) in plans {
                let parts: Vec<&str> = key.split(" | ").collect();
                if parts.len() != team.len() {
                    return Err(StrategyError::TupleLen { got: parts.len(), want: team.len() });
                }
                let tuple = parts
                    .iter()
                    .zip(&team)
                    .map(|(s, &owner)| ReducedPlan::from_plan_string(game, owner, s))
                    .collect::<Result<Vec<_>, _>>()?;
                entries.push((tuple, p));
            }
            let c = CoordinatedStrategy::new(team, entries);
            c.validate(game)?;
            Strategy::Coordinated(c)
        }
    };
    Ok(strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::build_game;

    fn simple_game() -> Game {
        build_game(
            "\
efgdesc v1
players A,B
root r
node r player=A infostate=A.s actions=L,R
node m player=B infostate=B.s actions=x,y
node n player=B infostate=B.s actions=x,y
node z0 terminal payoffs=1,-1
node z1 terminal payoffs=0,0
node z2 terminal payoffs=0,0
node z3 terminal payoffs=1,-1
edge r L m
edge r R n
edge m x z0
edge m y z1
edge n x z2
edge n y z3
",
        )
        .unwrap()
    }

    #[test]
    fn uniform_is_valid() {
        let g = simple_game();
        for p in 0..2 {
            BehavioralStrategy::uniform(&g, p).validate(&g).unwrap();
        }
    }

    #[test]
    fn bad_arity_and_sum_detected() {
        let g = simple_game();
        let mut b = BehavioralStrategy::uniform(&g, 0);
        b.dist.insert(0, vec![0.7, 0.7]);
        assert!(matches!(b.validate(&g), Err(StrategyError::NotNormalized { .. })));
        let mut b = BehavioralStrategy::uniform(&g, 0);
        b.dist.insert(0, vec![1.0]);
        assert!(matches!(b.validate(&g), Err(StrategyError::WrongArity { .. })));
    }

    #[test]
    fn normal_form_merges_duplicates() {
        let g = simple_game();
        let plan = |a: ActionIdx| ReducedPlan { owner: 0, choices: [(0, a)].into() };
        let nf = NormalFormStrategy::new(0, vec![(plan(0), 0.25), (plan(1), 0.5), (plan(0), 0.25)]);
        assert_eq!(nf.support().len(), 2);
        assert_eq!(nf.prob_of(&plan(0)), 0.5);
        nf.validate(&g).unwrap();
    }

    #[test]
    fn independent_product_has_product_mass() {
        let g = simple_game();
        let a = NormalFormStrategy::new(
            0,
            vec![
                (ReducedPlan { owner: 0, choices: [(0, 0)].into() }, 0.5),
                (ReducedPlan { owner: 0, choices: [(0, 1)].into() }, 0.5),
            ],
        );
        let b = NormalFormStrategy::new(
            1,
            vec![
                (ReducedPlan { owner: 1, choices: [(1, 0)].into() }, 0.25),
                (ReducedPlan { owner: 1, choices: [(1, 1)].into() }, 0.75),
            ],
        );
        let c = CoordinatedStrategy::from_independent(&[a, b]);
        assert_eq!(c.support().len(), 4);
        let tuple = vec![
            ReducedPlan { owner: 0, choices: [(0, 1)].into() },
            ReducedPlan { owner: 1, choices: [(1, 1)].into() },
        ];
        assert!((c.prob_of(&tuple) - 0.375).abs() < 1e-15);
        c.validate(&g).unwrap();
    }

    #[test]
    fn plan_string_roundtrip() {
        let g = simple_game();
        let plan = ReducedPlan { owner: 1, choices: [(1, 1)].into() };
        let s = plan.to_plan_string(&g);
        assert_eq!(s, "B.s=y");
        let back = ReducedPlan::from_plan_string(&g, 1, &s).unwrap();
        assert_eq!(plan, back);
        let empty = ReducedPlan { owner: 0, choices: BTreeMap::new() };
        assert_eq!(empty.to_plan_string(&g), "-");
        assert_eq!(ReducedPlan::from_plan_string(&g, 0, "-").unwrap(), empty);
    }

    #[test]
    fn json_roundtrip_all_kinds() {
        let g = simple_game();
        let b = BehavioralStrategy::uniform(&g, 0);
        let json = strategy_to_json(&g, StrategyRef::Behavioral(&b));
        match strategy_from_json(&g, &json).unwrap() {
            Strategy::Behavioral(back) => assert_eq!(back, b),
            other => panic!("wrong kind: {other:?}"),
        }

        let nf = NormalFormStrategy::new(
            1,
            vec![
                (ReducedPlan { owner: 1, choices: [(1, 0)].into() }, 0.25),
                (ReducedPlan { owner: 1, choices: [(1, 1)].into() }, 0.75),
            ],
        );
        let json = strategy_to_json(&g, StrategyRef::NormalForm(&nf));
        match strategy_from_json(&g, &json).unwrap() {
            Strategy::NormalForm(back) => assert_eq!(back, nf),
            other => panic!("wrong kind: {other:?}"),
        }

        let c = CoordinatedStrategy::new(
            vec![0, 1],
            vec![
                (
                    vec![
                        ReducedPlan { owner: 0, choices: [(0, 0)].into() },
                        ReducedPlan { owner: 1, choices: [(1, 0)].into() },
                    ],
                    0.5,
                ),
                (
                    vec![
                        ReducedPlan { owner: 0, choices: [(0, 1)].into() },
                        ReducedPlan { owner: 1, choices: [(1, 1)].into() },
                    ],
                    0.5,
                ),
            ],
        );
        let json = strategy_to_json(&g, StrategyRef::Coordinated(&c));
        match strategy_from_json(&g, &json).unwrap() {
            Strategy::Coordinated(back) => assert_eq!(back, c),
            other => panic!("wrong kind: {other:?}"),
        }
    }
}
