//! Team merging and recall-restoring refinements.
//!
//! A team that cannot communicate behaves like a single *meta-player* whose
//! information partition is the union of the members' partitions — and that
//! meta-player usually has imperfect recall (it "forgets" one member's moves
//! while acting as another). When every memory loss traces back to the
//! meta-player's own actions (A-loss recall), the partition can be split by
//! *inflation* until the meta-player has perfect recall, without changing
//! the set of reachable leaf distributions any mixture of reduced plans can
//! induce. The resulting two-player game is solvable with standard zero-sum
//! machinery, and solutions project back onto the original team game.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::game::{ActionIdx, Game, InfoState, Node, NodeId, PlayerId, StateId};

/// Maximum number of violating node pairs kept per report list.
pub const WITNESS_CAP: usize = 16;

#[derive(Debug, Error)]
pub enum RefinementError {
    #[error("team must have at least one member")]
    EmptyTeam,
    #[error("player {0} appears twice in the team")]
    DuplicateMember(PlayerId),
    #[error("player id {0} out of range")]
    BadPlayer(PlayerId),
    #[error("team members {a} and {b} receive different payoffs at leaf node {leaf}: {pa} vs {pb}")]
    UnsharedPayoff { leaf: NodeId, a: PlayerId, b: PlayerId, pa: f64, pb: f64 },
}

/// Recall diagnosis for one player.
///
/// `perfect_recall` holds when all nodes of each information state share the
/// same own (state, action) history. `a_loss_recall` holds when every
/// violating pair already differs in an *own action* at some state both
/// histories visit — the memory loss is of the player's own moves, not of
/// someone else's. Witness lists carry the offending node pairs, capped at
/// [`WITNESS_CAP`]; they are empty exactly when the matching flag is true.
#[derive(Debug, Clone, Serialize)]
pub struct RecallReport {
    pub player: PlayerId,
    pub perfect_recall: bool,
    pub a_loss_recall: bool,
    pub perfect_witnesses: Vec<(NodeId, NodeId)>,
    pub a_loss_witnesses: Vec<(NodeId, NodeId)>,
}

/// A recall-restoring split of one player's information partition.
///
/// `refined` has the same nodes, tree structure, and payoffs as `original`;
/// only `player`'s states are subdivided. `state_map` sends every refined
/// state id to the original state it came from (identity on other players'
/// states, whose ids may still shift because ids stay dense and ordered by
/// first appearance).
#[derive(Debug, Clone)]
pub struct RefinementMap {
    pub original: Game,
    pub refined: Game,
    pub player: PlayerId,
    pub state_map: BTreeMap<StateId, StateId>,
    /// True when the split fell back to full within-team information
    /// sharing because the merged player lacked A-loss recall. That split
    /// restores perfect recall but is not guaranteed to preserve the set of
    /// achievable coordinated outcomes.
    pub via_information_sharing: bool,
}

impl RefinementMap {
    /// Refined state ids belonging to one original state, ascending.
    pub fn refined_of(&self, original: StateId) -> Vec<StateId> {
        self.state_map
            .iter()
            .filter(|&(_, &o)| o == original)
            .map(|(&r, _)| r)
            .collect()
    }

    /// Number of extra states the refinement introduced.
    pub fn n_splits(&self) -> usize {
        self.refined.n_states() - self.original.n_states()
    }

    /// Original states that were subdivided, with their refined copy count.
    pub fn split_counts(&self) -> BTreeMap<StateId, usize> {
        let mut counts: BTreeMap<StateId, usize> = BTreeMap::new();
        for &orig in self.state_map.values() {
            *counts.entry(orig).or_insert(0) += 1;
        }
        counts.retain(|_, &mut c| c > 1);
        counts
    }
}

/// Collapse `team` into a single meta-player placed at the smallest member
/// index and named by joining the member names with `+`. Node and state ids
/// are untouched; state ownership and payoff vectors are remapped. Every
/// leaf must pay all members the same amount — that shared value becomes the
/// meta-player's payoff. The returned game declares the meta-player as its
/// (one-member) team.
pub fn merge_team(game: &Game, team: &[PlayerId]) -> Result<(Game, PlayerId), RefinementError> {
    if team.is_empty() {
        return Err(RefinementError::EmptyTeam);
    }
    let mut members = BTreeSet::new();
    for &m in team {
        if m >= game.n_players() {
            return Err(RefinementError::BadPlayer(m));
        }
        if !members.insert(m) {
            return Err(RefinementError::DuplicateMember(m));
        }
    }
    let first = *members.iter().next().unwrap();
    for &z in game.leaves() {
        let shared = game.payoff(z, first);
        for &m in members.iter().skip(1) {
            if game.payoff(z, m) != shared {
                return Err(RefinementError::UnsharedPayoff {
                    leaf: z,
                    a: first,
                    b: m,
                    pa: shared,
                    pb: game.payoff(z, m),
                });
            }
        }
    }

    let meta_name = members
        .iter()
        .map(|&m| game.players()[m].as_str())
        .collect::<Vec<_>>()
        .join("+");
    let mut new_players: Vec<String> = Vec::new();
    let mut new_idx = vec![usize::MAX; game.n_players()];
    let mut meta = usize::MAX;
    for p in 0..game.n_players() {
        if p == first {
            meta = new_players.len();
            new_players.push(meta_name.clone());
        } else if !members.contains(&p) {
            new_idx[p] = new_players.len();
            new_players.push(game.players()[p].clone());
        }
    }
    for &m in &members {
        new_idx[m] = meta;
    }

    let remapped = game.with_payoffs(new_players.clone(), |old| {
        let mut v = vec![0.0; new_players.len()];
        for (p, &x) in old.iter().enumerate() {
            v[new_idx[p]] = x;
        }
        v
    });
    let states: Vec<InfoState> = game
        .states()
        .iter()
        .map(|s| InfoState {
            owner: new_idx[s.owner],
            name: s.name.clone(),
            actions: s.actions.clone(),
            nodes: s.nodes.clone(),
        })
        .collect();
    let mut merged = remapped.with_states(new_players, states);
    merged.set_team(Some(vec![meta]));
    Ok((merged, meta))
}

/// Per-node own-history action sets keyed by the class the earlier own
/// node currently belongs to. Used for the "differs in an own action at a
/// shared earlier state" test.
fn action_sets(
    game: &Game,
    player: PlayerId,
    class_of: &[usize],
    v: NodeId,
) -> BTreeMap<usize, BTreeSet<ActionIdx>> {
    let mut sets: BTreeMap<usize, BTreeSet<ActionIdx>> = BTreeMap::new();
    let mut cur = v;
    while let Some((parent, action)) = game.parent(cur) {
        if let Node::Decision { state, .. } = game.node(parent) {
            if game.state(*state).owner == player {
                sets.entry(class_of[parent]).or_default().insert(action);
            }
        }
        cur = parent;
    }
    sets
}

/// Two histories expose an own-action difference at a shared class iff some
/// class appears in both with action sets that are not the same singleton.
fn own_action_difference(
    a: &BTreeMap<usize, BTreeSet<ActionIdx>>,
    b: &BTreeMap<usize, BTreeSet<ActionIdx>>,
    exclude: Option<usize>,
) -> bool {
    for (c, sa) in a {
        if Some(*c) == exclude {
            continue;
        }
        if let Some(sb) = b.get(c) {
            if sa.len() > 1 || sb.len() > 1 || sa != sb {
                return true;
            }
        }
    }
    false
}

/// Diagnose the recall structure of `player`. Histories are compared as
/// ordered (state, action) sequences for the perfect-recall test; the
/// A-loss trace-back only needs the set view.
pub fn recall_report(game: &Game, player: PlayerId) -> RecallReport {
    let class_of = identity_classes(game, player);
    let mut perfect_witnesses = Vec::new();
    let mut a_loss_witnesses = Vec::new();
    'states: for &sid in game.states_of(player) {
        let nodes = &game.state(sid).nodes;
        if nodes.len() < 2 {
            continue;
        }
        let hists: Vec<Vec<(StateId, ActionIdx)>> =
            nodes.iter().map(|&n| game.own_history(n, player)).collect();
        let sets: Vec<BTreeMap<usize, BTreeSet<ActionIdx>>> =
            nodes.iter().map(|&n| action_sets(game, player, &class_of, n)).collect();
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                if hists[i] == hists[j] {
                    continue;
                }
                if perfect_witnesses.len() < WITNESS_CAP {
                    perfect_witnesses.push((nodes[i], nodes[j]));
                }
                if !own_action_difference(&sets[i], &sets[j], None)
                    && a_loss_witnesses.len() < WITNESS_CAP
                {
                    a_loss_witnesses.push((nodes[i], nodes[j]));
                }
                if perfect_witnesses.len() == WITNESS_CAP
                    && a_loss_witnesses.len() == WITNESS_CAP
                {
                    break 'states;
                }
            }
        }
    }
    RecallReport {
        player,
        perfect_recall: perfect_witnesses.is_empty(),
        a_loss_recall: a_loss_witnesses.is_empty(),
        perfect_witnesses,
        a_loss_witnesses,
    }
}

/// node id -> index of its state, for `player`'s nodes only.
fn identity_classes(game: &Game, player: PlayerId) -> Vec<usize> {
    let mut class_of = vec![usize::MAX; game.n_nodes()];
    for (idx, &sid) in game.states_of(player).iter().enumerate() {
        for &n in &game.state(sid).nodes {
            class_of[n] = idx;
        }
    }
    class_of
}

/// Split `player`'s states as far as the inflation operation allows: a
/// state may be divided whenever every cross pair of nodes differs in an
/// own action at some state shared by both partitions (never the one being
/// split). States are processed in ascending id; each is cut into the
/// connected components of the "no own-action difference" relation, which
/// is the maximal valid cut; sweeps repeat until a whole pass is silent.
/// Earlier splits feed later ones — histories always read the current
/// partition.
pub fn complete_inflation(game: &Game, player: PlayerId) -> RefinementMap {
    let mut classes: Vec<Vec<NodeId>> = Vec::new();
    let mut orig_of: Vec<StateId> = Vec::new();
    for &sid in game.states_of(player) {
        classes.push(game.state(sid).nodes.clone());
        orig_of.push(sid);
    }
    let mut class_of = identity_classes(game, player);

    loop {
        let mut changed = false;
        let mut idx = 0;
        while idx < classes.len() {
            if classes[idx].len() > 1 {
                let nodes = classes[idx].clone();
                let sets: Vec<_> = nodes
                    .iter()
                    .map(|&n| action_sets(game, player, &class_of, n))
                    .collect();
                let comps = inseparable_components(&nodes, |i, j| {
                    !own_action_difference(&sets[i], &sets[j], Some(idx))
                });
                if comps.len() > 1 {
                    changed = true;
                    classes[idx] = comps[0].clone();
                    for comp in &comps[1..] {
                        let new_idx = classes.len();
                        for &n in comp {
                            class_of[n] = new_idx;
                        }
                        classes.push(comp.clone());
                        orig_of.push(orig_of[idx]);
                    }
                }
            }
            idx += 1;
        }
        if !changed {
            break;
        }
    }
    rebuild(game, player, &class_of, &orig_of, false)
}

/// Connected components of the `linked` relation over `nodes`, each sorted
/// ascending, ordered by smallest member. Cutting between components is
/// always a valid inflation; cutting inside one never is, because some
/// linked pair would be separated.
fn inseparable_components(nodes: &[NodeId], linked: impl Fn(usize, usize) -> bool) -> Vec<Vec<NodeId>> {
    let n = nodes.len();
    let mut comp = vec![usize::MAX; n];
    let mut comps: Vec<Vec<NodeId>> = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut queue = vec![start];
        comp[start] = id;
        let mut members = Vec::new();
        while let Some(i) = queue.pop() {
            members.push(nodes[i]);
            for j in 0..n {
                if comp[j] == usize::MAX && linked(i, j) {
                    comp[j] = id;
                    queue.push(j);
                }
            }
        }
        members.sort_unstable();
        comps.push(members);
    }
    comps
}

/// Split every state of `player` into classes of identical own (state,
/// action) history sequences — the "everyone tells everyone everything"
/// refinement. Always restores perfect recall, but unlike inflation it can
/// enlarge what the team can correlate on; callers should surface the
/// `via_information_sharing` flag as a warning.
pub fn information_sharing_refinement(game: &Game, player: PlayerId) -> RefinementMap {
    let mut classes: Vec<Vec<NodeId>> = Vec::new();
    let mut orig_of: Vec<StateId> = Vec::new();
    for &sid in game.states_of(player) {
        let mut by_hist: BTreeMap<Vec<(StateId, ActionIdx)>, Vec<NodeId>> = BTreeMap::new();
        for &n in &game.state(sid).nodes {
            by_hist.entry(game.own_history(n, player)).or_default().push(n);
        }
        let mut groups: Vec<Vec<NodeId>> = by_hist.into_values().collect();
        groups.sort_by_key(|g| g[0]);
        for g in groups {
            classes.push(g);
            orig_of.push(sid);
        }
    }
    let mut class_of = vec![usize::MAX; game.n_nodes()];
    for (idx, members) in classes.iter().enumerate() {
        for &n in members {
            class_of[n] = idx;
        }
    }
    rebuild(game, player, &class_of, &orig_of, true)
}

/// Materialize a refined game from working classes. Refined state ids are
/// assigned by first appearance in node order (matching what a write/parse
/// round trip of the text format produces); split states get `~k` name
/// suffixes in id order, unsplit states keep their names.
fn rebuild(
    game: &Game,
    player: PlayerId,
    class_of: &[usize],
    orig_of: &[StateId],
    via_information_sharing: bool,
) -> RefinementMap {
    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    enum Key {
        Class(usize),
        Other(StateId),
    }
    let mut ids: BTreeMap<Key, StateId> = BTreeMap::new();
    let mut new_states: Vec<InfoState> = Vec::new();
    let mut state_map: BTreeMap<StateId, StateId> = BTreeMap::new();
    for u in 0..game.n_nodes() {
        if let Node::Decision { state, .. } = game.node(u) {
            let owner = game.state(*state).owner;
            let key = if owner == player { Key::Class(class_of[u]) } else { Key::Other(*state) };
            let sid = *ids.entry(key).or_insert_with(|| {
                let orig = if owner == player { orig_of[class_of[u]] } else { *state };
                state_map.insert(new_states.len(), orig);
                new_states.push(InfoState {
                    owner,
                    name: game.state(orig).name.clone(),
                    actions: game.state(orig).actions.clone(),
                    nodes: Vec::new(),
                });
                new_states.len() - 1
            });
            new_states[sid].nodes.push(u);
        }
    }
    let mut copies: BTreeMap<StateId, Vec<StateId>> = BTreeMap::new();
    for (&refined, &orig) in &state_map {
        copies.entry(orig).or_default().push(refined);
    }
    for (orig, list) in &copies {
        if list.len() > 1 {
            for (k, &sid) in list.iter().enumerate() {
                new_states[sid].name = format!("{}~{k}", game.state(*orig).name);
            }
        }
    }
    let mut seen = BTreeSet::new();
    for st in new_states.iter_mut() {
        while !seen.insert(st.name.clone()) {
            st.name.push('~');
        }
    }
    let mut refined = game.with_states(game.players().to_vec(), new_states);
    refined.set_team(game.team().map(<[PlayerId]>::to_vec));
    RefinementMap { original: game.clone(), refined, player, state_map, via_information_sharing }
}

/// Merge the team, then restore the meta-player's perfect recall: by
/// complete inflation when the merged player has A-loss recall (the result
/// is then outcome-preserving), by full information sharing otherwise.
pub fn perfect_recall_refinement(
    game: &Game,
    team: &[PlayerId],
) -> Result<RefinementMap, RefinementError> {
    let (merged, meta) = merge_team(game, team)?;
    let report = recall_report(&merged, meta);
    Ok(if report.a_loss_recall {
        complete_inflation(&merged, meta)
    } else {
        information_sharing_refinement(&merged, meta)
    })
}

/// Check that `map.refined` is a perfect-recall refinement of
/// `map.original` for `map.player`: identical trees, chance, and payoffs;
/// identical partitions for everyone else; the player's refined partition
/// subdivides the original one with unchanged action lists; and the player
/// has perfect recall afterwards.
pub fn is_refinement(map: &RefinementMap) -> bool {
    let (g, r) = (&map.original, &map.refined);
    if g.n_nodes() != r.n_nodes() || g.players() != r.players() {
        return false;
    }
    for u in 0..g.n_nodes() {
        match (g.node(u), r.node(u)) {
            (Node::Terminal { payoffs: a }, Node::Terminal { payoffs: b }) => {
                if a != b {
                    return false;
                }
            }
            (
                Node::Chance { labels: la, probs: pa, children: ca },
                Node::Chance { labels: lb, probs: pb, children: cb },
            ) => {
                if la != lb || pa != pb || ca != cb {
                    return false;
                }
            }
            (
                Node::Decision { state: sg, children: cg },
                Node::Decision { state: sr, children: cr },
            ) => {
                if cg != cr {
                    return false;
                }
                let (og, or) = (g.state(*sg), r.state(*sr));
                if og.owner != or.owner || og.actions != or.actions {
                    return false;
                }
                match map.state_map.get(sr) {
                    Some(&orig) if orig == *sg => {}
                    _ => return false,
                }
                if og.owner != map.player && og.nodes != or.nodes {
                    return false;
                }
            }
            _ => return false,
        }
    }
    recall_report(r, map.player).perfect_recall
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::GameBuilder;
    use crate::games::{coordination_game, patrolling_game, CoordinationSpec, PatrollingSpec};
    use crate::plans::enumerate_reduced_plans;
    use crate::strategy::{NormalFormStrategy, StrategyRef};
    use crate::testgen::{random_game, GenConfig};
    use crate::values::leaf_reach;

    fn coord2() -> Game {
        coordination_game(&CoordinationSpec::new(2, 100.0, 100.0)).unwrap()
    }

    /// Like coord-2 but T1 observes O's move, so the merged player's memory
    /// loss traces to O's hidden action rather than to an own action.
    fn coord2_t1_observes() -> Game {
        let mut b = GameBuilder::new(["T1", "T2", "O"]);
        b.team(["T1", "T2"]);
        b.root("root");
        b.decision("root", "O", "O.m1", &["L", "R"]).unwrap();
        for o in ["L", "R"] {
            b.decision(format!("n{o}"), "T1", format!("T1.o{o}"), &["L", "R"]).unwrap();
            b.edge("root", o, format!("n{o}"));
            for t1 in ["L", "R"] {
                b.decision(format!("n{o}{t1}"), "T2", "T2.m2", &["L", "R"]).unwrap();
                b.edge(format!("n{o}"), t1, format!("n{o}{t1}"));
                for t2 in ["L", "R"] {
                    let team = if o == t1 && t1 == t2 { 100.0 } else { 0.0 };
                    b.terminal(format!("z{o}{t1}{t2}"), vec![team, team, -team]).unwrap();
                    b.edge(format!("n{o}{t1}"), t2, format!("z{o}{t1}{t2}"));
                }
            }
        }
        b.finish().unwrap()
    }

    #[test]
    fn merge_produces_two_player_game() {
        let g = coord2();
        let (m, meta) = merge_team(&g, &[0, 1]).unwrap();
        assert_eq!(meta, 0);
        assert_eq!(m.players(), &["T1+T2".to_string(), "O".to_string()]);
        assert_eq!(m.team(), Some(&[0][..]));
        assert_eq!(m.n_states(), g.n_states(), "state ids preserved");
        assert_eq!(m.states_of(0).len(), 2, "meta owns both members' states");
        assert_eq!(m.states_of(1).len(), 1);
        for &z in m.leaves() {
            assert_eq!(m.payoff(z, 0), g.payoff(z, 0));
            assert_eq!(m.payoff(z, 1), g.payoff(z, 2));
        }
        // Node ids and names untouched.
        assert_eq!(m.n_nodes(), g.n_nodes());
        for u in 0..g.n_nodes() {
            assert_eq!(m.node_name(u), g.node_name(u));
        }
    }

    #[test]
    fn merge_single_member_relabels_only() {
        let g = coord2();
        let (m, meta) = merge_team(&g, &[1]).unwrap();
        assert_eq!(meta, 1);
        assert_eq!(m.players(), g.players());
        assert_eq!(m.n_states(), g.n_states());
        for &z in g.leaves() {
            assert_eq!(m.payoffs(z), g.payoffs(z));
        }
    }

    #[test]
    fn merge_rejects_unshared_payoffs() {
        let mut b = GameBuilder::new(["A", "B"]);
        b.root("r");
        b.decision("r", "A", "A.s", &["x", "y"]).unwrap();
        b.terminal("zx", vec![1.0, 2.0]).unwrap();
        b.terminal("zy", vec![0.0, 0.0]).unwrap();
        b.edge("r", "x", "zx");
        b.edge("r", "y", "zy");
        let g = b.finish().unwrap();
        let err = merge_team(&g, &[0, 1]).unwrap_err();
        assert!(matches!(err, RefinementError::UnsharedPayoff { .. }), "{err}");
    }

    #[test]
    fn merged_coordination_recall() {
        let (m, meta) = merge_team(&coord2(), &[0, 1]).unwrap();
        let report = recall_report(&m, meta);
        assert!(!report.perfect_recall, "meta forgets its first move");
        assert!(report.a_loss_recall, "the loss is of an own action");
        assert!(!report.perfect_witnesses.is_empty());
        assert!(report.a_loss_witnesses.is_empty());
        // The opponent acts once and trivially has perfect recall.
        let opp = recall_report(&m, 1);
        assert!(opp.perfect_recall && opp.a_loss_recall);
        assert!(opp.perfect_witnesses.is_empty());
    }

    #[test]
    fn observing_the_opponent_breaks_a_loss_recall() {
        let (m, meta) = merge_team(&coord2_t1_observes(), &[0, 1]).unwrap();
        let report = recall_report(&m, meta);
        assert!(!report.perfect_recall);
        assert!(!report.a_loss_recall, "loss traces to O's move, not an own action");
        assert!(!report.a_loss_witnesses.is_empty());
    }

    #[test]
    fn inflation_splits_the_second_state_of_merged_coordination() {
        let (m, meta) = merge_team(&coord2(), &[0, 1]).unwrap();
        let map = complete_inflation(&m, meta);
        assert_eq!(map.n_splits(), 1);
        let t2 = m.state_index("T2.m2").unwrap();
        assert_eq!(map.refined_of(t2).len(), 2, "one copy per own first move");
        assert!(map.refined.state_index("T2.m2~0").is_some());
        assert!(map.refined.state_index("T2.m2~1").is_some());
        // The copy after own action L holds the two nodes reached via L.
        let c0 = map.refined.state_index("T2.m2~0").unwrap();
        for &n in &map.refined.state(c0).nodes {
            let (parent, action) = map.refined.parent(n).unwrap();
            assert_eq!(map.refined.node_owner(parent), Some(meta));
            assert_eq!(action, 0);
        }
        assert!(recall_report(&map.refined, meta).perfect_recall);
        assert!(is_refinement(&map));
        assert_eq!(map.split_counts(), BTreeMap::from([(t2, 2)]));
    }

    #[test]
    fn inflation_of_longer_coordination_counts_history_classes() {
        let g = coordination_game(&CoordinationSpec::new(4, 100.0, 100.0)).unwrap();
        let (m, meta) = merge_team(&g, &[0, 1]).unwrap();
        assert_eq!(m.states_of(meta).len(), 4);
        let map = complete_inflation(&m, meta);
        // One state per own move-history prefix: 1 + 2 + 4 + 8.
        assert_eq!(map.refined.states_of(meta).len(), 15);
        assert!(recall_report(&map.refined, meta).perfect_recall);
        assert!(is_refinement(&map));
    }

    #[test]
    fn perfect_recall_player_is_a_fixed_point() {
        let (m, _) = merge_team(&coord2(), &[0, 1]).unwrap();
        let map = complete_inflation(&m, 1);
        assert_eq!(map.n_splits(), 0);
        assert_eq!(map.refined, m, "identity refinement reproduces the game exactly");
    }

    #[test]
    fn inflation_is_idempotent() {
        let (m, meta) = merge_team(&coord2(), &[0, 1]).unwrap();
        let once = complete_inflation(&m, meta);
        let twice = complete_inflation(&once.refined, meta);
        assert_eq!(twice.n_splits(), 0);
        assert_eq!(twice.refined, once.refined);
    }

    #[test]
    fn refinement_pipeline_on_coordination() {
        let g = coord2();
        let map = perfect_recall_refinement(&g, &[0, 1]).unwrap();
        assert!(!map.via_information_sharing);
        assert!(is_refinement(&map));
        assert_eq!(map.original.players().len(), 2, "original of the map is the merged game");
        assert!(recall_report(&map.refined, map.player).perfect_recall);
        // Perfect recall implies A-loss recall on the output.
        assert!(recall_report(&map.refined, map.player).a_loss_recall);
    }

    #[test]
    fn refinement_pipeline_falls_back_to_information_sharing() {
        let g = coord2_t1_observes();
        let map = perfect_recall_refinement(&g, &[0, 1]).unwrap();
        assert!(map.via_information_sharing);
        assert!(is_refinement(&map));
        let t2 = map.original.state_index("T2.m2").unwrap();
        assert_eq!(map.refined_of(t2).len(), 4, "one copy per full meta history");
    }

    #[test]
    fn patrolling_refinement_separates_every_joint_history() {
        let g = patrolling_game(&PatrollingSpec::new(3, 4, 3)).unwrap();
        let map = perfect_recall_refinement(&g, &[0, 1]).unwrap();
        assert!(!map.via_information_sharing, "defender memory loss is of own (team) moves");
        // With no opponent or chance move before the defenders act, full
        // recall makes every meta decision node its own state.
        let meta_nodes = 1 + 25 + 441 + 5 + 105 + 1701;
        assert_eq!(map.refined.states_of(map.player).len(), meta_nodes);
        assert!(recall_report(&map.refined, map.player).perfect_recall);
        assert!(is_refinement(&map));
        // The meta-player's reduced plans are walk pairs: 81 * 81.
        assert_eq!(enumerate_reduced_plans(&map.refined, map.player).unwrap().len(), 6561);
    }

    #[test]
    fn merging_states_is_not_a_refinement() {
        let (m, meta) = merge_team(&coord2(), &[0, 1]).unwrap();
        let map = complete_inflation(&m, meta);
        // Swap roles: pretend the coarser game "refines" the finer one.
        let t2 = m.state_index("T2.m2").unwrap();
        let backwards = RefinementMap {
            original: map.refined.clone(),
            refined: m.clone(),
            player: meta,
            state_map: (0..m.n_states()).map(|s| (s, s)).collect(),
            via_information_sharing: false,
        };
        assert!(!is_refinement(&backwards), "coarsening must be rejected");
        let _ = t2;
    }

    /// Every pure reduced plan's leaf-reach vector, as exact 0/1 bytes.
    fn pure_reach_set(g: &Game, p: PlayerId) -> Option<BTreeSet<Vec<u8>>> {
        let plans = enumerate_reduced_plans(g, p).ok()?;
        if plans.len() > 4096 {
            return None;
        }
        Some(
            plans
                .into_iter()
                .map(|plan| {
                    let nf = NormalFormStrategy::pure(plan);
                    leaf_reach(g, StrategyRef::NormalForm(&nf))
                        .into_iter()
                        .map(|x| x as u8)
                        .collect()
                })
                .collect(),
        )
    }

    #[test]
    fn inflation_preserves_achievable_leaf_distributions() {
        // The refined player's pure plans induce exactly the original
        // reachable leaf sets, so mixtures match both ways.
        let mut checked = 0;
        let mut full_refinements = 0;
        for seed in 0..40 {
            let g = random_game(seed, &GenConfig::small());
            for p in 0..g.n_players() {
                if g.states_of(p).len() > 12 {
                    continue;
                }
                let map = complete_inflation(&g, p);
                // Inflation restores perfect recall exactly when the memory
                // losses were of own actions; only then is the output a full
                // perfect-recall refinement.
                if recall_report(&g, p).a_loss_recall {
                    assert!(is_refinement(&map), "seed {seed} player {p}");
                    full_refinements += 1;
                }
                let (Some(a), Some(b)) = (pure_reach_set(&g, p), pure_reach_set(&map.refined, p))
                else {
                    continue;
                };
                assert_eq!(a, b, "seed {seed} player {p}: reachable leaf sets changed");
                checked += 1;
            }
        }
        assert!(checked > 20, "only {checked} cases exercised");
        assert!(full_refinements > 5, "only {full_refinements} full refinements exercised");
    }

    #[test]
    fn inflation_on_random_games_is_idempotent() {
        for seed in 0..20 {
            let g = random_game(seed, &GenConfig::small());
            for p in 0..g.n_players() {
                let map = complete_inflation(&g, p);
                let again = complete_inflation(&map.refined, p);
                assert_eq!(again.n_splits(), 0, "seed {seed} player {p}");
            }
        }
    }
}
