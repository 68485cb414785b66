//! Extensive-form game trees.
//!
//! A [`Game`] is a finite tree of decision, chance, and terminal nodes.
//! Decision nodes are grouped into information states: every node in a state
//! belongs to the same player and carries the identical ordered action list,
//! and the acting player cannot distinguish nodes within a state. Terminal
//! nodes carry one payoff per strategic player; chance nodes carry a fixed
//! probability distribution over their children.
//!
//! Node, state, and action identifiers are dense integers assigned in
//! depth-first preorder (children visited in action-list order), so every
//! enumeration in this crate is deterministic for a given game description.
//! Games are constructed through [`GameBuilder`], which validates all
//! structural invariants before producing a `Game`.

use std::collections::BTreeMap;

use thiserror::Error;

/// Index of a strategic player in the game's player list.
pub type PlayerId = usize;
/// Dense node index in depth-first preorder.
pub type NodeId = usize;
/// Dense information-state index, ordered by first appearance in preorder.
pub type StateId = usize;
/// Position of an action inside a state's (or chance node's) action list.
pub type ActionIdx = usize;

/// Numeric slack accepted when checking that chance distributions sum to one.
pub const CHANCE_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("no players declared")]
    NoPlayers,
    #[error("duplicate player name `{0}`")]
    DuplicatePlayer(String),
    #[error("unknown player `{0}`")]
    UnknownPlayer(String),
    #[error("no root node declared")]
    NoRoot,
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("node `{node}`: chance distribution sums to {sum}")]
    ChanceSum { node: String, sum: f64 },
    #[error("node `{node}`: negative probability for action `{action}`")]
    NegativeProb { node: String, action: String },
    #[error("node `{node}` has no actions")]
    NoActions { node: String },
    #[error("node `{node}`: duplicate action `{action}`")]
    DuplicateAction { node: String, action: String },
    #[error("node `{node}`: payoff vector has {got} entries, expected {want}")]
    PayoffLen { node: String, got: usize, want: usize },
    #[error("node `{node}`: payoff for player {player} is not finite")]
    PayoffNotFinite { node: String, player: usize },
    #[error("node `{node}` action `{action}` has no child")]
    MissingChild { node: String, action: String },
    #[error("edge from `{node}` on `{action}`: node is terminal")]
    EdgeFromTerminal { node: String, action: String },
    #[error("edge from `{node}` on undeclared action `{action}`")]
    EdgeUnknownAction { node: String, action: String },
    #[error("node `{0}` has more than one parent")]
    Reentrant(String),
    #[error("node `{0}` is unreachable from the root")]
    Unreachable(String),
    #[error("state `{state}`: owned by both `{a}` and `{b}`")]
    StateOwner { state: String, a: String, b: String },
    #[error("state `{state}`: nodes disagree on the action list")]
    StateActions { state: String },
    #[error("team member `{0}` listed twice")]
    DuplicateTeamMember(String),
    #[error("chance player name `{0}` collides with a strategic player")]
    ChanceNameCollision(String),
}

/// One node of the tree. Children vectors align index-for-index with the
/// action list of the owning state (decision) or the node itself (chance).
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Terminal { payoffs: Vec<f64> },
    Decision { state: StateId, children: Vec<NodeId> },
    Chance { labels: Vec<String>, probs: Vec<f64>, children: Vec<NodeId> },
}

impl Node {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Node::Terminal { .. })
    }

    pub fn children(&self) -> &[NodeId] {
        match self {
            Node::Terminal { .. } => &[],
            Node::Decision { children, .. } | Node::Chance { children, .. } => children,
        }
    }
}

/// A set of decision nodes the owner cannot tell apart.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoState {
    pub owner: PlayerId,
    pub name: String,
    /// Ordered action names; every member node exposes exactly this list.
    pub actions: Vec<String>,
    /// Member nodes in ascending id order.
    pub nodes: Vec<NodeId>,
}

impl InfoState {
    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }
}

/// Per-leaf data precomputed at construction: the chance reach probability of
/// the leaf and the (player, state, action) steps taken on the root path.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafPath {
    pub node: NodeId,
    pub chance_reach: f64,
    pub steps: Vec<(PlayerId, StateId, ActionIdx)>,
}

/// An immutable, validated extensive-form game.
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    players: Vec<String>,
    chance_name: String,
    team: Option<Vec<PlayerId>>,
    nodes: Vec<Node>,
    node_names: Vec<String>,
    parents: Vec<Option<(NodeId, ActionIdx)>>,
    states: Vec<InfoState>,
    states_by_player: Vec<Vec<StateId>>,
    leaves: Vec<NodeId>,
    leaf_paths: Vec<LeafPath>,
    leaf_index: Vec<Option<usize>>,
}

impl Game {
    pub fn root(&self) -> NodeId {
        0
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.node_names[id]
    }

    /// Parent node and the action index taken to reach `id`; `None` at the root.
    pub fn parent(&self, id: NodeId) -> Option<(NodeId, ActionIdx)> {
        self.parents[id]
    }

    /// Strategic players in declaration order (chance is not listed).
    pub fn players(&self) -> &[String] {
        &self.players
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn player_index(&self, name: &str) -> Option<PlayerId> {
        self.players.iter().position(|p| p == name)
    }

    /// Name reserved for the chance pseudo-player.
    pub fn chance_name(&self) -> &str {
        &self.chance_name
    }

    /// Team declared in the game description, if any.
    pub fn team(&self) -> Option<&[PlayerId]> {
        self.team.as_deref()
    }

    pub fn states(&self) -> &[InfoState] {
        &self.states
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, id: StateId) -> &InfoState {
        &self.states[id]
    }

    pub fn state_index(&self, name: &str) -> Option<StateId> {
        self.states.iter().position(|s| s.name == name)
    }

    /// Information states owned by `player`, in id order.
    pub fn states_of(&self, player: PlayerId) -> &[StateId] {
        &self.states_by_player[player]
    }

    /// Terminal nodes in id order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Position of a terminal node in the leaf list.
    pub fn leaf_index(&self, node: NodeId) -> Option<usize> {
        self.leaf_index[node]
    }

    pub fn leaf_paths(&self) -> &[LeafPath] {
        &self.leaf_paths
    }

    pub fn payoff(&self, leaf: NodeId, player: PlayerId) -> f64 {
        match &self.nodes[leaf] {
            Node::Terminal { payoffs } => payoffs[player],
            _ => panic!("payoff of non-terminal node {leaf}"),
        }
    }

    pub fn payoffs(&self, leaf: NodeId) -> &[f64] {
        match &self.nodes[leaf] {
            Node::Terminal { payoffs } => payoffs,
            _ => panic!("payoff of non-terminal node {leaf}"),
        }
    }

    /// Spread between the largest and smallest payoff over all leaves and
    /// players. Used to scale default solver tolerances.
    pub fn payoff_range(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &leaf in &self.leaves {
            for &u in self.payoffs(leaf) {
                lo = lo.min(u);
                hi = hi.max(u);
            }
        }
        if lo > hi {
            0.0
        } else {
            hi - lo
        }
    }

    /// Owner of a decision node.
    pub fn node_owner(&self, id: NodeId) -> Option<PlayerId> {
        match &self.nodes[id] {
            Node::Decision { state, .. } => Some(self.states[*state].owner),
            _ => None,
        }
    }

    /// The (state, action) pairs of `player` on the path from the root to
    /// `node`, in path order. `node` itself is excluded.
    pub fn own_history(&self, node: NodeId, player: PlayerId) -> Vec<(StateId, ActionIdx)> {
        let mut out = Vec::new();
        let mut cur = node;
        while let Some((parent, action)) = self.parents[cur] {
            if let Node::Decision { state, .. } = &self.nodes[parent] {
                if self.states[*state].owner == player {
                    out.push((*state, action));
                }
            }
            cur = parent;
        }
        out.reverse();
        out
    }

    /// Replace the information partition of `new_owner_states` wholesale.
    /// Internal helper for refinement: node set, payoffs, and tree structure
    /// are kept, only state grouping and ownership change. The new states
    /// must partition exactly the decision nodes of the old game.
    pub(crate) fn with_states(&self, players: Vec<String>, states: Vec<InfoState>) -> Game {
        let mut nodes = self.nodes.clone();
        // Remap each decision node to its new state.
        let mut node_state = vec![usize::MAX; nodes.len()];
        for (sid, st) in states.iter().enumerate() {
            for &n in &st.nodes {
                assert_eq!(node_state[n], usize::MAX, "node {n} in two states");
                node_state[n] = sid;
            }
        }
        for (id, node) in nodes.iter_mut().enumerate() {
            if let Node::Decision { state, .. } = node {
                assert_ne!(node_state[id], usize::MAX, "node {id} lost its state");
                *state = node_state[id];
            }
        }
        let mut states_by_player = vec![Vec::new(); players.len()];
        for (sid, st) in states.iter().enumerate() {
            states_by_player[st.owner].push(sid);
        }
        let mut g = Game {
            players,
            chance_name: self.chance_name.clone(),
            team: None,
            nodes,
            node_names: self.node_names.clone(),
            parents: self.parents.clone(),
            states,
            states_by_player,
            leaves: self.leaves.clone(),
            leaf_paths: Vec::new(),
            leaf_index: self.leaf_index.clone(),
        };
        g.leaf_paths = compute_leaf_paths(&g);
        g
    }

    /// Remaps terminal payoff vectors. Internal helper for team merging.
    pub(crate) fn with_payoffs(&self, players: Vec<String>, map: impl Fn(&[f64]) -> Vec<f64>) -> Game {
        let mut g = self.clone();
        for node in g.nodes.iter_mut() {
            if let Node::Terminal { payoffs } = node {
                let new = map(payoffs);
                assert_eq!(new.len(), players.len());
                *payoffs = new;
            }
        }
        g.players = players;
        g.team = None;
        g
    }

    pub(crate) fn set_team(&mut self, team: Option<Vec<PlayerId>>) {
        self.team = team;
    }
}

fn compute_leaf_paths(g: &Game) -> Vec<LeafPath> {
    let mut out = Vec::with_capacity(g.leaves.len());
    for &leaf in &g.leaves {
        let mut steps = Vec::new();
        let mut chance_reach = 1.0;
        let mut cur = leaf;
        while let Some((parent, action)) = g.parents[cur] {
            match &g.nodes[parent] {
                Node::Decision { state, .. } => {
                    steps.push((g.states[*state].owner, *state, action));
                }
                Node::Chance { probs, .. } => chance_reach *= probs[action],
                Node::Terminal { .. } => unreachable!(),
            }
            cur = parent;
        }
        steps.reverse();
        out.push(LeafPath { node: leaf, chance_reach, steps });
    }
    out
}

/// Round to 12 decimal places so accumulated float noise does not leak into
/// error messages (0.6 + 0.3 reports as 0.9, not 0.8999999999999999).
pub(crate) fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// Node declaration collected by [`GameBuilder`] before the tree is checked
/// and frozen.
#[derive(Debug, Clone)]
enum NodeDecl {
    Terminal { payoffs: Vec<f64> },
    Decision { player: PlayerId, state: String, actions: Vec<String> },
    Chance { actions: Vec<(String, f64)> },
}

/// Declarative game constructor. Nodes and edges may be declared in any
/// order; [`GameBuilder::finish`] walks the tree from the root, assigns dense
/// preorder identifiers, and validates every structural invariant.
#[derive(Debug, Clone)]
pub struct GameBuilder {
    players: Vec<String>,
    chance_name: String,
    team: Option<Vec<String>>,
    root: Option<String>,
    decls: Vec<(String, NodeDecl)>,
    decl_index: BTreeMap<String, usize>,
    edges: BTreeMap<(String, String), String>,
}

impl GameBuilder {
    pub fn new<S: Into<String>>(players: impl IntoIterator<Item = S>) -> Self {
        GameBuilder {
            players: players.into_iter().map(Into::into).collect(),
            chance_name: "C".to_string(),
            team: None,
            root: None,
            decls: Vec::new(),
            decl_index: BTreeMap::new(),
            edges: BTreeMap::new(),
        }
    }

    pub fn chance_name(&mut self, name: impl Into<String>) -> &mut Self {
        self.chance_name = name.into();
        self
    }

    pub fn team<S: Into<String>>(&mut self, members: impl IntoIterator<Item = S>) -> &mut Self {
        self.team = Some(members.into_iter().map(Into::into).collect());
        self
    }

    pub fn root(&mut self, node: impl Into<String>) -> &mut Self {
        self.root = Some(node.into());
        self
    }

    fn declare(&mut self, name: String, decl: NodeDecl) -> Result<(), GameError> {
        if self.decl_index.contains_key(&name) {
            return Err(GameError::DuplicateNode(name));
        }
        self.decl_index.insert(name.clone(), self.decls.len());
        self.decls.push((name, decl));
        Ok(())
    }

    pub fn terminal(&mut self, name: impl Into<String>, payoffs: Vec<f64>) -> Result<(), GameError> {
        self.declare(name.into(), NodeDecl::Terminal { payoffs })
    }

    pub fn decision(
        &mut self,
        name: impl Into<String>,
        player: &str,
        state: impl Into<String>,
        actions: &[&str],
    ) -> Result<(), GameError> {
        let player = self
            .players
            .iter()
            .position(|p| p == player)
            .ok_or_else(|| GameError::UnknownPlayer(player.to_string()))?;
        self.declare(
            name.into(),
            NodeDecl::Decision {
                player,
                state: state.into(),
                actions: actions.iter().map(|a| a.to_string()).collect(),
            },
        )
    }

    pub fn chance(&mut self, name: impl Into<String>, actions: &[(&str, f64)]) -> Result<(), GameError> {
        self.declare(
            name.into(),
            NodeDecl::Chance {
                actions: actions.iter().map(|(a, p)| (a.to_string(), *p)).collect(),
            },
        )
    }

    pub fn edge(
        &mut self,
        parent: impl Into<String>,
        action: impl Into<String>,
        child: impl Into<String>,
    ) -> &mut Self {
        self.edges.insert((parent.into(), action.into()), child.into());
        self
    }

    fn decl_actions(decl: &NodeDecl) -> Vec<String> {
        match decl {
            NodeDecl::Terminal { .. } => Vec::new(),
            NodeDecl::Decision { actions, .. } => actions.clone(),
            NodeDecl::Chance { actions } => actions.iter().map(|(a, _)| a.clone()).collect(),
        }
    }

    /// Validate and freeze the declarations into a [`Game`].
    pub fn finish(self) -> Result<Game, GameError> {
        if self.players.is_empty() {
            return Err(GameError::NoPlayers);
        }
        for (i, p) in self.players.iter().enumerate() {
            if self.players[..i].contains(p) {
                return Err(GameError::DuplicatePlayer(p.clone()));
            }
        }
        if self.players.contains(&self.chance_name) {
            return Err(GameError::ChanceNameCollision(self.chance_name.clone()));
        }
        let team = match &self.team {
            None => None,
            Some(members) => {
                let mut ids = Vec::new();
                for m in members {
                    let id = self
                        .players
                        .iter()
                        .position(|p| p == m)
                        .ok_or_else(|| GameError::UnknownPlayer(m.clone()))?;
                    if ids.contains(&id) {
                        return Err(GameError::DuplicateTeamMember(m.clone()));
                    }
                    ids.push(id);
                }
                Some(ids)
            }
        };
        let root_label = self.root.clone().ok_or(GameError::NoRoot)?;
        if !self.decl_index.contains_key(&root_label) {
            return Err(GameError::UnknownNode(root_label));
        }

        // Per-declaration sanity checks before walking the tree.
        for (name, decl) in &self.decls {
            match decl {
                NodeDecl::Terminal { payoffs } => {
                    if payoffs.len() != self.players.len() {
                        return Err(GameError::PayoffLen {
                            node: name.clone(),
                            got: payoffs.len(),
                            want: self.players.len(),
                        });
                    }
                    for (i, u) in payoffs.iter().enumerate() {
                        if !u.is_finite() {
                            return Err(GameError::PayoffNotFinite { node: name.clone(), player: i });
                        }
                    }
                }
                NodeDecl::Decision { actions, .. } => {
                    if actions.is_empty() {
                        return Err(GameError::NoActions { node: name.clone() });
                    }
                    for (i, a) in actions.iter().enumerate() {
                        if actions[..i].contains(a) {
                            return Err(GameError::DuplicateAction { node: name.clone(), action: a.clone() });
                        }
                    }
                }
                NodeDecl::Chance { actions } => {
                    if actions.is_empty() {
                        return Err(GameError::NoActions { node: name.clone() });
                    }
                    let mut sum = 0.0;
                    for (i, (a, p)) in actions.iter().enumerate() {
                        if actions[..i].iter().any(|(b, _)| b == a) {
                            return Err(GameError::DuplicateAction { node: name.clone(), action: a.clone() });
                        }
                        if *p < 0.0 {
                            return Err(GameError::NegativeProb { node: name.clone(), action: a.clone() });
                        }
                        sum += p;
                    }
                    if (sum - 1.0).abs() > CHANCE_SUM_TOL {
                        return Err(GameError::ChanceSum { node: name.clone(), sum: round12(sum) });
                    }
                }
            }
        }
        // Every edge must leave a declared non-terminal on a declared action
        // and point at a declared node.
        for ((parent, action), child) in &self.edges {
            let pi = *self
                .decl_index
                .get(parent)
                .ok_or_else(|| GameError::UnknownNode(parent.clone()))?;
            if !self.decl_index.contains_key(child) {
                return Err(GameError::UnknownNode(child.clone()));
            }
            let decl = &self.decls[pi].1;
            if matches!(decl, NodeDecl::Terminal { .. }) {
                return Err(GameError::EdgeFromTerminal { node: parent.clone(), action: action.clone() });
            }
            if !Self::decl_actions(decl).contains(action) {
                return Err(GameError::EdgeUnknownAction { node: parent.clone(), action: action.clone() });
            }
        }

        // Depth-first preorder walk assigning dense ids.
        let n = self.decls.len();
        let mut id_of = vec![usize::MAX; n]; // decl index -> node id
        let mut order = Vec::with_capacity(n); // node id -> decl index
        let mut parent_of: Vec<Option<(NodeId, ActionIdx)>> = Vec::with_capacity(n);
        let mut stack = vec![(self.decl_index[&root_label], None::<(NodeId, ActionIdx)>)];
        while let Some((decl_idx, parent)) = stack.pop() {
            if id_of[decl_idx] != usize::MAX {
                return Err(GameError::Reentrant(self.decls[decl_idx].0.clone()));
            }
            let id = order.len();
            id_of[decl_idx] = id;
            order.push(decl_idx);
            parent_of.push(parent);
            let (name, decl) = &self.decls[decl_idx];
            let actions = Self::decl_actions(decl);
            // Reverse push so children pop in action order.
            for (aidx, action) in actions.iter().enumerate().rev() {
                let child = self
                    .edges
                    .get(&(name.clone(), action.clone()))
                    .ok_or_else(|| GameError::MissingChild { node: name.clone(), action: action.clone() })?;
                stack.push((self.decl_index[child], Some((id, aidx))));
            }
        }
        if order.len() != n {
            let missed = (0..n).find(|&i| id_of[i] == usize::MAX).unwrap();
            return Err(GameError::Unreachable(self.decls[missed].0.clone()));
        }

        // Materialize nodes and states in id order.
        let mut states: Vec<InfoState> = Vec::new();
        let mut state_index: BTreeMap<String, StateId> = BTreeMap::new();
        let mut nodes = Vec::with_capacity(n);
        let mut node_names = Vec::with_capacity(n);
        for id in 0..n {
            let (name, decl) = &self.decls[order[id]];
            node_names.push(name.clone());
            let node = match decl {
                NodeDecl::Terminal { payoffs } => Node::Terminal { payoffs: payoffs.clone() },
                NodeDecl::Chance { actions } => {
                    let children = actions
                        .iter()
                        .map(|(a, _)| id_of[self.decl_index[&self.edges[&(name.clone(), a.clone())]]])
                        .collect();
                    Node::Chance {
                        labels: actions.iter().map(|(a, _)| a.clone()).collect(),
                        probs: actions.iter().map(|(_, p)| *p).collect(),
                        children,
                    }
                }
                NodeDecl::Decision { player, state, actions } => {
                    let sid = match state_index.get(state) {
                        Some(&sid) => {
                            let st = &mut states[sid];
                            if st.owner != *player {
                                return Err(GameError::StateOwner {
                                    state: state.clone(),
                                    a: self.players[st.owner].clone(),
                                    b: self.players[*player].clone(),
                                });
                            }
                            if &st.actions != actions {
                                return Err(GameError::StateActions { state: state.clone() });
                            }
                            st.nodes.push(id);
                            sid
                        }
                        None => {
                            let sid = states.len();
                            state_index.insert(state.clone(), sid);
                            states.push(InfoState {
                                owner: *player,
                                name: state.clone(),
                                actions: actions.clone(),
                                nodes: vec![id],
                            });
                            sid
                        }
                    };
                    let children = actions
                        .iter()
                        .map(|a| id_of[self.decl_index[&self.edges[&(name.clone(), a.clone())]]])
                        .collect();
                    Node::Decision { state: sid, children }
                }
            };
            nodes.push(node);
        }

        let mut states_by_player = vec![Vec::new(); self.players.len()];
        for (sid, st) in states.iter().enumerate() {
            states_by_player[st.owner].push(sid);
        }
        let mut leaves = Vec::new();
        let mut leaf_index = vec![None; n];
        for (id, node) in nodes.iter().enumerate() {
            if node.is_terminal() {
                leaf_index[id] = Some(leaves.len());
                leaves.push(id);
            }
        }
        let mut game = Game {
            players: self.players,
            chance_name: self.chance_name,
            team,
            nodes,
            node_names,
            parents: parent_of,
            states,
            states_by_player,
            leaves,
            leaf_paths: Vec::new(),
            leaf_index,
        };
        game.leaf_paths = compute_leaf_paths(&game);
        Ok(game)
    }
}
