//! Benchmark game families.
//!
//! * [`coordination_game`]: an opponent O commits to L or R, then team
//!   members alternate blind moves; the team is paid only when every team
//!   action matches O's choice. Every player has a single information state
//!   per own move index, so team members can neither see O nor each other.
//! * [`patrolling_game`]: two defenders walk a square grid for a fixed
//!   number of synchronous steps, each observing only their own position
//!   history, while an attacker picks a target site blind. The team wins
//!   iff both defenders stand on the attacked site afterwards.

use thiserror::Error;

use crate::game::{Game, GameBuilder, GameError};

#[derive(Debug, Error)]
pub enum GamesError {
    #[error("horizon must be an even number of team moves >= 2, got {0}")]
    BadHorizon(usize),
    #[error("payoff {0} is not finite")]
    BadPayoff(f64),
    #[error("grid side must be >= 2, got {0}")]
    BadGrid(usize),
    #[error("number of sites must be between 1 and 4 (grid corners), got {0}")]
    BadSites(usize),
    #[error("steps must be >= 1, got {0}")]
    BadSteps(usize),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Parameters of the coordination family. `k_left`/`k_right` are the team
/// payoffs for unanimous L and unanimous R; all other outcomes pay zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinationSpec {
    /// Total number of team moves; members alternate T1, T2, T1, ...
    pub horizon: usize,
    pub k_left: f64,
    pub k_right: f64,
}

impl CoordinationSpec {
    pub fn new(horizon: usize, k_left: f64, k_right: f64) -> Self {
        CoordinationSpec { horizon, k_left, k_right }
    }
}

/// Build a coordination game. Players are `T1`, `T2`, `O` with the team
/// declared as {T1, T2}; O moves first and the move stays hidden.
pub fn coordination_game(spec: &CoordinationSpec) -> Result<Game, GamesError> {
    if spec.horizon < 2 || spec.horizon % 2 != 0 {
        return Err(GamesError::BadHorizon(spec.horizon));
    }
    for k in [spec.k_left, spec.k_right] {
        if !k.is_finite() {
            return Err(GamesError::BadPayoff(k));
        }
    }
    let mut b = GameBuilder::new(["T1", "T2", "O"]);
    b.team(["T1", "T2"]);
    b.root("root");
    b.decision("root", "O", "O.m1", &["L", "R"])?;

    // Depth-first over action paths; `path` holds O's move then team moves.
    let mut stack: Vec<String> = vec!["L".to_string(), "R".to_string()];
    while let Some(path) = stack.pop() {
        let name = format!("n{path}");
        if path.len() == spec.horizon + 1 {
            let unanimous = |letter: char| path.chars().all(|c| c == letter);
            let team = if unanimous('L') {
                spec.k_left
            } else if unanimous('R') {
                spec.k_right
            } else {
                0.0
            };
            b.terminal(name.clone(), vec![team, team, -team])?;
        } else {
            let move_idx = path.len(); // 1-based team move index
            let member = if move_idx % 2 == 1 { "T1" } else { "T2" };
            let state = format!("{member}.m{move_idx}");
            b.decision(name.clone(), member, state, &["L", "R"])?;
            for a in ["L", "R"] {
                stack.push(format!("{path}{a}"));
            }
        }
        let parent = if path.len() == 1 { "root".to_string() } else { format!("n{}", &path[..path.len() - 1]) };
        b.edge(parent, path.chars().last().unwrap().to_string(), name);
    }
    Ok(b.finish()?)
}

/// Geometry of a patrolling instance, kept separate from the tree so
/// evaluation code can map action sequences back to grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PatrollingLayout {
    pub grid_side: usize,
    pub start: (usize, usize),
    pub sites: Vec<(usize, usize)>,
    pub steps: usize,
}

/// Move names in fixed order; off-grid moves are removed, not clipped.
pub const MOVES: [(&str, isize, isize); 5] =
    [("up", -1, 0), ("down", 1, 0), ("left", 0, -1), ("right", 0, 1), ("stay", 0, 0)];

impl PatrollingLayout {
    /// Apply one named move; `None` if it would leave the grid.
    pub fn apply(&self, cell: (usize, usize), action: &str) -> Option<(usize, usize)> {
        let (_, dr, dc) = MOVES.iter().find(|(n, _, _)| *n == action)?;
        let r = cell.0 as isize + dr;
        let c = cell.1 as isize + dc;
        let side = self.grid_side as isize;
        if r < 0 || c < 0 || r >= side || c >= side {
            None
        } else {
            Some((r as usize, c as usize))
        }
    }

    /// Moves available from a cell, in [`MOVES`] order.
    pub fn legal_moves(&self, cell: (usize, usize)) -> Vec<&'static str> {
        MOVES
            .iter()
            .filter(|(n, _, _)| self.apply(cell, n).is_some())
            .map(|(n, _, _)| *n)
            .collect()
    }

    /// Final cell after replaying named moves from the start cell.
    pub fn final_cell(&self, actions: &[&str]) -> Option<(usize, usize)> {
        let mut cell = self.start;
        for a in actions {
            cell = self.apply(cell, a)?;
        }
        Some(cell)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatrollingSpec {
    pub grid_side: usize,
    pub n_sites: usize,
    pub steps: usize,
}

impl PatrollingSpec {
    pub fn new(grid_side: usize, n_sites: usize, steps: usize) -> Self {
        PatrollingSpec { grid_side, n_sites, steps }
    }

    pub fn layout(&self) -> Result<PatrollingLayout, GamesError> {
        if self.grid_side < 2 {
            return Err(GamesError::BadGrid(self.grid_side));
        }
        if self.n_sites < 1 || self.n_sites > 4 {
            return Err(GamesError::BadSites(self.n_sites));
        }
        if self.steps < 1 {
            return Err(GamesError::BadSteps(self.steps));
        }
        let g = self.grid_side;
        let corners = [(0, 0), (0, g - 1), (g - 1, 0), (g - 1, g - 1)];
        Ok(PatrollingLayout {
            grid_side: g,
            start: (g / 2, g / 2),
            sites: corners[..self.n_sites].to_vec(),
            steps: self.steps,
        })
    }
}

fn cell_code(cell: (usize, usize)) -> String {
    format!("{}{}", cell.0, cell.1)
}

fn hist_code(hist: &[(usize, usize)]) -> String {
    hist.iter().map(|&c| cell_code(c)).collect::<Vec<_>>().join("-")
}

/// Single letters for node-name path encoding; the five move names have
/// distinct initials.
fn move_letter(action: &str) -> char {
    action.chars().next().unwrap()
}

/// Decode a defender's reduced plan back into the walk it produces,
/// returning the visited cells starting at the layout's start cell.
/// `member` is the defender's name as used in state names (`"D1"`/`"D2"`),
/// so this works on any game that keeps the patrolling naming scheme (the
/// team-merged variant included); `None` if the plan misses a state on the
/// walk.
pub fn walk_of_plan(
    game: &Game,
    layout: &PatrollingLayout,
    member: &str,
    plan: &crate::strategy::ReducedPlan,
) -> Option<Vec<(usize, usize)>> {
    let mut hist = vec![layout.start];
    for round in 1..=layout.steps {
        let sid = game.state_index(&format!("{member}.r{round}@{}", hist_code(&hist)))?;
        let a = plan.choice(sid)?;
        let action = &game.state(sid).actions[a];
        let next = layout.apply(*hist.last().unwrap(), action)?;
        hist.push(next);
    }
    Some(hist)
}

/// Build a patrolling game. Players are `D1`, `D2`, `O` with the team
/// declared as {D1, D2}; both defenders start at the grid center. Within a
/// round D1's node precedes D2's in the tree, but neither observes the
/// other, so the rounds are effectively simultaneous.
pub fn patrolling_game(spec: &PatrollingSpec) -> Result<Game, GamesError> {
    let layout = spec.layout()?;
    let mut b = GameBuilder::new(["D1", "D2", "O"]);
    b.team(["D1", "D2"]);
    b.root("n");

    struct Frame {
        name: String,
        h1: Vec<(usize, usize)>,
        h2: Vec<(usize, usize)>,
    }
    let mut stack = vec![Frame { name: "n".to_string(), h1: vec![layout.start], h2: vec![layout.start] }];
    let site_actions: Vec<String> = layout.sites.iter().map(|&s| format!("a{}", cell_code(s))).collect();
    let site_refs: Vec<&str> = site_actions.iter().map(String::as_str).collect();

    while let Some(Frame { name, h1, h2 }) = stack.pop() {
        // D1 has moved h1.len()-1 times, D2 h2.len()-1 times.
        let (d1_moves, d2_moves) = (h1.len() - 1, h2.len() - 1);
        if d1_moves == layout.steps && d2_moves == layout.steps {
            // Attacker decision; one state, blind.
            b.decision(name.clone(), "O", "O.attack", &site_refs)?;
            for (&site, action) in layout.sites.iter().zip(&site_actions) {
                let leaf = format!("{name}{action}");
                let caught = *h1.last().unwrap() == site && *h2.last().unwrap() == site;
                let team = if caught { 1.0 } else { -1.0 };
                b.terminal(leaf.clone(), vec![team, team, -team])?;
                b.edge(name.clone(), action.clone(), leaf);
            }
            continue;
        }
        // D1 moves first in each round.
        let (member, hist, round) = if d1_moves == d2_moves {
            ("D1", &h1, d1_moves + 1)
        } else {
            ("D2", &h2, d2_moves + 1)
        };
        let cell = *hist.last().unwrap();
        let state = format!("{member}.r{round}@{}", hist_code(hist));
        let moves = layout.legal_moves(cell);
        b.decision(name.clone(), member, state, &moves)?;
        for mv in moves {
            let next = layout.apply(cell, mv).unwrap();
            let child = format!("{name}{}", move_letter(mv));
            let (mut h1n, mut h2n) = (h1.clone(), h2.clone());
            if member == "D1" {
                h1n.push(next);
            } else {
                h2n.push(next);
            }
            b.edge(name.clone(), mv, child.clone());
            stack.push(Frame { name: child, h1: h1n, h2: h2n });
        }
    }
    Ok(b.finish()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plans::enumerate_reduced_plans;

    #[test]
    fn coord_2_shape() {
        let g = coordination_game(&CoordinationSpec::new(2, 100.0, 100.0)).unwrap();
        assert_eq!(g.n_players(), 3);
        assert_eq!(g.n_leaves(), 8);
        assert_eq!(g.n_nodes(), 15);
        // One information state per player.
        for p in 0..3 {
            assert_eq!(g.states_of(p).len(), 1);
        }
        assert_eq!(g.team(), Some(&[0, 1][..]));
        // Exactly two leaves pay the coordination bonus.
        let big: Vec<_> = g.leaves().iter().filter(|&&z| g.payoff(z, 0) == 100.0).collect();
        assert_eq!(big.len(), 2);
        // Zero-sum between team and opponent at every leaf.
        for &z in g.leaves() {
            assert_eq!(g.payoff(z, 0), g.payoff(z, 1));
            assert_eq!(g.payoff(z, 0), -g.payoff(z, 2));
        }
    }

    #[test]
    fn coord_4_shape() {
        let g = coordination_game(&CoordinationSpec::new(4, 100.0, 100.0)).unwrap();
        assert_eq!(g.n_leaves(), 32);
        assert_eq!(g.states_of(0).len(), 2, "T1 moves at indices 1 and 3");
        assert_eq!(g.states_of(1).len(), 2, "T2 moves at indices 2 and 4");
        assert_eq!(g.states_of(2).len(), 1);
        // A member does not recall their own earlier move: the later state
        // has one node per combination of all earlier moves.
        let t1_m3 = g.state_index("T1.m3").unwrap();
        assert_eq!(g.state(t1_m3).nodes.len(), 8);
        let big: Vec<_> = g.leaves().iter().filter(|&&z| g.payoff(z, 0) == 100.0).collect();
        assert_eq!(big.len(), 2);
    }

    #[test]
    fn imbalanced_payoffs() {
        let g = coordination_game(&CoordinationSpec::new(2, 100.0, 50.0)).unwrap();
        let mut payoffs: Vec<f64> = g.leaves().iter().map(|&z| g.payoff(z, 0)).collect();
        payoffs.sort_by(f64::total_cmp);
        assert_eq!(payoffs, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 50.0, 100.0]);
    }

    #[test]
    fn bad_horizon_rejected() {
        assert!(coordination_game(&CoordinationSpec::new(3, 1.0, 1.0)).is_err());
        assert!(coordination_game(&CoordinationSpec::new(0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn patrolling_4_3_shape() {
        let spec = PatrollingSpec::new(3, 4, 3);
        let g = patrolling_game(&spec).unwrap();
        // Walk counts from the center of a 3x3 grid with von Neumann moves
        // plus stay: 1 -> 5 -> 21 -> 81 paths per defender. Decision nodes:
        //   D1 round r: paths1(r-1) * paths2(r-1)  = 1, 25, 441
        //   D2 round r: paths1(r)   * paths2(r-1)  = 5, 105, 1701
        //   O:          81 * 81                    = 6561
        // and 4 leaves under each O node.
        assert_eq!(g.n_leaves(), 81 * 81 * 4);
        let decisions = g.n_nodes() - g.n_leaves();
        assert_eq!(decisions, 1 + 25 + 441 + 5 + 105 + 1701 + 6561);
        // States per defender: own position histories: 1, 5, 21.
        assert_eq!(g.states_of(0).len(), 1 + 5 + 21);
        assert_eq!(g.states_of(1).len(), 1 + 5 + 21);
        assert_eq!(g.states_of(2).len(), 1);
        // A defender's reduced plans are exactly their walks.
        assert_eq!(enumerate_reduced_plans(&g, 0).unwrap().len(), 81);
        assert_eq!(enumerate_reduced_plans(&g, 1).unwrap().len(), 81);
        assert_eq!(enumerate_reduced_plans(&g, 2).unwrap().len(), 4);
    }

    #[test]
    fn layout_moves() {
        let layout = PatrollingSpec::new(3, 4, 3).layout().unwrap();
        assert_eq!(layout.start, (1, 1));
        assert_eq!(layout.sites, vec![(0, 0), (0, 2), (2, 0), (2, 2)]);
        assert_eq!(layout.legal_moves((1, 1)).len(), 5);
        assert_eq!(layout.legal_moves((0, 1)).len(), 4);
        assert_eq!(layout.legal_moves((0, 0)).len(), 3);
        assert_eq!(layout.final_cell(&["up", "left", "stay"]), Some((0, 0)));
        assert_eq!(layout.final_cell(&["up", "up"]), None, "walks off the grid");
    }

    #[test]
    fn payoff_is_win_iff_both_on_attacked_site() {
        let g = patrolling_game(&PatrollingSpec::new(2, 4, 1)).unwrap();
        // 2x2 grid, start at (1,1) which is itself a corner site; one step.
        let wins: usize = g.leaves().iter().filter(|&&z| g.payoff(z, 0) == 1.0).count();
        // Defender walks of length 1 from (1,1): up, left, stay -> cells
        // (0,1), (1,0), (1,1). Both defenders on the same SITE: joint walks
        // where final cells coincide on a corner: (0,1)/(1,0) are sites of
        // the 2x2 grid too (all four cells are corners). So wins = number of
        // (w1, w2, site) with final1 == final2 == site: 3 cell pairs.
        assert_eq!(wins, 3);
    }
}
