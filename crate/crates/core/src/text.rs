//! `efgdesc v1`, a line-oriented text form for game trees.
//!
//! ```text
//! efgdesc v1
//! # comments start with '#'
//! players T1,T2,O
//! chance C
//! team T1,T2
//! root n0
//! node n0 player=O infostate=O.root actions=L,R
//! node c0 chance actions=L:0.5,R:0.5
//! node z0 terminal payoffs=100,100,-100
//! edge n0 L n1
//! ```
//!
//! Declarations may appear in any order. Payoff vectors align with the
//! `players` line; chance probabilities must sum to one. Names must not
//! contain whitespace, commas, colons, or equals signs. [`write_game`]
//! emits nodes and edges in id order, so parse → write → parse is an
//! identity on the resulting [`Game`].

use std::fmt::Write as _;

use thiserror::Error;

use crate::game::{Game, GameBuilder, GameError, Node};

pub const FORMAT_HEADER: &str = "efgdesc v1";

#[derive(Debug, Error)]
pub enum TextError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error(transparent)]
    Game(#[from] GameError),
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> TextError {
    TextError::Syntax { line, col, msg: msg.into() }
}

fn check_name(line_no: usize, raw: &str, name: &str) -> Result<(), TextError> {
    if name.is_empty() {
        return Err(syntax(line_no, 1, "empty name"));
    }
    if name.contains([',', ':', '=']) || name.contains(char::is_whitespace) {
        let col = raw.find(name).map_or(1, |i| i + 1);
        return Err(syntax(line_no, col, format!("name `{name}` contains a reserved character")));
    }
    Ok(())
}

fn field_col(raw: &str, field: &str) -> usize {
    raw.find(field).map_or(1, |i| i + 1)
}

/// Take the value of `key=` from `tok`, or None if the key does not match.
fn keyed<'a>(tok: &'a str, key: &str) -> Option<&'a str> {
    tok.strip_prefix(key).and_then(|rest| rest.strip_prefix('='))
}

fn parse_f64(line_no: usize, raw: &str, tok: &str) -> Result<f64, TextError> {
    tok.parse::<f64>()
        .map_err(|_| syntax(line_no, field_col(raw, tok), format!("expected a number, found `{tok}`")))
}

/// Parse an `efgdesc v1` document into a validated [`Game`].
pub fn build_game(text: &str) -> Result<Game, TextError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
    let (hline, header) = lines.next().ok_or_else(|| syntax(1, 1, "empty document"))?;
    if header.trim() != FORMAT_HEADER {
        return Err(syntax(hline, 1, format!("expected header `{FORMAT_HEADER}`")));
    }

    let mut builder: Option<GameBuilder> = None;
    let mut chance: Option<String> = None;
    let mut team: Option<Vec<String>> = None;
    let mut root: Option<String> = None;
    let mut pending_nodes: Vec<(usize, String)> = Vec::new();
    let mut pending_edges: Vec<(String, String, String)> = Vec::new();

    for (line_no, raw) in lines {
        let t = raw.trim();
        let mut toks = t.split_whitespace();
        let directive = toks.next().unwrap();
        match directive {
            "players" => {
                let rest = toks.next().ok_or_else(|| syntax(line_no, 1, "players: expected a name list"))?;
                if toks.next().is_some() {
                    return Err(syntax(line_no, 1, "players: unexpected trailing tokens"));
                }
                let names: Vec<String> = rest.split(',').map(str::to_string).collect();
                for n in &names {
                    check_name(line_no, raw, n)?;
                }
                if builder.is_some() {
                    return Err(syntax(line_no, 1, "duplicate players line"));
                }
                builder = Some(GameBuilder::new(names));
            }
            "chance" => {
                let name = toks.next().ok_or_else(|| syntax(line_no, 1, "chance: expected a name"))?;
                check_name(line_no, raw, name)?;
                chance = Some(name.to_string());
            }
            "team" => {
                let rest = toks.next().ok_or_else(|| syntax(line_no, 1, "team: expected a name list"))?;
                team = Some(rest.split(',').map(str::to_string).collect());
            }
            "root" => {
                let name = toks.next().ok_or_else(|| syntax(line_no, 1, "root: expected a node name"))?;
                check_name(line_no, raw, name)?;
                root = Some(name.to_string());
            }
            "node" => {
                pending_nodes.push((line_no, t.to_string()));
            }
            "edge" => {
                let parent = toks.next().ok_or_else(|| syntax(line_no, 1, "edge: expected parent, action, child"))?;
                let action = toks.next().ok_or_else(|| syntax(line_no, 1, "edge: expected action and child"))?;
                let child = toks.next().ok_or_else(|| syntax(line_no, 1, "edge: expected child"))?;
                if toks.next().is_some() {
                    return Err(syntax(line_no, 1, "edge: unexpected trailing tokens"));
                }
                check_name(line_no, raw, parent)?;
                check_name(line_no, raw, child)?;
                pending_edges.push((parent.to_string(), action.to_string(), child.to_string()));
            }
            other => {
                return Err(syntax(line_no, field_col(raw, other), format!("unknown directive `{other}`")));
            }
        }
    }

    let mut b = builder.ok_or_else(|| syntax(1, 1, "missing players line"))?;
    if let Some(c) = chance {
        b.chance_name(c);
    }
    if let Some(members) = team {
        b.team(members);
    }
    if let Some(r) = root {
        b.root(r);
    }

    for (line_no, decl) in pending_nodes {
        let raw = decl.as_str();
        let mut toks = decl.split_whitespace();
        toks.next(); // "node"
        let name = toks
            .next()
            .ok_or_else(|| syntax(line_no, 1, "node: expected a name"))?
            .to_string();
        check_name(line_no, raw, &name)?;
        let kind = toks.next().ok_or_else(|| syntax(line_no, 1, "node: expected a kind"))?;
        if kind == "terminal" {
            let pay = toks
                .next()
                .and_then(|t| keyed(t, "payoffs").map(str::to_string))
                .ok_or_else(|| syntax(line_no, 1, "terminal node: expected payoffs=..."))?;
            let mut payoffs = Vec::new();
            for p in pay.split(',') {
                payoffs.push(parse_f64(line_no, raw, p)?);
            }
            b.terminal(name, payoffs)?;
        } else if kind == "chance" {
            let acts = toks
                .next()
                .and_then(|t| keyed(t, "actions").map(str::to_string))
                .ok_or_else(|| syntax(line_no, 1, "chance node: expected actions=a:p,..."))?;
            let mut actions: Vec<(String, f64)> = Vec::new();
            for pair in acts.split(',') {
                let (a, p) = pair
                    .split_once(':')
                    .ok_or_else(|| syntax(line_no, field_col(raw, pair), format!("expected action:prob, found `{pair}`")))?;
                check_name(line_no, raw, a)?;
                actions.push((a.to_string(), parse_f64(line_no, raw, p)?));
            }
            let refs: Vec<(&str, f64)> = actions.iter().map(|(a, p)| (a.as_str(), *p)).collect();
            b.chance(name, &refs)?;
        } else if let Some(player) = keyed(kind, "player") {
            let player = player.to_string();
            let state = toks
                .next()
                .and_then(|t| keyed(t, "infostate").map(str::to_string))
                .ok_or_else(|| syntax(line_no, 1, "decision node: expected infostate=..."))?;
            check_name(line_no, raw, &state)?;
            let acts = toks
                .next()
                .and_then(|t| keyed(t, "actions").map(str::to_string))
                .ok_or_else(|| syntax(line_no, 1, "decision node: expected actions=a,b,..."))?;
            let actions: Vec<&str> = acts.split(',').collect();
            for a in &actions {
                check_name(line_no, raw, a)?;
            }
            b.decision(name, &player, state, &actions)?;
        } else {
            return Err(syntax(
                line_no,
                field_col(raw, kind),
                format!("expected `terminal`, `chance`, or `player=...`, found `{kind}`"),
            ));
        }
    }
    for (parent, action, child) in pending_edges {
        b.edge(parent, action, child);
    }
    Ok(b.finish()?)
}

/// Emit a game as `efgdesc v1` text. Nodes and edges appear in id order, so
/// re-parsing reproduces the same ids.
pub fn write_game(game: &Game) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{FORMAT_HEADER}");
    let _ = writeln!(out, "players {}", game.players().join(","));
    let _ = writeln!(out, "chance {}", game.chance_name());
    if let Some(team) = game.team() {
        let names: Vec<&str> = team.iter().map(|&p| game.players()[p].as_str()).collect();
        let _ = writeln!(out, "team {}", names.join(","));
    }
    let _ = writeln!(out, "root {}", game.node_name(game.root()));
    for id in 0..game.n_nodes() {
        let name = game.node_name(id);
        match game.node(id) {
            Node::Terminal { payoffs } => {
                let pay: Vec<String> = payoffs.iter().map(|p| p.to_string()).collect();
                let _ = writeln!(out, "node {name} terminal payoffs={}", pay.join(","));
            }
            Node::Chance { labels, probs, .. } => {
                let acts: Vec<String> = labels
                    .iter()
                    .zip(probs)
                    .map(|(a, p)| format!("{a}:{p}"))
                    .collect();
                let _ = writeln!(out, "node {name} chance actions={}", acts.join(","));
            }
            Node::Decision { state, .. } => {
                let st = game.state(*state);
                let player = &game.players()[st.owner];
                let _ = writeln!(
                    out,
                    "node {name} player={player} infostate={} actions={}",
                    st.name,
                    st.actions.join(",")
                );
            }
        }
    }
    for id in 0..game.n_nodes() {
        let (labels, children): (&[String], &[usize]) = match game.node(id) {
            Node::Terminal { .. } => continue,
            Node::Decision { state, children } => (&game.state(*state).actions, children),
            Node::Chance { labels, children, .. } => (labels, children),
        };
        for (a, &c) in labels.iter().zip(children) {
            let _ = writeln!(out, "edge {} {a} {}", game.node_name(id), game.node_name(c));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const COORD2: &str = "\
efgdesc v1
# two-sided coordination, K = 100
players T1,T2,O
team T1,T2
root n0
node n0 player=O infostate=O.m1 actions=L,R
node n1 player=T1 infostate=T1.m1 actions=L,R
node n2 player=T1 infostate=T1.m1 actions=L,R
node n3 player=T2 infostate=T2.m1 actions=L,R
node n4 player=T2 infostate=T2.m1 actions=L,R
node n5 player=T2 infostate=T2.m1 actions=L,R
node n6 player=T2 infostate=T2.m1 actions=L,R
node z0 terminal payoffs=100,100,-100
node z1 terminal payoffs=0,0,0
node z2 terminal payoffs=0,0,0
node z3 terminal payoffs=0,0,0
node z4 terminal payoffs=0,0,0
node z5 terminal payoffs=0,0,0
node z6 terminal payoffs=0,0,0
node z7 terminal payoffs=100,100,-100
edge n0 L n1
edge n0 R n2
edge n1 L n3
edge n1 R n4
edge n2 L n5
edge n2 R n6
edge n3 L z0
edge n3 R z1
edge n4 L z2
edge n4 R z3
edge n5 L z4
edge n5 R z5
edge n6 L z6
edge n6 R z7
";

    #[test]
    fn parses_coordination_game() {
        let g = build_game(COORD2).unwrap();
        assert_eq!(g.n_players(), 3);
        assert_eq!(g.n_leaves(), 8);
        assert_eq!(g.n_states(), 3);
        for p in 0..3 {
            assert_eq!(g.states_of(p).len(), 1, "one state per player");
        }
        assert_eq!(g.team(), Some(&[0, 1][..]));
        // Preorder: n0 n1 n3 z0 z1 n4 z2 z3 n2 ...
        assert_eq!(g.node_name(0), "n0");
        assert_eq!(g.node_name(1), "n1");
        assert_eq!(g.node_name(2), "n3");
        assert_eq!(g.node_name(3), "z0");
    }

    #[test]
    fn write_then_parse_is_identity() {
        let g = build_game(COORD2).unwrap();
        let text = write_game(&g);
        let g2 = build_game(&text).unwrap();
        assert_eq!(g, g2);
        let text2 = write_game(&g2);
        assert_eq!(text, text2, "writer output is stable");
    }

    #[test]
    fn header_required() {
        let err = build_game("players A\n").unwrap_err();
        assert!(err.to_string().contains("expected header"), "{err}");
    }

    #[test]
    fn syntax_error_carries_line_and_column() {
        let doc = "efgdesc v1\nplayers A\nroot z\nnode z terminal payoffs=oops\n";
        let err = build_game(doc).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("line 4, column 25:"), "got: {msg}");
        assert!(msg.contains("expected a number"), "got: {msg}");
    }

    #[test]
    fn unknown_directive_rejected() {
        let doc = "efgdesc v1\nplayers A\nbogus x\n";
        let err = build_game(doc).unwrap_err();
        assert!(err.to_string().contains("unknown directive `bogus`"), "{err}");
    }

    #[test]
    fn bad_chance_sum_propagates_validation_error() {
        let doc = "\
efgdesc v1
players A
root c
node c chance actions=L:0.6,R:0.3
node l terminal payoffs=0
node r terminal payoffs=1
edge c L l
edge c R r
";
        let err = build_game(doc).unwrap_err();
        assert!(err.to_string().contains("chance distribution sums to 0.9"), "{err}");
    }

    #[test]
    fn duplicate_node_rejected() {
        let doc = "\
efgdesc v1
players A
root z
node z terminal payoffs=0
node z terminal payoffs=1
";
        let err = build_game(doc).unwrap_err();
        assert!(err.to_string().contains("duplicate node `z`"), "{err}");
    }

    #[test]
    fn chance_probabilities_roundtrip_exactly() {
        let doc = "\
efgdesc v1
players A
chance Nature
root c
node c chance actions=a:0.1,b:0.2,c:0.30000000000000004,d:0.4
node z0 terminal payoffs=0.5
node z1 terminal payoffs=-1.25
node z2 terminal payoffs=3
node z3 terminal payoffs=0
edge c a z0
edge c b z1
edge c c z2
edge c d z3
";
        let g = build_game(doc).unwrap();
        let g2 = build_game(&write_game(&g)).unwrap();
        assert_eq!(g, g2);
    }
}
