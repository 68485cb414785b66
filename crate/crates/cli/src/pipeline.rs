//! The single-stage subcommands: each is a thin wrapper over one library
//! operation plus file plumbing, so a pipeline can be driven step by step
//! and every intermediate artifact inspected.

use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};

use tmecor::eval::{evaluate, heatmap, EvalContext, EvalReport, Heatmap};
use tmecor::game::{Game, PlayerId, StateId};
use tmecor::games::{
    coordination_game, patrolling_game, CoordinationSpec, PatrollingLayout, PatrollingSpec,
};
use tmecor::refinement::{perfect_recall_refinement, recall_report, RefinementMap};
use tmecor::rng::stage_rng;
use tmecor::sampling::{
    coordinated_to_refined_behavioral, sample_from_equilibrium, sample_fsp, FspConfig,
    TrajectoryBuffer,
};
use tmecor::sims::{train_sims, train_sims_with, SignalMediatedStrategy, SimsConfig};
use tmecor::solver::{default_tol, tmecor_bruteforce, tmecor_via_refinement, SolveResult};
use tmecor::strategy::{strategy_to_json, BehavioralStrategy, Strategy};
use tmecor::text::{build_game, write_game};

/// Output directory fallback when a command doesn't get one explicitly.
pub const OUT_DIR_VAR: &str = "TMECOR_OUT";

pub fn default_out_dir() -> PathBuf {
    env::var_os(OUT_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

/// An explicit output path wins; otherwise the command's stock filename
/// goes into the default output directory.
fn out_or(out: &Option<PathBuf>, stock: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| default_out_dir().join(stock))
}

#[derive(Args, Clone)]
pub struct GameArgs {
    /// Benchmark name (coord-2, coord-4, coord-2-imb, patrolling_4_3) or
    /// path to a game description file.
    #[arg(long)]
    pub game: Option<String>,
    /// Unanimity payoff of the coordination games (the left side).
    #[arg(long = "K")]
    pub k: Option<f64>,
    /// Right-side unanimity payoff, for the imbalanced variants.
    #[arg(long = "K-right")]
    pub k_right: Option<f64>,
    /// Grid side of the patrolling game.
    #[arg(long)]
    pub grid_side: Option<usize>,
    /// Walk length of the patrolling game.
    #[arg(long)]
    pub steps: Option<usize>,
}

impl GameArgs {
    /// Resolve the argument set to a game, plus the grid geometry when the
    /// game has one.
    pub fn load(&self) -> Result<(Game, Option<PatrollingLayout>)> {
        let name = self.game.as_deref().ok_or_else(|| anyhow!("no game given: pass --game"))?;
        if Path::new(name).is_file() {
            let text = fs::read_to_string(name).with_context(|| format!("reading {name}"))?;
            let game = build_game(&text).with_context(|| format!("parsing {name}"))?;
            return Ok((game, None));
        }
        let k = self.k.unwrap_or(100.0);
        match name {
            "coord-2" | "coord2" => {
                let spec = CoordinationSpec::new(2, k, self.k_right.unwrap_or(k));
                Ok((coordination_game(&spec)?, None))
            }
            "coord-4" | "coord4" => {
                let spec = CoordinationSpec::new(4, k, self.k_right.unwrap_or(k));
                Ok((coordination_game(&spec)?, None))
            }
            "coord-2-imb" | "coord2-imb" => {
                let spec = CoordinationSpec::new(2, k, self.k_right.unwrap_or(50.0));
                Ok((coordination_game(&spec)?, None))
            }
            "patrolling_4_3" | "patrolling" => {
                let spec =
                    PatrollingSpec::new(self.grid_side.unwrap_or(3), 4, self.steps.unwrap_or(3));
                Ok((patrolling_game(&spec)?, Some(spec.layout()?)))
            }
            other => bail!("unknown game {other:?}: not a benchmark name and no such file"),
        }
    }
}

/// Comma-separated member names, or the game's declared team.
pub fn resolve_team(game: &Game, team: &Option<String>) -> Result<Vec<PlayerId>> {
    match team {
        Some(list) => list
            .split(',')
            .map(|n| {
                let n = n.trim();
                game.player_index(n).ok_or_else(|| anyhow!("no player named {n:?}"))
            })
            .collect(),
        None => match game.team() {
            Some(t) => Ok(t.to_vec()),
            None => bail!("the game declares no team; pass --team"),
        },
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------- build

#[derive(Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub game: GameArgs,
    /// Where to write the game description [default: game.efg in the
    /// output directory].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_build(args: &BuildArgs) -> Result<()> {
    let (game, _) = args.game.load()?;
    let out = out_or(&args.out, "game.efg");
    write_file(&out, &write_game(&game))?;
    println!(
        "wrote {}: {} players, {} nodes, {} states, {} leaves",
        out.display(),
        game.n_players(),
        game.n_nodes(),
        game.n_states(),
        game.n_leaves(),
    );
    Ok(())
}

// --------------------------------------------------------------- refine

#[derive(Args)]
pub struct RefineArgs {
    /// Game description file to refine (alternative to --game).
    #[arg(long = "in", value_name = "FILE", conflicts_with = "game")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub game: GameArgs,
    /// Comma-separated team member names; defaults to the declared team.
    #[arg(long)]
    pub team: Option<String>,
    /// Where to write the refined game description [default: g_star.efg in
    /// the output directory].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Where to write the JSON recall/split report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Split statistics plus the meta-player's recall check, as one JSON value.
pub fn refinement_report(map: &RefinementMap, team: &[PlayerId]) -> serde_json::Value {
    let mut pieces: BTreeMap<StateId, usize> = BTreeMap::new();
    for (&rs, &os) in &map.state_map {
        if map.refined.state(rs).owner == map.player {
            *pieces.entry(os).or_default() += 1;
        }
    }
    let splits: Vec<serde_json::Value> = pieces
        .iter()
        .filter(|&(_, &c)| c > 1)
        .map(|(&os, &c)| {
            serde_json::json!({
                "original_state": map.original.state(os).name,
                "pieces": c,
            })
        })
        .collect();
    let team_names: Vec<&str> =
        team.iter().map(|&p| map.original.players()[p].as_str()).collect();
    serde_json::json!({
        "team": team_names,
        "meta_player": map.player,
        "via_information_sharing": map.via_information_sharing,
        "original_states": map.original.n_states(),
        "refined_states": map.refined.n_states(),
        "split_count": splits.len(),
        "splits": splits,
        "meta_recall": recall_report(&map.refined, map.player),
    })
}

pub fn run_refine(args: &RefineArgs) -> Result<()> {
    let game = match &args.input {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            build_game(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => args.game.load()?.0,
    };
    let team = resolve_team(&game, &args.team)?;
    let map = perfect_recall_refinement(&game, &team)?;
    write_file(&out_or(&args.out, "g_star.efg"), &write_game(&map.refined))?;
    let report = refinement_report(&map, &team);
    if let Some(path) = &args.report {
        write_file(path, &format!("{:#}\n", report))?;
    }
    println!(
        "refined {} -> {} states ({} split), meta player perfect recall: {}",
        map.original.n_states(),
        map.refined.n_states(),
        report["split_count"],
        report["meta_recall"]["perfect_recall"],
    );
    Ok(())
}

// ---------------------------------------------------------------- solve

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum SolveMethod {
    /// Solve the joint-plan matrix game directly.
    Bruteforce,
    /// Refine to perfect recall and run fictitious play.
    Refinement,
}

#[derive(Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub game: GameArgs,
    #[arg(long)]
    pub team: Option<String>,
    #[arg(long, value_enum, default_value_t = SolveMethod::Bruteforce)]
    pub method: SolveMethod,
    /// Duality-gap tolerance; defaults to a payoff-scaled value.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 500_000)]
    pub max_iters: usize,
    /// Where to write the solution (value, gap, strategies) as JSON
    /// [default: strategy.json in the output directory].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Solution plus provenance as one JSON value; strategies embed in their
/// canonical serialized form.
pub fn solution_json(game: &Game, method: &str, tol: f64, r: &SolveResult) -> Result<serde_json::Value> {
    let team: serde_json::Value =
        serde_json::from_str(&strategy_to_json(game, r.team_strategy.as_ref()))?;
    let opponent: serde_json::Value =
        serde_json::from_str(&strategy_to_json(game, r.opponent_strategy.as_ref()))?;
    Ok(serde_json::json!({
        "method": method,
        "tol": tol,
        "value": r.value,
        "epsilon": r.epsilon,
        "iterations": r.iterations,
        "warnings": r.warnings,
        "team_strategy": team,
        "opponent_strategy": opponent,
    }))
}

pub fn run_solve(args: &SolveArgs) -> Result<()> {
    let (game, _) = args.game.load()?;
    let team = resolve_team(&game, &args.team)?;
    let tol = args.tol.unwrap_or_else(|| default_tol(&game));
    let (name, result) = match args.method {
        SolveMethod::Bruteforce => {
            ("bruteforce", tmecor_bruteforce(&game, &team, tol, args.max_iters)?)
        }
        SolveMethod::Refinement => {
            ("refinement", tmecor_via_refinement(&game, &team, tol, args.max_iters)?)
        }
    };
    let doc = solution_json(&game, name, tol, &result)?;
    write_file(&out_or(&args.out, "strategy.json"), &format!("{:#}\n", doc))?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "value {:.3} (epsilon {:.4}, {} iterations, {name})",
        result.value, result.epsilon, result.iterations
    );
    Ok(())
}

// --------------------------------------------------------------- sample

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum SampleMethod {
    /// Fictitious self-play in the refined game.
    Fsp,
    /// Roll out the solved optimum against a uniformly exploring opponent.
    Equilibrium,
}

#[derive(Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub game: GameArgs,
    #[arg(long)]
    pub team: Option<String>,
    #[arg(long, value_enum, default_value_t = SampleMethod::Fsp)]
    pub method: SampleMethod,
    #[arg(long, default_value_t = 20_000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Buffer capacity; defaults to the episode count.
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Solve tolerance for the equilibrium sampler.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Where to write the buffer, one JSON record per line [default:
    /// buffer.jsonl in the output directory].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Build the buffer without touching the filesystem; shared with reproduce.
pub fn sample_buffer(
    game: &Game,
    map: &RefinementMap,
    team: &[PlayerId],
    method: SampleMethod,
    episodes: usize,
    capacity: usize,
    tol: f64,
    seed: u64,
) -> Result<TrajectoryBuffer> {
    match method {
        SampleMethod::Fsp => {
            let cfg = FspConfig { capacity, ..FspConfig::default() };
            let outcome = sample_fsp(game, map, &cfg, episodes, seed)?;
            if let Some((ep, eps)) = outcome.eps_series.last() {
                println!("self-play exploitability after {ep} episodes: {eps:.4}");
            }
            Ok(outcome.buffer)
        }
        SampleMethod::Equilibrium => {
            let brute = tmecor_bruteforce(game, team, tol, 500_000)?;
            let Strategy::Coordinated(mu) = brute.team_strategy else {
                unreachable!("direct solve always yields a coordinated mixture")
            };
            let lifted = coordinated_to_refined_behavioral(game, map, &mu)?;
            let explore = BehavioralStrategy::uniform(&map.refined, 1 - map.player);
            Ok(sample_from_equilibrium(game, map, &lifted, &explore, episodes, capacity, seed)?)
        }
    }
}

pub fn run_sample(args: &SampleArgs) -> Result<()> {
    let (game, _) = args.game.load()?;
    let team = resolve_team(&game, &args.team)?;
    let map = perfect_recall_refinement(&game, &team)?;
    let tol = args.tol.unwrap_or_else(|| default_tol(&game));
    let capacity = args.capacity.unwrap_or(args.episodes);
    let buffer = sample_buffer(
        &game,
        &map,
        &team,
        args.method,
        args.episodes,
        capacity,
        tol,
        args.seed,
    )?;
    let out = out_or(&args.out, "buffer.jsonl");
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file =
        fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    buffer.write_jsonl(BufWriter::new(file))?;
    println!("wrote {} records to {}", buffer.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args)]
pub struct TrainArgs {
    /// Buffer file, one JSON record per line.
    #[arg(long)]
    pub buffer: PathBuf,
    #[command(flatten)]
    pub game: GameArgs,
    #[arg(long)]
    pub team: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub signals: usize,
    #[arg(long = "iters", default_value_t = 20_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub beta_init: Option<f64>,
    #[arg(long)]
    pub beta_end: Option<f64>,
    /// Where to write the trained strategy bundle as JSON [default:
    /// sms.json in the output directory].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional CSV of loss and evaluation metrics every 50 iterations.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Monte Carlo episodes per logged evaluation.
    #[arg(long, default_value_t = 100)]
    pub eval_episodes: usize,
    /// Solve tolerance for the logged evaluations.
    #[arg(long)]
    pub tol: Option<f64>,
}

pub fn read_buffer(path: &Path) -> Result<TrajectoryBuffer> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let records = text.lines().filter(|l| !l.trim().is_empty()).count();
    Ok(TrajectoryBuffer::read_jsonl(Cursor::new(text), records.max(1))?)
}

fn sims_config(args: &TrainArgs) -> SimsConfig {
    let mut config = SimsConfig {
        n_signals: args.signals,
        iterations: args.iterations,
        seed: args.seed,
        ..SimsConfig::default()
    };
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }
    if let Some(batch) = args.batch {
        config.batch_size = batch;
    }
    if let Some(b) = args.beta_init {
        config.beta_init = b;
    }
    if let Some(b) = args.beta_end {
        config.beta_end = b;
    }
    config
}

pub const METRICS_HEADER: &str = "iteration,loss,beta,reward_mean,reward_std,exploitability,kl";

pub fn metrics_row(iteration: usize, loss: f64, beta: f64, r: &EvalReport) -> String {
    format!(
        "{iteration},{loss:.6},{beta:.6},{:.6},{:.6},{:.6},{:.6}",
        r.reward_mean, r.reward_std, r.exploitability, r.kl
    )
}

/// Train with a 50-iteration evaluation cadence, returning the bundle, the
/// metric rows (no header), and the last iteration's loss.
pub fn train_logged(
    buffer: &TrajectoryBuffer,
    game: &Game,
    ctx: &EvalContext,
    config: &SimsConfig,
    eval_episodes: usize,
) -> Result<(SignalMediatedStrategy, Vec<String>, f64)> {
    let mut rows = Vec::new();
    let mut eval_err = None;
    let mut final_loss = f64::NAN;
    let sms = train_sims_with(buffer, game, config, |it, loss, beta, sms| {
        let done = it + 1;
        if done == config.iterations {
            final_loss = loss;
        }
        if eval_err.is_some() || (done % 50 != 0 && done != config.iterations) {
            return;
        }
        match evaluate(game, ctx, sms, eval_episodes, 1, config.seed) {
            Ok(report) => rows.push(metrics_row(done, loss, beta, &report)),
            Err(e) => eval_err = Some(e),
        }
    })?;
    if let Some(e) = eval_err {
        return Err(e.into());
    }
    Ok((sms, rows, final_loss))
}

pub fn run_train(args: &TrainArgs) -> Result<()> {
    let (game, _) = args.game.load()?;
    let buffer = read_buffer(&args.buffer)?;
    let config = sims_config(args);
    let sms = match &args.log {
        Some(log_path) => {
            let team = resolve_team(&game, &args.team)?;
            let tol = args.tol.unwrap_or_else(|| default_tol(&game));
            let ctx = EvalContext::solve(&game, &team, tol, 500_000)?;
            let (sms, rows, _) =
                train_logged(&buffer, &game, &ctx, &config, args.eval_episodes)?;
            let mut csv = String::from(METRICS_HEADER);
            csv.push('\n');
            for row in &rows {
                csv.push_str(row);
                csv.push('\n');
            }
            write_file(log_path, &csv)?;
            sms
        }
        None => train_sims(&buffer, &game, &config)?,
    };
    let out = out_or(&args.out, "sms.json");
    write_file(&out, &format!("{}\n", serde_json::to_string_pretty(&sms)?))?;
    println!(
        "trained {} signals for {} iterations on {} records -> {}",
        config.n_signals,
        config.iterations,
        buffer.len(),
        out.display(),
    );
    Ok(())
}

// ----------------------------------------------------------------- eval

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub game: GameArgs,
    #[arg(long)]
    pub team: Option<String>,
    /// Trained strategy bundle to score.
    #[arg(long)]
    pub sms: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Episodes per heatmap on grid games.
    #[arg(long, default_value_t = 4_000)]
    pub heatmap_episodes: usize,
    /// Output directory; defaults to $TMECOR_OUT or the working directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn heatmap_csv(h: &Heatmap) -> String {
    let mut out = String::new();
    for row in &h.grid {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn run_eval(args: &EvalArgs) -> Result<()> {
    let (game, layout) = args.game.load()?;
    let team = resolve_team(&game, &args.team)?;
    let text =
        fs::read_to_string(&args.sms).with_context(|| format!("reading {}", args.sms.display()))?;
    let sms: SignalMediatedStrategy =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.sms.display()))?;
    let tol = args.tol.unwrap_or_else(|| default_tol(&game));
    let ctx = EvalContext::solve(&game, &team, tol, 500_000)?;
    let report = evaluate(&game, &ctx, &sms, args.episodes, args.seeds, args.seed)?;

    let dir = args.out_dir.clone().unwrap_or_else(default_out_dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut csv = String::from("metric,mean,std,episodes,seed\n");
    csv.push_str(&format!(
        "reward,{:.6},{:.6},{},{}\n",
        report.reward_mean, report.reward_std, args.episodes, args.seed
    ));
    csv.push_str(&format!(
        "exploitability,{:.6},0,{},{}\n",
        report.exploitability, args.episodes, args.seed
    ));
    csv.push_str(&format!("kl,{:.6},0,{},{}\n", report.kl, args.episodes, args.seed));
    write_file(&dir.join("metrics.csv"), &csv)?;

    if let Some(layout) = &layout {
        for &p in &team {
            for k in 0..sms.mu_s.n {
                let mut rng = stage_rng(args.seed, &format!("heatmap-{p}-{k}"));
                let h = heatmap(&game, layout, &sms, p, k, args.heatmap_episodes, &mut rng)?;
                let name = format!("heatmap_{}_signal{}.csv", game.players()[p], k);
                write_file(&dir.join(name), &heatmap_csv(&h))?;
            }
        }
    }
    println!(
        "reward {:.3} ± {:.3}, exploitability {:.4}, kl {:.4} -> {}",
        report.reward_mean,
        report.reward_std,
        report.exploitability,
        report.kl,
        dir.display(),
    );
    Ok(())
}
