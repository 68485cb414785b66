//! Signal-mediated strategies: a learnable categorical distribution over
//! exogenous signals plus one signal-conditioned tabular policy per team
//! member. A signal drawn once per episode lets decentralized policies
//! reproduce the correlation a coordinated strategy needs, and the whole
//! bundle is trained by supervised imitation of a buffer of purged records.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{ActionIdx, Game, Node, NodeId, PlayerId, StateId};
use crate::plans::{enumerate_reduced_plans, PlanError};
use crate::rng::stage_rng;
use crate::sampling::{SampleRecord, TrajectoryBuffer};
use crate::strategy::{CoordinatedStrategy, ReducedPlan, StrategyRef};

/// Joint plan tuples are enumerated when exporting to a coordinated
/// strategy; same budget as the exact solver's matrix build.
pub const PLAN_CAP: usize = 1_000_000;

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SimsError {
    #[error("training buffer is empty")]
    EmptyBuffer,
    #[error("loss needs a nonempty batch")]
    EmptyBatch,
    #[error("game declares no team")]
    NoTeam,
    #[error("bad config: {0}")]
    BadConfig(&'static str),
    #[error("record shape does not match the policies: {0}")]
    BadRecord(String),
    #[error("no policy entry for state {0}")]
    UnknownObservation(StateId),
    #[error("state {state} has no signal slot {signal}")]
    UnknownSignal { state: StateId, signal: usize },
    #[error("target {target} is out of range at state {state}")]
    BadTarget { state: StateId, target: ActionIdx },
    #[error("expected {expected} per-signal distributions, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("joint plan space has {size} tuples, over the cap {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Categorical distribution over signals, kept as free logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalDistribution {
    pub n: usize,
    pub theta: Vec<f64>,
}

impl SignalDistribution {
    pub fn uniform(n: usize) -> Self {
        SignalDistribution { n, theta: vec![0.0; n] }
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.theta)
    }
}

/// One member's tabular policy: logits per (own information state, signal),
/// `phi[state][signal]` aligned with the state's action list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPolicy {
    pub owner: PlayerId,
    pub phi: BTreeMap<StateId, Vec<Vec<f64>>>,
}

impl SignalPolicy {
    /// Action distribution at `state` under signal `xi`.
    pub fn dist(&self, state: StateId, xi: usize) -> Option<Vec<f64>> {
        self.phi.get(&state).and_then(|per| per.get(xi)).map(|l| softmax(l))
    }
}

/// The full bundle: signal distribution plus one policy per member, in
/// team order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalMediatedStrategy {
    pub mu_s: SignalDistribution,
    pub policies: Vec<SignalPolicy>,
}

impl SignalMediatedStrategy {
    pub fn team(&self) -> Vec<PlayerId> {
        self.policies.iter().map(|p| p.owner).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimsConfig {
    pub n_signals: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta_init: f64,
    pub beta_end: f64,
    /// Signal-distribution gradients are accumulated and applied once per
    /// this many iterations; per-state policy gradients apply every step.
    pub n_sig: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for SimsConfig {
    fn default() -> Self {
        SimsConfig {
            n_signals: 5,
            batch_size: 128,
            learning_rate: 0.1,
            beta_init: 0.0,
            beta_end: 1.0,
            n_sig: 20,
            iterations: 20_000,
            seed: 0,
        }
    }
}

impl SimsConfig {
    /// Same settings with a 1e-3 learning rate: slower, but robust when
    /// gradients are noisy.
    pub fn small_lr() -> Self {
        SimsConfig { learning_rate: 1e-3, ..Self::default() }
    }

    /// Entropy coefficient at one iteration: held at `beta_init` for the
    /// first half of training, then raised linearly to `beta_end` by the
    /// final iteration.
    pub fn beta_at(&self, iteration: usize) -> f64 {
        let half = self.iterations / 2;
        if iteration < half || self.iterations <= 1 {
            return self.beta_init;
        }
        let last = self.iterations - 1;
        if last == half {
            return self.beta_end;
        }
        let t = ((iteration - half) as f64 / (last - half) as f64).min(1.0);
        self.beta_init + (self.beta_end - self.beta_init) * t
    }

    fn validate(&self) -> Result<(), SimsError> {
        if self.n_signals == 0 {
            return Err(SimsError::BadConfig("n_signals must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(SimsError::BadConfig("batch_size must be at least 1"));
        }
        if self.n_sig == 0 {
            return Err(SimsError::BadConfig("n_sig must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(SimsError::BadConfig("learning_rate must be positive and finite"));
        }
        if !(self.beta_init.is_finite() && self.beta_end.is_finite()) {
            return Err(SimsError::BadConfig("beta endpoints must be finite"));
        }
        Ok(())
    }
}

/// Gradients of `sims_loss`, mirroring the parameter layout. Policy maps
/// hold entries only for states the batch visits.
#[derive(Debug, Clone, PartialEq)]
pub struct SimsGradients {
    pub theta: Vec<f64>,
    pub policies: Vec<BTreeMap<StateId, Vec<Vec<f64>>>>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

/// Shannon entropy in nats; zero-probability terms contribute nothing.
fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Product distribution over joint action tuples for one signal, one state
/// per member, laid out row-major with the first member varying slowest.
pub fn joint_action_distribution(
    policies: &[SignalPolicy],
    obs: &[StateId],
    xi: usize,
) -> Result<Vec<f64>, SimsError> {
    if obs.len() != policies.len() {
        return Err(SimsError::LengthMismatch { expected: policies.len(), got: obs.len() });
    }
    let dists: Vec<Vec<f64>> = policies
        .iter()
        .zip(obs)
        .map(|(pol, &s)| {
            let per = pol.phi.get(&s).ok_or(SimsError::UnknownObservation(s))?;
            let logits =
                per.get(xi).ok_or(SimsError::UnknownSignal { state: s, signal: xi })?;
            Ok(softmax(logits))
        })
        .collect::<Result<_, SimsError>>()?;
    let mut joint = vec![1.0];
    for d in &dists {
        let mut next = Vec::with_capacity(joint.len() * d.len());
        for &x in &joint {
            for &y in d {
                next.push(x * y);
            }
        }
        joint = next;
    }
    Ok(joint)
}

/// Convex combination of per-signal joint distributions under the signal
/// probabilities.
pub fn marginal_distribution(
    per_signal: &[Vec<f64>],
    mu_s: &SignalDistribution,
) -> Result<Vec<f64>, SimsError> {
    if per_signal.len() != mu_s.n {
        return Err(SimsError::LengthMismatch { expected: mu_s.n, got: per_signal.len() });
    }
    let probs = mu_s.probs();
    let len = per_signal.first().map_or(0, Vec::len);
    let mut out = vec![0.0; len];
    for (k, dist) in per_signal.iter().enumerate() {
        if dist.len() != len {
            return Err(SimsError::LengthMismatch { expected: len, got: dist.len() });
        }
        for (o, &x) in out.iter_mut().zip(dist) {
            *o += probs[k] * x;
        }
    }
    Ok(out)
}

/// Supervised loss of one batch and its exact gradients.
///
/// Per record: the signal-conditioned probability of the record's full
/// action profile is `p_k = prod over (member, move) of pi(target | obs,
/// signal k)`; the classification part is `-ln(sum_k mu_s[k] p_k)` (floored
/// at 1e-12), and the regularizer adds `beta * sum_k mu_s[k] * sum over
/// visited (member, move) of H(pi(.|obs, signal k))`, pushing each
/// per-signal policy toward a pure strategy. Both parts are averaged over
/// the batch, and the gradients run through every softmax, including the
/// signal logits.
pub fn sims_loss(
    batch: &[&SampleRecord],
    mu_s: &SignalDistribution,
    policies: &[SignalPolicy],
    beta: f64,
) -> Result<(f64, SimsGradients), SimsError> {
    if batch.is_empty() {
        return Err(SimsError::EmptyBatch);
    }
    let n = mu_s.n;
    let mu = mu_s.probs();
    let mut loss = 0.0;
    let mut g_theta = vec![0.0; n];
    let mut g_phi: Vec<BTreeMap<StateId, Vec<Vec<f64>>>> =
        (0..policies.len()).map(|_| BTreeMap::new()).collect();

    for rec in batch {
        if rec.observations.len() != policies.len() || rec.targets.len() != policies.len() {
            return Err(SimsError::BadRecord(format!(
                "record has {} members, policies cover {}",
                rec.observations.len(),
                policies.len()
            )));
        }
        // Gather every (member, state, target) step with its per-signal
        // action distributions.
        struct Step {
            member: usize,
            state: StateId,
            target: ActionIdx,
            dists: Vec<Vec<f64>>, // one per signal
        }
        let mut steps = Vec::new();
        for (j, (obs, tgt)) in rec.observations.iter().zip(&rec.targets).enumerate() {
            if obs.len() != tgt.len() {
                return Err(SimsError::BadRecord(format!(
                    "member {j} has {} observations but {} targets",
                    obs.len(),
                    tgt.len()
                )));
            }
            for (&s, &t) in obs.iter().zip(tgt) {
                let per = policies[j].phi.get(&s).ok_or(SimsError::UnknownObservation(s))?;
                if per.len() != n {
                    return Err(SimsError::LengthMismatch { expected: n, got: per.len() });
                }
                if t >= per[0].len() {
                    return Err(SimsError::BadTarget { state: s, target: t });
                }
                let dists = per.iter().map(|l| softmax(l)).collect();
                steps.push(Step { member: j, state: s, target: t, dists });
            }
        }

        // Per-signal profile probability and visited-state entropy.
        let mut p = vec![1.0; n];
        let mut ent = vec![0.0; n];
        for st in &steps {
            for k in 0..n {
                p[k] *= st.dists[k][st.target];
                ent[k] += entropy(&st.dists[k]);
            }
        }
        let a: f64 = (0..n).map(|k| mu[k] * p[k]).sum();
        let clamped = a > LOG_FLOOR;
        let le: f64 = (0..n).map(|k| mu[k] * ent[k]).sum();
        loss += -a.max(LOG_FLOOR).ln() + beta * le;

        // Policy gradients.
        for st in &steps {
            let slot = g_phi[st.member].entry(st.state).or_insert_with(|| {
                st.dists.iter().map(|d| vec![0.0; d.len()]).collect::<Vec<_>>()
            });
            for k in 0..n {
                let d = &st.dists[k];
                let h_own = entropy(d);
                let coef = if clamped { -mu[k] * p[k] / a } else { 0.0 };
                for (b, &pb) in d.iter().enumerate() {
                    let delta = if b == st.target { 1.0 } else { 0.0 };
                    let mut g = coef * (delta - pb);
                    if pb > 0.0 {
                        g += beta * mu[k] * (-pb * (pb.ln() + h_own));
                    }
                    slot[k][b] += g;
                }
            }
        }

        // Signal gradients: dL/dmu_k, pushed through the theta softmax.
        let mut c = vec![0.0; n];
        for k in 0..n {
            c[k] = if clamped { -p[k] / a } else { 0.0 } + beta * ent[k];
        }
        let avg: f64 = (0..n).map(|k| mu[k] * c[k]).sum();
        for l in 0..n {
            g_theta[l] += mu[l] * (c[l] - avg);
        }
    }

    let scale = 1.0 / batch.len() as f64;
    loss *= scale;
    for g in &mut g_theta {
        *g *= scale;
    }
    for per in &mut g_phi {
        for grid in per.values_mut() {
            for row in grid {
                for g in row {
                    *g *= scale;
                }
            }
        }
    }
    Ok((loss, SimsGradients { theta: g_theta, policies: g_phi }))
}

/// Train on a buffer, reporting `(iteration, loss, beta)` after every
/// step with the parameters as they stand.
pub fn train_sims_with(
    buffer: &TrajectoryBuffer,
    game: &Game,
    config: &SimsConfig,
    mut report: impl FnMut(usize, f64, f64, &SignalMediatedStrategy),
) -> Result<SignalMediatedStrategy, SimsError> {
    config.validate()?;
    let records: Vec<&SampleRecord> = buffer.records().collect();
    if records.is_empty() {
        return Err(SimsError::EmptyBuffer);
    }
    let team = game.team().ok_or(SimsError::NoTeam)?;
    let n = config.n_signals;

    // Zero logits are a saddle of the signal-permutation symmetry; tiny
    // seeded noise breaks the ties reproducibly.
    let mut init = stage_rng(config.seed, "sims-init");
    let mut noise = |len: usize| -> Vec<f64> {
        (0..len).map(|_| init.gen_range(-0.01..=0.01)).collect()
    };
    let mu_s = SignalDistribution { n, theta: noise(n) };
    let policies: Vec<SignalPolicy> = team
        .iter()
        .map(|&owner| {
            let mut phi = BTreeMap::new();
            for &s in game.states_of(owner) {
                let arity = game.state(s).n_actions();
                phi.insert(s, (0..n).map(|_| noise(arity)).collect::<Vec<_>>());
            }
            SignalPolicy { owner, phi }
        })
        .collect();
    let mut sms = SignalMediatedStrategy { mu_s, policies };

    let mut rng = stage_rng(config.seed, "sims-train");
    // The averaged period gradient makes one learning-rate-sized signal
    // step per period: the signal distribution drifts slowly and smoothly
    // while the policies differentiate, instead of racing ahead of them
    // and collapsing onto whichever signal fits first.
    let mut theta_acc = vec![0.0; n];
    let mut accumulated = 0usize;
    for it in 0..config.iterations {
        let beta = config.beta_at(it);
        let batch: Vec<&SampleRecord> =
            (0..config.batch_size).map(|_| records[rng.gen_range(0..records.len())]).collect();
        let (loss, grads) = sims_loss(&batch, &sms.mu_s, &sms.policies, beta)?;

        for (pol, gp) in sms.policies.iter_mut().zip(&grads.policies) {
            for (s, grid) in gp {
                let logits = pol.phi.get_mut(s).expect("gradient key came from the table");
                for (row, grow) in logits.iter_mut().zip(grid) {
                    for (l, g) in row.iter_mut().zip(grow) {
                        *l -= config.learning_rate * g;
                    }
                }
            }
        }
        for (acc, g) in theta_acc.iter_mut().zip(&grads.theta) {
            *acc += g;
        }
        accumulated += 1;
        if accumulated == config.n_sig {
            for (t, acc) in sms.mu_s.theta.iter_mut().zip(&mut theta_acc) {
                *t -= config.learning_rate * *acc / accumulated as f64;
                *acc = 0.0;
            }
            accumulated = 0;
        }
        report(it, loss, beta, &sms);
    }
    if accumulated > 0 {
        for (t, acc) in sms.mu_s.theta.iter_mut().zip(&theta_acc) {
            *t -= config.learning_rate * acc / accumulated as f64;
        }
    }
    Ok(sms)
}

/// Mini-batch gradient descent over the buffer: policy logits update every
/// step, signal logits on the accumulation period, with the entropy
/// coefficient following the two-phase schedule.
pub fn train_sims(
    buffer: &TrajectoryBuffer,
    game: &Game,
    config: &SimsConfig,
) -> Result<SignalMediatedStrategy, SimsError> {
    train_sims_with(buffer, game, config, |_, _, _, _| {})
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Play one episode on the original game: a signal is drawn once up front,
/// each member then acts from its signal-conditioned policy, and the
/// opponent from its own strategy (plan forms are drawn once at the start).
/// Returns the reached leaf and the team's payoff there.
pub fn play_episode(
    sms: &SignalMediatedStrategy,
    game: &Game,
    opponent: StrategyRef<'_>,
    rng: &mut ChaCha8Rng,
) -> (NodeId, f64) {
    let xi = draw(rng, &sms.mu_s.probs());
    // Mixed opponent forms commit to a pure plan per episode.
    let opp_plans: Vec<(PlayerId, &ReducedPlan)> = match opponent {
        StrategyRef::Behavioral(_) => Vec::new(),
        StrategyRef::NormalForm(nf) => {
            let weights: Vec<f64> = nf.support().iter().map(|(_, w)| *w).collect();
            let i = draw(rng, &weights);
            vec![(nf.owner, &nf.support()[i].0)]
        }
        StrategyRef::Coordinated(c) => {
            let weights: Vec<f64> = c.support().iter().map(|(_, w)| *w).collect();
            let i = draw(rng, &weights);
            c.team.iter().copied().zip(c.support()[i].0.iter()).collect()
        }
    };

    let mut node = game.root();
    loop {
        match game.node(node) {
            Node::Terminal { .. } => {
                let member0 = sms.policies.first().map_or(0, |p| p.owner);
                return (node, game.payoff(node, member0));
            }
            Node::Chance { probs, children, .. } => node = children[draw(rng, probs)],
            Node::Decision { state, children } => {
                let owner = game.state(*state).owner;
                let a = if let Some(pol) = sms.policies.iter().find(|p| p.owner == owner) {
                    let d = pol.dist(*state, xi).expect("policy covers every owner state");
                    draw(rng, &d)
                } else if let Some((_, plan)) =
                    opp_plans.iter().find(|(p, _)| *p == owner)
                {
                    plan.choice(*state).unwrap_or(0)
                } else if let StrategyRef::Behavioral(b) = opponent {
                    draw(rng, &b.dist[state])
                } else {
                    unreachable!("every decision belongs to a member or the opponent")
                };
                node = children[a];
            }
        }
    }
}

/// Expand the bundle into an explicit coordinated strategy: the weight of a
/// plan tuple is the signal-mixture probability that every member, under
/// the drawn signal, picks exactly that plan's actions across its domain.
pub fn to_coordinated_strategy(
    sms: &SignalMediatedStrategy,
    game: &Game,
) -> Result<CoordinatedStrategy, SimsError> {
    let members = sms.team();
    let per_member: Vec<Vec<ReducedPlan>> = members
        .iter()
        .map(|&m| enumerate_reduced_plans(game, m))
        .collect::<Result<_, PlanError>>()?;
    let mut joint = 1usize;
    for plans in &per_member {
        joint = joint
            .checked_mul(plans.len())
            .filter(|&j| j <= PLAN_CAP)
            .ok_or(SimsError::TooLarge { size: usize::MAX, cap: PLAN_CAP })?;
    }
    if joint > PLAN_CAP {
        return Err(SimsError::TooLarge { size: joint, cap: PLAN_CAP });
    }
    let n = sms.mu_s.n;
    let mu = sms.mu_s.probs();

    // q[j][i][k]: probability member j realizes plan i under signal k.
    let mut q: Vec<Vec<Vec<f64>>> = Vec::with_capacity(members.len());
    for (j, plans) in per_member.iter().enumerate() {
        let mut rows = Vec::with_capacity(plans.len());
        for plan in plans {
            let mut row = vec![1.0; n];
            for (&s, &a) in &plan.choices {
                let per = sms.policies[j].phi.get(&s).ok_or(SimsError::UnknownObservation(s))?;
                if per.len() != n {
                    return Err(SimsError::LengthMismatch { expected: n, got: per.len() });
                }
                for (k, logits) in per.iter().enumerate() {
                    row[k] *= softmax(logits)[a];
                }
            }
            rows.push(row);
        }
        q.push(rows);
    }

    let mut entries = Vec::new();
    let mut idx = vec![0usize; members.len()];
    loop {
        let mut w = 0.0;
        for k in 0..n {
            let mut t = mu[k];
            for (j, &i) in idx.iter().enumerate() {
                t *= q[j][i][k];
            }
            w += t;
        }
        if w > 0.0 {
            let tuple: Vec<ReducedPlan> =
                idx.iter().enumerate().map(|(j, &i)| per_member[j][i].clone()).collect();
            entries.push((tuple, w));
        }
        // Odometer over the joint index space.
        let mut pos = members.len();
        loop {
            if pos == 0 {
                return Ok(CoordinatedStrategy::new(members, entries));
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < per_member[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}
