//! Epoch loop: sample worlds, collect rollouts, update, probe, checkpoint.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::critic::CriticDims;
use super::imitation::{demonstrations, imitation_pretrain, ImitationConfig};
use super::ppo::{ppo_update, OptimizerState, PPOConfig};
use super::reward::RewardWeights;
use super::rollout::collect_rollouts;
use crate::bidding::{Architecture, Observation, PolicyBidder, PolicyParameters, FEATURE_DIM};
use crate::consensus::{run_allocation, team_distance, RunConfig};
use crate::error::{Error, Result};
use crate::io::write_bytes_atomic;
use crate::oracle::{solve, OptimalAssignment, OracleCache, SolverBudget};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::world::{generate_world, WorldInstance, WorldSpec};

/// First world ordinal of the probe set. Training and validation datasets
/// use ordinals far below this.
pub const PROBE_ORDINAL_BASE: u64 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Nam,
    #[default]
    Lstm,
}

impl ActorKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "nam" => Some(ActorKind::Nam),
            "lstm" => Some(ActorKind::Lstm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: ActorKind,
    /// Hidden width of the NAM subnetworks or of the LSTM cell.
    pub hidden: Option<usize>,
    /// Width of the LSTM output head.
    pub head_hidden: Option<usize>,
    pub epochs: usize,
    /// Held-out worlds evaluated after every epoch.
    pub probe_worlds: usize,
    /// Save the latest checkpoint every this many epochs (and at the end).
    pub checkpoint_every: usize,
    pub ppo: PPOConfig,
    pub rewards: RewardWeights,
    pub probe_budget: SolverBudget,
    /// Supervised warm start applied to a fresh actor before epoch 1.
    pub imitation: ImitationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: ActorKind::Lstm,
            hidden: None,
            head_hidden: None,
            epochs: 200,
            probe_worlds: 64,
            checkpoint_every: 10,
            ppo: PPOConfig::default(),
            rewards: RewardWeights::default(),
            probe_budget: SolverBudget::default(),
            imitation: ImitationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self) -> Architecture {
        match self.arch {
            ActorKind::Nam => match self.hidden {
                Some(hidden) => Architecture::Nam { feature_dim: FEATURE_DIM, hidden },
                None => Architecture::default_nam(FEATURE_DIM),
            },
            ActorKind::Lstm => {
                let Architecture::Lstm { hidden, head_hidden, .. } = Architecture::default_lstm(FEATURE_DIM) else {
                    unreachable!()
                };
                Architecture::Lstm {
                    feature_dim: FEATURE_DIM,
                    hidden: self.hidden.unwrap_or(hidden),
                    head_hidden: self.head_hidden.unwrap_or(head_hidden),
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == Some(0) || self.head_hidden == Some(0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::invalid("checkpoint_every must be positive"));
        }
        self.ppo.validate()?;
        self.rewards.validate()?;
        self.imitation.validate()?;
        self.probe_budget.validate()
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?
        };
        config.validate()?;
        Ok(config)
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    /// Mean percent optimality of the deterministic policy over the probe
    /// worlds that converged; 0 when none did.
    pub mean_probe_eta: f64,
    pub probe_timeouts: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    pub mean_return: f64,
    pub rollout_timeouts: usize,
    /// Smallest and largest reward component recorded in the epoch.
    pub min_reward_component: f64,
    pub max_reward_component: f64,
    pub log_std: f64,
}

pub fn write_curve(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(CURVE_HEADER).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    write_bytes_atomic(path, &bytes)
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

const CURVE_HEADER: [&str; 13] = [
    "epoch",
    "mean_probe_eta",
    "probe_timeouts",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_fraction",
    "mean_ratio",
    "mean_return",
    "rollout_timeouts",
    "min_reward_component",
    "max_reward_component",
    "log_std",
];

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

/// Resumable training state persisted next to the checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainState {
    seed: u64,
    config: TrainConfig,
    epochs_done: usize,
    best_eta: f64,
    optimizer: OptimizerState,
    curve: Vec<CurveRow>,
}

/// File names inside a training output directory.
pub struct TrainFiles {
    pub policy: PathBuf,
    pub best: PathBuf,
    pub critic: PathBuf,
    pub curve: PathBuf,
    pub state: PathBuf,
}

impl TrainFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            policy: dir.join("policy.json"),
            best: dir.join("best.json"),
            critic: dir.join("critic.json"),
            curve: dir.join("curve.csv"),
            state: dir.join("train_state.json"),
        }
    }
}

pub struct TrainOutcome {
    /// Actor after the last epoch.
    pub actor: PolicyParameters,
    /// Actor with the best probe score (the initial actor with no epochs).
    pub best: PolicyParameters,
    pub critic: PolicyParameters,
    pub best_eta: Option<f64>,
    pub curve: Vec<CurveRow>,
}

/// Probe worlds: held-out draws from the training distribution.
pub fn probe_set(seed: u64, count: usize) -> Result<Vec<WorldInstance>> {
    let spec = WorldSpec::training();
    (0..count as u64).map(|i| generate_world(seed, PROBE_ORDINAL_BASE + i, &spec)).collect()
}

/// Mean percent optimality of the deterministic `actor` over the
/// converged runs, and the timeout count.
pub fn probe_eta(
    actor: &PolicyParameters,
    worlds: &[WorldInstance],
    oracles: &[OptimalAssignment],
    max_iterations: usize,
) -> Result<(f64, usize)> {
    let config = RunConfig { max_iterations, record_trajectory: false, ..RunConfig::default() };
    let results = worlds
        .par_iter()
        .zip(oracles)
        .map(|(w, o)| {
            let run = run_allocation(w, &mut PolicyBidder::new(actor), &config)?;
            let d = team_distance(&run.states, w);
            Ok((run.timed_out, if d > 0.0 { 100.0 * o.total_distance / d } else { 100.0 }))
        })
        .collect::<Result<Vec<_>>>()?;
    let done: Vec<f64> = results.iter().filter(|r| !r.0).map(|r| r.1).collect();
    let mean = if done.is_empty() { 0.0 } else { done.iter().sum::<f64>() / done.len() as f64 };
    Ok((mean, results.len() - done.len()))
}

fn new_critic(dims: &CriticDims, seed: u64) -> PolicyParameters {
    PolicyParameters::init(dims.architecture(), Vec::new(), derive_seed(seed, Stream::ParamInit, 1), 0.0)
}

/// Trains a shared actor on `dataset`. Each epoch draws its world sample,
/// exploration noise and minibatch order from streams keyed by `(seed,
/// epoch)`, so a resumed run follows the same trajectory as an
/// uninterrupted one. With `out` set, the latest actor, critic, curve and
/// optimizer state are saved every `checkpoint_every` epochs and the best
/// probe actor whenever it improves; `resume` continues from those files.
pub fn train(
    dataset: &[WorldInstance],
    oracles: &OracleCache,
    config: &TrainConfig,
    seed: u64,
    out: Option<&Path>,
    resume: bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.epochs > 0 && dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    for w in dataset {
        if !oracles.contains_key(&w.id) {
            return Err(Error::MissingOracle(w.id.to_string()));
        }
    }
    let files = out.map(TrainFiles::in_dir);

    let (mut actor, mut critic, mut best, mut state) = match (&files, resume) {
        (Some(f), true) => {
            let text = std::fs::read_to_string(&f.state).map_err(|e| Error::io(&f.state, e))?;
            let state: TrainState = serde_json::from_str(&text)?;
            if state.seed != seed {
                return Err(Error::invalid(format!("resume seed {seed} differs from the saved seed {}", state.seed)));
            }
            let same = TrainConfig { epochs: 0, ..state.config.clone() } == TrainConfig { epochs: 0, ..config.clone() };
            if !same {
                return Err(Error::invalid("resume config differs from the saved config"));
            }
            let actor = PolicyParameters::load(&f.policy)?;
            let critic = PolicyParameters::load(&f.critic)?;
            let best = PolicyParameters::load(&f.best)?;
            (actor, critic, best, state)
        }
        (None, true) => return Err(Error::invalid("resume needs an output directory")),
        _ => {
            let mut actor = PolicyParameters::init(config.architecture(), Observation::feature_spec(), seed, config.ppo.init_log_std);
            if config.imitation.epochs > 0 && !dataset.is_empty() {
                let n = config.imitation.worlds.min(dataset.len());
                let demos = demonstrations(&dataset[..n], config.imitation.max_calls, config.ppo.max_iterations)?;
                imitation_pretrain(&mut actor, &demos, &config.imitation, seed, config.ppo.f32_params)?;
            }
            let critic = new_critic(&config.ppo.critic, seed);
            let optimizer = OptimizerState::new(&actor, &critic);
            let state = TrainState {
                seed,
                config: config.clone(),
                epochs_done: 0,
                best_eta: f64::NEG_INFINITY,
                optimizer,
                curve: Vec::new(),
            };
            (actor.clone(), critic, actor, state)
        }
    };
    state.config = config.clone();

    let probe = probe_set(seed, config.probe_worlds)?;
    let probe_oracles = probe
        .par_iter()
        .map(|w| solve(w, &config.probe_budget))
        .collect::<Result<Vec<_>>>()?;

    let save = |f: &TrainFiles, actor: &PolicyParameters, critic: &PolicyParameters, state: &TrainState| -> Result<()> {
        actor.save(&f.policy)?;
        critic.save(&f.critic)?;
        write_curve(&f.curve, &state.curve)?;
        write_bytes_atomic(&f.state, &serde_json::to_vec(state)?)
    };
    if let (Some(f), false) = (&files, resume) {
        best.save(&f.best)?;
        save(f, &actor, &critic, &state)?;
    }

    for epoch in state.epochs_done..config.epochs {
        let mut pick = stream_rng(seed, Stream::WorldSampling, epoch as u64);
        let sample: Vec<&WorldInstance> = (0..config.ppo.worlds_per_epoch)
            .map(|_| &dataset[pick.gen_range(0..dataset.len())])
            .collect();
        let batch = collect_rollouts(
            &sample,
            &actor,
            &critic,
            oracles,
            &config.ppo,
            &config.rewards,
            derive_seed(seed, Stream::Exploration, epoch as u64),
        )?;
        let (lo, hi) = batch
            .worlds
            .iter()
            .flat_map(|w| &w.round_rewards)
            .flat_map(|r| r.components())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c), hi.max(c)));
        let stats = if batch.is_empty() {
            Default::default()
        } else {
            let mut rng = stream_rng(seed, Stream::Minibatch, epoch as u64);
            ppo_update(&mut actor, &mut critic, &batch, &config.ppo, &mut state.optimizer, &mut rng)?
        };
        let (eta, probe_timeouts) = probe_eta(&actor, &probe, &probe_oracles, config.ppo.max_iterations)?;
        state.curve.push(CurveRow {
            epoch: epoch + 1,
            mean_probe_eta: eta,
            probe_timeouts,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
            mean_ratio: stats.mean_ratio,
            mean_return: batch.mean_return(),
            rollout_timeouts: batch.timeouts(),
            min_reward_component: if lo.is_finite() { lo } else { 0.0 },
            max_reward_component: if hi.is_finite() { hi } else { 0.0 },
            log_std: actor.log_std().unwrap_or(0.0),
        });
        state.epochs_done = epoch + 1;
        if eta > state.best_eta {
            state.best_eta = eta;
            best = actor.clone();
            if let Some(f) = &files {
                best.save(&f.best)?;
            }
        }
        if let Some(f) = &files {
            if state.epochs_done % config.checkpoint_every == 0 || state.epochs_done == config.epochs {
                save(f, &actor, &critic, &state)?;
            }
        }
    }

    Ok(TrainOutcome {
        actor,
        best,
        critic,
        best_eta: state.best_eta.is_finite().then_some(state.best_eta),
        curve: state.curve,
    })
}
