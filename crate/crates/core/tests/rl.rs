mod common;

use mrta_core::bidding::{
    gaussian_log_prob, lstm_forward, Architecture, Observation, PolicyBidder, PolicyParameters, RecurrentContext,
    FEATURE_DIM,
};
use mrta_core::consensus::{run_allocation, AgentState, RunConfig};
use mrta_core::oracle::{solve, OptimalAssignment, OracleCache, SolverBudget};
use mrta_core::rl::*;
use mrta_core::rng::{stream_rng, Stream};
use mrta_core::world::{generate_world, Path, WorldInstance, WorldSpec};

fn small_lstm(log_std: f64) -> PolicyParameters {
    let arch = Architecture::Lstm { feature_dim: FEATURE_DIM, hidden: 4, head_hidden: 3 };
    PolicyParameters::init(arch, Observation::feature_spec(), 11, log_std)
}

fn small_nam(log_std: f64) -> PolicyParameters {
    let arch = Architecture::Nam { feature_dim: FEATURE_DIM, hidden: 3 };
    PolicyParameters::init(arch, Observation::feature_spec(), 12, log_std)
}

fn dims() -> CriticDims {
    CriticDims { max_agents: 4, max_tasks: 8, hidden: 6 }
}

fn critic() -> PolicyParameters {
    PolicyParameters::init(dims().architecture(), Vec::new(), 13, 0.0)
}

fn config() -> PPOConfig {
    PPOConfig { critic: dims(), max_iterations: 12, worlds_per_epoch: 3, minibatch_size: 10_000, ..PPOConfig::default() }
}

fn small_worlds(n: u64) -> Vec<WorldInstance> {
    let spec = WorldSpec { n_agents: 3, task_count: 4..=7, ..WorldSpec::training() };
    (0..n).map(|i| generate_world(21, i, &spec).unwrap()).collect()
}

fn oracles(worlds: &[WorldInstance]) -> OracleCache {
    worlds.iter().map(|w| (w.id.clone(), solve(w, &SolverBudget::default()).unwrap())).collect()
}

fn batch(actor: &PolicyParameters, worlds: &[WorldInstance], config: &PPOConfig, seed: u64) -> RolloutBatch {
    let refs: Vec<&WorldInstance> = worlds.iter().collect();
    collect_rollouts(&refs, actor, &critic(), &oracles(worlds), config, &RewardWeights::default(), seed).unwrap()
}

#[test]
fn reward_components_are_bounded_in_rollouts() {
    let worlds = small_worlds(6);
    for actor in [small_lstm(-1.0), small_nam(-0.5)] {
        let b = batch(&actor, &worlds, &config(), 3);
        assert_eq!(b.worlds.len(), worlds.len());
        for w in &b.worlds {
            for r in &w.round_rewards {
                assert!(r.components().iter().all(|c| (-1.0..=1.0).contains(c)), "{r:?}");
                assert!(r.total.is_finite());
            }
        }
        for t in b.transitions() {
            assert!(t.log_prob.is_finite() && t.reward.is_finite() && t.value.is_finite());
            assert!(t.action.iter().all(|a| a.is_finite()));
        }
    }
}

#[test]
fn no_worlds_give_an_empty_batch() {
    let b = collect_rollouts(&[], &small_lstm(-1.0), &critic(), &OracleCache::new(), &config(), &RewardWeights::default(), 0)
        .unwrap();
    assert!(b.is_empty());
    assert!(b.worlds.is_empty());
}

#[test]
fn missing_oracle_is_reported() {
    let worlds = small_worlds(1);
    let r = collect_rollouts(&[&worlds[0]], &small_lstm(-1.0), &critic(), &OracleCache::new(), &config(), &RewardWeights::default(), 0);
    assert!(matches!(r, Err(mrta_core::Error::MissingOracle(_))));
}

#[test]
fn deterministic_limit_replays_the_deterministic_run() {
    let spec = WorldSpec { n_agents: 1, task_count: 5..=5, ..WorldSpec::training() };
    let world = generate_world(4, 0, &spec).unwrap();
    let actor = small_lstm(-50.0);
    let b = batch(&actor, std::slice::from_ref(&world), &config(), 9);

    let run = run_allocation(&world, &mut PolicyBidder::new(&actor), &RunConfig { max_iterations: 12, ..RunConfig::default() })
        .unwrap();
    assert_eq!(b.worlds[0].timed_out, run.timed_out);
    assert_eq!(b.worlds[0].iterations, run.iterations_used);
    // At most one bid call per executed round, each equal to the mean bid.
    let stream = &b.streams[0];
    assert!(!stream.transitions.is_empty());
    assert!(stream.transitions.len() <= run.rounds_executed);
    assert!(stream.transitions.windows(2).all(|p| p[0].iteration < p[1].iteration));
    let mut ctx = RecurrentContext::for_policy(&actor, world.n_tasks());
    for t in &stream.transitions {
        let obs = mrta_core::bidding::build_observation(&run.trajectory[t.iteration - 1][0], &world);
        assert_eq!(obs, t.observation);
        let (mean, next) = lstm_forward(&actor, &obs, &ctx).unwrap();
        ctx = next;
        for (a, m) in t.action.iter().zip(&mean) {
            assert!((a - m).abs() < 1e-15);
        }
    }
    assert!(stream.transitions.last().unwrap().done);
}

#[test]
fn normalized_advantages_have_zero_mean_and_unit_spread() {
    let b = batch(&small_lstm(-1.0), &small_worlds(5), &config(), 4);
    let n = b.n_transitions() as f64;
    assert!(n > 1.0);
    let mean = b.transitions().map(|t| t.advantage).sum::<f64>() / n;
    let var = b.transitions().map(|t| (t.advantage - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 1e-6, "{mean}");
    assert!((var.sqrt() - 1.0).abs() < 1e-6, "{var}");
}

#[test]
fn rollouts_are_reproducible() {
    let worlds = small_worlds(4);
    let a = batch(&small_lstm(-1.0), &worlds, &config(), 8);
    let b = batch(&small_lstm(-1.0), &worlds, &config(), 8);
    let key = |b: &RolloutBatch| -> Vec<(usize, usize, Vec<f64>, f64, f64, f64)> {
        b.streams
            .iter()
            .flat_map(|s| s.transitions.iter().map(move |t| (s.world, t.agent, t.action.clone(), t.log_prob, t.reward, t.advantage)))
            .collect()
    };
    assert_eq!(key(&a), key(&b));
    let c = batch(&small_lstm(-1.0), &worlds, &config(), 9);
    assert_ne!(key(&a), key(&c));
}

fn update(actor: &mut PolicyParameters, critic: &mut PolicyParameters, b: &RolloutBatch, config: &PPOConfig) -> UpdateStats {
    let mut opt = OptimizerState::new(actor, critic);
    let mut rng = stream_rng(1, Stream::Minibatch, 0);
    ppo_update(actor, critic, b, config, &mut opt, &mut rng).unwrap()
}

#[test]
fn zero_advantages_leave_the_actor_unchanged() {
    let cfg = PPOConfig { entropy_coef: 0.0, ..config() };
    let actor0 = small_lstm(-1.0);
    let mut b = batch(&actor0, &small_worlds(3), &cfg, 5);
    for s in &mut b.streams {
        for t in &mut s.transitions {
            t.advantage = 0.0;
        }
    }
    for optimizer in [OptimizerKind::Adam, OptimizerKind::Sgd] {
        let cfg = PPOConfig { optimizer, ..cfg.clone() };
        let mut actor = actor0.clone();
        let mut c = critic();
        update(&mut actor, &mut c, &b, &cfg);
        let delta = actor.data.iter().zip(&actor0.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(delta < 1e-8, "{optimizer:?}: {delta}");
        assert_ne!(c.data, critic().data, "the critic still learns");
    }
}

/// Joint log-density of every transition of `s` under `actor`, replayed
/// call by call through the single-step forward pass.
fn replay_log_probs(actor: &PolicyParameters, s: &AgentStream) -> Vec<f64> {
    let n_tasks = s.transitions[0].observation.n_tasks;
    let mut ctx = RecurrentContext::for_policy(actor, n_tasks);
    s.transitions
        .iter()
        .map(|t| {
            let (mean, next) = lstm_forward(actor, &t.observation, &ctx).unwrap();
            ctx = next;
            gaussian_log_prob(&t.action, &mean, actor.log_std().unwrap())
        })
        .collect()
}

#[test]
fn forced_ratio_takes_the_clipped_branch() {
    let eps: f64 = 0.2;
    let actor0 = small_lstm(-1.0);
    let mut b = batch(&actor0, &small_worlds(1), &config(), 6);
    b.streams.truncate(1);
    b.streams[0].transitions.truncate(1);
    let lp = replay_log_probs(&actor0, &b.streams[0])[0];
    let t = &mut b.streams[0].transitions[0];
    t.advantage = 1.5;
    // ratio = exp(lp - old) = 1 + 2 eps.
    t.log_prob = lp - (1.0 + 2.0 * eps).ln();
    let cfg = PPOConfig {
        clip: eps,
        entropy_coef: 0.0,
        update_epochs: 1,
        optimizer: OptimizerKind::Sgd,
        f32_params: false,
        ..config()
    };
    let mut actor = actor0.clone();
    let stats = update(&mut actor, &mut critic(), &b, &cfg);
    assert!((stats.mean_ratio - (1.0 + 2.0 * eps)).abs() < 1e-9);
    assert_eq!(stats.clip_fraction, 1.0);
    assert!((stats.policy_loss + (1.0 + eps) * 1.5).abs() < 1e-9);
    assert_eq!(clipped_surrogate(1.0 + 2.0 * eps, 1.5, eps), (1.0 + eps) * 1.5);
    assert_eq!(actor.data, actor0.data, "the clipped branch carries no gradient");
}

#[test]
fn single_unclipped_epoch_is_a_plain_policy_gradient_step() {
    let actor0 = small_lstm(-1.0);
    let b = batch(&actor0, &small_worlds(2), &config(), 7);
    let lr = 1e-3;
    let cfg = PPOConfig {
        clip: 0.999,
        entropy_coef: 0.0,
        update_epochs: 1,
        optimizer: OptimizerKind::Sgd,
        learning_rate: lr,
        max_grad_norm: None,
        f32_params: false,
        normalize_advantages: false,
        ..config()
    };
    let mut actor = actor0.clone();
    let stats = update(&mut actor, &mut critic(), &b, &cfg);
    assert!((stats.mean_ratio - 1.0).abs() < 1e-12);
    assert_eq!(stats.clip_fraction, 0.0);

    // Independent route: central differences of the unclipped surrogate
    // -(1/n) sum A exp(logp - logp_old).
    let n = b.n_transitions() as f64;
    let surrogate = |p: &PolicyParameters| -> f64 {
        b.streams
            .iter()
            .flat_map(|s| replay_log_probs(p, s).into_iter().zip(&s.transitions).collect::<Vec<_>>())
            .map(|(lp, t)| -t.advantage * (lp - t.log_prob).exp() / n)
            .sum()
    };
    let h = 1e-6;
    let mut probe = actor0.clone();
    for i in 0..actor0.len() {
        let x = actor0.data[i];
        probe.data[i] = x + h;
        let up = surrogate(&probe);
        probe.data[i] = x - h;
        let down = surrogate(&probe);
        probe.data[i] = x;
        let expected = -lr * (up - down) / (2.0 * h);
        let got = actor.data[i] - actor0.data[i];
        assert!((got - expected).abs() < 1e-9, "param {i}: {got} vs {expected}");
    }
}

#[test]
fn repeated_updates_fit_a_fixed_batch() {
    let actor0 = small_nam(-1.0);
    let b = batch(&actor0, &small_worlds(3), &config(), 10);
    let cfg = PPOConfig { update_epochs: 1, learning_rate: 3e-3, critic_learning_rate: 3e-3, ..config() };
    let mut actor = actor0.clone();
    let mut c = critic();
    let mut opt = OptimizerState::new(&actor, &c);
    let mut rng = stream_rng(1, Stream::Minibatch, 0);
    let mut losses = Vec::new();
    for _ in 0..40 {
        let s = ppo_update(&mut actor, &mut c, &b, &cfg, &mut opt, &mut rng).unwrap();
        losses.push(s.policy_loss + cfg.value_coef * s.value_loss);
    }
    assert!(losses[39] < losses[0], "{losses:?}");
}

#[test]
fn non_finite_loss_aborts_the_update() {
    let actor0 = small_nam(-1.0);
    let mut b = batch(&actor0, &small_worlds(1), &config(), 2);
    b.streams[0].transitions[0].ret = f64::NAN;
    let mut actor = actor0.clone();
    let mut c = critic();
    let c0 = c.clone();
    let mut opt = OptimizerState::new(&actor, &c);
    let r = ppo_update(&mut actor, &mut c, &b, &config(), &mut opt, &mut stream_rng(0, Stream::Minibatch, 0));
    assert!(matches!(r, Err(mrta_core::Error::NonFiniteLoss(_))));
    assert_eq!(actor.data, actor0.data);
    assert_eq!(c.data, c0.data);
}

#[test]
fn empty_batch_is_rejected() {
    let mut actor = small_nam(-1.0);
    let mut c = critic();
    let mut opt = OptimizerState::new(&actor, &c);
    let r = ppo_update(&mut actor, &mut c, &RolloutBatch::default(), &config(), &mut opt, &mut stream_rng(0, Stream::Minibatch, 0));
    assert!(r.is_err());
}

fn permute_task_indices(
    world: &WorldInstance,
    states: &[AgentState],
    oracle: &OptimalAssignment,
    perm: &[usize],
) -> (WorldInstance, Vec<AgentState>, OptimalAssignment) {
    // Task j moves to index perm[j].
    let mut w = world.clone();
    for (j, &p) in perm.iter().enumerate() {
        w.tasks[p] = world.tasks[j];
    }
    let states = states
        .iter()
        .map(|s| {
            let mut t = s.clone();
            for (j, &p) in perm.iter().enumerate() {
                t.winning_bids[p] = s.winning_bids[j];
                t.winners[p] = s.winners[j];
            }
            t.bundle = s.bundle.iter().map(|&j| perm[j]).collect();
            t.path.tasks = s.path.tasks.iter().map(|&j| perm[j]).collect();
            t
        })
        .collect();
    let routes = oracle.routes.iter().map(|r| Path::with_tasks(r.owner, r.tasks.iter().map(|&j| perm[j]).collect())).collect();
    (w, states, OptimalAssignment { routes, ..oracle.clone() })
}

#[test]
fn critic_scalars_ignore_task_order() {
    let worlds = small_worlds(3);
    let cache = oracles(&worlds);
    for w in &worlds {
        let oracle = &cache[&w.id];
        let run = run_allocation(w, &mut PolicyBidder::new(&small_nam(-1.0)), &RunConfig { max_iterations: 12, ..RunConfig::default() })
            .unwrap();
        let n = w.n_tasks();
        let perm: Vec<usize> = (0..n).map(|j| (j * 3 + 1) % n).collect();
        let mut sorted = perm.clone();
        sorted.sort();
        if sorted != (0..n).collect::<Vec<_>>() {
            continue;
        }
        for states in &run.trajectory {
            let a = build_critic_input(w, states, oracle, 1, 12, &dims()).unwrap();
            let (pw, ps, po) = permute_task_indices(w, states, oracle, &perm);
            let b = build_critic_input(&pw, &ps, &po, 1, 12, &dims()).unwrap();
            assert_eq!(a.coverage(), b.coverage());
            assert_eq!(a.agreement(), b.agreement());
            assert!((a.distance_ratio() - b.distance_ratio()).abs() < 1e-12);
        }
    }
}

#[test]
fn empty_and_oracle_states_give_extreme_scalars() {
    let w = &small_worlds(1)[0];
    let oracle = solve(w, &SolverBudget::default()).unwrap();
    let empty = AgentState::fresh_team(w);
    assert_eq!(build_critic_input(w, &empty, &oracle, 1, 10, &dims()).unwrap().coverage(), 0.0);
    let mut team = AgentState::fresh_team(w);
    for r in &oracle.routes {
        let s = &mut team[r.owner];
        for &t in &r.tasks {
            s.bundle.push(t);
            s.winners[t] = Some(r.owner);
        }
        s.path = r.clone();
    }
    let x = build_critic_input(w, &team, &oracle, 1, 10, &dims()).unwrap();
    assert_eq!(x.coverage(), 1.0);
    assert_eq!(x.agreement(), 1.0);
    assert!((x.distance_ratio() - 1.0).abs() < 1e-12);
}

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        arch: ActorKind::Lstm,
        hidden: Some(4),
        head_hidden: Some(3),
        epochs,
        probe_worlds: 3,
        checkpoint_every: 1,
        ppo: PPOConfig { max_iterations: 10, worlds_per_epoch: 2, update_epochs: 2, ..PPOConfig::default() },
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_return_the_initial_actor() {
    let worlds = small_worlds(3);
    let out = train(&worlds, &oracles(&worlds), &train_config(0), 5, None, false).unwrap();
    assert!(out.curve.is_empty());
    assert_eq!(out.best_eta, None);
    let cfg = train_config(0);
    let init = PolicyParameters::init(cfg.architecture(), Observation::feature_spec(), 5, cfg.ppo.init_log_std);
    assert_eq!(out.actor, init);
    assert_eq!(out.best, init);
}

#[test]
fn fixed_seed_training_is_reproducible_and_resumable() {
    let worlds = small_worlds(4);
    let cache = oracles(&worlds);
    let a = train(&worlds, &cache, &train_config(3), 5, None, false).unwrap();
    let b = train(&worlds, &cache, &train_config(3), 5, None, false).unwrap();
    assert_eq!(a.curve.len(), 3);
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.actor, b.actor);

    let dir = tempfile::tempdir().unwrap();
    train(&worlds, &cache, &train_config(1), 5, Some(dir.path()), false).unwrap();
    let files = TrainFiles::in_dir(dir.path());
    assert_eq!(read_curve(&files.curve).unwrap().len(), 1);
    let resumed = train(&worlds, &cache, &train_config(3), 5, Some(dir.path()), true).unwrap();
    assert_eq!(resumed.curve, a.curve);
    assert_eq!(resumed.actor, a.actor);
    assert_eq!(read_curve(&files.curve).unwrap(), a.curve);
    assert_eq!(PolicyParameters::load(&files.policy).unwrap(), a.actor);

    // A different seed refuses to resume.
    assert!(train(&worlds, &cache, &train_config(4), 6, Some(dir.path()), true).is_err());
}

#[test]
fn training_requires_oracles() {
    let worlds = small_worlds(2);
    let r = train(&worlds, &OracleCache::new(), &train_config(1), 5, None, false);
    assert!(matches!(r, Err(mrta_core::Error::MissingOracle(_))));
}

#[test]
fn imitation_warm_start_changes_only_the_initial_actor() {
    let worlds = small_worlds(3);
    let cache = oracles(&worlds);
    let mut cfg = train_config(0);
    cfg.imitation = ImitationConfig { epochs: 3, worlds: 3, batch_streams: 2, ..ImitationConfig::default() };
    let warm = train(&worlds, &cache, &cfg, 5, None, false).unwrap();
    let cold = train(&worlds, &cache, &train_config(0), 5, None, false).unwrap();
    assert_ne!(warm.actor.data, cold.actor.data);
    assert_eq!(warm.actor.log_std(), cold.actor.log_std());
}
