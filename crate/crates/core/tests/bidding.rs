mod common;

use common::arb_world;
use mrta_core::bidding::*;
use mrta_core::consensus::{run_allocation, AgentState, RunConfig};
use mrta_core::world::{generate_world, WorldInstance, WorldSpec};
use proptest::prelude::*;

fn nam() -> PolicyParameters {
    PolicyParameters::init(Architecture::default_nam(FEATURE_DIM), Observation::feature_spec(), 4, -1.0)
}

fn lstm() -> PolicyParameters {
    PolicyParameters::init(Architecture::default_lstm(FEATURE_DIM), Observation::feature_spec(), 5, -1.0)
}

/// Mid-run states of agent 0, for observations with non-trivial beliefs.
fn some_states(w: &WorldInstance) -> Vec<AgentState> {
    let r = run_allocation(w, &mut ClassicBidder, &RunConfig::default()).unwrap();
    r.trajectory.iter().flat_map(|team| team.iter().cloned()).collect()
}

fn permute_world(w: &WorldInstance, perm: &[usize]) -> WorldInstance {
    WorldInstance { tasks: perm.iter().map(|&j| w.tasks[j]).collect(), ..w.clone() }
}

/// State as seen after relabelling task `perm[new]` as `new`.
fn permute_state(s: &AgentState, perm: &[usize]) -> AgentState {
    let inv: Vec<usize> = {
        let mut v = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            v[old] = new;
        }
        v
    };
    let mut p = s.clone();
    p.winning_bids = perm.iter().map(|&j| s.winning_bids[j]).collect();
    p.winners = perm.iter().map(|&j| s.winners[j]).collect();
    p.bundle = s.bundle.iter().map(|&j| inv[j]).collect();
    p.path.tasks = s.path.tasks.iter().map(|&j| inv[j]).collect();
    p
}

#[test]
fn observation_rows_lie_in_unit_range() {
    let mut checked = 0;
    for o in 0..60 {
        let w = generate_world(13, o, &WorldSpec::training()).unwrap();
        for s in some_states(&w) {
            let obs = build_observation(&s, &w);
            assert_eq!(obs.features.len(), w.n_tasks() * FEATURE_DIM);
            assert!(obs.features.iter().all(|v| (-1.0..=1.0).contains(v)));
            checked += 1;
        }
    }
    assert!(checked >= 1000, "only {checked} states checked");
}

#[test]
fn own_bundle_sets_ownership_flag() {
    let w = generate_world(1, 1, &WorldSpec::training()).unwrap();
    let r = run_allocation(&w, &mut ClassicBidder, &RunConfig::default()).unwrap();
    for s in &r.states {
        let obs = build_observation(s, &w);
        for &t in &s.bundle {
            assert_eq!(obs.row(t)[3], 1.0);
            assert_eq!(obs.row(t)[1], 0.0);
        }
    }
}

#[test]
fn identical_rows_give_identical_bids() {
    let row = vec![0.1, 0.2, 0.0, 0.0, 1.0, 0.5, 0.5, 0.0];
    let obs = Observation::from_rows(&[row.clone(), row]);
    let b = nam_forward(&nam(), &obs).unwrap();
    assert_eq!(b[0], b[1]);
    let (b, _) = lstm_forward(&lstm(), &obs, &RecurrentContext::zeros(2, 64)).unwrap();
    assert_eq!(b[0], b[1]);
}

#[test]
fn zero_lstm_weights_give_head_bias_baseline() {
    let mut p = PolicyParameters::zeros(Architecture::default_lstm(FEATURE_DIM), Observation::feature_spec());
    p.get_mut("head.b2")[0] = 0.7;
    let obs = Observation::from_rows(&[vec![0.3; 8], vec![0.9; 8]]);
    let (b, _) = lstm_forward(&p, &obs, &RecurrentContext::zeros(2, 64)).unwrap();
    let expected = (1.0f64 + 0.7f64.exp()).ln();
    assert!(b.iter().all(|&v| (v - expected).abs() < 1e-12));
}

#[test]
fn lstm_context_changes_bids() {
    let p = lstm();
    let obs = Observation::from_rows(&[vec![0.2, 0.1, 0.0, 0.0, 1.0, 0.3, 0.7, 0.0]]);
    let ctx0 = RecurrentContext::zeros(1, 64);
    let (b1, ctx1) = lstm_forward(&p, &obs, &ctx0).unwrap();
    let (b2, _) = lstm_forward(&p, &obs, &ctx1).unwrap();
    assert_ne!(b1, b2);
    assert_ne!(ctx0, ctx1);
}

#[test]
fn forward_passes_are_pure() {
    let w = generate_world(6, 0, &WorldSpec::training()).unwrap();
    let s = &some_states(&w)[7];
    let obs = build_observation(s, &w);
    let (p, q) = (nam(), lstm());
    assert_eq!(nam_forward(&p, &obs).unwrap(), nam_forward(&p, &obs).unwrap());
    let ctx = RecurrentContext::for_policy(&q, w.n_tasks());
    assert_eq!(lstm_forward(&q, &obs, &ctx).unwrap(), lstm_forward(&q, &obs, &ctx).unwrap());
}

#[test]
fn shape_mismatch_is_rejected() {
    let obs = Observation::from_rows(&[vec![0.0; 3]]);
    assert!(nam_forward(&nam(), &obs).is_err());
    assert!(lstm_forward(&lstm(), &obs, &RecurrentContext::zeros(1, 64)).is_err());
    let obs = Observation::from_rows(&[vec![0.0; 8]]);
    assert!(lstm_forward(&lstm(), &obs, &RecurrentContext::zeros(2, 64)).is_err());
}

#[test]
fn nam_subnetworks_are_additive() {
    let p = nam();
    let w = generate_world(6, 1, &WorldSpec::training()).unwrap();
    let obs = build_observation(&some_states(&w)[3], &w);
    let full = nam_logits(&p, &obs).unwrap();
    let parts = nam_contributions(&p, &obs).unwrap();
    for k in 0..FEATURE_DIM {
        let mut q = p.clone();
        q.get_mut(&format!("g{k}.w3")).fill(0.0);
        q.get_mut(&format!("g{k}.b3")).fill(0.0);
        let cut = nam_logits(&q, &obs).unwrap();
        for j in 0..obs.n_tasks {
            let removed = full[j] - cut[j];
            assert!((removed - parts[j * FEATURE_DIM + k]).abs() < 1e-12);
        }
    }
}

#[test]
fn observation_ignores_other_agents() {
    let w = generate_world(3, 3, &WorldSpec::training()).unwrap();
    let r = run_allocation(&w, &mut ClassicBidder, &RunConfig::default()).unwrap();
    let mine = &r.states[0];
    let before = build_observation(mine, &w);
    let mut team = r.states.clone();
    team[1].bundle.clear();
    team[1].path.tasks.clear();
    assert_eq!(build_observation(&team[0], &w), before);
    let p = lstm();
    let mut bidder = PolicyBidder::new(&p);
    let mut other = PolicyBidder::new(&p);
    bidder.reset(&w);
    other.reset(&w);
    assert_eq!(bidder.bid(mine, &w, 1), other.bid(&team[0], &w, 1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn bids_permute_with_tasks(w in arb_world(3, 7), rot in 1usize..7, pick in 0usize..50) {
        let n = w.n_tasks();
        let perm: Vec<usize> = (0..n).map(|j| (j + rot) % n).collect();
        let states = some_states(&w);
        let s = &states[pick % states.len()];
        let pw = permute_world(&w, &perm);
        let ps = permute_state(s, &perm);

        let o = build_observation(s, &w);
        let po = build_observation(&ps, &pw);
        for (new, &old) in perm.iter().enumerate() {
            for k in 0..FEATURE_DIM {
                prop_assert!((o.row(old)[k] - po.row(new)[k]).abs() < 1e-12);
            }
        }

        let (a, b) = (classic_bid(s, &w), classic_bid(&ps, &pw));
        let (p, q) = (nam(), lstm());
        let (na, nb) = (nam_forward(&p, &o).unwrap(), nam_forward(&p, &po).unwrap());
        let ctx = RecurrentContext::for_policy(&q, n);
        let (la, _) = lstm_forward(&q, &o, &ctx).unwrap();
        let (lb, _) = lstm_forward(&q, &po, &ctx).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            prop_assert!((a[old] - b[new]).abs() < 1e-12);
            prop_assert!((na[old] - nb[new]).abs() < 1e-12);
            prop_assert!((la[old] - lb[new]).abs() < 1e-12);
        }
    }

    #[test]
    fn classic_bids_are_bounded_and_monotone(w in arb_world(2, 8)) {
        let s = AgentState::new(0, w.n_agents(), w.n_tasks());
        let bids = classic_bid(&s, &w);
        let a = w.agents[0];
        for i in 0..w.n_tasks() {
            prop_assert!(bids[i] > 0.0 && bids[i] <= 1.0);
            for j in 0..w.n_tasks() {
                if a.dist(&w.tasks[i]) < a.dist(&w.tasks[j]) - 1e-12 {
                    prop_assert!(bids[i] > bids[j]);
                }
            }
        }
    }
}
