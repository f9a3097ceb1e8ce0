#![allow(dead_code)]

use mrta_core::world::{Point2, WorldId, WorldInstance};
use proptest::prelude::*;

pub fn pts(v: &[(f64, f64)]) -> Vec<Point2> {
    v.iter().map(|&(x, y)| Point2::new(x, y)).collect()
}

/// Builds a world without validation so degenerate shapes can be tested.
pub fn world(side: f64, capacity: usize, agents: &[(f64, f64)], tasks: &[(f64, f64)]) -> WorldInstance {
    WorldInstance {
        id: WorldId("test".into()),
        workspace_side: side,
        capacity,
        agents: pts(agents),
        tasks: pts(tasks),
    }
}

/// Random coverable worlds with the given agent and task count limits.
pub fn arb_world(max_agents: usize, max_tasks: usize) -> impl Strategy<Value = WorldInstance> {
    (1..=max_agents, 1..=max_tasks, 1.0f64..60.0)
        .prop_flat_map(|(m, n, side)| {
            let min_cap = n.div_ceil(m);
            (
                Just(side),
                min_cap..=n,
                prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), m),
                prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), n),
            )
        })
        .prop_map(|(side, cap, a, t)| {
            let scale = |v: Vec<(f64, f64)>| v.into_iter().map(|(x, y)| (x * side, y * side)).collect::<Vec<_>>();
            world(side, cap, &scale(a), &scale(t))
        })
}
