mod common;

use common::arb_world;
use mrta_core::world::{cheapest_insertion, generate_world, path_length, read_worlds, write_worlds, Path, Point2, WorldSpec};
use proptest::prelude::*;

/// Route length recomputed from scratch for the comparison.
fn length(start: Point2, seq: &[Point2]) -> f64 {
    let mut at = start;
    let mut d = 0.0;
    for p in seq {
        d += ((p.x - at.x).powi(2) + (p.y - at.y).powi(2)).sqrt();
        at = *p;
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn insertion_matches_slot_enumeration(w in arb_world(2, 8), split in 0usize..8) {
        let n = w.n_tasks();
        let k = split % n;
        let route: Vec<usize> = (0..k).collect();
        let task = k;
        let w = mrta_core::world::WorldInstance { capacity: n, ..w };
        let start = w.agents[0];
        let pts: Vec<Point2> = route.iter().map(|&t| w.tasks[t]).collect();
        let base = length(start, &pts);
        let mut best = (0, f64::INFINITY);
        for slot in 0..=route.len() {
            let mut seq = pts.clone();
            seq.insert(slot, w.tasks[task]);
            let d = length(start, &seq) - base;
            if d < best.1 - 1e-12 {
                best = (slot, d);
            }
        }
        let (slot, delta) = cheapest_insertion(start, &Path::with_tasks(0, route.clone()), task, &w).unwrap();
        prop_assert!(delta >= 0.0);
        prop_assert!((delta - best.1.max(0.0)).abs() < 1e-9, "delta {delta} vs {}", best.1);
        let mut seq = pts.clone();
        seq.insert(slot, w.tasks[task]);
        prop_assert!((length(start, &seq) - base - best.1).abs() < 1e-9);
    }

    #[test]
    fn path_length_is_sum_of_legs(w in arb_world(1, 8)) {
        let route: Vec<usize> = (0..w.n_tasks()).rev().collect();
        let pts: Vec<Point2> = route.iter().map(|&t| w.tasks[t]).collect();
        let d = path_length(w.agents[0], &Path::with_tasks(0, route), &w).unwrap();
        prop_assert!((d - length(w.agents[0], &pts)).abs() < 1e-9);
    }

    #[test]
    fn generated_worlds_are_valid(seed in any::<u64>(), ordinal in 0u64..10_000, agents in 1usize..25) {
        let w = generate_world(seed, ordinal, &WorldSpec::validation(agents)).unwrap();
        w.validate().unwrap();
        prop_assert!(w.is_coverable());
        prop_assert!((2 * agents..=4 * agents).contains(&w.n_tasks()));
        prop_assert_eq!(w, generate_world(seed, ordinal, &WorldSpec::validation(agents)).unwrap());
    }
}

#[test]
fn validation_presets_match_task_ranges() {
    for (agents, lo, hi) in [(5, 10, 20), (20, 40, 80)] {
        for o in 0..200 {
            let w = generate_world(2, o, &WorldSpec::validation(agents)).unwrap();
            assert_eq!(w.n_agents(), agents);
            assert!((lo..=hi).contains(&w.n_tasks()));
        }
    }
}

#[test]
fn world_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("worlds.jsonl");
    let worlds: Vec<_> = (0..5).map(|o| generate_world(8, o, &WorldSpec::training()).unwrap()).collect();
    write_worlds(&path, &worlds).unwrap();
    assert_eq!(read_worlds(&path).unwrap(), worlds);
}
