use blockcloud_core::chain::max_faulty;
use blockcloud_core::Cftx;
use blockcloud_sim::config::{AssignKind, AssignmentConfig, Behavior, BehaviorEntry, TaskConfig};
use blockcloud_sim::{run_scenario, ScenarioConfig};
use proptest::prelude::*;

fn scenario(supers: usize, k: usize, tasks: usize, byz: &[(usize, u8)]) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::from_toml(&format!(
        "[nodes]\nsupers = {supers}\nvalidators_per_task = {k}\ncomputing = 2\nstorage = 1\n"
    ))
    .unwrap();
    for &(i, kind) in byz {
        cfg.behaviors.push(BehaviorEntry {
            node: format!("super-{i}"),
            behavior: match kind % 3 {
                0 => Behavior::Silent,
                1 => Behavior::Equivocator,
                _ => Behavior::Briber,
            },
            beneficiary: None,
        });
    }
    cfg.tasks = (0..tasks)
        .map(|i| TaskConfig {
            id: format!("t{i}"),
            tasker: "tasker-0".into(),
            at_us: 1_000 + 700_000 * i as u64,
            wealth: Cftx::whole(30 + i as i64),
            increment: Cftx::whole(3),
            profile: None,
            b_timer_us: None,
            on_exhausted: Default::default(),
            assignments: vec![
                AssignmentConfig {
                    id: "c".into(),
                    kind: AssignKind::Computing,
                    wealth: Cftx::whole(10),
                    value: Cftx::ZERO,
                    replicas: 1 + i % 2,
                    data: "x".into(),
                    t_timer_us: None,
                },
                AssignmentConfig {
                    id: "s".into(),
                    kind: AssignKind::Storage,
                    wealth: Cftx::whole(5),
                    value: Cftx::ZERO,
                    replicas: 1,
                    data: String::new(),
                    t_timer_us: None,
                },
            ],
        })
        .collect();
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // with at most F byzantine validators per shard: no conflicting
    // finalizations, exact conservation, shards close with their tasks
    #[test]
    fn bounded_faults_keep_every_invariant(
        supers in 4usize..9,
        tasks in 1usize..4,
        seed in any::<u64>(),
        picks in proptest::collection::vec((0usize..9, any::<u8>()), 0..3),
    ) {
        let k = 4.min(supers);
        let mut byz: Vec<(usize, u8)> = Vec::new();
        for (i, kind) in picks {
            if i < supers && !byz.iter().any(|(j, _)| *j == i) {
                byz.push((i, kind));
            }
        }
        byz.truncate(max_faulty(k));
        let cfg = scenario(supers, k, tasks, &byz);
        let out = run_scenario(&cfg, seed).unwrap();
        let v = out.summary.verdicts;
        prop_assert!(v.safety_applies);
        prop_assert!(v.safe, "{:?}", out.conflicts());
        prop_assert!(v.supply_conserved && v.tasks_conserved);
        prop_assert!(v.shards_consistent);
        prop_assert!(v.intervals_respected);
        prop_assert!(out.shards.iter().all(|s| !s.open && s.validators.contains(&s.handler)));
        if byz.is_empty() {
            prop_assert!(v.live);
            prop_assert_eq!(out.summary.tasks_closed, tasks);
        }
    }

    #[test]
    fn replay_is_byte_identical(supers in 4usize..7, seed in any::<u64>()) {
        let cfg = scenario(supers, 4, 2, &[(0, 1)]);
        let a = run_scenario(&cfg, seed).unwrap();
        let b = run_scenario(&cfg, seed).unwrap();
        prop_assert_eq!(a.records(), b.records());
    }
}
