mod common;

use std::collections::BTreeSet;

use common::*;
use gift_core::features::trajectory_features;
use gift_core::reward::{trajectory_reward, RewardModel};
use gift_core::world::geom::{distance, norm, sub};
use gift_core::world::{
    candidate_features, candidate_trajectory, generate_dataset, nominal_trajectory,
    preferred_trajectory, sample_goal, sample_scene, write_trajectories, GeneratorConfig, Split,
    TaskSpec, WorldError,
};
use proptest::prelude::*;

#[test]
fn fixtures_carry_the_published_intents() {
    assert_eq!(task("pack_backpack").ground_truth_intent, "pack art supplies");
    assert_eq!(
        task("place_mug").ground_truth_intent,
        "avoid carrying fluids near water-sensitive objects"
    );
    assert_eq!(
        task("pack_backpack_reading").ground_truth_intent,
        "pack reading material"
    );
    assert_eq!(task("store_drawer").ground_truth_intent, "store valuables");
    assert_eq!(
        task("store_drawer_electronics").ground_truth_intent,
        "store electronics"
    );
}

#[test]
fn every_fixture_task_validates() {
    for name in TASKS {
        let t = task(name);
        t.validate().unwrap();
        assert!(t.oracle.is_some(), "{name} has no oracle script");
        let conf = t.confound_sets.union();
        let test: BTreeSet<String> = t.test_labels().into_iter().collect();
        assert!(conf.is_subset(&test), "{name}");
    }
}

#[test]
fn dropping_a_relevance_entry_is_rejected() {
    let text = std::fs::read_to_string(repo_root().join("tasks/pack_backpack.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["relevance_labels"]
        .as_object_mut()
        .unwrap()
        .remove("molding_clay");
    let err = TaskSpec::from_json(&v.to_string()).unwrap_err();
    assert!(
        matches!(err, WorldError::MissingRelevance(ref l) if l == "molding_clay"),
        "{err}"
    );
}

#[test]
fn scene_sampling_is_deterministic_and_split_pure() {
    let t = task("pack_backpack");
    for seed in 0..20 {
        assert_eq!(
            sample_scene(&t, Split::Test, seed).unwrap(),
            sample_scene(&t, Split::Test, seed).unwrap()
        );
        let test: BTreeSet<String> = t.test_labels().into_iter().collect();
        let scene = sample_scene(&t, Split::Test, seed).unwrap();
        assert!(scene.labels().is_subset(&test));
        scene.validate().unwrap();
        for o in &scene.objects {
            assert!(t.workspace.contains(o.position));
        }
    }
}

#[test]
fn thousand_scenes_cover_every_catalog_label() {
    for name in TASKS {
        let t = task(name);
        for split in [Split::Train, Split::Test] {
            let mut seen = BTreeSet::new();
            for seed in 0..1000 {
                seen.extend(sample_scene(&t, split, seed).unwrap().labels());
            }
            for entry in t.catalog(split) {
                assert!(
                    seen.contains(&entry.label),
                    "{name}/{split:?}: `{}` never drawn",
                    entry.label
                );
            }
        }
    }
}

#[test]
fn nominal_interpolation_example() {
    let cfg = GeneratorConfig::default();
    let scene = state([0.0, 0.0, 0.0], vec![], 0);
    let tr = nominal_trajectory("t", &scene, [1.0, 0.0, 0.0], 4, &cfg).unwrap();
    let xs: Vec<f64> = tr.states.iter().map(|s| s.ee_position[0]).collect();
    assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    assert_eq!(tr.last().ee_position, [1.0, 0.0, 0.0]);
}

#[test]
fn nominal_from_goal_to_itself_is_static() {
    let cfg = GeneratorConfig::default();
    let scene = state([0.3, 0.4, 0.2], vec![obj("a", "mug", [0.5, 0.5, 0.0])], 0);
    let tr = nominal_trajectory("t", &scene, [0.3, 0.4, 0.2], 6, &cfg).unwrap();
    for s in &tr.states {
        assert_eq!(s.ee_position, scene.ee_position);
        assert_eq!(s.ee_orientation, scene.ee_orientation);
    }
}

#[test]
fn preferred_with_single_candidate_is_nominal() {
    let t = task("pack_backpack");
    let cfg = GeneratorConfig {
        n_candidates: 1,
        ..GeneratorConfig::for_task(&t)
    };
    let specs = t.feature_specs();
    let theta = t.theta_star(&specs);
    for seed in 0..5 {
        let scene = sample_scene(&t, Split::Train, seed).unwrap();
        let goal = sample_goal(&t, seed);
        let pref = preferred_trajectory(&t.name, &scene, goal, &theta, &specs, &cfg, seed).unwrap();
        let nom = nominal_trajectory(&t.name, &scene, goal, cfg.n_steps, &cfg).unwrap();
        assert_eq!(pref, nom);
    }
}

#[test]
fn zero_reward_picks_the_first_candidate() {
    let t = task("pack_backpack");
    let cfg = GeneratorConfig::for_task(&t);
    let specs = t.feature_specs();
    let zeros = vec![0.0; specs.len()];
    let scene = sample_scene(&t, Split::Train, 3).unwrap();
    let goal = sample_goal(&t, 3);
    let pref = preferred_trajectory(&t.name, &scene, goal, &zeros, &specs, &cfg, 11).unwrap();
    let first = candidate_trajectory(&t.name, &scene, goal, &cfg, 0, 11).unwrap();
    assert_eq!(pref, first);
}

#[test]
fn dataset_shapes_pairing_and_determinism() {
    let t = task("store_drawer");
    let cfg = GeneratorConfig::for_task(&t);
    let ds = generate_dataset(&t, 3, 42, &cfg).unwrap();
    assert_eq!(ds.preferred.len(), 3);
    assert_eq!(ds.nominal.len(), 3);
    for (p, n) in ds.preferred.iter().zip(&ds.nominal) {
        assert_eq!(p.states[0], n.states[0]);
    }
    let bytes = |d: &gift_core::world::Dataset| {
        let mut out = Vec::new();
        write_trajectories(&mut out, &d.preferred).unwrap();
        write_trajectories(&mut out, &d.nominal).unwrap();
        out
    };
    let again = generate_dataset(&t, 3, 42, &cfg).unwrap();
    assert_eq!(bytes(&ds), bytes(&again));
}

#[test]
fn preferred_demos_outscore_nominal_on_average() {
    for name in TASKS {
        let t = task(name);
        let cfg = GeneratorConfig::for_task(&t);
        let specs = t.feature_specs();
        let model = RewardModel::new(t.theta_star(&specs), specs).unwrap();
        let ds = generate_dataset(&t, 10, 5, &cfg).unwrap();
        let mean = |xs: &[gift_core::world::Trajectory]| {
            xs.iter()
                .map(|x| trajectory_reward(&model, x).unwrap())
                .sum::<f64>()
                / xs.len() as f64
        };
        assert!(mean(&ds.preferred) >= mean(&ds.nominal), "{name}");
    }
}

#[test]
fn candidate_features_match_materialized_candidates() {
    for name in ["place_mug", "pack_backpack"] {
        let t = task(name);
        let cfg = GeneratorConfig::for_task(&t);
        let specs = t.feature_specs();
        for seed in 0..4 {
            let scene = sample_scene(&t, Split::Test, seed).unwrap();
            let goal = sample_goal(&t, seed);
            for index in [0, 1, 7, 63] {
                let direct = candidate_features(&scene, goal, &cfg, index, seed, &specs).unwrap();
                let tr = candidate_trajectory(&t.name, &scene, goal, &cfg, index, seed).unwrap();
                let via = trajectory_features(&tr, &specs).unwrap();
                for (a, b) in direct.as_slice().iter().zip(via.as_slice()) {
                    assert!((a - b).abs() <= 1e-12, "{name} seed {seed} index {index}");
                }
            }
        }
    }
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=0.5f64).prop_map(|(x, y, z)| [x, y, z])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nominal_waypoints_are_collinear(start in point(), goal in point(), n in 1usize..40) {
        let cfg = GeneratorConfig::default();
        let scene = state(start, vec![], 0);
        let tr = nominal_trajectory("t", &scene, goal, n, &cfg).unwrap();
        let dir = sub(goal, start);
        let len = norm(dir);
        let mut path = 0.0;
        for w in tr.states.windows(2) {
            path += distance(w[0].ee_position, w[1].ee_position);
        }
        prop_assert!((path - len).abs() <= 1e-9);
        for s in &tr.states {
            let v = sub(s.ee_position, start);
            // |v × dir| = 0 for points on the line.
            let c = [
                v[1] * dir[2] - v[2] * dir[1],
                v[2] * dir[0] - v[0] * dir[2],
                v[0] * dir[1] - v[1] * dir[0],
            ];
            prop_assert!(norm(c) <= 1e-9);
        }
    }

    #[test]
    fn generated_pairs_are_paired_and_sound(seed in any::<u64>(), which in 0usize..6) {
        let t = task(TASKS[which]);
        let cfg = GeneratorConfig { n_candidates: 16, ..GeneratorConfig::for_task(&t) };
        let specs = t.feature_specs();
        let model = RewardModel::new(t.theta_star(&specs), specs).unwrap();
        let ds = generate_dataset(&t, 2, seed, &cfg).unwrap();
        for (p, n) in ds.preferred.iter().zip(&ds.nominal) {
            prop_assert_eq!(&p.states[0], &n.states[0]);
            p.validate().unwrap();
            n.validate().unwrap();
            prop_assert!(trajectory_reward(&model, p).unwrap() >= trajectory_reward(&model, n).unwrap());
        }
        prop_assert_eq!(ds, generate_dataset(&t, 2, seed, &cfg).unwrap());
    }
}
