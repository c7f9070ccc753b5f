mod common;

use common::*;
use gift_core::features::{
    proximity, sampled_timesteps, state_features, textualize, trajectory_features, FeatureSpec,
};
use gift_core::world::geom::quat_from_axis_angle;
use gift_core::world::Trajectory;
use proptest::prelude::*;

fn specs() -> Vec<FeatureSpec> {
    vec![
        FeatureSpec::ee_proximity("paintbrush", 0.5),
        FeatureSpec::ee_proximity("sketchbook", 0.5),
        FeatureSpec::object_proximity("banana", "scalpel", 0.5),
        FeatureSpec::gripper_tilt(),
        FeatureSpec::ee_height(0.0, 0.5),
    ]
}

#[test]
fn proximity_examples() {
    assert_eq!(proximity(0.0, 0.5).unwrap(), 1.0);
    assert_eq!(proximity(0.25, 0.5).unwrap(), 0.5);
    assert_eq!(proximity(0.7, 0.5).unwrap(), 0.0);
    assert!(proximity(0.1, 0.0).is_err());
    assert!(proximity(0.1, -1.0).is_err());
}

#[test]
fn missing_reference_object_gives_zero() {
    let s = state([0.5, 0.5, 0.0], vec![obj("b", "banana", [0.5, 0.5, 0.0])], 0);
    let phi = state_features(&s, &specs());
    // banana is present but scalpel is not.
    assert_eq!(phi.0[2], 0.0);
    assert_eq!(phi.0[0], 0.0);
}

#[test]
fn objectless_scene_zeroes_every_proximity() {
    let s = state([0.1, 0.2, 0.3], vec![], 0);
    let prox: Vec<FeatureSpec> = specs().into_iter().take(3).collect();
    assert_eq!(state_features(&s, &prox).0, vec![0.0; 3]);
}

#[test]
fn nearest_duplicate_instance_is_used() {
    let far = obj("p1", "paintbrush", [0.9, 0.5, 0.0]);
    let near = obj("p2", "paintbrush", [0.6, 0.5, 0.0]);
    let ee = [0.5, 0.5, 0.0];
    let both = state(ee, vec![far.clone(), near.clone()], 0);
    let only_near = state(ee, vec![near], 0);
    let s = &specs()[..1];
    let phi = state_features(&both, s).0[0];
    assert_eq!(phi, state_features(&only_near, s).0[0]);
    assert!((phi - (1.0 - 0.1 / 0.5)).abs() < 1e-12);
}

#[test]
fn identity_orientation_has_zero_tilt() {
    let s = state([0.5, 0.5, 0.2], vec![], 0);
    assert_eq!(state_features(&s, &[FeatureSpec::gripper_tilt()]).0, vec![0.0]);
}

fn random_trajectory(seed: u64, len: usize) -> Trajectory {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut p = || [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>() * 0.5];
    let objects = vec![
        obj("a", "paintbrush", p()),
        obj("b", "banana", p()),
        obj("c", "scalpel", p()),
    ];
    traj(
        (0..len)
            .map(|t| state(p(), objects.clone(), t as u64))
            .collect(),
    )
}

#[test]
fn constant_trajectory_equals_its_state() {
    let s = state(
        [0.4, 0.4, 0.1],
        vec![obj("a", "paintbrush", [0.5, 0.4, 0.0])],
        0,
    );
    let mut s2 = s.clone();
    s2.time_index = 1;
    let tr = traj(vec![s.clone(), s2]);
    assert_eq!(
        trajectory_features(&tr, &specs()).unwrap(),
        state_features(&s, &specs())
    );
}

#[test]
fn trajectory_features_match_brute_force_mean() {
    for seed in 0..10 {
        let tr = random_trajectory(seed, 17);
        let phi = trajectory_features(&tr, &specs()).unwrap();
        for k in 0..specs().len() {
            let mut sum = 0.0;
            for s in &tr.states {
                sum += state_features(s, &specs()).0[k];
            }
            let brute = sum / tr.states.len() as f64;
            assert!((phi.0[k] - brute).abs() <= 1e-12);
            assert!((0.0..=1.0).contains(&phi.0[k]));
        }
    }
}

#[test]
fn sixty_one_states_render_timesteps_zero_to_sixty() {
    let spec = [FeatureSpec::object_proximity("banana", "scalpel", 0.5)];
    let tr = random_trajectory(1, 61);
    let text = textualize(&tr, &spec, 1).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 61);
    assert!(lines[0].starts_with("Timestep 0: banana_proximity_to_scalpel: "));
    assert!(lines[60].starts_with("Timestep 60: banana_proximity_to_scalpel: "));
    for (t, line) in lines.iter().enumerate() {
        let value = line.rsplit(": ").next().unwrap();
        assert_eq!(value.len(), 4, "two decimals in `{line}`");
        assert!(line.starts_with(&format!("Timestep {t}: ")));
    }
}

#[test]
fn large_stride_keeps_first_and_last() {
    let tr = random_trajectory(2, 10);
    let spec = [FeatureSpec::gripper_tilt()];
    for stride in [9, 10, 50] {
        let text = textualize(&tr, &spec, stride).unwrap();
        let ts: Vec<&str> = text.lines().map(|l| l.split(':').next().unwrap()).collect();
        assert_eq!(ts, vec!["Timestep 0", "Timestep 9"]);
    }
}

/// Parses `Timestep t: name: v` lines back into (t, name, v).
fn parse_back(text: &str) -> Vec<(usize, String, f64)> {
    text.lines()
        .map(|l| {
            let mut parts = l.splitn(3, ": ");
            let t = parts.next().unwrap().trim_start_matches("Timestep ").parse().unwrap();
            let name = parts.next().unwrap().to_string();
            let v = parts.next().unwrap().parse().unwrap();
            (t, name, v)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn textualization_round_trips_at_two_decimals(seed in any::<u64>(), len in 2usize..40, stride in 1usize..12) {
        let tr = random_trajectory(seed, len);
        let sp = specs();
        let text = textualize(&tr, &sp, stride).unwrap();
        let parsed = parse_back(&text);
        let ts = sampled_timesteps(len, stride);
        prop_assert_eq!(parsed.len(), ts.len() * sp.len());
        for (t, name, v) in parsed {
            let k = sp.iter().position(|s| s.name == name).unwrap();
            let exact = state_features(&tr.states[t], &sp).0[k];
            prop_assert!((v - exact).abs() <= 0.005 + 1e-12);
        }
    }

    #[test]
    fn features_are_bounded(seed in any::<u64>(), angle in -10.0f64..10.0, ax in -1.0f64..1.0, ay in -1.0f64..1.0) {
        let mut tr = random_trajectory(seed, 3);
        let axis = if ax == 0.0 && ay == 0.0 { [1.0, 0.0, 0.0] } else { [ax, ay, 0.3] };
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        tr.states[1].ee_orientation = quat_from_axis_angle([axis[0] / n, axis[1] / n, axis[2] / n], angle);
        for s in &tr.states {
            for v in state_features(s, &specs()).0 {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn proximity_strictly_decreases_on_support(d_max in 0.01f64..2.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-9);
        let p_lo = proximity(lo * d_max, d_max).unwrap();
        let p_hi = proximity(hi * d_max, d_max).unwrap();
        prop_assert!(p_lo > p_hi);
    }

    #[test]
    fn removing_an_object_zeroes_only_its_features(seed in any::<u64>()) {
        let tr = random_trajectory(seed, 4);
        let sp = specs();
        let mut without = tr.clone();
        for s in &mut without.states {
            s.objects.retain(|o| o.label != "paintbrush");
        }
        let before = trajectory_features(&tr, &sp).unwrap();
        let after = trajectory_features(&without, &sp).unwrap();
        for (k, spec) in sp.iter().enumerate() {
            if spec.object_labels().contains(&"paintbrush") {
                prop_assert_eq!(after.0[k], 0.0);
            } else {
                prop_assert_eq!(after.0[k], before.0[k]);
            }
        }
    }
}
