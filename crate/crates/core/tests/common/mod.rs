#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use gift_core::align::{EmbeddingSpace, EmbeddingStore};
use gift_core::lm::FixtureEmbedder;
use gift_core::world::{load_task, ObjectInstance, SceneState, TaskSpec, Trajectory, Vec3};

pub const TASKS: [&str; 6] = [
    "place_mug",
    "sweep_spill",
    "pack_backpack",
    "pack_backpack_reading",
    "store_drawer",
    "store_drawer_electronics",
];

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .expect("repository root")
}

pub fn task(name: &str) -> TaskSpec {
    load_task(repo_root().join("tasks").join(format!("{name}.json"))).expect("fixture task")
}

/// Embedding fixtures are shared between the two intent variants of a task.
pub fn store(task_name: &str, space: EmbeddingSpace) -> EmbeddingStore {
    let family = task_name
        .trim_end_matches("_reading")
        .trim_end_matches("_electronics");
    let suffix = match space {
        EmbeddingSpace::Vision => "vision",
        EmbeddingSpace::Language => "language",
    };
    EmbeddingStore::load(
        repo_root()
            .join("fixtures")
            .join(format!("{family}_{suffix}.json")),
        space,
    )
    .expect("fixture embeddings")
}

pub fn text_embedder() -> FixtureEmbedder {
    FixtureEmbedder::load(repo_root().join("fixtures/intent_text_embeddings.json"))
        .expect("text fixture")
}

pub fn obj(id: &str, label: &str, position: Vec3) -> ObjectInstance {
    ObjectInstance {
        object_id: id.into(),
        label: label.into(),
        position,
        tags: BTreeSet::new(),
    }
}

pub fn state(ee: Vec3, objects: Vec<ObjectInstance>, t: u64) -> SceneState {
    SceneState {
        ee_position: ee,
        ee_orientation: [1.0, 0.0, 0.0, 0.0],
        gripper_open: true,
        objects,
        time_index: t,
    }
}

pub fn traj(states: Vec<SceneState>) -> Trajectory {
    Trajectory {
        task_id: "test".into(),
        states,
    }
}

pub fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}
