use std::path::PathBuf;

use mgmp::planner::{self, Guidance, PlannerConfig};
use mgmp::scene::{self, RandomInstanceSpec, Scene};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn fixtures_load_and_round_trip_byte_for_byte() {
    for name in ["corridor.json", "generated-seed11.json"] {
        let text = std::fs::read_to_string(fixture(name)).unwrap();
        let scene = Scene::from_json(&text).unwrap();
        scene.validate().unwrap();
        assert_eq!(scene.to_json(), text, "{name}");
    }
}

#[test]
fn generated_fixture_matches_generator() {
    let spec = RandomInstanceSpec { seed: 11, obstacle_count: 8, goal_count: 3, ..Default::default() };
    let text = std::fs::read_to_string(fixture("generated-seed11.json")).unwrap();
    assert_eq!(scene::generate_scene(&spec).unwrap().to_json(), text);
}

#[test]
fn corridor_contents() {
    let scene = scene::load_scene(fixture("corridor.json")).unwrap();
    assert_eq!(scene.obstacles.len(), 3);
    assert_eq!(scene.goals.iter().map(|g| g.id).collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(scene.world.width(), 40.0);
    // the gap between the two wall halves is open
    assert!(scene.segment_free(mgmp::Point2::new(10.0, 10.0), mgmp::Point2::new(30.0, 10.0)));
    assert!(!scene.segment_free(mgmp::Point2::new(10.0, 4.0), mgmp::Point2::new(30.0, 4.0)));
}

#[test]
fn corridor_is_solvable_without_models() {
    let scene = scene::load_scene(fixture("corridor.json")).unwrap();
    let config = PlannerConfig { phi_count: 200, seed: 3, t_max: 20.0, ..Default::default() };
    for guidance in [Guidance::Euclidean, Guidance::Roadmap] {
        let sol = planner::plan(&scene, &config, guidance).unwrap();
        planner::validate_trajectory(&scene, &sol.trajectory).unwrap();
    }
}

#[test]
fn malformed_documents_are_rejected() {
    let text = std::fs::read_to_string(fixture("corridor.json")).unwrap();
    assert!(Scene::from_json(&text.replace("mgmp-scene", "other")).is_err());
    assert!(Scene::from_json(&text.replace("\"version\": 1", "\"version\": 2")).is_err());
    assert!(Scene::from_json(&text[..text.len() / 2]).is_err());
    // goal moved onto a wall
    let moved = text.replace("\"x\": 10.0,\n        \"y\": 4.0", "\"x\": 20.0,\n        \"y\": 4.0");
    assert_ne!(moved, text);
    assert!(matches!(Scene::from_json(&moved), Err(scene::SceneError::Validation(_))));
}
