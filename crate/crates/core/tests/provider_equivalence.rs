use flowtrack::engine::{run, EngineConfig, TrackSet};
use flowtrack::perception::{FileProvider, Perception, Recorder};
use flowtrack::simulator::{generate, random_scene, OracleProvider, SceneRecipe};

fn records_json(ts: &TrackSet) -> String {
    ts.records()
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect()
}

fn replay(oracle: &OracleProvider, ec: &EngineConfig) -> (String, String) {
    let recorder = Recorder::new(oracle);
    let live = records_json(&run(&recorder, ec).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let manifest = oracle.dump_with(dir.path(), recorder.finish().unwrap()).unwrap();
    let file = FileProvider::load(&manifest).unwrap();
    (live, records_json(&run(&file, ec).unwrap()))
}

#[test]
fn recorded_dump_replays_identically() {
    let variants = [
        EngineConfig::default(),
        EngineConfig {
            enable_refinement: false,
            ..Default::default()
        },
        EngineConfig {
            enable_motion_propagation: false,
            enable_cycle_consistency: false,
            ..Default::default()
        },
    ];
    for recipe in [SceneRecipe::closure(), SceneRecipe::fast_motion()] {
        for seed in 0..8 {
            let oracle = OracleProvider::new(generate(&random_scene(&recipe, seed)).unwrap());
            for ec in &variants {
                let (live, replayed) = replay(&oracle, ec);
                assert!(live == replayed, "seed {seed} {ec:?}");
                assert_eq!(live, records_json(&run(&oracle, ec).unwrap()));
            }
        }
    }
}

#[test]
fn unrecorded_dump_serves_detection_prompts() {
    let cfg = random_scene(&SceneRecipe::closure(), 1);
    let oracle = OracleProvider::new(generate(&cfg).unwrap());
    let file = oracle.to_file_provider().unwrap();
    for t in 1..cfg.frames {
        assert_eq!(oracle.detect(t, &[]).unwrap(), file.detect(t, &[]).unwrap());
        for d in oracle.detections(t) {
            assert_eq!(
                oracle.segment(t, &d.bbox, t - 1).unwrap(),
                file.segment(t, &d.bbox, t - 1).unwrap()
            );
        }
        assert_eq!(oracle.flow_fwd(t - 1).unwrap(), file.flow_fwd(t - 1).unwrap());
        assert_eq!(oracle.flow_bwd(t - 1).unwrap(), file.flow_bwd(t - 1).unwrap());
    }
}

#[test]
fn written_recording_round_trips() {
    let cfg = random_scene(&SceneRecipe::fast_motion(), 3);
    let oracle = OracleProvider::new(generate(&cfg).unwrap());
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = FileProvider::load(&oracle.dump(a.path()).unwrap()).unwrap();
    first.write(b.path()).unwrap();
    for entry in std::fs::read_dir(b.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            std::fs::read(a.path().join(&name)).unwrap(),
            std::fs::read(b.path().join(&name)).unwrap(),
            "{name:?}"
        );
    }
}
