//! End-to-end acceptance checks. Prints one PASS or FAIL line per criterion
//! and exits non-zero if any fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowtrack::engine::{run, select_hypothesis, EngineConfig, TerminationReason, TrackState};
use flowtrack::metrics::{evaluate, hota, hungarian, id_switches, EvalOptions, MetricReport, Protocol};
use flowtrack::motion::{fb_consistency, fit_transform};
use flowtrack::perception::{FileProvider, Perception, Recorder};
use flowtrack::records::{TrackRecord, TrackTable};
use flowtrack::simulator::{
    generate, occlusion_trial, oracle_settings, random_scene, MotionSegment, NoiseSpec, ObjectSpec, OracleProvider,
    SceneConfig, SceneRecipe, SceneTruth, Shape,
};
use flowtrack::{BBox, BinaryMask};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn score(truth: &SceneTruth, cfg: &EngineConfig, protocol: Protocol) -> MetricReport {
    let ts = run(&OracleProvider::new(truth.clone()), cfg).unwrap();
    let pred = TrackTable::from_records(ts.records()).unwrap();
    let opts = EvalOptions {
        protocol,
        frames: Some(truth.frames()),
        ..EvalOptions::default()
    };
    evaluate(&pred, &truth.gt_table(), &opts).unwrap()
}

fn oracle_closure() -> Outcome {
    let start = Instant::now();
    let cfg = EngineConfig::default();
    let mut worst = (f64::INFINITY, 0);
    for seed in 0..20 {
        let truth = generate(&random_scene(&SceneRecipe::closure(), seed)).unwrap();
        let r = score(&truth, &cfg, Protocol::Vos);
        let jf = r.jf.unwrap();
        if jf < worst.0 {
            worst.0 = jf;
        }
        worst.1 += r.id_switches;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst.0 == 100.0 && worst.1 == 0 && secs < 60.0,
        format!("20 scenes, min J&F {:.3}, {} id switches, {secs:.1} s", worst.0, worst.1),
    )
}

fn motion_fit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut max_err: f64 = 0.0;
    for _ in 0..1000 {
        let (sx, sy) = (rng.random_range(0.5..=2.0), rng.random_range(0.5..=2.0));
        let (ox, oy) = (rng.random_range(-20.0..=20.0), rng.random_range(-20.0..=20.0));
        let (x0, y0) = (rng.random_range(0..100) as f64, rng.random_range(0..100) as f64);
        let (w, h) = (rng.random_range(2..30), rng.random_range(2..30));
        let mut points = Vec::new();
        let mut disp = Vec::new();
        for i in 0..w {
            for j in 0..h {
                let (x, y) = (x0 + i as f64 + 0.5, y0 + j as f64 + 0.5);
                points.push((x, y));
                disp.push((sx * x + ox - x, sy * y + oy - y));
            }
        }
        let m = fit_transform(&points, &disp).unwrap();
        for err in [m.ax - sx, m.bx - ox, m.ay - sy, m.by - oy] {
            max_err = max_err.max(err.abs());
        }
    }
    check(max_err < 1e-9, format!("1000 fits, max abs error {max_err:.2e}"))
}

fn rect_object(label: &str, center: [f64; 2], size: [f64; 2], depth: i32, velocity: [f64; 2]) -> ObjectSpec {
    ObjectSpec {
        label: label.into(),
        shape: Shape::Rectangle,
        size,
        center,
        depth,
        motion: vec![MotionSegment {
            velocity,
            ..Default::default()
        }],
        enter_frame: 0,
        exit_frame: None,
        feature: None,
    }
}

fn fb_behaviour() -> Outcome {
    // a 10 px square slides 5 px per frame under a static wall
    let cfg = SceneConfig {
        width: 96,
        height: 64,
        frames: 6,
        seed: 3,
        feature_dim: 8,
        objects: vec![
            rect_object("square", [17.0, 30.0], [10.0, 10.0], 0, [5.0, 0.0]),
            rect_object("wall", [37.0, 32.0], [10.0, 64.0], 1, [0.0, 0.0]),
        ],
        noise: NoiseSpec::default(),
        provider: oracle_settings(),
        gt_min_visibility: 0.5,
    };
    let truth = generate(&cfg).unwrap();
    let o = &truth.objects[0];
    let ratio = |t: usize| {
        fb_consistency(o.masks[t].as_ref().unwrap(), &truth.fwd[t], &truth.bwd[t])
            .unwrap()
            .ratio
    };
    let visible = [ratio(0), ratio(1)];
    // pixel counts: columns 22..32 move to 27..37, the wall covers 32..42
    let bm = o.masks[2].as_ref().unwrap().decode();
    let next = o.masks[3].as_ref().unwrap().decode();
    let lands = bm.foreground().filter(|&(x, y)| next.get(x + 5, y)).count();
    let expected = lands as f64 / bm.count() as f64;
    let half = ratio(2);

    let p = OracleProvider::new(truth.clone());
    let end = |lambda_flow: f64| {
        let ec = EngineConfig {
            lambda_flow,
            lambda_reid: 1.01,
            ..Default::default()
        };
        let t = &run(&p, &ec).unwrap().tracks[&1];
        (t.end_frame(), t.state)
    };
    let flow = TrackState::Terminated {
        reason: TerminationReason::FlowInconsistent,
    };
    let (above, at) = (end(0.51), end(half));
    let ok = visible == [1.0, 1.0]
        && half == expected
        && (0.45..=0.55).contains(&half)
        && above == (2, flow)
        && at == (3, flow);
    check(
        ok,
        format!(
            "visible ratios {visible:?}, occluded ratio {half} (pixel count {expected}), \
             end at lambda 0.51 {above:?}, at lambda {half} {at:?}"
        ),
    )
}

fn cycle_selection() -> Outcome {
    let noise = NoiseSpec {
        distractor_rate: 1.0,
        distractor_quality: 0.9,
        ..NoiseSpec::default()
    };
    let (mut cases, mut on_right, mut off_wrong, mut seed) = (0, 0, 0, 0);
    // one case per seed: the first object and frame whose distractor draws
    // on a neighbor visible in both frames
    while cases < 100 {
        let truth = generate(&random_scene(&SceneRecipe::closure(), seed)).unwrap();
        seed += 1;
        let p = OracleProvider::with_noise(truth.clone(), noise, oracle_settings());
        let case = (1..truth.frames()).find_map(|t| {
            truth.objects.iter().find_map(|o| {
                let (prev, cur) = (o.masks[t - 1].as_ref()?, o.masks[t].as_ref()?);
                let hyps = p.segment(t, o.boxes[t].as_ref()?, t - 1).ok()?;
                let truth_at = hyps.iter().position(|h| &h.mask == cur)?;
                let distractor = hyps.iter().position(|h| &h.mask != cur)?;
                let bp = hyps[distractor].backprojection.as_ref()?;
                (hyps[distractor].quality > hyps[truth_at].quality && bp.iou(prev).ok()? < 1.0)
                    .then(|| (hyps, prev.clone(), truth_at))
            })
        });
        let Some((hyps, prev, truth_at)) = case else { continue };
        cases += 1;
        if select_hypothesis(&hyps, &prev, true) == Some(truth_at) {
            on_right += 1;
        }
        if select_hypothesis(&hyps, &prev, false) != Some(truth_at) {
            off_wrong += 1;
        }
    }
    // the whole engine on the same kind of scenes
    let mut jf = [0.0; 2];
    for seed in 0..10 {
        let mut cfg = random_scene(&SceneRecipe::closure(), seed);
        cfg.noise = noise;
        let truth = generate(&cfg).unwrap();
        for (i, cycle) in [true, false].into_iter().enumerate() {
            let ec = EngineConfig {
                enable_cycle_consistency: cycle,
                ..Default::default()
            };
            jf[i] += score(&truth, &ec, Protocol::Vos).jf.unwrap() / 10.0;
        }
    }
    check(
        on_right == 100 && off_wrong > 0 && jf[0] > jf[1],
        format!(
            "{cases} cases (seeds 0..{seed}): on picks the truth {on_right}/100, off errs {off_wrong}/100; \
             engine mean J&F on {:.2}, off {:.2}",
            jf[0], jf[1]
        ),
    )
}

fn ablation() -> Outcome {
    let variants: [(&str, EngineConfig); 4] = [
        ("full", EngineConfig::default()),
        (
            "no-refinement",
            EngineConfig {
                enable_refinement: false,
                ..Default::default()
            },
        ),
        (
            "no-motion",
            EngineConfig {
                enable_motion_propagation: false,
                ..Default::default()
            },
        ),
        (
            "no-box-adaptation",
            EngineConfig {
                enable_box_adaptation: false,
                ..Default::default()
            },
        ),
    ];
    let seeds = 30;
    let mut means = [0.0; 4];
    for seed in 0..seeds {
        let truth = generate(&random_scene(&SceneRecipe::fast_motion(), seed)).unwrap();
        for (i, (_, cfg)) in variants.iter().enumerate() {
            means[i] += score(&truth, cfg, Protocol::Openworld).jf.unwrap() / seeds as f64;
        }
    }
    let detail = variants
        .iter()
        .zip(means)
        .map(|((name, _), m)| format!("{name} {m:.2}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(
        means[1..].iter().all(|&m| means[0] > m),
        format!("mean J&F over {seeds} fast scenes: {detail}"),
    )
}

fn reid() -> Outcome {
    let (mut kept, mut merges) = (0, 0);
    for seed in 0..100 {
        let truth = generate(&occlusion_trial(seed, 0.05)).unwrap();
        let o = &truth.objects[0];
        let p = OracleProvider::new(truth.clone());
        let ids = |cfg: &EngineConfig| -> (Vec<u64>, usize) {
            let ts = run(&p, cfg).unwrap();
            let merged = ts.tracks.values().map(|t| t.merges.len()).sum();
            let records = ts.records();
            let ids = (0..truth.frames())
                .filter_map(|t| o.masks[t].as_ref().filter(|_| o.visibility[t] >= 0.5).map(|m| (t, m)))
                .map(|(t, gt)| {
                    records
                        .iter()
                        .find(|r| r.frame == t && r.mask.iou(gt).unwrap() >= 0.5)
                        .map_or(0, |r| r.id)
                })
                .collect();
            (ids, merged)
        };
        let (full, _) = ids(&EngineConfig::default());
        if full[0] != 0 && full.iter().all(|&id| id == full[0]) {
            kept += 1;
        }
        merges += ids(&EngineConfig {
            lambda_reid: 1.01,
            ..Default::default()
        })
        .1;
    }
    check(
        kept >= 95 && merges == 0,
        format!("{kept}/100 kept their id; {merges} merges at lambda_reid 1.01"),
    )
}

fn mask(x0: f64, y0: f64, x1: f64, y1: f64) -> BinaryMask {
    BinaryMask::from_box(32, 32, &BBox::from([x0, y0, x1, y1]))
}

fn table(tracks: Vec<(u64, Vec<BinaryMask>)>) -> TrackTable {
    TrackTable::from_records(tracks.into_iter().flat_map(|(id, masks)| {
        masks.into_iter().enumerate().map(move |(frame, mask)| TrackRecord {
            frame,
            id,
            label: "x".into(),
            bbox: mask.tight_box().unwrap(),
            mask,
            score: None,
        })
    }))
    .unwrap()
}

fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        let free = used.iter().filter(|u| !**u).count();
        // a row may stay unassigned only when rows outnumber columns
        if cost.len() - row > free {
            best = go(cost, row + 1, used);
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[row][j] + go(cost, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost[0].len()])
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (r, c) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let cost: Vec<Vec<f64>> = (0..r)
            .map(|_| (0..c).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let got: f64 = hungarian(&cost)
            .unwrap()
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| cost[i][j]))
            .sum();
        worst = worst.max((got - brute_force(&cost)).abs());
    }

    // two objects, four frames, identities swapped after frame 1
    let (a, b) = (mask(0.0, 0.0, 8.0, 8.0), mask(16.0, 16.0, 24.0, 24.0));
    let gt = table(vec![(1, vec![a.clone(); 4]), (2, vec![b.clone(); 4])]);
    let pred = table(vec![
        (10, vec![a.clone(), a.clone(), b.clone(), b.clone()]),
        (20, vec![b.clone(), b, a.clone(), a]),
    ]);
    // each identity pair shares 2 true positives out of 4 + 4 detections
    let ass = 2.0 / 6.0;
    let h = hota(&pred, &gt, false).unwrap();
    let r = evaluate(&pred, &gt, &EvalOptions::default()).unwrap();
    let swap_ok = (h.hota - f64::sqrt(ass)).abs() < 1e-12
        && (h.ass_a - ass).abs() < 1e-12
        && (h.det_a - 1.0).abs() < 1e-12
        && id_switches(&pred, &gt, false).unwrap() == 2
        && (r.j.unwrap() - 50.0).abs() < 1e-12
        && (r.f.unwrap() - 50.0).abs() < 1e-12
        && r.per_track.iter().all(|s| (s.st_iou - 1.0 / 3.0).abs() < 1e-12)
        && r.mar == Some(0.0);

    let mut perfect_ok = true;
    for protocol in [Protocol::Vos, Protocol::Openworld, Protocol::Hota] {
        let opts = EvalOptions {
            protocol,
            ..EvalOptions::default()
        };
        let p = evaluate(&gt, &gt, &opts).unwrap();
        perfect_ok &= [p.j, p.f, p.jf] == [Some(100.0); 3]
            && [p.ar50, p.ar75, p.mar, p.mar100] == [Some(1.0); 4]
            && [p.hota, p.det_a, p.ass_a, p.loc_a] == [1.0; 4]
            && p.id_switches == 0;
    }
    check(
        worst < 1e-9 && swap_ok && perfect_ok,
        format!(
            "hungarian max gap {worst:.1e} over 1000 matrices; id-swap HOTA {:.12} (sqrt(1/3)), J {:?}; perfect {perfect_ok}",
            h.hota, r.j
        ),
    )
}

fn records_bytes(records: &[TrackRecord]) -> Vec<u8> {
    records
        .iter()
        .flat_map(|r| {
            let mut line = serde_json::to_vec(r).unwrap();
            line.push(b'\n');
            line
        })
        .collect()
}

fn provider_equivalence() -> Outcome {
    let mut compared = 0;
    let mut differing = Vec::new();
    for (name, recipe) in [("closure", SceneRecipe::closure()), ("fast", SceneRecipe::fast_motion())] {
        for seed in 0..10 {
            let oracle = OracleProvider::new(generate(&random_scene(&recipe, seed)).unwrap());
            let cfg = EngineConfig::default();
            let recorder = Recorder::new(&oracle);
            let live = records_bytes(&run(&recorder, &cfg).unwrap().records());
            let dir = tempfile::tempdir().unwrap();
            let manifest = oracle.dump_with(dir.path(), recorder.finish().unwrap()).unwrap();
            let file = FileProvider::load(&manifest).unwrap();
            assert_eq!(file.frame_count(), oracle.frame_count());
            let replayed = records_bytes(&run(&file, &cfg).unwrap().records());
            compared += 1;
            if live != replayed {
                differing.push(format!("{name} {seed}"));
            }
        }
    }
    check(
        differing.is_empty(),
        format!("{compared} videos replayed; differing: {differing:?}"),
    )
}

fn flowtrack(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_flowtrack"))
        .args(args)
        .arg("--log-level")
        .arg("error")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let p = |s: &str| root.path().join(s).display().to_string();
    let resolved = |s: &str| p(&format!("{s}/resolved_config.json"));
    flowtrack(&["simulate", "--recipe", "fast-motion", "--seed", "5", "-o", &p("sim_a")]);
    flowtrack(&["simulate", "--config", &resolved("sim_a"), "-o", &p("sim_b")]);
    let manifest = p("sim_a/manifest.json");
    flowtrack(&["track", "--manifest", &manifest, "--jobs", "2", "-o", &p("track_a")]);
    flowtrack(&["track", "--config", &resolved("track_a"), "-o", &p("track_b")]);
    let (pred, gt) = (p("track_a/tracks.ndjson"), p("sim_a/gt.ndjson"));
    flowtrack(&["eval", "--pred", &pred, "--gt", &gt, "--protocol", "hota", "-o", &p("eval_a")]);
    flowtrack(&["eval", "--config", &resolved("eval_a"), "-o", &p("eval_b")]);

    let mut same = 0;
    let mut differing = Vec::new();
    for stage in ["sim", "track", "eval"] {
        let a = tree(&root.path().join(format!("{stage}_a")));
        let b = tree(&root.path().join(format!("{stage}_b")));
        if a.len() != b.len() {
            differing.push(format!("{stage}: {} vs {} files", a.len(), b.len()));
        }
        for ((na, ca), (nb, cb)) in a.iter().zip(&b) {
            if na == nb && ca == cb {
                same += 1;
            } else {
                differing.push(format!("{stage}/{na}"));
            }
        }
    }
    check(
        differing.is_empty(),
        format!("{same} output files identical across reruns from the resolved configs; differing: {differing:?}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle closure", oracle_closure),
        ("motion-fit exactness", motion_fit),
        ("forward-backward consistency", fb_behaviour),
        ("cycle-consistent selection", cycle_selection),
        ("ablation directions", ablation),
        ("re-identification", reid),
        ("metric oracles", metric_oracles),
        ("provider equivalence", provider_equivalence),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
