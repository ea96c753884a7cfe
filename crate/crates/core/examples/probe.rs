//! Scratch probe for benchmark calibration. Not part of the library.

use plu::config::RunConfig;
use plu::predictor::Predictor;
use plu::protocol::{run_task, RunState, TaskReport};
use plu::runner::build_dataset;
use plu::seed;
use std::collections::BTreeMap;
use std::time::Instant;

struct Overrides {
    n_tasks: u32,
    classes_per_task: u32,
    n_unknown: usize,
    enable_finetune: bool,
    bg_per_fg: f64,
    lambda: f64,
}

impl Default for Overrides {
    fn default() -> Self {
        Overrides {
            n_tasks: 1,
            classes_per_task: 20,
            n_unknown: 20,
            enable_finetune: true,
            bg_per_fg: 1.0,
            lambda: 1.0,
        }
    }
}

fn run_bench(seed: u64, ov: &Overrides) -> Vec<TaskReport> {
    let mut cfg = RunConfig::<f64>::parse("").unwrap();
    cfg.run.seed = seed;
    cfg.world.n_unknown = ov.n_unknown;
    cfg.protocol.n_tasks = ov.n_tasks;
    cfg.protocol.classes_per_task = ov.classes_per_task;
    cfg.run.enable_finetune = ov.enable_finetune;
    cfg.plu.bg_per_fg = ov.bg_per_fg;
    cfg.plu.lambda = ov.lambda;
    cfg.validate().unwrap();
    let ds = build_dataset(&cfg).unwrap();
    let scene_map: BTreeMap<u64, &plu::Scene> =
        ds.scenes.iter().map(|s| (s.scene_id, s)).collect();
    let mut state = RunState::new(
        Predictor::init(
            cfg.world.d,
            cfg.model.hidden1,
            cfg.model.hidden2,
            seed::mix(cfg.run.seed, 0x90de),
        ),
        seed::mix(cfg.run.seed, 0x57a7),
    );
    let trc = cfg.task_run_config();
    for task in &ds.header.tasks {
        run_task(&mut state, task, &scene_map, &trc).unwrap();
    }
    state.reports
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.6}"))
}

fn main() {
    let part = std::env::args().nth(1).unwrap_or_else(|| "a".into());
    let seeds: Vec<u64> = std::env::args()
        .nth(2)
        .map(|s| s.parse::<u64>().unwrap())
        .map(|n| (0..n).collect())
        .unwrap_or_else(|| vec![0, 1]);
    match part.as_str() {
        // Criterion 6: standard bench, topk vs plu.
        "a" => {
            for &s in &seeds {
                let t0 = Instant::now();
                let r = &run_bench(s, &Overrides::default())[0];
                println!(
                    "seed {s}: topk wi {} ur {} map {} | plu wi {} ur {} map {} | k={} {:?}",
                    fmt(r.topk.report.wi.as_ref().map(|w| w.wi)),
                    fmt(r.topk.report.u_recall),
                    fmt(r.topk.report.map_both),
                    fmt(r.plu.report.wi.as_ref().map(|w| w.wi)),
                    fmt(r.plu.report.u_recall),
                    fmt(r.plu.report.map_both),
                    r.k_used,
                    t0.elapsed()
                );
            }
        }
        // Criterion 7a: ratio 1 vs 10, PLU u-recall.
        "b" => {
            for &s in &seeds {
                let r1 = &run_bench(s, &Overrides::default())[0];
                let r10 = &run_bench(
                    s,
                    &Overrides {
                        bg_per_fg: 10.0,
                        ..Overrides::default()
                    },
                )[0];
                println!(
                    "seed {s}: ur(1:1) {} ur(1:10) {}",
                    fmt(r1.plu.report.u_recall),
                    fmt(r10.plu.report.u_recall)
                );
            }
        }
        // Criterion 7b: lambda 1 vs 0.2, PLU u-recall.
        "c" => {
            for &s in &seeds {
                let r1 = &run_bench(s, &Overrides::default())[0];
                let r02 = &run_bench(
                    s,
                    &Overrides {
                        lambda: 0.2,
                        ..Overrides::default()
                    },
                )[0];
                println!(
                    "seed {s}: ur(l=1) {} ur(l=0.2) {}",
                    fmt(r1.plu.report.u_recall),
                    fmt(r02.plu.report.u_recall)
                );
            }
        }
        // Criterion 7c: finetune on/off, task-2 PLU previous-known mAP.
        "d" => {
            let two = Overrides {
                n_tasks: 2,
                classes_per_task: 10,
                ..Overrides::default()
            };
            for &s in &seeds {
                let t0 = Instant::now();
                let on = &run_bench(s, &two)[1];
                let off = &run_bench(
                    s,
                    &Overrides {
                        enable_finetune: false,
                        ..Overrides {
                            n_tasks: 2,
                            classes_per_task: 10,
                            ..Overrides::default()
                        }
                    },
                )[1];
                println!(
                    "seed {s}: prev-map ft-on {} ft-off {} (cur on {} off {}) {:?}",
                    fmt(on.plu.report.map_previous),
                    fmt(off.plu.report.map_previous),
                    fmt(on.plu.report.map_current),
                    fmt(off.plu.report.map_current),
                    t0.elapsed()
                );
            }
        }
        // Head diagnosis: train 1 task, then classify test-scene anchors.
        "h" => {
            let mut cfg = RunConfig::<f64>::parse("").unwrap();
            cfg.run.seed = seeds[0];
            cfg.validate().unwrap();
            let ds = build_dataset(&cfg).unwrap();
            let scene_map: BTreeMap<u64, &plu::Scene> =
                ds.scenes.iter().map(|s| (s.scene_id, s)).collect();
            let mut state = RunState::new(
                Predictor::init(
                    cfg.world.d,
                    cfg.model.hidden1,
                    cfg.model.hidden2,
                    seed::mix(cfg.run.seed, 0x90de),
                ),
                seed::mix(cfg.run.seed, 0x57a7),
            );
            let trc = cfg.task_run_config();
            let task = &ds.header.tasks[0];
            run_task(&mut state, task, &scene_map, &trc).unwrap();
            let head = &state.head;
            println!("head classes: {:?}", head.classes());
            let mut correct = 0usize;
            let mut wrong = 0usize;
            let mut bg = 0usize;
            let mut total = 0usize;
            for sid in &task.test_scenes {
                let scene = scene_map[sid];
                for g in &scene.gt {
                    let mut best = (0usize, f64::NEG_INFINITY);
                    for (i, p) in scene.proposals.iter().enumerate() {
                        let iou = p.bbox.iou(&g.bbox);
                        if iou > best.1 {
                            best = (i, iou);
                        }
                    }
                    total += 1;
                    match head.predict(&scene.proposals[best.0].feature) {
                        None => bg += 1,
                        Some((c, _)) if c == g.class_id => correct += 1,
                        Some(_) => wrong += 1,
                    }
                }
            }
            println!("anchors: total {total} correct {correct} wrong {wrong} bg {bg}");
            // And on BG picks proxy: lowest-objectness proposals.
            let mut bg_as_bg = 0usize;
            let mut bg_total = 0usize;
            for sid in task.test_scenes.iter().take(20) {
                let scene = scene_map[sid];
                let mut idx: Vec<usize> = (0..scene.proposals.len()).collect();
                idx.sort_by(|&a, &b| {
                    scene.proposals[a]
                        .objectness
                        .partial_cmp(&scene.proposals[b].objectness)
                        .unwrap()
                });
                for &i in idx.iter().take(5) {
                    bg_total += 1;
                    if head.predict(&scene.proposals[i].feature).is_none() {
                        bg_as_bg += 1;
                    }
                }
            }
            println!("low-objectness proposals: {bg_as_bg}/{bg_total} predicted background");
        }
        other => eprintln!("unknown part {other}"),
    }
}
