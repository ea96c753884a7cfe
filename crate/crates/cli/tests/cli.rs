//! End-to-end tests of the `plu` binary: subcommand plumbing, exit codes,
//! and artifact determinism.

use std::path::Path;
use std::process::{Command, Output};

fn plu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plu"))
        .args(args)
        .output()
        .expect("binary runs")
}

const TINY_CONFIG: &str = "\
# small enough to finish in seconds
world.n_known = 8
world.n_unknown = 2
world.d = 16
protocol.n_tasks = 2
protocol.classes_per_task = 4
protocol.train_scenes_per_task = 10
protocol.test_scenes_per_task = 5
plu.train_samples = 256
plu.batch_size = 4
model.hidden1 = 32
model.hidden2 = 16
run.finetune_samples = 64
";

fn write_config(dir: &Path) -> String {
    let path = dir.join("config.txt");
    std::fs::write(&path, TINY_CONFIG).unwrap();
    path.display().to_string()
}

#[test]
fn generate_run_report_pipeline_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.display().to_string();
    let cfg = write_config(dir.path());

    let gen = plu(&["generate", "--config", &cfg, "--out", &out_s, "--deterministic"]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let stdout = String::from_utf8_lossy(&gen.stdout);
    assert!(stdout.contains("generator audits: pass"), "{stdout}");
    assert!(out.join("dataset.jsonl").exists());
    assert!(out.join("dataset_manifest.json").exists());

    let run = plu(&["run", "--config", &cfg, "--out", &out_s, "--deterministic"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.join("tasks.csv").exists());
    assert!(out.join("manifest.json").exists());
    assert!(out.join("report_task2.json").exists());

    let rep = plu(&["report", "--out", &out_s]);
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));
    let stdout = String::from_utf8_lossy(&rep.stdout);
    assert!(stdout.contains("selector"));
    assert!(out.join("summary.txt").exists());
    assert!(out.join("u_recall.svg").exists());
}

#[test]
fn same_seed_twice_gives_byte_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let out_s = out.display().to_string();
        let gen = plu(&[
            "generate", "--config", &cfg, "--seed", "7", "--out", &out_s, "--deterministic",
        ]);
        assert!(gen.status.success());
        let run = plu(&[
            "run", "--config", &cfg, "--seed", "7", "--out", &out_s, "--deterministic",
        ]);
        assert!(run.status.success());
    }
    for name in ["dataset.jsonl", "tasks.csv", "manifest.json", "selections_task1.csv"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} should be byte-identical across reruns");
    }
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out, seed) in [(&out_a, "7"), (&out_b, "8")] {
        let out_s = out.display().to_string();
        let gen = plu(&[
            "generate", "--config", &cfg, "--seed", seed, "--out", &out_s, "--deterministic",
        ]);
        assert!(gen.status.success());
    }
    let a = std::fs::read(out_a.join("dataset.jsonl")).unwrap();
    let b = std::fs::read(out_b.join("dataset.jsonl")).unwrap();
    assert_ne!(a, b, "different seeds must generate different datasets");
}

#[test]
fn unknown_config_key_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    std::fs::write(&path, "plu.epsilom = 0.9\n").unwrap();
    let out = plu(&[
        "generate",
        "--config",
        &path.display().to_string(),
        "--out",
        &dir.path().join("o").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("plu.epsilom"), "{stderr}");
}

#[test]
fn run_without_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = plu(&[
        "run",
        "--config",
        &cfg,
        "--out",
        &dir.path().join("empty").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset not found"));
}

#[test]
fn report_on_empty_dir_exits_3_with_nothing_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = plu(&["report", "--out", &dir.path().display().to_string()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to report"));
}

#[test]
fn bad_ablation_axis_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = plu(&[
        "ablate",
        "--config",
        &cfg,
        "--axis",
        "width",
        "--out",
        &dir.path().join("o").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown ablation axis"));
}

#[test]
fn tiny_finetune_ablation_emits_sweep_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.txt");
    // Even smaller than TINY_CONFIG: the sweep runs 2 cells x 2 seeds x 2
    // tasks.
    std::fs::write(
        &path,
        "world.n_known = 8\nworld.n_unknown = 2\nworld.d = 16\n\
         protocol.n_tasks = 2\nprotocol.classes_per_task = 4\n\
         protocol.train_scenes_per_task = 6\nprotocol.test_scenes_per_task = 3\n\
         plu.train_samples = 128\nplu.batch_size = 4\n\
         model.hidden1 = 32\nmodel.hidden2 = 16\n\
         run.finetune_samples = 64\nablate.seeds = 2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("sweep");
    let out = plu(&[
        "ablate",
        "--config",
        &path.display().to_string(),
        "--axis",
        "finetune",
        "--out",
        &out_dir.display().to_string(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("sweep_finetune.csv").exists());
    assert!(out_dir.join("sweep_finetune_summary.csv").exists());
    let text = std::fs::read_to_string(out_dir.join("sweep_finetune.csv")).unwrap();
    // Header + 2 cells x 2 seeds.
    assert_eq!(text.lines().count(), 5);
}
