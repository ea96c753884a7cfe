//! End-to-end drivers behind the CLI subcommands: dataset generation with
//! audits, full protocol runs with artifact emission, ablation sweeps, and
//! report rendering. Everything here is a library function so the whole
//! pipeline is testable without spawning processes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::audits::{
    bg_overlap_audit, bias_audit, censorship_audit, low_decile_audit, BgOverlapReport, BiasReport,
    LowDecileReport,
};
use crate::config::{ConfigError, RunConfig};
use crate::dataset::{
    file_sha256, load_dataset, save_dataset, DatasetError, DatasetFile, DatasetHeader,
    DATASET_SCHEMA_VERSION,
};
use crate::predictor::{save_checkpoint, OptimState, Predictor, PredictorError};
use crate::protocol::{make_tasks, run_task, ProtocolError, RunState, TaskReport};
use crate::report::{
    read_tasks_csv, render_summary, summarize_sweep, write_manifest,
    write_metric_svgs, write_selections_csv, write_sweep_csv, write_sweep_summary_csv,
    write_task_report_json, write_tasks_csv, write_training_log_csv, Manifest, ReportError,
    SweepRow, TaskArtifacts, MANIFEST_SCHEMA_VERSION,
};
use crate::scalar::Scalar;
use crate::seed;
use crate::uda::UdaError;
use crate::world::{generate_world, Scene, WorldError};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    MissingInput(String),
}

impl RunnerError {
    /// Process exit code: 2 config error, 3 data error, 4 numerical
    /// failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunnerError::Config(_) | RunnerError::World(_) => 2,
            RunnerError::Protocol(e) => match e {
                ProtocolError::InvalidConfig(_) | ProtocolError::OutOfOrder { .. } => 2,
                ProtocolError::Uda(u) => match u {
                    UdaError::InvalidConfig(_) => 2,
                    UdaError::Diverged { .. } | UdaError::Predictor(_) => 4,
                    UdaError::EmptyBatch => 3,
                },
                ProtocolError::Predictor(_) => 4,
                ProtocolError::Hygiene(_) | ProtocolError::MissingScene(_) => 3,
            },
            RunnerError::Predictor(_) => 4,
            RunnerError::Dataset(_)
            | RunnerError::Report(_)
            | RunnerError::Io(_)
            | RunnerError::MissingInput(_) => 3,
        }
    }
}

fn write_head_json<S: Scalar + Serialize>(
    head: &crate::head::ClassHead<S>,
    path: &Path,
) -> Result<(), RunnerError> {
    let text = serde_json::to_string_pretty(head).map_err(ReportError::from)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn now_unix_s(deterministic: bool) -> Option<u64> {
    if deterministic {
        return None;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}

/// Builds the complete dataset (world, task splits, scenes) in memory from
/// the configuration and its seed.
pub fn build_dataset<S: Scalar>(cfg: &RunConfig<S>) -> Result<DatasetFile<S>, RunnerError> {
    cfg.validate()?;
    let classes = generate_world(&cfg.world, seed::mix(cfg.run.seed, 0x77d0))?;
    let (tasks, scenes) = make_tasks(
        &classes,
        &cfg.protocol,
        &cfg.scene,
        seed::mix(cfg.run.seed, 0xda7a),
    )?;
    Ok(DatasetFile {
        header: DatasetHeader {
            schema_version: DATASET_SCHEMA_VERSION,
            seed: cfg.run.seed,
            world: cfg.world.clone(),
            scene_params: cfg.scene.clone(),
            classes,
            tasks,
        },
        scenes,
    })
}

/// Generator audit results for one task's scene pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAudit {
    pub task_id: u32,
    pub low_decile: LowDecileReport,
    /// Whether the low-decile result gates the dataset. Only the final
    /// task's pool annotates every annotatable class; at earlier tasks,
    /// future-known classes are legitimate low-objectness foreground (their
    /// prototypes sit anywhere relative to the current known set), so the
    /// number is informational there.
    pub low_decile_gated: bool,
    pub bg_overlap: BgOverlapReport,
    pub bias: BiasReport,
    pub censorship_ok: bool,
}

/// Summary returned by dataset generation, including the audit table the
/// CLI prints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub dataset_path: String,
    pub dataset_sha256: String,
    pub n_classes: usize,
    pub n_known_classes: usize,
    pub n_scenes: usize,
    pub n_tasks: usize,
    pub audits: Vec<TaskAudit>,
    pub all_pass: bool,
}

/// Written next to the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub created_unix_s: Option<u64>,
    pub seed: u64,
    pub dataset_path: String,
    pub dataset_sha256: String,
    pub config_text: String,
    pub summary: GenerateSummary,
}

/// Runs the generator audits for every task over that task's own scenes
/// and known set. The bias audit only gates tasks that still have unknown
/// objects, and the low-decile audit only gates the final task (see
/// [`TaskAudit::low_decile_gated`]).
pub fn audit_dataset<S: Scalar>(ds: &DatasetFile<S>) -> (Vec<TaskAudit>, bool) {
    let mut audits = Vec::new();
    let mut all_pass = true;
    let last_task = ds.header.tasks.len() as u32;
    for task in &ds.header.tasks {
        let known: std::collections::BTreeSet<u32> = task.known.iter().copied().collect();
        let scenes: Vec<&Scene<S>> = task
            .train_scenes
            .iter()
            .chain(&task.test_scenes)
            .map(|&sid| &ds.scenes[sid as usize])
            .collect();
        let iou = crate::scalar::sc::<S>(0.5);
        let low_decile = low_decile_audit(&scenes, iou, 0.99);
        let low_decile_gated = task.task_id == last_task;
        let bg_overlap = bg_overlap_audit(&scenes, iou, 0.95);
        let bias = bias_audit(&scenes, &known, iou);
        let censorship_ok = censorship_audit(&scenes, &known);
        all_pass &= (!low_decile_gated || low_decile.pass)
            && bg_overlap.pass
            && censorship_ok
            && (bias.n_unknown_objects == 0 || bias.pass);
        audits.push(TaskAudit {
            task_id: task.task_id,
            low_decile,
            low_decile_gated,
            bg_overlap,
            bias,
            censorship_ok,
        });
    }
    (audits, all_pass)
}

/// `generate`: builds the dataset, writes it plus a manifest into
/// `out_dir`, and runs the generator audits.
pub fn cmd_generate<S: Scalar + Serialize + DeserializeOwned>(
    cfg: &RunConfig<S>,
    out_dir: &Path,
    deterministic: bool,
) -> Result<GenerateSummary, RunnerError> {
    std::fs::create_dir_all(out_dir)?;
    let ds = build_dataset(cfg)?;
    let path = out_dir.join(&cfg.run.dataset);
    save_dataset(&ds, &path)?;
    let sha = file_sha256(&path)?;
    let (audits, all_pass) = audit_dataset(&ds);
    // Stored relative so manifests from different output roots compare
    // equal; callers join `out_dir` when they need the absolute path.
    let summary = GenerateSummary {
        dataset_path: cfg.run.dataset.clone(),
        dataset_sha256: sha.clone(),
        n_classes: ds.header.classes.len(),
        n_known_classes: ds.header.classes.iter().filter(|c| c.known).count(),
        n_scenes: ds.scenes.len(),
        n_tasks: ds.header.tasks.len(),
        audits,
        all_pass,
    };
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        created_unix_s: now_unix_s(deterministic),
        seed: cfg.run.seed,
        dataset_path: cfg.run.dataset.clone(),
        dataset_sha256: sha,
        config_text: cfg.to_text(),
        summary: summary.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| RunnerError::Report(ReportError::Json(e)))?;
    std::fs::write(out_dir.join("dataset_manifest.json"), text + "\n")?;
    Ok(summary)
}

fn dataset_path<S: Scalar>(cfg: &RunConfig<S>, out_dir: &Path) -> PathBuf {
    let p = Path::new(&cfg.run.dataset);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

/// Everything `cmd_run` produced, for callers that want to print or test.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<TaskReport>,
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

/// `run`: loads the dataset, executes every task in order for both
/// selector arms, and writes reports, logs, selections, checkpoints,
/// `tasks.csv`, and the run manifest into `out_dir`.
pub fn cmd_run<S: Scalar + Serialize + DeserializeOwned>(
    cfg: &RunConfig<S>,
    out_dir: &Path,
    deterministic: bool,
) -> Result<RunOutcome, RunnerError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let ds_path = dataset_path(cfg, out_dir);
    if !ds_path.exists() {
        return Err(RunnerError::MissingInput(format!(
            "dataset not found at {} — run `generate` first or set run.dataset",
            ds_path.display()
        )));
    }
    let ds: DatasetFile<S> = load_dataset(&ds_path)?;
    let sha = file_sha256(&ds_path)?;
    let scene_map: BTreeMap<u64, &Scene<S>> =
        ds.scenes.iter().map(|s| (s.scene_id, s)).collect();
    let d = ds.header.world.d;
    let mut state = RunState::new(
        Predictor::init(
            d,
            cfg.model.hidden1,
            cfg.model.hidden2,
            seed::mix(cfg.run.seed, 0x90de),
        ),
        seed::mix(cfg.run.seed, 0x57a7),
    );
    let run_cfg = cfg.task_run_config();
    let mut artifacts = Vec::new();
    for task in &ds.header.tasks {
        run_task(&mut state, task, &scene_map, &run_cfg)?;
        let report = state.reports.last().expect("run_task appended a report");
        let t = task.task_id;
        let names = TaskArtifacts {
            task_id: t,
            report_json: format!("report_task{t}.json"),
            train_log_csv: format!("train_log_task{t}.csv"),
            finetune_log_csv: format!("finetune_log_task{t}.csv"),
            selections_csv: format!("selections_task{t}.csv"),
            checkpoint: format!("checkpoint_task{t}.json"),
            head_json: format!("head_task{t}.json"),
        };
        write_task_report_json(report, &out_dir.join(&names.report_json))?;
        write_training_log_csv(&report.train_log, &out_dir.join(&names.train_log_csv))?;
        write_training_log_csv(&report.finetune_log, &out_dir.join(&names.finetune_log_csv))?;
        write_selections_csv(report, &out_dir.join(&names.selections_csv))?;
        // Checkpoints persist the predictor; optimizer velocity is
        // stage-local, so a fresh optimizer state is stored alongside.
        save_checkpoint(
            &state.predictor,
            &OptimState::new(cfg.plu.lr, cfg.plu.momentum, &state.predictor),
            &out_dir.join(&names.checkpoint),
        )?;
        write_head_json(&state.head, &out_dir.join(&names.head_json))?;
        artifacts.push(names);
    }
    write_tasks_csv(&state.reports, &out_dir.join("tasks.csv"))?;
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        created_unix_s: now_unix_s(deterministic),
        seed: cfg.run.seed,
        dataset_path: cfg.run.dataset.clone(),
        dataset_sha256: sha,
        config_text: cfg.to_text(),
        tasks_csv: "tasks.csv".into(),
        tasks: artifacts,
    };
    let manifest_path = out_dir.join("manifest.json");
    write_manifest(&manifest, &manifest_path)?;
    Ok(RunOutcome {
        reports: state.reports,
        manifest,
        manifest_path,
    })
}

/// Ablation axes, matching the study grids: source:background ratio,
/// source-loss weight, pseudo-label threshold, and fine-tuning on/off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Ratio,
    Lambda,
    Epsilon,
    Finetune,
}

impl std::str::FromStr for Axis {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ratio" => Ok(Axis::Ratio),
            "lambda" => Ok(Axis::Lambda),
            "epsilon" => Ok(Axis::Epsilon),
            "finetune" => Ok(Axis::Finetune),
            _ => Err(ConfigError::Invalid(format!(
                "unknown ablation axis {s:?}; expected ratio|lambda|epsilon|finetune"
            ))),
        }
    }
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::Ratio => "ratio",
            Axis::Lambda => "lambda",
            Axis::Epsilon => "epsilon",
            Axis::Finetune => "finetune",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            Axis::Ratio => 0xab1,
            Axis::Lambda => 0xab2,
            Axis::Epsilon => 0xab3,
            Axis::Finetune => 0xab4,
        }
    }

    /// The swept cells: display value plus a config mutation.
    fn cells<S: Scalar>(&self) -> Vec<(String, fn(&mut RunConfig<S>, f64))> {
        fn set_ratio<S: Scalar>(c: &mut RunConfig<S>, v: f64) {
            c.plu.bg_per_fg = crate::scalar::sc(v);
        }
        fn set_lambda<S: Scalar>(c: &mut RunConfig<S>, v: f64) {
            c.plu.lambda = crate::scalar::sc(v);
        }
        fn set_epsilon<S: Scalar>(c: &mut RunConfig<S>, v: f64) {
            c.plu.epsilon = crate::scalar::sc(v);
        }
        fn set_finetune<S: Scalar>(c: &mut RunConfig<S>, v: f64) {
            c.run.enable_finetune = v > 0.5;
        }
        match self {
            Axis::Ratio => vec![
                ("1".into(), set_ratio as fn(&mut RunConfig<S>, f64)),
                ("2".into(), set_ratio),
                ("5".into(), set_ratio),
                ("10".into(), set_ratio),
            ],
            Axis::Lambda => vec![
                ("1".into(), set_lambda as fn(&mut RunConfig<S>, f64)),
                ("0.7".into(), set_lambda),
                ("0.5".into(), set_lambda),
                ("0.2".into(), set_lambda),
            ],
            Axis::Epsilon => vec![
                ("0.6".into(), set_epsilon as fn(&mut RunConfig<S>, f64)),
                ("0.7".into(), set_epsilon),
                ("0.8".into(), set_epsilon),
                ("0.9".into(), set_epsilon),
                ("0.95".into(), set_epsilon),
            ],
            Axis::Finetune => vec![
                ("on".into(), set_finetune as fn(&mut RunConfig<S>, f64)),
                ("off".into(), set_finetune),
            ],
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            Axis::Ratio => vec![1.0, 2.0, 5.0, 10.0],
            Axis::Lambda => vec![1.0, 0.7, 0.5, 0.2],
            Axis::Epsilon => vec![0.6, 0.7, 0.8, 0.9, 0.95],
            Axis::Finetune => vec![1.0, 0.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblateOutcome {
    pub rows: Vec<SweepRow>,
    pub sweep_csv: PathBuf,
    pub summary_csv: PathBuf,
}

/// `ablate`: sweeps one axis over its grid × `ablate.seeds` seeds. Each
/// cell run uses a 2-task protocol (the ablation setting: models observed
/// after training on task 2) on a freshly generated dataset, and records
/// the PLU arm's task-2 metrics.
pub fn cmd_ablate<S: Scalar + Serialize + DeserializeOwned>(
    cfg: &RunConfig<S>,
    axis: Axis,
    out_dir: &Path,
) -> Result<AblateOutcome, RunnerError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    let cells = axis.cells::<S>();
    let values = axis.values();
    for (ci, ((label, set), value)) in cells.into_iter().zip(values).enumerate() {
        for s in 0..cfg.ablate.seeds {
            let mut c = cfg.clone();
            c.protocol.n_tasks = 2;
            set(&mut c, value);
            c.run.seed = seed::mix4(cfg.run.seed, axis.tag(), ci as u64, s);
            c.validate()?;
            let ds = build_dataset(&c)?;
            let scene_map: BTreeMap<u64, &Scene<S>> =
                ds.scenes.iter().map(|sc| (sc.scene_id, sc)).collect();
            let mut state = RunState::new(
                Predictor::init(
                    ds.header.world.d,
                    c.model.hidden1,
                    c.model.hidden2,
                    seed::mix(c.run.seed, 0x90de),
                ),
                seed::mix(c.run.seed, 0x57a7),
            );
            let run_cfg = c.task_run_config();
            for task in &ds.header.tasks {
                run_task(&mut state, task, &scene_map, &run_cfg)?;
            }
            let final_report = state.reports.last().expect("two tasks ran");
            let r = &final_report.plu.report;
            rows.push(SweepRow {
                axis: axis.name().to_string(),
                value: label.clone(),
                seed: s,
                wi: r.wi.as_ref().map(|w| w.wi),
                u_recall: r.u_recall,
                map_current: r.map_current,
                map_previous: r.map_previous,
            });
        }
    }
    let sweep_csv = out_dir.join(format!("sweep_{}.csv", axis.name()));
    write_sweep_csv(&rows, &sweep_csv)?;
    let summary_csv = out_dir.join(format!("sweep_{}_summary.csv", axis.name()));
    write_sweep_summary_csv(&summarize_sweep(&rows), &summary_csv)?;
    Ok(AblateOutcome {
        rows,
        sweep_csv,
        summary_csv,
    })
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub summary_path: PathBuf,
    pub summary_text: String,
    pub svg_paths: Vec<PathBuf>,
    /// Artifacts the manifest promises but the directory lacks.
    pub missing: Vec<String>,
}

/// `report`: renders `summary.txt` and one SVG per headline metric from a
/// run directory's `tasks.csv`. A partial run renders what exists and
/// lists what's missing.
pub fn cmd_report(run_dir: &Path) -> Result<ReportOutcome, RunnerError> {
    let tasks_csv = run_dir.join("tasks.csv");
    if !tasks_csv.exists() {
        return Err(RunnerError::MissingInput(format!(
            "nothing to report: {} not found",
            tasks_csv.display()
        )));
    }
    let rows = read_tasks_csv(&tasks_csv)?;
    let mut missing = Vec::new();
    let manifest_path = run_dir.join("manifest.json");
    if manifest_path.exists() {
        let manifest = crate::report::read_manifest(&manifest_path)?;
        for t in &manifest.tasks {
            for name in [
                &t.report_json,
                &t.train_log_csv,
                &t.finetune_log_csv,
                &t.selections_csv,
                &t.checkpoint,
                &t.head_json,
            ] {
                if !run_dir.join(name).exists() {
                    missing.push(name.clone());
                }
            }
        }
    } else {
        missing.push("manifest.json".to_string());
    }
    let mut summary_text = render_summary(&rows);
    if !missing.is_empty() {
        summary_text.push_str("\nmissing artifacts:\n");
        for name in &missing {
            summary_text.push_str(&format!("- {name}\n"));
        }
    }
    let summary_path = run_dir.join("summary.txt");
    std::fs::write(&summary_path, &summary_text)?;
    let svg_paths = write_metric_svgs(&rows, run_dir)?;
    Ok(ReportOutcome {
        summary_path,
        summary_text,
        svg_paths,
        missing,
    })
}
