//! Artifact emission: flat CSVs for sweeping, JSON task reports, run
//! manifests, a human-readable summary, and small SVG charts. Everything is
//! rendered deterministically — same inputs, same bytes — so reruns can be
//! compared with `diff`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::TaskReport;
use crate::uda::TrainingLog;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("report input missing: {0}")]
    Missing(String),
    #[error("malformed report input: {0}")]
    Malformed(String),
}

/// One row of `tasks.csv`: a task × selector cell with every headline
/// metric. Optional metrics serialize as empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: u32,
    pub selector: String,
    pub k_used: usize,
    pub map_current: Option<f64>,
    pub map_previous: Option<f64>,
    pub map_both: Option<f64>,
    pub wi: Option<f64>,
    pub u_recall: Option<f64>,
    pub a_ose: Option<u64>,
}

pub fn task_rows(reports: &[TaskReport]) -> Vec<TaskRow> {
    let mut rows = Vec::new();
    for rep in reports {
        for (selector, arm) in [("topk", &rep.topk), ("plu", &rep.plu)] {
            let r = &arm.report;
            rows.push(TaskRow {
                task_id: rep.task_id,
                selector: selector.to_string(),
                k_used: rep.k_used,
                map_current: r.map_current,
                map_previous: r.map_previous,
                map_both: r.map_both,
                wi: r.wi.as_ref().map(|w| w.wi),
                u_recall: r.u_recall,
                a_ose: r.a_ose,
            });
        }
    }
    rows
}

pub fn write_tasks_csv(reports: &[TaskReport], path: &Path) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in task_rows(reports) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tasks_csv(path: &Path) -> Result<Vec<TaskRow>, ReportError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Training-log CSV: `step,l_t,l_s,l_uda,mask_rate,fg_pseudo_fraction`.
pub fn write_training_log_csv(log: &TrainingLog, path: &Path) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "l_t", "l_s", "l_uda", "mask_rate", "fg_pseudo_fraction"])?;
    for s in &log.steps {
        w.write_record([
            s.step.to_string(),
            s.l_t.to_string(),
            s.l_s.to_string(),
            s.l_uda.to_string(),
            s.mask_rate.to_string(),
            s.fg_pseudo_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Selections CSV: `scene_id,proposal_index,selector,score`, top-k arm
/// first, then PLU, each in scene order.
pub fn write_selections_csv(report: &TaskReport, path: &Path) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scene_id", "proposal_index", "selector", "score"])?;
    for (selector, arm) in [("topk", &report.topk), ("plu", &report.plu)] {
        for &(scene_id, idx, score) in &arm.selections {
            w.write_record([
                scene_id.to_string(),
                idx.to_string(),
                selector.to_string(),
                score.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_task_report_json(report: &TaskReport, path: &Path) -> Result<(), ReportError> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_task_report_json(path: &Path) -> Result<TaskReport, ReportError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Per-task artifact paths recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskArtifacts {
    pub task_id: u32,
    pub report_json: String,
    pub train_log_csv: String,
    pub finetune_log_csv: String,
    pub selections_csv: String,
    pub checkpoint: String,
    /// Class-head snapshot after this task.
    pub head_json: String,
}

/// The run manifest: everything needed to reconstruct or verify a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    /// Seconds since the Unix epoch; omitted in deterministic mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub created_unix_s: Option<u64>,
    pub seed: u64,
    pub dataset_path: String,
    pub dataset_sha256: String,
    /// Canonical flat-text snapshot of the full configuration.
    pub config_text: String,
    pub tasks_csv: String,
    pub tasks: Vec<TaskArtifacts>,
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<(), ReportError> {
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest, ReportError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    }
}

fn fmt_opt_u64(v: Option<u64>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "-".to_string(),
    }
}

/// Renders the side-by-side comparison table. Missing metrics print as `-`:
/// the first task has no previous classes, and a final task with no unknown
/// objects has neither WI nor U-Recall.
pub fn render_summary(rows: &[TaskRow]) -> String {
    let mut out = String::new();
    out.push_str("task  selector  k     mAP-cur  mAP-prev mAP-both WI       U-Recall A-OSE\n");
    out.push_str("----  --------  ----  -------- -------- -------- -------- -------- -----\n");
    for r in rows {
        out.push_str(&format!(
            "{:<4}  {:<8}  {:<4}  {:<8} {:<8} {:<8} {:<8} {:<8} {}\n",
            r.task_id,
            r.selector,
            r.k_used,
            fmt_opt_f64(r.map_current),
            fmt_opt_f64(r.map_previous),
            fmt_opt_f64(r.map_both),
            fmt_opt_f64(r.wi),
            fmt_opt_f64(r.u_recall),
            fmt_opt_u64(r.a_ose),
        ));
    }
    out.push_str(
        "\nnotes:\n\
         - WI = P_known-only / P_open - 1, measured at the known-recall operating point;\n\
         \x20 P_known-only drops known-labeled detections whose best-overlap truth is an\n\
         \x20 unknown object, P_open keeps them as false positives.\n\
         - A-OSE counts known-labeled detections landing on unknown objects within the\n\
         \x20 same operating prefix. Both definitions follow the open-world evaluation\n\
         \x20 lineage; alternatives exist and these are the ones implemented here.\n",
    );
    out
}

/// One raw sweep observation: a (cell, seed) pair's headline metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    /// The swept value, rendered as text (`0.5`, `on`, `off`, …).
    pub value: String,
    pub seed: u64,
    pub wi: Option<f64>,
    pub u_recall: Option<f64>,
    pub map_current: Option<f64>,
    pub map_previous: Option<f64>,
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>, ReportError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Mean ± sample standard deviation per swept cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub axis: String,
    pub value: String,
    pub n: usize,
    pub wi_mean: Option<f64>,
    pub wi_sd: Option<f64>,
    pub u_recall_mean: Option<f64>,
    pub u_recall_sd: Option<f64>,
    pub map_current_mean: Option<f64>,
    pub map_current_sd: Option<f64>,
    pub map_previous_mean: Option<f64>,
    pub map_previous_sd: Option<f64>,
}

fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, sd))
}

/// Aggregates raw sweep rows into per-cell summaries, preserving first-seen
/// cell order.
pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepSummaryRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.axis.clone(), r.value.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(axis, value)| {
            let cell: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.axis == axis && r.value == value)
                .collect();
            let collect = |f: fn(&SweepRow) -> Option<f64>| -> Vec<f64> {
                cell.iter().filter_map(|r| f(r)).collect()
            };
            let wi = mean_sd(&collect(|r| r.wi));
            let ur = mean_sd(&collect(|r| r.u_recall));
            let mc = mean_sd(&collect(|r| r.map_current));
            let mp = mean_sd(&collect(|r| r.map_previous));
            SweepSummaryRow {
                axis,
                value,
                n: cell.len(),
                wi_mean: wi.map(|x| x.0),
                wi_sd: wi.map(|x| x.1),
                u_recall_mean: ur.map(|x| x.0),
                u_recall_sd: ur.map(|x| x.1),
                map_current_mean: mc.map(|x| x.0),
                map_current_sd: mc.map(|x| x.1),
                map_previous_mean: mp.map(|x| x.0),
                map_previous_sd: mp.map(|x| x.1),
            }
        })
        .collect()
}

pub fn write_sweep_summary_csv(
    rows: &[SweepSummaryRow],
    path: &Path,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Minimal grouped bar chart. One group per task, one bar per selector;
/// missing values render as a hollow tick at the baseline.
pub fn bar_chart_svg(title: &str, groups: &[String], series: &[(String, Vec<Option<f64>>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const ML: f64 = 56.0;
    const MR: f64 = 16.0;
    const MT: f64 = 40.0;
    const MB: f64 = 48.0;
    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;
    let colors = ["#4c78a8", "#f58518", "#54a24b", "#e45756"];

    let max_val = series
        .iter()
        .flat_map(|(_, vs)| vs.iter().flatten())
        .fold(0.0_f64, |a, &b| a.max(b))
        .max(1e-9);
    // Headroom so value labels stay inside the frame.
    let y_max = max_val * 1.15;
    let y = |v: f64| MT + plot_h * (1.0 - v / y_max);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    s.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n<text x=\"{}\" y=\"24\" \
         font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        W / 2.0
    ));
    // Axes and y grid.
    s.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        MT + plot_h,
        MT + plot_h,
        W - MR,
        MT + plot_h
    ));
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let yy = y(v);
        s.push_str(&format!(
            "<line x1=\"{ML}\" y1=\"{yy:.2}\" x2=\"{}\" y2=\"{yy:.2}\" stroke=\"#ddd\"/>\n\
             <text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{v:.3}</text>\n",
            W - MR,
            ML - 6.0,
            yy + 4.0
        ));
    }
    let n_groups = groups.len().max(1);
    let n_series = series.len().max(1);
    let group_w = plot_w / n_groups as f64;
    let bar_w = (group_w * 0.7) / n_series as f64;
    for (gi, label) in groups.iter().enumerate() {
        let gx = ML + group_w * gi as f64;
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">{label}</text>\n",
            gx + group_w / 2.0,
            MT + plot_h + 18.0
        ));
        for (si, (_, values)) in series.iter().enumerate() {
            let x = gx + group_w * 0.15 + bar_w * si as f64;
            match values.get(gi).copied().flatten() {
                Some(v) => {
                    let top = y(v);
                    s.push_str(&format!(
                        "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{bar_w:.2}\" height=\"{:.2}\" \
                         fill=\"{}\"/>\n<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" \
                         font-size=\"10\" text-anchor=\"middle\">{v:.3}</text>\n",
                        MT + plot_h - top,
                        colors[si % colors.len()],
                        x + bar_w / 2.0,
                        top - 3.0
                    ));
                }
                None => {
                    s.push_str(&format!(
                        "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{bar_w:.2}\" height=\"3\" \
                         fill=\"none\" stroke=\"{}\"/>\n",
                        MT + plot_h - 3.0,
                        colors[si % colors.len()]
                    ));
                }
            }
        }
    }
    // Legend.
    for (si, (name, _)) in series.iter().enumerate() {
        let lx = ML + 10.0 + 110.0 * si as f64;
        s.push_str(&format!(
            "<rect x=\"{lx}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{name}</text>\n",
            H - 20.0,
            colors[si % colors.len()],
            lx + 16.0,
            H - 10.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Renders one SVG per headline metric from `tasks.csv` rows into `dir`.
/// Returns the written file names.
pub fn write_metric_svgs(rows: &[TaskRow], dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let mut task_ids: Vec<u32> = rows.iter().map(|r| r.task_id).collect();
    task_ids.sort_unstable();
    task_ids.dedup();
    let groups: Vec<String> = task_ids.iter().map(|t| format!("task {t}")).collect();
    let selectors = ["topk", "plu"];
    let metrics: [(&str, fn(&TaskRow) -> Option<f64>); 5] = [
        ("map_current", |r| r.map_current),
        ("map_previous", |r| r.map_previous),
        ("wi", |r| r.wi),
        ("u_recall", |r| r.u_recall),
        ("a_ose", |r| r.a_ose.map(|v| v as f64)),
    ];
    let mut written = Vec::new();
    for (name, get) in metrics {
        let series: Vec<(String, Vec<Option<f64>>)> = selectors
            .iter()
            .map(|sel| {
                let vals = task_ids
                    .iter()
                    .map(|&t| {
                        rows.iter()
                            .find(|r| r.task_id == t && r.selector == *sel)
                            .and_then(get)
                    })
                    .collect();
                (sel.to_string(), vals)
            })
            .collect();
        let svg = bar_chart_svg(name, &groups, &series);
        let path = dir.join(format!("{name}.svg"));
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EvalReport;
    use crate::protocol::ArmOutput;
    use crate::uda::TrainStep;

    fn fake_report(task_id: u32, with_prev: bool, with_unknown: bool) -> TaskReport {
        let mk = |wi: f64, ur: f64| EvalReport {
            per_class_ap: [(0, 0.9)].into_iter().collect(),
            map_previous: with_prev.then_some(0.5),
            map_current: Some(0.8),
            map_both: Some(0.65),
            wi: with_unknown.then(|| crate::metrics::WiReport {
                wi,
                p_k: 0.8,
                p_ku: 0.64,
                threshold: 0.3,
                target_recall: 0.8,
                achieved_recall: 0.81,
                reachable: true,
            }),
            u_recall: with_unknown.then_some(ur),
            a_ose: with_unknown.then_some(4),
        };
        TaskReport {
            task_id,
            k_used: 3,
            topk: ArmOutput {
                report: mk(0.25, 0.3),
                selections: vec![(10, 2, 0.9), (10, 5, 0.8)],
            },
            plu: ArmOutput {
                report: mk(0.10, 0.6),
                selections: vec![(10, 7, 0.7)],
            },
            train_log: TrainingLog {
                steps: vec![TrainStep {
                    step: 1,
                    l_t: 0.1,
                    l_s: 0.2,
                    l_uda: 0.3,
                    mask_rate: 0.5,
                    fg_pseudo_fraction: 0.25,
                }],
                samples_consumed: 64,
                label_reads: Default::default(),
            },
            finetune_log: TrainingLog::default(),
            stage_notes: vec!["stage 1: no-op".into()],
        }
    }

    #[test]
    fn tasks_csv_round_trips_including_empty_cells() {
        let reports = vec![fake_report(1, false, true), fake_report(2, true, false)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.csv");
        write_tasks_csv(&reports, &path).unwrap();
        let rows = read_tasks_csv(&path).unwrap();
        assert_eq!(rows, task_rows(&reports));
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].map_previous, None);
        assert_eq!(rows[2].wi, None);
        // Empty cells really are empty in the file.
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().contains(",,"));
    }

    #[test]
    fn training_log_csv_has_the_pinned_header() {
        let rep = fake_report(1, false, true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_training_log_csv(&rep.train_log, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "step,l_t,l_s,l_uda,mask_rate,fg_pseudo_fraction"
        );
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn selections_csv_lists_both_arms() {
        let rep = fake_report(1, false, true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sel.csv");
        write_selections_csv(&rep, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "scene_id,proposal_index,selector,score");
        assert_eq!(lines[1], "10,2,topk,0.9");
        assert_eq!(lines[3], "10,7,plu,0.7");
    }

    #[test]
    fn task_report_json_round_trips() {
        let rep = fake_report(2, true, true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_task_report_json(&rep, &path).unwrap();
        let back = read_task_report_json(&path).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn summary_table_prints_dashes_for_missing_metrics() {
        let reports = vec![fake_report(1, false, true), fake_report(2, true, false)];
        let text = render_summary(&task_rows(&reports));
        let lines: Vec<&str> = text.lines().collect();
        // Task 1 rows show "-" for mAP-prev; task 2 rows show "-" for WI.
        assert!(lines[2].contains('-'));
        assert!(lines[2].contains("0.2500"));
        assert!(lines[4].contains("0.5000"));
        assert!(text.contains("notes:"));
    }

    #[test]
    fn summary_numbers_match_csv_values() {
        let reports = vec![fake_report(1, false, true)];
        let rows = task_rows(&reports);
        let text = render_summary(&rows);
        for row in &rows {
            for v in [row.map_current, row.wi, row.u_recall].into_iter().flatten() {
                assert!(
                    text.contains(&format!("{v:.4}")),
                    "summary lost value {v}"
                );
            }
        }
    }

    #[test]
    fn sweep_summary_computes_mean_and_sample_sd() {
        let rows = vec![
            SweepRow {
                axis: "lambda".into(),
                value: "1".into(),
                seed: 0,
                wi: Some(0.2),
                u_recall: Some(0.5),
                map_current: Some(0.8),
                map_previous: None,
            },
            SweepRow {
                axis: "lambda".into(),
                value: "1".into(),
                seed: 1,
                wi: Some(0.4),
                u_recall: Some(0.7),
                map_current: Some(0.6),
                map_previous: None,
            },
        ];
        let summary = summarize_sweep(&rows);
        assert_eq!(summary.len(), 1);
        let s = &summary[0];
        assert_eq!(s.n, 2);
        assert!((s.wi_mean.unwrap() - 0.3).abs() < 1e-12);
        // Sample sd of {0.2, 0.4} is sqrt(0.02) ~ 0.141421.
        assert!((s.wi_sd.unwrap() - 0.02_f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.map_previous_mean, None);
    }

    #[test]
    fn sweep_csv_round_trips() {
        let rows = vec![SweepRow {
            axis: "ratio".into(),
            value: "5".into(),
            seed: 3,
            wi: None,
            u_recall: Some(0.25),
            map_current: Some(0.7),
            map_previous: Some(0.6),
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&rows, &path).unwrap();
        assert_eq!(read_sweep_csv(&path).unwrap(), rows);
    }

    #[test]
    fn svg_output_is_deterministic_and_well_formed() {
        let reports = vec![fake_report(1, false, true), fake_report(2, true, true)];
        let rows = task_rows(&reports);
        let dir = tempfile::tempdir().unwrap();
        let written = write_metric_svgs(&rows, dir.path()).unwrap();
        assert_eq!(written.len(), 5);
        let first = std::fs::read_to_string(&written[0]).unwrap();
        assert!(first.starts_with("<svg"));
        assert!(first.ends_with("</svg>\n"));
        // Rendering again produces identical bytes.
        let again = write_metric_svgs(&rows, dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(&again[0]).unwrap(), first);
    }

    #[test]
    fn manifest_round_trips_and_omits_timestamp_when_none() {
        let m = Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            created_unix_s: None,
            seed: 7,
            dataset_path: "dataset.jsonl".into(),
            dataset_sha256: "00".repeat(32),
            config_text: "plu.epsilon = 0.9\n".into(),
            tasks_csv: "tasks.csv".into(),
            tasks: vec![TaskArtifacts {
                task_id: 1,
                report_json: "report_task1.json".into(),
                train_log_csv: "train_log_task1.csv".into(),
                finetune_log_csv: "finetune_log_task1.csv".into(),
                selections_csv: "selections_task1.csv".into(),
                checkpoint: "checkpoint_task1.json".into(),
                head_json: "head_task1.json".into(),
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        write_manifest(&m, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("created_unix_s"));
        assert_eq!(read_manifest(&path).unwrap(), m);
    }
}
