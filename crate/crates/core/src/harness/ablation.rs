use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::artifacts::write_metrics_csv;
use super::pipeline::run_pipeline;
use super::plot::line_chart_svg;
use super::{ExperimentConfig, HarnessError, MetricsRecord, RunStatus};

/// A one-knob sweep: every cell is `base` with `set` merged over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    pub name: String,
    /// Partial experiment config shared by all cells.
    #[serde(default)]
    pub base: Value,
    /// Name of the varied knob, used as the x column of the plot data.
    #[serde(default = "default_x_label")]
    pub x_label: String,
    pub cells: Vec<GridCell>,
}

fn default_x_label() -> String {
    "x".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    /// Position of the cell along the plotted axis.
    pub x: f64,
    #[serde(default)]
    pub set: Value,
}

impl AblationGrid {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// Resolved config of every cell.
    pub fn configs(&self) -> Result<Vec<ExperimentConfig>, HarnessError> {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let merged = merge_json(self.base.clone(), c.set.clone());
                let cfg: ExperimentConfig =
                    serde_json::from_value(merged).map_err(|e| HarnessError::Config(format!("cell {i}: {e}")))?;
                cfg.validate()?;
                Ok(cfg)
            })
            .collect()
    }
}

/// Recursive object merge; anything that is not an object on both sides is replaced.
pub fn merge_json(base: Value, patch: Value) -> Value {
    match (base, patch) {
        (Value::Object(mut b), Value::Object(p)) => {
            for (k, v) in p {
                let merged = match b.remove(&k) {
                    Some(old) => merge_json(old, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            Value::Object(b)
        }
        (Value::Null, p) => p,
        (b, Value::Null) => b,
        (_, p) => p,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: usize,
    pub x: f64,
    pub runs: usize,
    pub ok: usize,
    pub median_w1_joint_test: Option<f64>,
    pub median_w1_latent_test: Option<f64>,
    pub median_range_sup_dist: Option<f64>,
    pub median_recon_test: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    /// `(cell index, record)`, ordered by cell then seed order.
    pub records: Vec<(usize, MetricsRecord)>,
    pub summary: Vec<SummaryRow>,
}

pub(crate) fn median(mut v: Vec<f64>) -> Option<f64> {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}

fn summarize(grid: &AblationGrid, records: &[(usize, MetricsRecord)]) -> Vec<SummaryRow> {
    (0..grid.cells.len())
        .map(|cell| {
            let rows: Vec<&MetricsRecord> = records.iter().filter(|(c, _)| *c == cell).map(|(_, r)| r).collect();
            let ok: Vec<&MetricsRecord> = rows.iter().copied().filter(|r| r.status == RunStatus::Ok).collect();
            let med = |f: fn(&MetricsRecord) -> Option<f64>| median(ok.iter().filter_map(|r| f(r)).collect());
            SummaryRow {
                cell,
                x: grid.cells[cell].x,
                runs: rows.len(),
                ok: ok.len(),
                median_w1_joint_test: med(|r| r.w1_joint_test),
                median_w1_latent_test: med(|r| r.w1_latent_test),
                median_range_sup_dist: med(|r| r.range_sup_dist),
                median_recon_test: med(|r| r.recon_test),
            }
        })
        .collect()
}

fn write_plot_data(grid: &AblationGrid, summary: &[SummaryRow], dir: &Path, svg: bool) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let series: [(&str, fn(&SummaryRow) -> Option<f64>); 2] = [
        ("w1_joint_test", |r| r.median_w1_joint_test),
        ("range_sup_dist", |r| r.median_range_sup_dist),
    ];
    for (metric, get) in series {
        let points: Vec<(f64, f64)> = summary.iter().filter_map(|r| get(r).map(|y| (r.x, y))).collect();
        let mut text = format!("{}\tmedian_{metric}\n", grid.x_label);
        for (x, y) in &points {
            text.push_str(&format!("{x}\t{y}\n"));
        }
        let path = dir.join(format!("{}.{metric}.tsv", grid.name));
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        if svg {
            let path = dir.join(format!("{}.{metric}.svg", grid.name));
            let title = format!("{}: median {metric}", grid.name);
            fs::write(&path, line_chart_svg(&title, &grid.x_label, metric, &points)).map_err(|e| HarnessError::io(&path, e))?;
        }
    }
    Ok(())
}

/// Runs every `(cell, seed)` on a pool of `jobs` threads and writes
/// `metrics.csv`, `summary.csv` and `plotdata/` under `out`.
///
/// Each run draws from streams keyed by its seed alone, so a cell's results do
/// not depend on which other cells are in the grid.
pub fn run_ablation(grid: &AblationGrid, jobs: usize, out: &Path, svg: bool) -> Result<AblationOutcome, HarnessError> {
    if grid.cells.is_empty() {
        return Err(HarnessError::Config("ablation grid has no cells".into()));
    }
    let configs = grid.configs()?;
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let tasks: Vec<(usize, usize)> = configs
        .iter()
        .enumerate()
        .flat_map(|(c, cfg)| (0..cfg.seeds.len()).map(move |s| (c, s)))
        .collect();

    let metrics_path = out.join("metrics.csv");
    let sink = Mutex::new(csv::Writer::from_path(&metrics_path)?);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let results: Vec<Result<(usize, MetricsRecord), HarnessError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, s)| {
                let cfg = &configs[c];
                let seed = cfg.seeds[s];
                let output = run_pipeline(cfg, seed, Some(out))?;
                let rec = output.record;
                log::info!(
                    "cell {c} seed {seed}: {:?} w1_joint_test={:?} ({:.1}s)",
                    rec.status,
                    rec.w1_joint_test,
                    rec.wallclock_s
                );
                let mut w = sink.lock().expect("metrics writer");
                w.serialize(&rec)?;
                w.flush().map_err(|e| HarnessError::io(&metrics_path, e))?;
                Ok((c, rec))
            })
            .collect()
    });
    drop(sink);
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    // Rewrite in grid order so the file does not depend on scheduling.
    write_metrics_csv(&records.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>(), &metrics_path)?;
    let summary = summarize(grid, &records);
    let summary_path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    for row in &summary {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| HarnessError::io(&summary_path, e))?;
    write_plot_data(grid, &summary, &out.join("plotdata"), svg)?;
    let mut f = fs::File::create(out.join("grid.json")).map_err(|e| HarnessError::io(out, e))?;
    writeln!(f, "{}", serde_json::to_string_pretty(grid).expect("grid serializes")).map_err(|e| HarnessError::io(out, e))?;
    Ok(AblationOutcome { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_overrides_leaves() {
        let base = json!({"data": {"n": 250, "N": 750}, "seeds": [0, 1]});
        let patch = json!({"data": {"n": 25}, "seeds": [7]});
        assert_eq!(merge_json(base, patch), json!({"data": {"n": 25, "N": 750}, "seeds": [7]}));
        assert_eq!(merge_json(Value::Null, json!({"a": 1})), json!({"a": 1}));
    }

    #[test]
    fn medians() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(vec![f64::NAN]), None);
    }

    #[test]
    fn grid_resolution() {
        let grid: AblationGrid = serde_json::from_value(json!({
            "name": "vary_n",
            "base": {"data": {"N": 750}},
            "x_label": "n",
            "cells": [{"x": 25, "set": {"data": {"n": 25}}}, {"x": 1000, "set": {"data": {"n": 1000, "N": 0}}}]
        }))
        .unwrap();
        let cfgs = grid.configs().unwrap();
        assert_eq!((cfgs[0].data.n, cfgs[0].data.unpaired), (25, 750));
        assert_eq!((cfgs[1].data.n, cfgs[1].data.unpaired), (1000, 0));
        let bad: AblationGrid = serde_json::from_value(json!({"name": "b", "cells": [{"x": 0, "set": {"nope": 1}}]})).unwrap();
        assert!(bad.configs().is_err());
    }
}
