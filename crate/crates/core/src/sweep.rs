//! Grids of train+evaluate runs with a resumable long-format CSV.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CoreError, Result};
use crate::evaluation::{EvalReport, Metric};
use crate::experiment::{train_and_evaluate, CONFIG_FILE, REPORT_FILE};
use crate::groups::{perturbed_spec_catalog, GroupSpec};
use crate::models::{Task, Variant};

pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    SampleEfficiency,
    WrongGroup,
    KFactor,
}

/// One grid point: overrides applied to the sweep's base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub variant: Variant,
    pub n_traj: usize,
    pub k: usize,
    pub group: GroupSpec,
    pub seed: u64,
}

impl Cell {
    pub fn id(&self) -> String {
        format!("{}_n{}_k{}_{}_s{}", self.variant.name(), self.n_traj, self.k, self.group.name, self.seed)
    }

    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.model.variant = self.variant;
        cfg.dataset.n_traj = self.n_traj;
        cfg.train.k = self.k;
        cfg.train.group = self.group.clone();
        cfg.set_seed(self.seed);
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub name: String,
    pub kind: SweepKind,
    pub cells: Vec<Cell>,
}

pub const SWEEP_PRESETS: [&str; 6] = [
    "sample-efficiency",
    "wrong-group",
    "k-factor",
    "desk-sample-efficiency",
    "desk-wrong-group",
    "desk-k-factor",
];

/// Perturbed group specs used by the desk wrong-group sweep: the first three
/// incorrect entries of the catalog.
pub fn desk_perturbed_specs() -> Vec<GroupSpec> {
    perturbed_spec_catalog()
        .into_iter()
        .filter(|g| !g.is_trivial() && *g != GroupSpec::vision())
        .take(3)
        .collect()
}

fn cells(variant: Variant, sizes: &[usize], ks: &[usize], groups: &[GroupSpec], seeds: u64) -> Vec<Cell> {
    let mut out = Vec::new();
    for &n_traj in sizes {
        for &k in ks {
            for group in groups {
                for seed in 0..seeds {
                    let (k, group) = if group.is_trivial() || k == 0 {
                        (0, GroupSpec::none())
                    } else {
                        (k, group.clone())
                    };
                    out.push(Cell { variant, n_traj, k, group, seed });
                }
            }
        }
    }
    out
}

impl Sweep {
    /// Builds a named preset around `base`.
    pub fn preset(name: &str, base: &ExperimentConfig) -> Result<Self> {
        let (desk, kind) = match name {
            "sample-efficiency" => (false, SweepKind::SampleEfficiency),
            "wrong-group" => (false, SweepKind::WrongGroup),
            "k-factor" => (false, SweepKind::KFactor),
            "desk-sample-efficiency" => (true, SweepKind::SampleEfficiency),
            "desk-wrong-group" => (true, SweepKind::WrongGroup),
            "desk-k-factor" => (true, SweepKind::KFactor),
            _ => {
                return Err(CoreError::Config(format!(
                    "unknown sweep `{name}`; available: {}",
                    SWEEP_PRESETS.join(", ")
                )))
            }
        };
        if base.task() != Task::Vision {
            return Err(CoreError::Config(format!("sweep `{name}` runs on the vision task")));
        }
        let seeds = if desk { 3 } else { 10 };
        let v = base.model.variant;
        let g = base.train.group.clone();
        let n = base.dataset.n_traj;
        let cells = match (kind, desk) {
            (SweepKind::SampleEfficiency, false) => cells(v, &[256, 512, 1024, 2048], &[0, 1, 2, 4], &[g], seeds),
            (SweepKind::SampleEfficiency, true) => cells(v, &[128, 256, 512], &[0, 4], &[g], seeds),
            (SweepKind::WrongGroup, false) => cells(v, &[n], &[base.train.k], &perturbed_spec_catalog(), seeds),
            (SweepKind::WrongGroup, true) => {
                let mut groups = vec![GroupSpec::none()];
                groups.extend(desk_perturbed_specs());
                cells(v, &[n], &[base.train.k], &groups, seeds)
            }
            (SweepKind::KFactor, false) => cells(v, &[n], &[0, 1, 2, 4, 8, 16], &[g], seeds),
            (SweepKind::KFactor, true) => cells(v, &[n], &[0, 1, 4], &[g], seeds),
        };
        Ok(Self {
            name: name.into(),
            kind,
            cells,
        })
    }
}

/// One line of the long-format results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep: String,
    pub cell: String,
    pub variant: String,
    pub n_traj: usize,
    pub k: usize,
    pub group: String,
    pub seed: u64,
    pub status: String,
    pub metric: String,
    pub value: String,
}

const LAST_METRIC: &str = "content_query_precision";

pub fn report_metrics(r: &EvalReport) -> Vec<(String, Option<f64>)> {
    let mut m: Vec<(String, Option<f64>)> = vec![("aggregate_mse".into(), Some(r.aggregate_mse))];
    for (i, v) in r.per_axis_mse.iter().enumerate() {
        m.push((format!("mse_axis{i}"), Some(*v)));
    }
    let metric = |name: &str, v: Metric| (name.to_string(), v.value());
    m.push(("self_recon_bce".into(), Some(r.self_recon_bce)));
    m.extend([
        metric("image_pred_bce", r.image_pred_bce),
        metric("prior_mse", r.prior_mse),
        metric("embedding_r2", r.embedding_r2),
        metric("synthesis_r2", r.synthesis_r2),
        metric("delta_z_ratio", r.delta_z_ratio),
        metric("style_query_precision", r.style_query_precision),
        metric(LAST_METRIC, r.content_query_precision),
    ]);
    m
}

fn rows_for(sweep: &Sweep, cell: &Cell, outcome: &std::result::Result<EvalReport, String>) -> Vec<ResultRow> {
    let row = |status: &str, metric: String, value: String| ResultRow {
        sweep: sweep.name.clone(),
        cell: cell.id(),
        variant: cell.variant.name().into(),
        n_traj: cell.n_traj,
        k: cell.k,
        group: cell.group.name.clone(),
        seed: cell.seed,
        status: status.into(),
        metric,
        value,
    };
    match outcome {
        Ok(r) => report_metrics(r)
            .into_iter()
            .map(|(m, v)| row("ok", m, v.map_or_else(|| "N/A".into(), |v| format!("{v}"))))
            .collect(),
        Err(e) => vec![row("failed", "error".into(), e.clone())],
    }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CoreError::format(path, e.to_string()))?;
    let mut rows = Vec::new();
    for r in rdr.deserialize() {
        match r {
            Ok(row) => rows.push(row),
            // A line cut short by an interrupted append ends the usable data.
            Err(e) if e.is_io_error() => return Err(CoreError::format(path, e.to_string())),
            Err(_) => break,
        }
    }
    Ok(rows)
}

const HEADER: &str = "sweep,cell,variant,n_traj,k,group,seed,status,metric,value\n";

/// Starts `path` afresh with the header line and `rows`.
fn rewrite(path: &Path, rows: &[ResultRow]) -> Result<()> {
    std::fs::write(path, HEADER).map_err(|e| CoreError::io(path, e))?;
    write_rows(path, rows)
}

fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r).map_err(|e| CoreError::format(path, e.to_string()))?;
    }
    let bytes = wtr.into_inner().map_err(|e| CoreError::format(path, e.to_string()))?;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CoreError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| CoreError::io(path, e))?;
    f.sync_data().map_err(|e| CoreError::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellEvent {
    Skipped,
    Reused,
    Finished,
    Failed(String),
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub results: PathBuf,
    pub rows: Vec<ResultRow>,
    pub ran: usize,
    pub failed: usize,
}

fn reuse_report(dir: &Path, cfg: &ExperimentConfig) -> Option<EvalReport> {
    let saved: ExperimentConfig = crate::io::read_json(&dir.join(CONFIG_FILE)).ok()?;
    if saved != *cfg {
        return None;
    }
    crate::io::read_json(&dir.join(REPORT_FILE)).ok()
}

/// Runs every cell not yet recorded in `out/results.csv`, `workers` at a
/// time, then rewrites the file in cell order. Cell failures are recorded
/// and do not stop the sweep.
pub fn run_sweep(
    sweep: &Sweep,
    base: &ExperimentConfig,
    out: &Path,
    workers: usize,
    progress: &(dyn Fn(&Cell, &CellEvent) + Sync),
) -> Result<SweepOutcome> {
    std::fs::create_dir_all(out).map_err(|e| CoreError::io(out, e))?;
    let results = out.join(RESULTS_FILE);
    let mut existing = read_results(&results)?;
    // A cell counts as recorded once its failure or its last metric is in.
    let done: std::collections::BTreeSet<String> = existing
        .iter()
        .filter(|r| r.metric == "error" || r.metric == LAST_METRIC)
        .map(|r| r.cell.clone())
        .collect();
    existing.retain(|r| done.contains(&r.cell));
    // Rewrite what survived so a torn trailing line is dropped.
    rewrite(&results, &existing)?;

    let todo: Vec<&Cell> = sweep.cells.iter().filter(|c| !done.contains(&c.id())).collect();
    for c in sweep.cells.iter().filter(|c| done.contains(&c.id())) {
        progress(c, &CellEvent::Skipped);
    }
    let queue = Mutex::new(todo.into_iter());
    let file = Mutex::new(());
    let counts = Mutex::new((0usize, 0usize));
    let data_cache = out.join("data");
    let first_error: Mutex<Option<CoreError>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..workers.max(1) {
            s.spawn(|| loop {
                let Some(cell) = queue.lock().unwrap().next() else { break };
                let cfg = cell.apply(base);
                let dir = out.join("cells").join(cell.id());
                let (outcome, event) = match reuse_report(&dir, &cfg) {
                    Some(r) => (Ok(r), CellEvent::Reused),
                    None => match train_and_evaluate(&cfg, &data_cache, &dir, &mut |_| {}) {
                        Ok(r) => (Ok(r), CellEvent::Finished),
                        Err(e) => (Err(e.to_string()), CellEvent::Failed(e.to_string())),
                    },
                };
                let rows = rows_for(sweep, cell, &outcome);
                {
                    let _guard = file.lock().unwrap();
                    if let Err(e) = write_rows(&results, &rows) {
                        first_error.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
                let mut c = counts.lock().unwrap();
                c.0 += 1;
                if outcome.is_err() {
                    c.1 += 1;
                }
                drop(c);
                progress(cell, &event);
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }

    let order: BTreeMap<String, usize> = sweep.cells.iter().enumerate().map(|(i, c)| (c.id(), i)).collect();
    let mut rows = read_results(&results)?;
    rows.sort_by_key(|r| order.get(&r.cell).copied().unwrap_or(usize::MAX));
    let tmp = out.join(format!(".{RESULTS_FILE}.tmp"));
    rewrite(&tmp, &rows)?;
    std::fs::rename(&tmp, &results).map_err(|e| CoreError::io(&results, e))?;
    let (ran, failed) = counts.into_inner().unwrap();
    Ok(SweepOutcome {
        results,
        rows,
        ran,
        failed,
    })
}

/// Values of `metric` for every successful cell, keyed by cell id.
pub fn metric_by_cell(rows: &[ResultRow], metric: &str) -> BTreeMap<String, f64> {
    rows.iter()
        .filter(|r| r.status == "ok" && r.metric == metric)
        .filter_map(|r| r.value.parse().ok().map(|v| (r.cell.clone(), v)))
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Mode;

    fn base() -> ExperimentConfig {
        ExperimentConfig::new(Task::Vision, Variant::Sps, Mode::Vae)
    }

    #[test]
    fn preset_sizes() {
        let s = Sweep::preset("sample-efficiency", &base()).unwrap();
        assert_eq!(s.cells.len(), 4 * 4 * 10);
        let s = Sweep::preset("desk-sample-efficiency", &base()).unwrap();
        assert_eq!(s.cells.len(), 3 * 2 * 3);
        let s = Sweep::preset("wrong-group", &base()).unwrap();
        assert_eq!(s.cells.len(), 7 * 10);
        let s = Sweep::preset("desk-wrong-group", &base()).unwrap();
        assert_eq!(s.cells.len(), 4 * 3);
        let ids: std::collections::BTreeSet<_> = s.cells.iter().map(Cell::id).collect();
        assert_eq!(ids.len(), s.cells.len());
    }

    #[test]
    fn unknown_preset_lists_available() {
        let e = Sweep::preset("nope", &base()).unwrap_err().to_string();
        assert!(e.contains("desk-wrong-group"));
    }

    #[test]
    fn zero_k_cells_use_no_group() {
        let s = Sweep::preset("desk-sample-efficiency", &base()).unwrap();
        for c in &s.cells {
            assert_eq!(c.k == 0, c.group.is_trivial());
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
