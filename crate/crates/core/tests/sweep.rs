use std::collections::BTreeMap;

use sps_core::config::ExperimentConfig;
use sps_core::groups::GroupSpec;
use sps_core::models::{Mode, Task, Variant};
use sps_core::sweep::{read_results, run_sweep, Cell, Sweep, SweepKind, RESULTS_FILE};

fn tiny_base() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Task::Vision, Variant::Sps, Mode::Vae);
    cfg.model.conv_channels = cfg.model.conv_channels.iter().map(|&w| w / 8).collect();
    cfg.model.fc_hidden = cfg.model.fc_hidden.iter().map(|&w| w / 8).collect();
    cfg.model.rnn_hidden = 8;
    cfg.set_iterations(2);
    cfg.train.batch_size = 2;
    cfg.dataset.n_traj = 10;
    cfg
}

fn tiny_sweep(base: &ExperimentConfig) -> Sweep {
    let cells = [(0, GroupSpec::none()), (4, base.train.group.clone())]
        .into_iter()
        .map(|(k, group)| Cell {
            variant: Variant::Sps,
            n_traj: 10,
            k,
            group,
            seed: 0,
        })
        .collect();
    Sweep {
        name: "tiny".into(),
        kind: SweepKind::KFactor,
        cells,
    }
}

fn rows_per_cell_metric(path: &std::path::Path) -> BTreeMap<(String, String), usize> {
    let mut counts = BTreeMap::new();
    for r in read_results(path).unwrap() {
        *counts.entry((r.cell, r.metric)).or_insert(0) += 1;
    }
    counts
}

#[test]
fn resume_after_a_torn_write_reruns_only_the_missing_cell() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny_base();
    let sweep = tiny_sweep(&base);
    let first = run_sweep(&sweep, &base, dir.path(), 1, &|_, _| {}).unwrap();
    assert_eq!((first.ran, first.failed), (2, 0));
    let results = dir.path().join(RESULTS_FILE);
    let full = std::fs::read_to_string(&results).unwrap();

    // Keep the first cell and half of the second cell's first row.
    let second = sweep.cells[1].id();
    let cut = full.find(&second).unwrap() + second.len() / 2;
    std::fs::write(&results, &full[..cut]).unwrap();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let p = entry.unwrap().path();
        if p.file_name().unwrap().to_string_lossy().contains(&second) {
            std::fs::remove_dir_all(p).unwrap();
        }
    }

    let again = run_sweep(&sweep, &base, dir.path(), 1, &|_, _| {}).unwrap();
    assert_eq!(again.ran, 1);
    let counts = rows_per_cell_metric(&results);
    assert!(counts.values().all(|&n| n == 1), "duplicated rows: {counts:?}");
    assert_eq!(std::fs::read_to_string(&results).unwrap(), full);

    let third = run_sweep(&sweep, &base, dir.path(), 1, &|_, _| {}).unwrap();
    assert_eq!(third.ran, 0);
}
