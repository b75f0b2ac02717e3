//! Dataset materialization and train/evaluate runs on disk.

use std::path::{Path, PathBuf};

use sps_datasets::audio::make_audio_dataset;
use sps_datasets::world::{make_dataset, RenderConfig, SimConfig};

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::data::SeqData;
use crate::error::{CoreError, Result};
use crate::evaluation::{evaluate, EvalReport, RunMeta};
use crate::models::{Model, ModelCard, Task};
use crate::training::{train, LogRow};

pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "eval.json";
const MANIFEST: &str = "manifest.json";

/// Writes a dataset into `dir`, which must not hold one already.
pub fn generate_dataset(task: Task, spec: &DatasetSpec, dir: &Path) -> Result<()> {
    match task {
        Task::Vision => {
            make_dataset(dir, spec.n_traj, spec.variable_color, &SimConfig::default(), &RenderConfig::default(), spec.seed)?;
        }
        Task::Audio => {
            make_audio_dataset(dir, &spec.timbres.audio_config(), spec.seed)?;
        }
    }
    Ok(())
}

/// The dataset directory of `spec`: its explicit path, or a generated copy
/// under `cache` (created on first use).
pub fn ensure_dataset(task: Task, spec: &DatasetSpec, cache: &Path) -> Result<PathBuf> {
    if let Some(p) = &spec.path {
        if !p.join(MANIFEST).is_file() {
            return Err(CoreError::Config(format!("dataset.path {} holds no dataset", p.display())));
        }
        return Ok(p.clone());
    }
    let dir = cache.join(spec.cache_name(task));
    if dir.join(MANIFEST).is_file() {
        return Ok(dir);
    }
    // Concurrent callers each build a private copy; the first rename wins.
    let tmp = cache.join(format!(
        ".{}.partial-{}-{:?}",
        spec.cache_name(task),
        std::process::id(),
        std::thread::current().id()
    ));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
    }
    generate_dataset(task, spec, &tmp)?;
    if let Err(e) = std::fs::rename(&tmp, &dir) {
        let _ = std::fs::remove_dir_all(&tmp);
        if !dir.join(MANIFEST).is_file() {
            return Err(CoreError::io(&dir, e));
        }
    }
    Ok(dir)
}

/// Trains `cfg` on `data`, writing the resolved config, the CSV log and the
/// final checkpoint into `out`.
pub fn train_experiment(
    cfg: &ExperimentConfig,
    data: &SeqData,
    out: &Path,
    progress: &mut dyn FnMut(&LogRow),
) -> Result<Model> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| CoreError::io(out, e))?;
    crate::io::write_json(&out.join(CONFIG_FILE), cfg)?;
    Ok(train(&cfg.model, &cfg.train, data, Some(out), progress)?.model)
}

pub fn run_meta(cfg: &ExperimentConfig, card: &ModelCard, data: &SeqData) -> RunMeta {
    let uses = cfg.train.uses_symmetry(&cfg.model);
    RunMeta {
        task: cfg.model.task,
        variant: cfg.model.variant,
        mode: cfg.model.mode,
        k: cfg.model.has_prior().then_some(if uses { cfg.train.k } else { 0 }),
        group: uses.then(|| cfg.train.group.name.clone()),
        seed: cfg.train.seed,
        iterations: card.iterations,
        train_sequences: data.train.len(),
        test_sequences: data.test.len(),
        dataset_seed: data.seed(),
        eval_seed: cfg.eval.seed,
    }
}

/// Loads the checkpoint in `run` with the config saved beside it.
pub fn load_run(run: &Path) -> Result<(Model, ModelCard, ExperimentConfig)> {
    let cfg_path = run.join(CONFIG_FILE);
    if !cfg_path.is_file() {
        return Err(CoreError::Config(format!("{} has no {CONFIG_FILE}", run.display())));
    }
    let cfg: ExperimentConfig = crate::io::read_json(&cfg_path)?;
    let (model, card) = Model::load(run)?;
    if card.config != cfg.model {
        return Err(CoreError::Config(format!(
            "checkpoint in {} does not match its {CONFIG_FILE}",
            run.display()
        )));
    }
    Ok((model, card, cfg))
}

/// Full report for a trained run against `data`.
pub fn evaluate_run(model: &Model, card: &ModelCard, cfg: &ExperimentConfig, data: &SeqData) -> Result<EvalReport> {
    if data.task != cfg.model.task {
        return Err(CoreError::Config(format!(
            "task mismatch: checkpoint is {} ({}), dataset is {}",
            cfg.model.task.name(),
            cfg.model.variant.name(),
            data.task.name()
        )));
    }
    evaluate(model, data, &cfg.train.group, run_meta(cfg, card, data), &cfg.eval)
}

/// Trains and evaluates one configuration in `out`, writing the report there.
pub fn train_and_evaluate(
    cfg: &ExperimentConfig,
    data_cache: &Path,
    out: &Path,
    progress: &mut dyn FnMut(&LogRow),
) -> Result<EvalReport> {
    let dir = ensure_dataset(cfg.task(), &cfg.dataset, data_cache)?;
    let data = SeqData::load(&dir)?;
    let model = train_experiment(cfg, &data, out, progress)?;
    let card = model.card(cfg.train.iterations);
    let report = evaluate_run(&model, &card, cfg, &data)?;
    crate::io::write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}
