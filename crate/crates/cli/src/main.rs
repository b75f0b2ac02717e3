//! `sps`: dataset generation, training, evaluation, traversal export and
//! sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sps_core::config::{DatasetSpec, ExperimentConfig, Preset, TimbreSet};
use sps_core::data::{SeqData, Source};
use sps_core::evaluation::traversal::{color_map, traverse};
use sps_core::evaluation::{encode_sequences, LatentStats};
use sps_core::experiment::{self, REPORT_FILE};
use sps_core::groups::{perturbed_spec_catalog, GroupSpec};
use sps_core::models::{Mode, Task, Variant};
use sps_core::sweep::{run_sweep, CellEvent, Sweep};
use sps_core::CoreError;
use sps_datasets::audio::stft::{griffin_lim, slice_to_magnitude};
use sps_datasets::audio::write_wav;
use sps_datasets::seed::rng_for;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<sps_datasets::DataError> for CliError {
    fn from(e: sps_datasets::DataError) -> Self {
        CoreError::from(e).into()
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "sps", version, about = "Symmetry-constrained sequence autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a vision or audio dataset.
    GenData(GenDataArgs),
    /// Train a model and write its checkpoint, log and resolved config.
    Train(TrainArgs),
    /// Evaluate a trained run and write its report.
    Eval(EvalArgs),
    /// Export latent traversals (PPM, plus WAV for audio and a color map for
    /// style dims).
    Traverse(TraverseArgs),
    /// Run a named grid of train+eval cells into a long-format CSV.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Audio,
    Vision,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Audio => Task::Audio,
            TaskArg::Vision => Task::Vision,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum VariantArg {
    Sps,
    SpsPlus,
    BetaVae,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Sps => Variant::Sps,
            VariantArg::SpsPlus => Variant::SpsPlus,
            VariantArg::BetaVae => Variant::BetaVae,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Vae,
    Ae,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Vae => Mode::Vae,
            ModeArg::Ae => Mode::Ae,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TimbreArg {
    Single,
    Multi,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Trajectory count (vision).
    #[arg(long, default_value_t = 512)]
    n: usize,
    /// Random ball colors (vision).
    #[arg(long)]
    variable_color: bool,
    /// Timbre set (audio).
    #[arg(long, value_enum, default_value = "single")]
    timbres: TimbreArg,
    /// Generation seed; falls back to SPS_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// default, desk or acceptance.
    #[arg(long)]
    preset: Option<String>,
    /// Augmentation factor.
    #[arg(long)]
    k: Option<usize>,
    /// Group spec name: none, T1, T1xSO2, T2, SO2, T3xSO2, T2xSO3, T2xSO2.
    #[arg(long)]
    group: Option<String>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Vision trajectory count of the generated dataset.
    #[arg(long)]
    n_traj: Option<usize>,
    /// Run seed; falls back to the config file, then SPS_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Existing dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Where generated datasets are cached.
    #[arg(long, default_value = "sps-data")]
    data_cache: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory; defaults to the one the run was trained on.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "sps-data")]
    data_cache: PathBuf,
    /// Report path; defaults to `<run>/eval.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the Griffin-Lim synthesis probe of audio models.
    #[arg(long)]
    skip_synthesis: bool,
}

#[derive(Args)]
struct TraverseArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "sps-data")]
    data_cache: PathBuf,
    /// Latent dims to traverse; defaults to all.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Steps from −2σ to +2σ.
    #[arg(long, default_value_t = 9)]
    m: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// sample-efficiency, wrong-group, k-factor, or their desk- variants.
    name: String,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var("SPS_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("SPS_SEED must be an unsigned integer, got `{s}`"))),
        Err(_) => Ok(None),
    }
}

fn group_by_name(name: &str) -> CliResult<GroupSpec> {
    let mut all = perturbed_spec_catalog();
    all.push(GroupSpec::audio());
    all.into_iter().find(|g| g.name == name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown group `{name}`; available: none, T1, T1xSO2, T2, SO2, T3xSO2, T2xSO3, T2xSO2"
        ))
    })
}

fn load_config_file(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn resolve_config(a: &ConfigArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let cfg = load_config_file(p)?;
            if a.task.is_some_and(|t| Task::from(t) != cfg.task()) {
                return Err(CliError::Config("--task contradicts the config file".into()));
            }
            cfg
        }
        None => {
            let task = a.task.ok_or_else(|| CliError::Config("--task is required without --config".into()))?;
            let mut cfg = ExperimentConfig::new(
                task.into(),
                a.variant.map_or(Variant::Sps, Into::into),
                a.mode.map_or(Mode::Vae, Into::into),
            );
            cfg.set_seed(env_seed()?.unwrap_or(0));
            cfg
        }
    };
    if a.config.is_some() {
        if let Some(v) = a.variant {
            let variant = Variant::from(v);
            if variant != cfg.model.variant {
                let fresh = ExperimentConfig::new(cfg.task(), variant, cfg.model.mode);
                cfg.model.variant = variant;
                cfg.model.style_dim = fresh.model.style_dim;
            }
        }
        if let Some(m) = a.mode {
            cfg.model.mode = m.into();
        }
    }
    if let Some(p) = &a.preset {
        cfg.apply_preset(Preset::parse(p)?);
    }
    if cfg.model.variant == Variant::BetaVae {
        cfg.train.k = 0;
    }
    if let Some(k) = a.k {
        cfg.train.k = k;
    }
    if let Some(g) = &a.group {
        cfg.train.group = group_by_name(g)?;
    }
    if let Some(n) = a.iterations {
        cfg.set_iterations(n);
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(n) = a.n_traj {
        cfg.dataset.n_traj = n;
    }
    if let Some(s) = a.seed {
        cfg.set_seed(s);
    }
    if let Some(d) = &a.data {
        cfg.dataset.path = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Refuses to write into a non-empty directory unless forced.
fn prepare_out(dir: &Path, force: bool) -> CliResult<()> {
    if dir.is_file() {
        return Err(CliError::Config(format!("{} is a file", dir.display())));
    }
    let non_empty = dir.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false);
    if non_empty && !force {
        return Err(CliError::Config(format!(
            "{} is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn emit(v: serde_json::Value) {
    println!("{v}");
}

fn gen_data(a: GenDataArgs) -> CliResult<()> {
    prepare_out(&a.out, a.force)?;
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let spec = DatasetSpec {
        path: None,
        n_traj: a.n,
        variable_color: a.variable_color,
        timbres: match a.timbres {
            TimbreArg::Single => TimbreSet::Single,
            TimbreArg::Multi => TimbreSet::Multi,
        },
        seed,
    };
    let task = Task::from(a.task);
    experiment::generate_dataset(task, &spec, &a.out)?;
    let data = SeqData::load(&a.out)?;
    emit(json!({
        "event": "dataset",
        "task": task.name(),
        "dir": a.out,
        "seed": seed,
        "train": data.train.len(),
        "test": data.test.len(),
    }));
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let cfg = resolve_config(&a.cfg)?;
    prepare_out(&a.out, a.force)?;
    let dir = experiment::ensure_dataset(cfg.task(), &cfg.dataset, &a.data_cache)?;
    let data = SeqData::load(&dir)?;
    let mut resolved = cfg.clone();
    resolved.dataset.path.get_or_insert(dir.clone());
    let iterations = cfg.train.iterations;
    experiment::train_experiment(&cfg, &data, &a.out, &mut |row| {
        emit(json!({"event": "train", "of": iterations, "row": row}));
    })?;
    emit(json!({"event": "trained", "run": a.out, "dataset": dir, "seed": cfg.train.seed}));
    Ok(())
}

fn run_data(cfg: &ExperimentConfig, data: &Option<PathBuf>, cache: &Path) -> CliResult<SeqData> {
    let dir = match data {
        Some(d) => d.clone(),
        None => match &cfg.dataset.path {
            Some(p) => p.clone(),
            None => cache.join(cfg.dataset.cache_name(cfg.task())),
        },
    };
    if !dir.join("manifest.json").is_file() {
        return Err(CliError::Config(format!("no dataset at {}", dir.display())));
    }
    Ok(SeqData::load(&dir)?)
}

fn eval_cmd(a: EvalArgs) -> CliResult<()> {
    let (model, card, mut cfg) = experiment::load_run(&a.run)?;
    let data = run_data(&cfg, &a.data, &a.data_cache)?;
    if data.task != cfg.model.task || data.obs_shape != cfg.model.obs_shape {
        return Err(CliError::Config(format!(
            "checkpoint is a {} {} model; dataset holds {} data with {:?} observations",
            cfg.model.task.name(),
            cfg.model.variant.name(),
            data.task.name(),
            data.obs_shape
        )));
    }
    cfg.eval.skip_synthesis |= a.skip_synthesis;
    let report = experiment::evaluate_run(&model, &card, &cfg, &data)?;
    let out = a.out.unwrap_or_else(|| a.run.join(REPORT_FILE));
    sps_core::io::write_json(&out, &report)?;
    emit(json!({
        "event": "evaluated",
        "report": out,
        "aggregate_mse": report.aggregate_mse,
        "self_recon_bce": report.self_recon_bce,
    }));
    Ok(())
}

fn traverse_cmd(a: TraverseArgs) -> CliResult<()> {
    let (model, _, cfg) = experiment::load_run(&a.run)?;
    let data = run_data(&cfg, &a.data, &a.data_cache)?;
    prepare_out(&a.out, a.force)?;
    let d = model.config.latent_dim();
    let dims = a.dims.clone().unwrap_or_else(|| (0..d).collect());
    let z = encode_sequences(&model, &data.test)?;
    let stats = LatentStats::of(&z, d)?;
    let grid = traverse(&model, &stats, &dims, a.m)?;
    let ppm = a.out.join("traversal.ppm");
    grid.save_ppm(&ppm)?;
    emit(json!({"event": "traversal", "file": ppm, "dims": dims, "m": a.m}));
    if model.config.style_dim >= 2 && model.config.task == Task::Vision {
        let dc = model.config.content_dim;
        let map = color_map(&model, &stats, (dc, dc + 1), a.m)?;
        let path = a.out.join("color_map.ppm");
        map.image(8).save_ppm(&path)?;
        emit(json!({"event": "color_map", "file": path, "dims": [dc, dc + 1]}));
    }
    if let Source::Audio(m) = &data.source {
        let [_, f, l] = model.config.obs_shape;
        let len = f * l;
        for (row, &dim) in dims.iter().enumerate() {
            let mut wave = Vec::new();
            for step in 0..a.m {
                let k = row * a.m + step;
                let mag = slice_to_magnitude(&grid.frames[k * len..(k + 1) * len], f, l, m.reference_power);
                let mut rng = rng_for(cfg.eval.seed, "traverse-wav", k as u64);
                wave.extend(griffin_lim(&mag, cfg.eval.pitch.griffin_lim_iterations, &mut rng));
            }
            let path = a.out.join(format!("traversal_z{dim}.wav"));
            write_wav(&path, &wave)?;
            emit(json!({"event": "audio", "file": path, "dim": dim}));
        }
    }
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> CliResult<()> {
    let mut cfg_args = a.cfg;
    if cfg_args.task.is_none() && cfg_args.config.is_none() {
        cfg_args.task = Some(TaskArg::Vision);
    }
    let base = resolve_config(&cfg_args)?;
    let sweep = Sweep::preset(&a.name, &base)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    sps_core::io::write_json(&a.out.join("base_config.json"), &base)?;
    let total = sweep.cells.len();
    let outcome = run_sweep(&sweep, &base, &a.out, a.workers, &|cell, event| {
        let status = match event {
            CellEvent::Skipped => "skipped".to_string(),
            CellEvent::Reused => "reused".to_string(),
            CellEvent::Finished => "finished".to_string(),
            CellEvent::Failed(e) => format!("failed: {e}"),
        };
        emit(json!({"event": "cell", "cell": cell.id(), "status": status, "of": total}));
    })?;
    emit(json!({
        "event": "sweep",
        "name": sweep.name,
        "results": outcome.results,
        "ran": outcome.ran,
        "failed": outcome.failed,
    }));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Traverse(a) => traverse_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
