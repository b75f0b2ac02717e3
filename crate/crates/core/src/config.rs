//! Experiment configuration: dataset, model, training and evaluation in one
//! JSON document, plus named presets.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sps_datasets::audio::AudioDataConfig;

use crate::error::{CoreError, Result};
use crate::evaluation::EvalOptions;
use crate::models::{Mode, ModelConfig, Task, Variant};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimbreSet {
    Single,
    Multi,
}

impl TimbreSet {
    pub fn audio_config(self) -> AudioDataConfig {
        match self {
            TimbreSet::Single => AudioDataConfig::single_timbre(),
            TimbreSet::Multi => AudioDataConfig::multi_timbre(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Existing dataset directory; when absent the dataset is generated from
    /// the fields below.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Vision: trajectory count.
    pub n_traj: usize,
    /// Vision: hue and saturation drawn per trajectory.
    pub variable_color: bool,
    /// Audio: one timbre or the whole family.
    pub timbres: TimbreSet,
    pub seed: u64,
}

impl DatasetSpec {
    /// Directory name of the generated dataset, unique per content.
    pub fn cache_name(&self, task: Task) -> String {
        match task {
            Task::Vision => format!(
                "vision_n{}_{}_s{}",
                self.n_traj,
                if self.variable_color { "color" } else { "green" },
                self.seed
            ),
            Task::Audio => format!(
                "audio_{}_s{}",
                match self.timbres {
                    TimbreSet::Single => "single",
                    TimbreSet::Multi => "multi",
                },
                self.seed
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-size networks and the full 60k-iteration budget.
    Default,
    /// Iterations capped at 6000, vision datasets of 256 trajectories.
    Desk,
    /// Narrow networks and short runs sized for the acceptance suite on one
    /// CPU core.
    Acceptance,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Default, Preset::Desk, Preset::Acceptance];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Default => "default",
            Preset::Desk => "desk",
            Preset::Acceptance => "acceptance",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name).ok_or_else(|| {
            CoreError::Config(format!(
                "unknown preset `{name}`; available: {}",
                Self::ALL.map(|p| p.name()).join(", ")
            ))
        })
    }
}

pub const DESK_ITERATIONS: u64 = 6000;

/// Acceptance-scale network widths and budget.
pub mod acceptance {
    pub const VISION_CONV: [usize; 4] = [8, 16, 16, 16];
    pub const VISION_FC: [usize; 3] = [32, 64, 128];
    pub const AUDIO_CONV: [usize; 3] = [8, 16, 16];
    pub const AUDIO_FC: [usize; 2] = [32, 128];
    pub const RNN: usize = 64;
    pub const BATCH: usize = 32;
    pub const ITERATIONS: u64 = 1500;
}

impl ExperimentConfig {
    pub fn new(task: Task, variant: Variant, mode: Mode) -> Self {
        let model = ModelConfig::new(task, variant, mode);
        let mut train = TrainConfig::new(task);
        if variant == Variant::BetaVae {
            train.k = 0;
        }
        Self {
            dataset: DatasetSpec {
                path: None,
                n_traj: 512,
                variable_color: variant == Variant::SpsPlus,
                timbres: if variant == Variant::SpsPlus { TimbreSet::Multi } else { TimbreSet::Single },
                seed: 0,
            },
            model,
            train,
            eval: EvalOptions::default(),
        }
    }

    pub fn task(&self) -> Task {
        self.model.task
    }

    /// Sets the run seed used for initialization, training draws and
    /// evaluation.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.eval.seed = seed;
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        let task = self.task();
        match preset {
            Preset::Default => {}
            Preset::Desk => {
                self.set_iterations(self.train.iterations.min(DESK_ITERATIONS));
                if task == Task::Vision {
                    self.dataset.n_traj = 256;
                }
            }
            Preset::Acceptance => {
                use acceptance::*;
                match task {
                    Task::Vision => {
                        self.model.conv_channels = VISION_CONV.to_vec();
                        self.model.fc_hidden = VISION_FC.to_vec();
                        self.dataset.n_traj = 256;
                    }
                    Task::Audio => {
                        self.model.conv_channels = AUDIO_CONV.to_vec();
                        self.model.fc_hidden = AUDIO_FC.to_vec();
                    }
                }
                self.model.rnn_hidden = RNN;
                self.train.batch_size = BATCH;
                self.set_iterations(ITERATIONS);
                self.train.log_every = 50;
            }
        }
    }

    /// Sets the budget and keeps the teacher-forcing decay at the same
    /// fraction (50k of 60k) of it.
    pub fn set_iterations(&mut self, iterations: u64) {
        self.train.iterations = iterations;
        self.train.tf_decay_iterations = iterations * 5 / 6;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(&self.model)?;
        if self.model.obs_shape != self.task().obs_shape() && self.dataset.path.is_none() {
            return Err(CoreError::Config(format!(
                "model.obs_shape {:?} differs from generated {} data {:?}",
                self.model.obs_shape,
                self.task().name(),
                self.task().obs_shape()
            )));
        }
        if self.task() == Task::Vision && self.dataset.n_traj < 10 && self.dataset.path.is_none() {
            return Err(CoreError::Config("dataset.n_traj must be at least 10 to leave a test split".into()));
        }
        if self.eval.pairs == 0 {
            return Err(CoreError::Config("eval.pairs must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_vision_sps() {
        let c = ExperimentConfig::new(Task::Vision, Variant::Sps, Mode::Vae);
        assert_eq!((c.train.k, c.train.batch_size, c.train.lr), (4, 32, 1e-3));
        c.validate().unwrap();
    }

    #[test]
    fn desk_caps_iterations() {
        let mut c = ExperimentConfig::new(Task::Audio, Variant::Sps, Mode::Vae);
        c.apply_preset(Preset::Desk);
        assert_eq!(c.train.iterations, 6000);
        assert_eq!(c.train.tf_decay_iterations, 5000);
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let c = ExperimentConfig::new(Task::Vision, Variant::SpsPlus, Mode::Vae);
        let s = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let bad = s.replacen("\"lambda1\"", "\"lambda_one\"", 1);
        assert!(serde_json::from_str::<ExperimentConfig>(&bad).is_err());
    }

    #[test]
    fn preset_names() {
        assert_eq!(Preset::parse("desk").unwrap(), Preset::Desk);
        let e = Preset::parse("laptop").unwrap_err().to_string();
        assert!(e.contains("default, desk, acceptance"));
    }
}
