//! Declarative run configuration (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use risense::channel::{ChannelModelParams, GreedyOptions, StudyOptions};
use risense::dataset::{GenerationOptions, RisPipeline, ScenarioConfig, Simulator, Split};
use risense::detector::DetectorParams;
use risense::eval::{coco_thresholds, MatchConfig};
use risense::spectrogram::StftParams;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub output: OutputConfig,
    /// Pipeline used by `generate`.
    #[serde(default)]
    pub ris_pipeline: RisPipeline,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub stft: StftParams,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub channel: ChannelModelParams,
    #[serde(default)]
    pub greedy: GreedyOptions,
    #[serde(default)]
    pub detector: DetectorParams,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub study: StudyOptions,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub root: PathBuf,
    pub save_iq: bool,
    pub jpeg_quality: Option<u8>,
    /// Worker threads; unset uses every core.
    pub jobs: Option<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("out"),
            save_iq: false,
            jpeg_quality: None,
            jobs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Color scale limits in dB.
    pub db_min: f64,
    pub db_max: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            db_min: -110.0,
            db_max: -10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitSelection {
    Train,
    #[default]
    Test,
    All,
}

impl SplitSelection {
    pub fn includes(self, split: Split) -> bool {
        match self {
            SplitSelection::Train => split == Split::Train,
            SplitSelection::Test => split == Split::Test,
            SplitSelection::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub split: SplitSelection,
    pub iou_thresholds: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            split: SplitSelection::Test,
            iou_thresholds: coco_thresholds(),
        }
    }
}

impl EvaluationConfig {
    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            iou_thresholds: self.iou_thresholds.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Pipelines run on the same seeds; the first is the comparison baseline.
    pub pipelines: Vec<RisPipeline>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pipelines: vec![RisPipeline::Off, RisPipeline::Optimized],
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub ris: Option<RisPipeline>,
    pub save_iq: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            output: OutputConfig::default(),
            ris_pipeline: RisPipeline::default(),
            scenario: ScenarioConfig::default(),
            stft: StftParams::default(),
            render: RenderConfig::default(),
            channel: ChannelModelParams::default(),
            greedy: GreedyOptions::default(),
            detector: DetectorParams::default(),
            evaluation: EvaluationConfig::default(),
            study: StudyOptions::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text).map_err(|e| match e {
                    CliError::Config(msg) => CliError::Config(format!("{}: {msg}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.output.root = out.clone();
        }
        if o.jobs.is_some() {
            self.output.jobs = o.jobs;
        }
        if let Some(seed) = o.seed {
            self.scenario.master_seed = seed;
            self.channel.seed = seed;
        }
        if let Some(ris) = o.ris {
            self.ris_pipeline = ris;
        }
        self.output.save_iq |= o.save_iq;
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: String| CliError::Config(e);
        if self.schema_version != SCHEMA_VERSION {
            return Err(config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.simulator(self.ris_pipeline).validate().map_err(|e| config(e.to_string()))?;
        self.detector.validate().map_err(|e| config(e.to_string()))?;
        self.evaluation.match_config().validate().map_err(|e| config(e.to_string()))?;
        if self.output.jobs == Some(0) {
            return Err(config("output.jobs must be positive".into()));
        }
        if self.output.jpeg_quality.is_some_and(|q| q == 0 || q > 100) {
            return Err(config("output.jpeg_quality must lie in 1..=100".into()));
        }
        if self.experiment.pipelines.is_empty() {
            return Err(config("experiment.pipelines is empty".into()));
        }
        let mut unique = self.experiment.pipelines.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != self.experiment.pipelines.len() {
            return Err(config("experiment.pipelines has duplicates".into()));
        }
        Ok(())
    }

    pub fn simulator(&self, pipeline: RisPipeline) -> Simulator {
        Simulator {
            scenario: self.scenario.clone(),
            stft: self.stft.clone(),
            db_range: (self.render.db_min, self.render.db_max),
            channel: self.channel.clone(),
            greedy: self.greedy.clone(),
            pipeline,
        }
    }

    /// Dataset directory of one pipeline under the output root.
    pub fn dataset_dir(&self, pipeline: RisPipeline) -> PathBuf {
        self.output.root.join(pipeline.name())
    }

    pub fn generation_options(&self, pipeline: RisPipeline) -> GenerationOptions {
        GenerationOptions {
            out_dir: self.dataset_dir(pipeline),
            save_iq: self.output.save_iq,
            jpeg_quality: self.output.jpeg_quality,
            jobs: self.output.jobs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("schema_version = 1").unwrap(), RunConfig::default());
    }

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "schema_version = 1\nbogus = 2",
            "schema_version = 1\n[scenario]\nn_trian = 3",
            "schema_version = 1\n[detector]\nthreshold = 3.0",
        ] {
            assert!(matches!(RunConfig::from_toml(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn wrong_schema_version() {
        assert!(matches!(RunConfig::from_toml("schema_version = 2"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::from_toml("[scenario]"), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            out: Some("x".into()),
            jobs: Some(2),
            seed: Some(9),
            ris: Some(RisPipeline::Ideal),
            save_iq: true,
        });
        assert_eq!(cfg.output.root, PathBuf::from("x"));
        assert_eq!(cfg.output.jobs, Some(2));
        assert_eq!(cfg.scenario.master_seed, 9);
        assert_eq!(cfg.channel.seed, 9);
        assert_eq!(cfg.ris_pipeline, RisPipeline::Ideal);
        assert!(cfg.output.save_iq);
    }
}
