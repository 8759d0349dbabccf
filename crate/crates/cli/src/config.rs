use std::path::{Path, PathBuf};

use dsiv_core::bench::Experiment;
use dsiv_core::cfr::TrainConfig;
use dsiv_core::model::ModelSettings;
use dsiv_core::simgen::{GenConfig, GeneratorKind};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verbosity {
    Quiet,
    Normal,
    Verbose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub seeds: Vec<u64>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Decision window; resolved to the generator's `tau` when absent.
    pub tau: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let grid = vec![0.0, 0.01, 0.1, 1.0];
        EvalSection {
            seeds: vec![0, 1, 2],
            alphas: grid.clone(),
            betas: grid,
            tau: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Copied into the generator and training seeds on resolution.
    pub seed: u64,
    pub out: PathBuf,
    pub verbosity: Verbosity,
    pub gen: GenConfig,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            verbosity: Verbosity::Normal,
            gen: GenConfig::default(),
            model: ModelSettings::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub quiet: bool,
}

impl RunConfig {
    /// Parses a config document. The `gen` section is laid over the defaults
    /// of its `kind`, so a partial section only names what it changes.
    pub fn from_json(text: &str) -> Result<RunConfig, CliError> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
        let Some(obj) = doc.as_object_mut() else {
            return Err(CliError::config("config must be a JSON object"));
        };
        if let Some(gen) = obj.get_mut("gen") {
            let Some(fields) = gen.as_object() else {
                return Err(CliError::config("`gen` must be an object"));
            };
            let kind = match fields.get("kind") {
                Some(k) => serde_json::from_value(k.clone()).map_err(|e| CliError::config(format!("gen.kind: {e}")))?,
                None => GeneratorKind::AppendixB,
            };
            let mut merged = serde_json::to_value(GenConfig::defaults_for(kind)).expect("generator config serializes");
            let target = merged.as_object_mut().expect("object");
            for (k, v) in fields {
                target.insert(k.clone(), v.clone());
            }
            *gen = merged;
        }
        serde_json::from_value(doc).map_err(|e| CliError::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Applies overrides, spreads the seed and fills derived fields, then validates.
    pub fn resolve(mut self, o: &Overrides) -> Result<RunConfig, CliError> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if o.quiet {
            self.verbosity = Verbosity::Quiet;
        }
        self.gen.seed = self.seed;
        self.train.seed = self.seed;
        match self.eval.tau {
            None => self.eval.tau = Some(self.gen.tau),
            Some(t) if t != self.gen.tau => {
                return Err(CliError::config(format!(
                    "eval.tau = {t} differs from gen.tau = {}",
                    self.gen.tau
                )))
            }
            Some(_) => {}
        }
        self.gen.validate().map_err(|e| CliError::config(e.to_string()))?;
        self.train.validate()?;
        if self.eval.seeds.is_empty() {
            return Err(CliError::config("eval.seeds is empty"));
        }
        for (name, grid) in [("alphas", &self.eval.alphas), ("betas", &self.eval.betas)] {
            if grid.is_empty() || grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(CliError::config(format!(
                    "eval.{name} must be a non-empty list of non-negative weights"
                )));
            }
        }
        Ok(self)
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            gen: self.gen.clone(),
            model: self.model.clone(),
            train: self.train.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn says(&self, level: Verbosity) -> bool {
        self.verbosity >= level
    }
}
