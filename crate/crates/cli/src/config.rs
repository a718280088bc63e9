//! Run configuration files: a small subset of TOML, see `docs/formats.md`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dynann::harness::DEFAULT_K;
use dynann::scenario::{DataSource, ScenarioKind, WorkloadPlan};
use dynann::workload::Rate;
use dynann::{ParamValue, Params};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    pub data: DataSource,
    pub workload: WorkloadSection,
    pub run: Option<RunSection>,
    pub sweep: Option<SweepSection>,
}

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub n0: Option<usize>,
    pub events: usize,
    pub searches: Option<usize>,
    #[serde(default = "one")]
    pub event_batch: usize,
    #[serde(default = "one")]
    pub search_batch: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub queries: usize,
    pub rate: Option<Rate>,
}

fn one() -> usize {
    1
}

fn default_eta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub method: String,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// `method -> parameter -> values`.
    pub grid: BTreeMap<String, BTreeMap<String, Vec<ParamValue>>>,
}

impl Config {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, String> {
        let mut config: Config = toml::from_str(text).map_err(|e| format!("{}: {e}", origin.display()))?;
        // Corpus paths are relative to the config file.
        let base = origin.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut config.data {
            DataSource::Fvecs { path, queries } | DataSource::Fbin { path, queries } => {
                fix(path);
                if let Some(q) = queries {
                    fix(q);
                }
            }
            DataSource::Synthetic { .. } => {}
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text, path)
    }

    pub fn plan(&self) -> WorkloadPlan {
        let w = &self.workload;
        WorkloadPlan {
            scenario: self.scenario,
            data: self.data.clone(),
            seed: self.seed,
            n0: w.n0,
            events: w.events,
            searches: w.searches,
            event_batch: w.event_batch,
            search_batch: w.search_batch,
            eta: w.eta,
            queries: w.queries,
            rate: w.rate,
        }
    }
}
