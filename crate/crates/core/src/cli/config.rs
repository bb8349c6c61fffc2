//! Run configuration and dataset resolution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::ModelConfig;
use crate::data::{generate_synthetic, load_argoverse_csv, load_scenarios, DataError, DatasetSplit, GenConfig, Scenario};
use crate::training::{EnsembleConfig, SchedulerConfig, TrainConfig, TrainSetup};

/// Where scenarios come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Generated in memory.
    Synthetic {
        count: usize,
        seed: u64,
        #[serde(default)]
        generator: GenConfig,
    },
    /// A scenario container written by `gen-data`.
    Container { path: PathBuf },
    /// Argoverse-style CSV files. `train/` and `val/` subdirectories are used
    /// as the split when present; otherwise every file is validation.
    CsvDir { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            count: 1000,
            seed: 7,
            generator: GenConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub scheduler: SchedulerConfig,
    pub ensemble: EnsembleConfig,
    pub train: TrainConfig,
    pub data: DataSource,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            scheduler: SchedulerConfig::default(),
            ensemble: EnsembleConfig::default(),
            train: TrainConfig::default(),
            data: DataSource::default(),
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("invalid run config: {e}"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes") + "\n"
    }

    pub fn setup(&self) -> TrainSetup {
        TrainSetup {
            model: self.model.clone(),
            schedule: self.scheduler.clone(),
            train: self.train.clone(),
            seed: self.seed,
        }
    }
}

/// A file is read as a container; a directory as CSV files.
pub fn source_for_path(path: &Path) -> DataSource {
    if path.is_dir() {
        DataSource::CsvDir { path: path.to_path_buf() }
    } else {
        DataSource::Container { path: path.to_path_buf() }
    }
}

fn csv_files(dir: &Path) -> Result<Vec<Scenario>, DataError> {
    let entries = std::fs::read_dir(dir).map_err(|e| DataError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let map = p.with_extension("map.json");
            let shared = dir.join("map.json");
            let map = [map, shared].into_iter().find(|m| m.is_file());
            load_argoverse_csv(p, map.as_deref())
        })
        .collect()
}

pub fn load_dataset(source: &DataSource) -> Result<DatasetSplit, DataError> {
    match source {
        DataSource::Synthetic { count, seed, generator } => Ok(generate_synthetic(*count, *seed, generator)),
        DataSource::Container { path } => load_scenarios(path),
        DataSource::CsvDir { path } => {
            let (train_dir, val_dir) = (path.join("train"), path.join("val"));
            if train_dir.is_dir() && val_dir.is_dir() {
                Ok(DatasetSplit {
                    train: csv_files(&train_dir)?,
                    val: csv_files(&val_dir)?,
                    seed: 0,
                })
            } else {
                Ok(DatasetSplit {
                    train: Vec::new(),
                    val: csv_files(path)?,
                    seed: 0,
                })
            }
        }
    }
}
