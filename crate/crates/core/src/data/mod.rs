//! Scenarios: synthetic generation, Argoverse-style CSV ingestion and a
//! binary container.

mod argoverse;
mod container;
mod scenario;
mod synthetic;

pub use argoverse::{load_argoverse_csv, load_lane_map, parse_argoverse_csv};
pub use container::{decode_scenarios, encode_scenarios, load_scenarios, save_scenarios, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use scenario::{DatasetSplit, Lane, Point, Scenario, ScenarioKind, DEFAULT_OBS_LEN, DEFAULT_PRED_LEN, STEP_SECONDS};
pub use synthetic::{generate_scenario, generate_synthetic, is_validation, render_scenario, AgentPath, GenConfig, Maneuver, ManeuverMix};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated input: {0}")]
    Truncated(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: Vec<u8>, found: Vec<u8> },
    #[error("unsupported container version {found} (this build reads {supported})")]
    BadVersion { found: u32, supported: u32 },
    #[error("scenario {id}: {msg}")]
    InvalidScenario { id: String, msg: String },
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
