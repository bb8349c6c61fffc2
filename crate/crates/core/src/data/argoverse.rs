use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use super::scenario::{Lane, Point, Scenario, ScenarioKind, STEP_SECONDS};
use super::{DataError, DEFAULT_OBS_LEN, DEFAULT_PRED_LEN};

const REQUIRED_COLUMNS: [&str; 6] = ["TIMESTAMP", "TRACK_ID", "OBJECT_TYPE", "X", "Y", "CITY_NAME"];
const FOCAL_TYPE: &str = "AGENT";

#[derive(Deserialize)]
struct LaneMap {
    lanes: Vec<Lane>,
}

pub fn load_lane_map(path: &Path) -> Result<Vec<Lane>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let map: LaneMap = serde_json::from_str(&text).map_err(|e| DataError::Format(format!("lane map {}: {e}", path.display())))?;
    if let Some(l) = map.lanes.iter().find(|l| l.points.iter().flatten().any(|v| !v.is_finite())) {
        return Err(DataError::Format(format!("lane {} has a non-finite point", l.id)));
    }
    Ok(map.lanes)
}

/// Read one forecasting CSV and, optionally, its lane map. The scenario id is
/// the file stem.
pub fn load_argoverse_csv(path: &Path, map_path: Option<&Path>) -> Result<Scenario, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let lanes = match map_path {
        Some(p) => load_lane_map(p)?,
        None => Vec::new(),
    };
    parse_argoverse_csv(file, &id, lanes)
}

struct Row {
    timestamp: f64,
    track: String,
    object_type: String,
    xy: Point,
}

/// Parse CSV text into a scenario with the default 20 + 30 step horizons.
///
/// Timestamps are snapped to a 10 Hz grid starting at the earliest one. The
/// `AGENT` track becomes agent 0; other tracks follow in `TRACK_ID` order.
/// Steps a track does not cover are masked.
pub fn parse_argoverse_csv(reader: impl Read, id: &str, lanes: Vec<Lane>) -> Result<Scenario, DataError> {
    let (obs_len, pred_len) = (DEFAULT_OBS_LEN, DEFAULT_PRED_LEN);
    let steps = obs_len + pred_len;
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers().map_err(|e| DataError::Format(e.to_string()))?.clone();
    let mut col = [0usize; 6];
    for (slot, name) in col.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::Format(format!("missing column {name}")))?;
    }
    let mut rows = Vec::new();
    for (line, record) in csv.records().enumerate() {
        let record = record.map_err(|e| DataError::Format(e.to_string()))?;
        let field = |i: usize| record.get(col[i]).unwrap_or("");
        let num = |i: usize| {
            field(i).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                DataError::Format(format!(
                    "row {}: {} is not a finite number: {:?}",
                    line + 2,
                    REQUIRED_COLUMNS[i],
                    field(i)
                ))
            })
        };
        rows.push(Row {
            timestamp: num(0)?,
            track: field(1).to_string(),
            object_type: field(2).to_string(),
            xy: [num(3)?, num(4)?],
        });
    }

    let focal_track = rows
        .iter()
        .find(|r| r.object_type == FOCAL_TYPE)
        .map(|r| r.track.clone())
        .ok_or_else(|| DataError::Format(format!("no {FOCAL_TYPE} track")))?;
    let t0 = rows.iter().map(|r| r.timestamp).fold(f64::INFINITY, f64::min);
    let mut occupied = vec![false; steps];
    let mut tracks: BTreeMap<&str, Vec<Option<Point>>> = BTreeMap::new();
    for r in &rows {
        let k = ((r.timestamp - t0) / STEP_SECONDS).round();
        if k >= steps as f64 {
            continue;
        }
        let k = k as usize;
        occupied[k] = true;
        let track = tracks.entry(r.track.as_str()).or_insert_with(|| vec![None; steps]);
        if track[k].is_some() {
            return Err(DataError::Format(format!("track {} has two rows at step {k}", r.track)));
        }
        track[k] = Some(r.xy);
    }
    let aligned = occupied.iter().filter(|&&o| o).count();
    if aligned < steps {
        return Err(DataError::Truncated(format!("{aligned} aligned timestamps, need {steps}")));
    }

    let mut order: Vec<&str> = vec![focal_track.as_str()];
    order.extend(tracks.keys().copied().filter(|&t| t != focal_track));
    let mut scenario = Scenario {
        id: id.to_string(),
        obs_len,
        pred_len,
        histories: Vec::new(),
        history_valid: Vec::new(),
        futures: Vec::new(),
        future_valid: Vec::new(),
        lanes,
        focal: 0,
        kind: ScenarioKind::Unknown,
    };
    for t in order {
        for (k, p) in tracks[t].iter().enumerate() {
            let (pts, valid) = if k < obs_len {
                (&mut scenario.histories, &mut scenario.history_valid)
            } else {
                (&mut scenario.futures, &mut scenario.future_valid)
            };
            pts.push(p.unwrap_or([0.0, 0.0]));
            valid.push(p.is_some());
        }
    }
    scenario.validate()?;
    Ok(scenario)
}
