use serde::{Deserialize, Serialize};

use super::{bench_latency, evaluate, EvalError, LatencyReport, MetricsReport, Predictor};
use crate::backbone::Model;
use crate::data::DatasetSplit;
use crate::layers::NormKind;
use crate::training::{train, Ensemble, EnsembleConfig, EpochLog, TrainSetup};

/// Base settings shared by the four cells. The norm kind in `setup.model`
/// is overridden per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub setup: TrainSetup,
    pub ensemble: EnsembleConfig,
    pub latency_iterations: usize,
    pub latency_warmup: usize,
}

/// One row of the 2×2 grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub label: String,
    pub dyt_enabled: bool,
    pub snapshot_enabled: bool,
    pub seed: u64,
    pub setup: TrainSetup,
    /// Strategy used at inference; `None` means the final snapshot alone.
    pub ensemble: Option<EnsembleConfig>,
    pub snapshots: usize,
    pub metrics: Option<MetricsReport>,
    pub latency: Option<LatencyReport>,
    pub failure: Option<String>,
    #[serde(skip)]
    pub log: Vec<EpochLog>,
}

impl AblationCell {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub cells: Vec<AblationCell>,
}

/// Grid order: backbone, +DyT, +Snapshot, +both.
pub const GRID: [(bool, bool, &str); 4] = [
    (false, false, "backbone"),
    (true, false, "+DyT"),
    (false, true, "+Snapshot"),
    (true, true, "+DyT+Snapshot"),
];

fn run_cell(dataset: &DatasetSplit, cfg: &AblationConfig, dyt: bool, snapshot: bool, label: &str) -> AblationCell {
    let mut setup = cfg.setup.clone();
    setup.model.norm_kind = if dyt { NormKind::DyT } else { NormKind::LayerNorm };
    let mut cell = AblationCell {
        label: label.to_string(),
        dyt_enabled: dyt,
        snapshot_enabled: snapshot,
        seed: setup.seed,
        setup: setup.clone(),
        ensemble: snapshot.then(|| cfg.ensemble.clone()),
        snapshots: 0,
        metrics: None,
        latency: None,
        failure: None,
        log: Vec::new(),
    };
    let result = (|| -> Result<(), String> {
        let outcome = train(dataset, &setup).map_err(|e| e.to_string())?;
        cell.log = outcome.log;
        cell.snapshots = outcome.snapshots.len();
        if let Some(d) = outcome.diverged {
            return Err(format!("diverged in epoch {} (cycle {}): {}", d.epoch, d.cycle, d.reason));
        }
        let eval = |p: &dyn Predictor| -> Result<(MetricsReport, LatencyReport), EvalError> {
            let metrics = evaluate(p, &dataset.val)?;
            let latency = bench_latency(p, &dataset.val, cfg.latency_iterations, cfg.latency_warmup)?;
            Ok((metrics, latency))
        };
        let (metrics, latency) = if snapshot {
            let params: Vec<_> = outcome.snapshots.iter().map(|s| &s.params).collect();
            let ensemble = Ensemble::new(&outcome.model, &params, &cfg.ensemble).map_err(|e| e.to_string())?;
            eval(&ensemble)
        } else {
            eval(&outcome.model as &Model)
        }
        .map_err(|e| e.to_string())?;
        cell.metrics = Some(metrics);
        cell.latency = Some(latency);
        Ok(())
    })();
    cell.failure = result.err();
    cell
}

/// Train and evaluate every cell of the DyT × Snapshot grid from the same
/// seed and split. A failing cell is marked and the others still run.
pub fn run_ablation(dataset: &DatasetSplit, cfg: &AblationConfig) -> Result<AblationReport, EvalError> {
    run_ablation_with(dataset, cfg, |_| {})
}

/// As [`run_ablation`], calling `on_cell` as each cell finishes.
pub fn run_ablation_with(
    dataset: &DatasetSplit,
    cfg: &AblationConfig,
    mut on_cell: impl FnMut(&AblationCell),
) -> Result<AblationReport, EvalError> {
    if dataset.val.is_empty() {
        return Err(EvalError::Empty("ablation needs a validation split".into()));
    }
    let cells = GRID
        .iter()
        .map(|&(dyt, snapshot, label)| {
            let cell = run_cell(dataset, cfg, dyt, snapshot, label);
            on_cell(&cell);
            cell
        })
        .collect();
    Ok(AblationReport {
        seed: cfg.setup.seed,
        cells,
    })
}

impl AblationReport {
    /// Aligned text table with checkmark columns.
    pub fn table(&self) -> String {
        let mut rows = vec![[
            "DyT".to_string(),
            "Snapshot".to_string(),
            "Backbone".to_string(),
            "ADE".to_string(),
            "FDE".to_string(),
            "MR".to_string(),
            "inf(ms)".to_string(),
        ]];
        let mark = |b: bool| if b { "✓" } else { "" }.to_string();
        for c in &self.cells {
            let (ade, fde, mr) = match c.metrics {
                Some(m) => (
                    format!("{:.4}", m.min_ade),
                    format!("{:.4}", m.min_fde),
                    format!("{:.4}", m.miss_rate),
                ),
                None => ("failed".into(), "-".into(), "-".into()),
            };
            let inf = c.latency.map_or("-".into(), |l| format!("{:.3}", l.ave_ms));
            rows.push([mark(c.dyt_enabled), mark(c.snapshot_enabled), mark(true), ade, fde, mr, inf]);
        }
        let widths: Vec<usize> = (0..7)
            .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (n, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
                .collect();
            out.push_str(line.join(" | ").trim_end());
            out.push('\n');
            if n == 0 {
                out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-|-"));
                out.push('\n');
            }
        }
        for c in self.cells.iter().filter(|c| !c.succeeded()) {
            out.push_str(&format!("{}: {}\n", c.label, c.failure.as_deref().unwrap_or_default()));
        }
        out
    }
}
