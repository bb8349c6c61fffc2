use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::checkpoint::{load_checkpoint, load_resume, save_checkpoint, save_resume};
use super::config::{load_dataset, source_for_path, RunConfig};
use super::{
    AblateArgs, BenchArgs, CliError, ConfigArgs, EnsembleMode, EvaluateArgs, GenDataArgs, ModelArgs, PredictorKind, SplitChoice, TrainArgs,
};
use crate::backbone::Model;
use crate::data::{generate_synthetic, save_scenarios, DatasetSplit, GenConfig, Scenario};
use crate::evaluation::{
    bench_latency, bench_normalizer, evaluate as score, run_ablation_with, AblationConfig, ConstantVelocity, LatencyReport, MetricsReport,
    Oracle, Predictor,
};
use crate::layers::NormKind;
use crate::training::{
    log_jsonl, train_with, Ensemble, EnsembleConfig, EnsembleStrategy, EpochLog, ResumeState, Snapshot, TrainError, TrainHooks,
};

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Usage(format!("{}: {e}", path.display()))
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::Internal(format!("writing report: {e}"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

/// Defaults, then the config file (or `base`), then flags.
fn resolve(args: &ConfigArgs, base: Option<RunConfig>) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            RunConfig::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => base.unwrap_or_default(),
    };
    if let Some(p) = &args.data {
        cfg.data = source_for_path(p);
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.out {
        cfg.out_dir = v.clone();
    }
    let m = &mut cfg.model;
    args.width.inspect(|&v| m.width = v);
    args.heads.inspect(|&v| m.heads = v);
    args.modes.inspect(|&v| m.modes = v);
    args.blocks_per_stage.inspect(|&v| m.blocks_per_stage = v);
    args.norm.inspect(|&v| m.norm_kind = v);
    let s = &mut cfg.scheduler;
    args.cycles.inspect(|&v| s.num_cycles = v);
    args.cycle_length.inspect(|&v| s.cycle_length = v);
    args.eta_max.inspect(|&v| s.eta_max = v);
    args.eta_min.inspect(|&v| s.eta_min = v);
    args.batch_size.inspect(|&v| cfg.train.batch_size = v);
    args.lambda.inspect(|&v| cfg.train.lambda = v);
    cfg.model.validate().map_err(|e| CliError::Usage(format!("model config: {e}")))?;
    cfg.scheduler
        .validate()
        .map_err(|e| CliError::Usage(format!("scheduler config: {e}")))?;
    if cfg.train.batch_size == 0 {
        return Err(CliError::Usage("batch_size must be at least 1".into()));
    }
    Ok(cfg)
}

fn dataset(cfg: &RunConfig) -> Result<DatasetSplit> {
    let d = load_dataset(&cfg.data)?;
    for s in d.iter() {
        if (s.obs_len, s.pred_len) != (cfg.model.obs_len, cfg.model.pred_len) {
            return Err(CliError::Usage(format!(
                "scenario {} has horizons {}+{}, the model expects {}+{}",
                s.id, s.obs_len, s.pred_len, cfg.model.obs_len, cfg.model.pred_len
            )));
        }
    }
    Ok(d)
}

fn split_of(d: &DatasetSplit, which: SplitChoice) -> Vec<Scenario> {
    match which {
        SplitChoice::Train => d.train.clone(),
        SplitChoice::Val => d.val.clone(),
        SplitChoice::All => d.iter().cloned().collect(),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Aligned text table; the first row is the header.
fn table(rows: &[Vec<String>]) -> String {
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (n, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if n == 0 {
            out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-|-"));
            out.push('\n');
        }
    }
    out
}

pub fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<()> {
    if a.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let mut gen = GenConfig::default();
    if let Some(n) = a.noise_std {
        if !(n >= 0.0 && n.is_finite()) {
            return Err(CliError::Usage("--noise-std must be a non-negative number".into()));
        }
        gen.noise_std = n;
    }
    let split = generate_synthetic(a.count, a.seed, &gen);
    save_scenarios(&split, &a.out)?;
    writeln!(
        out,
        "wrote {} scenarios ({} train / {} val) to {}",
        split.len(),
        split.train.len(),
        split.val.len(),
        a.out.display()
    )
    .map_err(out_err)
}

pub fn snapshot_path(dir: &Path, cycle: usize) -> PathBuf {
    dir.join(format!("snapshot_{cycle}.ckpt"))
}

struct RunHooks<'a> {
    cfg: &'a RunConfig,
    log: File,
    last_snapshot: Option<PathBuf>,
}

impl TrainHooks for RunHooks<'_> {
    fn on_epoch(&mut self, r: &EpochLog) -> std::result::Result<(), TrainError> {
        self.log
            .write_all(log_jsonl(std::slice::from_ref(r)).as_bytes())
            .and_then(|_| self.log.flush())
            .map_err(|e| TrainError::Hook(format!("train.jsonl: {e}")))?;
        let val = r.val_min_ade.map_or("-".into(), |v| format!("{v:.4}"));
        eprintln!(
            "epoch {:>3} cycle {} lr {:.3e} loss {:.4} val minADE {val}",
            r.epoch, r.cycle, r.lr, r.train_loss
        );
        Ok(())
    }

    fn on_snapshot(&mut self, s: &Snapshot, state: &ResumeState) -> std::result::Result<(), TrainError> {
        let dir = &self.cfg.out_dir;
        let path = snapshot_path(dir, s.cycle_index);
        save_checkpoint(&path, &self.cfg.model, s.cycle_index, &s.params).map_err(|e| TrainError::Hook(e.to_string()))?;
        save_resume(&dir.join("resume.state"), &self.cfg.model, state).map_err(|e| TrainError::Hook(e.to_string()))?;
        eprintln!("saved {}", path.display());
        self.last_snapshot = Some(path);
        Ok(())
    }
}

pub fn train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve(&a.cfg, None)?;
    let dir = cfg.out_dir.clone();
    ensure_dir(&dir)?;
    let data = dataset(&cfg)?;
    let config_path = dir.join("config.json");
    let log_path = dir.join("train.jsonl");
    let resume = if a.resume {
        let archived = std::fs::read_to_string(&config_path).map_err(io_err(&config_path))?;
        if archived != cfg.to_json() {
            return Err(CliError::Usage(format!(
                "--resume needs the same settings as the archived {}",
                config_path.display()
            )));
        }
        let state = load_resume(&dir.join("resume.state"), &cfg.model)?;
        let keep_before = state.next_cycle * cfg.scheduler.cycle_length;
        let old = std::fs::read_to_string(&log_path).unwrap_or_default();
        let mut kept = String::new();
        for line in old.lines() {
            let rec: EpochLog = serde_json::from_str(line).map_err(|e| CliError::Usage(format!("{}: {e}", log_path.display())))?;
            if rec.epoch < keep_before {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        write_file(&log_path, &kept)?;
        Some(state)
    } else {
        write_file(&config_path, &cfg.to_json())?;
        write_file(&log_path, "")?;
        None
    };
    let previous = resume
        .as_ref()
        .and_then(|s| s.next_cycle.checked_sub(1))
        .map(|c| snapshot_path(&dir, c));
    let log = OpenOptions::new().append(true).open(&log_path).map_err(io_err(&log_path))?;
    let mut hooks = RunHooks {
        cfg: &cfg,
        log,
        last_snapshot: previous,
    };
    let outcome = train_with(&data, &cfg.setup(), resume, &mut hooks).map_err(|e| match e {
        TrainError::Hook(msg) => CliError::Usage(msg),
        other => other.into(),
    })?;
    if let Some(d) = outcome.diverged {
        let last = hooks.last_snapshot.map_or("no snapshot was completed".to_string(), |p| {
            format!("last good snapshot: {}", p.display())
        });
        return Err(CliError::Diverged(format!(
            "training diverged in epoch {} (cycle {}): {}; {last}",
            d.epoch, d.cycle, d.reason
        )));
    }
    let last = outcome.log.last();
    writeln!(
        out,
        "trained {} cycle{} into {}; final val minADE {}",
        cfg.scheduler.num_cycles,
        if cfg.scheduler.num_cycles == 1 { "" } else { "s" },
        dir.display(),
        last.and_then(|r| r.val_min_ade).map_or("-".into(), |v| format!("{v:.4}"))
    )
    .map_err(out_err)
}

/// Checkpoint list: explicit files, or every snapshot in the run directory
/// ordered by cycle.
fn checkpoints(a: &ModelArgs) -> Result<Vec<PathBuf>> {
    if !a.checkpoints.is_empty() {
        return Ok(a.checkpoints.clone());
    }
    let Some(run) = &a.run else { return Ok(Vec::new()) };
    let mut found: Vec<(usize, PathBuf)> = std::fs::read_dir(run)
        .map_err(io_err(run))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let cycle = name.strip_prefix("snapshot_")?.strip_suffix(".ckpt")?.parse().ok()?;
            Some((cycle, p))
        })
        .collect();
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn model_config(a: &ModelArgs) -> Result<RunConfig> {
    let base = match (&a.run, &a.cfg.config) {
        (Some(run), None) => {
            let path = run.join("config.json");
            let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            Some(RunConfig::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?)
        }
        _ => None,
    };
    resolve(&a.cfg, base)
}

#[derive(Debug, Serialize)]
struct Selection {
    predictor: String,
    ensemble: String,
    checkpoints: Vec<String>,
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Build the predictor named by the flags. Without checkpoints, `fresh`
/// allows freshly initialized parameters.
fn predictor(a: &ModelArgs, cfg: &RunConfig, fresh: bool) -> Result<(Box<dyn Predictor>, Selection)> {
    let paths = checkpoints(a)?;
    let base = Model::new(cfg.model.clone(), cfg.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let mode = a.ensemble.unwrap_or(match cfg.ensemble.strategy {
        EnsembleStrategy::PredictionAverage => EnsembleMode::PredictionAverage,
        EnsembleStrategy::ParameterAverage => EnsembleMode::ParameterAverage,
    });
    if paths.is_empty() {
        if !fresh {
            return Err(CliError::Usage("no checkpoints: pass --run or --checkpoint".into()));
        }
        let sel = Selection {
            predictor: base.name(),
            ensemble: "off".into(),
            checkpoints: Vec::new(),
        };
        return Ok((Box::new(base), sel));
    }
    let stores = paths
        .iter()
        .map(|p| load_checkpoint(p, &cfg.model).map(|c| c.params))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let strategy = match mode {
        EnsembleMode::Off => None,
        EnsembleMode::PredictionAverage => Some(EnsembleStrategy::PredictionAverage),
        EnsembleMode::ParameterAverage => Some(EnsembleStrategy::ParameterAverage),
    };
    let (predictor, used): (Box<dyn Predictor>, &[PathBuf]) = match strategy {
        None => {
            let last = stores.last().expect("non-empty").clone();
            (
                Box::new(base.with_params(last).map_err(|e| CliError::Checkpoint(e.to_string()))?),
                &paths[paths.len() - 1..],
            )
        }
        Some(strategy) => {
            let ecfg = EnsembleConfig {
                strategy,
                snapshots_used: a.snapshots_used.or(cfg.ensemble.snapshots_used),
            };
            let refs: Vec<_> = stores.iter().collect();
            let ens = Ensemble::new(&base, &refs, &ecfg)?;
            let n = ecfg.snapshots_used.unwrap_or(paths.len()).min(paths.len());
            (Box::new(ens), &paths[paths.len() - n..])
        }
    };
    let ensemble = match mode {
        EnsembleMode::Off => "off",
        EnsembleMode::PredictionAverage => "prediction_average",
        EnsembleMode::ParameterAverage => "parameter_average",
    };
    let sel = Selection {
        predictor: predictor.name(),
        ensemble: ensemble.into(),
        checkpoints: used.iter().map(|p| file_name(p)).collect(),
    };
    Ok((predictor, sel))
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    #[serde(flatten)]
    selection: Selection,
    split: String,
    scenarios: usize,
    metrics: MetricsReport,
}

fn split_name(s: SplitChoice) -> &'static str {
    match s {
        SplitChoice::Train => "train",
        SplitChoice::Val => "val",
        SplitChoice::All => "all",
    }
}

pub fn evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = model_config(&a.model)?;
    let data = dataset(&cfg)?;
    let scenarios = split_of(&data, a.model.split);
    let (p, selection): (Box<dyn Predictor>, Selection) = match a.predictor {
        PredictorKind::Model => predictor(&a.model, &cfg, false)?,
        PredictorKind::Oracle => {
            let p = Oracle { modes: cfg.model.modes };
            let sel = Selection {
                predictor: p.name(),
                ensemble: "off".into(),
                checkpoints: Vec::new(),
            };
            (Box::new(p), sel)
        }
        PredictorKind::ConstantVelocity => {
            let p = ConstantVelocity { modes: cfg.model.modes };
            let sel = Selection {
                predictor: p.name(),
                ensemble: "off".into(),
                checkpoints: Vec::new(),
            };
            (Box::new(p), sel)
        }
    };
    let metrics = score(p.as_ref(), &scenarios)?;
    let report = EvaluationReport {
        selection,
        split: split_name(a.model.split).into(),
        scenarios: scenarios.len(),
        metrics,
    };
    let rows = vec![
        ["predictor", "ensemble", "minADE", "minFDE", "MR", "count"]
            .map(String::from)
            .to_vec(),
        vec![
            report.selection.predictor.clone(),
            report.selection.ensemble.clone(),
            format!("{:.4}", metrics.min_ade),
            format!("{:.4}", metrics.min_fde),
            format!("{:.4}", metrics.miss_rate),
            metrics.count.to_string(),
        ],
    ];
    out.write_all(table(&rows).as_bytes()).map_err(out_err)?;
    if let Some(path) = &a.json {
        write_file(path, &json(&report))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ModelBenchReport {
    #[serde(flatten)]
    selection: Selection,
    norm: NormKind,
    width: usize,
    split: String,
    scenarios: usize,
    latency: LatencyReport,
}

#[derive(Debug, Serialize)]
struct LayerBenchReport {
    shape: Vec<usize>,
    dyt: LatencyReport,
    layernorm: LatencyReport,
}

fn latency_row(name: &str, l: &LatencyReport) -> Vec<String> {
    vec![
        name.to_string(),
        format!("{:.4}", l.ave_ms),
        format!("{:.4}", l.std_ms),
        format!("{:.4}", l.min_ms),
        format!("{:.4}", l.max_ms),
        l.iterations.to_string(),
    ]
}

fn latency_header() -> Vec<String> {
    ["variant", "ave(ms)", "std(ms)", "min(ms)", "max(ms)", "iterations"]
        .map(String::from)
        .to_vec()
}

pub fn bench(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    if a.layer {
        let dyt = bench_normalizer(NormKind::DyT, &a.shape, a.iterations, a.warmup)?;
        let layernorm = bench_normalizer(NormKind::LayerNorm, &a.shape, a.iterations, a.warmup)?;
        let rows = vec![latency_header(), latency_row("dyt", &dyt), latency_row("layernorm", &layernorm)];
        out.write_all(table(&rows).as_bytes()).map_err(out_err)?;
        if let Some(path) = &a.json {
            let shape = a.shape.clone();
            write_file(path, &json(&LayerBenchReport { shape, dyt, layernorm }))?;
        }
        return Ok(());
    }
    let cfg = model_config(&a.model)?;
    let data = dataset(&cfg)?;
    let scenarios = split_of(&data, a.model.split);
    let (p, selection) = predictor(&a.model, &cfg, true)?;
    let latency = bench_latency(p.as_ref(), &scenarios, a.iterations, a.warmup)?;
    let rows = vec![latency_header(), latency_row(&selection.predictor, &latency)];
    out.write_all(table(&rows).as_bytes()).map_err(out_err)?;
    if let Some(path) = &a.json {
        let report = ModelBenchReport {
            selection,
            norm: cfg.model.norm_kind,
            width: cfg.model.width,
            split: split_name(a.model.split).into(),
            scenarios: scenarios.len(),
            latency,
        };
        write_file(path, &json(&report))?;
    }
    Ok(())
}

/// File-name stem for a grid label such as `+DyT+Snapshot`.
pub fn cell_slug(label: &str) -> String {
    let parts: Vec<String> = label.split('+').filter(|s| !s.is_empty()).map(str::to_ascii_lowercase).collect();
    parts.join("_")
}

pub fn ablate(a: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve(&a.cfg, None)?;
    let dir = cfg.out_dir.clone();
    ensure_dir(&dir)?;
    let data = dataset(&cfg)?;
    write_file(&dir.join("config.json"), &cfg.to_json())?;
    let acfg = AblationConfig {
        setup: cfg.setup(),
        ensemble: cfg.ensemble.clone(),
        latency_iterations: a.iterations,
        latency_warmup: a.warmup,
    };
    let mut write_err = None;
    let report = run_ablation_with(&data, &acfg, |cell| {
        let path = dir.join(format!("ablation_{}.jsonl", cell_slug(&cell.label)));
        if let Err(e) = write_file(&path, &log_jsonl(&cell.log)) {
            write_err.get_or_insert(e);
        }
        let status = cell.failure.as_deref().unwrap_or("ok");
        eprintln!("cell {}: {status}", cell.label);
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let text = report.table();
    write_file(&dir.join("ablation.txt"), &text)?;
    write_file(&dir.join("ablation.json"), &json(&report))?;
    out.write_all(text.as_bytes()).map_err(out_err)?;
    if report.cells.iter().all(|c| !c.succeeded()) {
        return Err(CliError::Diverged("every ablation cell failed".into()));
    }
    Ok(())
}
