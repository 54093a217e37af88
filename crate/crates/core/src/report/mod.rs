//! Run configuration, orchestration and artifacts.
//!
//! Config files are TOML restricted to dotted keys such as
//! `train.episodes = 50`; command-line overrides use the same paths
//! (`--train.episodes=10`). Every key must name a field of [`RunConfig`].

mod export;
mod mi;
mod plot;

pub use export::{read_metrics, read_trajectories, trajectory_json, write_metrics, MetricsRow, MetricsWriter, TrajectoryWriter, METRICS_HEADER};
pub use mi::{mutual_information, obs_bucket, OBS_BUCKETS};
pub use plot::{emit_plots, heat_fill, heatmap_chart, line_chart, trajectory_chart, visit_heatmap, PLOT_FILES};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::env::LayoutDocument;
use crate::error::{Error, Result};
use crate::marl::{Checkpoint, EvalSnapshot, ExperimentConfig, Trainer};

/// Environment variable that overrides `report.out_dir`.
pub const OUT_DIR_ENV: &str = "QNMARL_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    pub out_dir: PathBuf,
    pub plots: bool,
    /// Record per-episode wall-clock time. Off keeps `metrics.csv`
    /// byte-identical across runs.
    pub wall_clock: bool,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("runs/latest"), plots: true, wall_clock: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub report: ReportSettings,
}

impl RunConfig {
    fn to_flat(&self) -> Result<BTreeMap<String, Value>> {
        let mut root = match serde_json::to_value(&self.experiment)? {
            Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        root.insert("report".into(), serde_json::to_value(&self.report)?);
        let mut flat = BTreeMap::new();
        flatten("", &Value::Object(root), &mut flat);
        Ok(flat)
    }

    fn from_flat(flat: &BTreeMap<String, Value>) -> Result<Self> {
        let mut root = Map::new();
        for (k, v) in flat {
            let mut node = &mut root;
            let parts: Vec<&str> = k.split('.').collect();
            for p in &parts[..parts.len() - 1] {
                node = node
                    .entry(p.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("prefix is a section");
            }
            node.insert(parts[parts.len() - 1].to_string(), v.clone());
        }
        let report = root.remove("report").unwrap_or(Value::Object(Map::new()));
        let report = serde_json::from_value(report).map_err(|e| Error::config(format!("report: {e}")))?;
        let experiment = serde_json::from_value(Value::Object(root)).map_err(|e| Error::config(e.to_string()))?;
        Ok(Self { experiment, report })
    }

    /// Every settable key with its default, in sorted order.
    pub fn default_keys() -> Vec<(String, String)> {
        RunConfig::default()
            .to_flat()
            .expect("defaults serialize")
            .into_iter()
            .map(|(k, v)| (k, v.to_string()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn toml_to_json(v: toml::Value) -> Result<Value> {
    Ok(match v {
        toml::Value::String(s) => Value::String(s),
        toml::Value::Integer(i) => Value::from(i),
        toml::Value::Float(f) => serde_json::Number::from_f64(f)
            .map(Value::Number)
            .ok_or_else(|| Error::config(format!("non-finite number {f}")))?,
        toml::Value::Boolean(b) => Value::Bool(b),
        toml::Value::Array(a) => Value::Array(a.into_iter().map(toml_to_json).collect::<Result<_>>()?),
        toml::Value::Table(t) => Value::Object(t.into_iter().map(|(k, v)| Ok((k, toml_to_json(v)?))).collect::<Result<_>>()?),
        toml::Value::Datetime(d) => Value::String(d.to_string()),
    })
}

fn unknown_key(key: &str, known: &BTreeMap<String, Value>) -> Error {
    let leaf = |k: &str| k.rsplit('.').next().unwrap_or(k).to_string();
    let best = known
        .keys()
        .map(|k| {
            let d = strsim::levenshtein(key, k).min(strsim::levenshtein(&leaf(key), &leaf(k)));
            (d, k)
        })
        .min();
    match best {
        Some((d, k)) if d <= 3 => Error::config(format!("unknown key `{key}` (did you mean `{k}`?)")),
        _ => Error::config(format!("unknown key `{key}`")),
    }
}

/// Scalar literal of a `--key=value` flag: a TOML value when it parses as
/// one, otherwise a bare string.
fn parse_flag_value(raw: &str) -> Result<Value> {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => toml_to_json(t.remove("v").expect("single key")),
        Err(_) => Ok(Value::String(raw.to_string())),
    }
}

/// Defaults, then the file, then `overrides` in order; the last setting of a
/// key wins. The result is validated.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let defaults = RunConfig::default().to_flat()?;
    let mut flat = defaults.clone();
    let mut set = |key: &str, v: Value| -> Result<()> {
        let slot = flat.get_mut(key).ok_or_else(|| unknown_key(key, &defaults))?;
        *slot = v;
        Ok(())
    };
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
        let table: toml::Table = text.parse().map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
        let mut file_flat = BTreeMap::new();
        flatten("", &toml_to_json(toml::Value::Table(table))?, &mut file_flat);
        for (k, v) in file_flat {
            set(&k, v)?;
        }
    }
    for (k, raw) in overrides {
        let key = k.trim_start_matches("--");
        set(key, parse_flag_value(raw)?)?;
    }
    let cfg = RunConfig::from_flat(&flat)?;
    cfg.validate()?;
    Ok(cfg)
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub episodes: usize,
    pub evals: Vec<EvalSnapshot>,
    pub files: Vec<PathBuf>,
}

pub fn eval_line(s: &EvalSnapshot) -> String {
    format!(
        "eval @ episode {:>4}: reward {:>8.4}  violation rate {:.4}  coverage {:.3}  KL {:.4} nats  entropy {:.3} nats",
        s.episode, s.mean_reward, s.violation_rate, s.coverage, s.kl_nats, s.spike_entropy
    )
}

/// Trains and writes `metrics.csv`, `trajectories.jsonl`, `world.json`,
/// `checkpoint.json` and, if enabled, the plots. Files written before a
/// failure are kept; a checkpoint is written on training errors too.
pub fn run(config: &RunConfig, mut progress: impl FnMut(&str)) -> Result<RunSummary> {
    config.validate()?;
    let dir = &config.report.out_dir;
    std::fs::create_dir_all(dir)?;
    let mut trainer = Trainer::new(config.experiment.clone())?;
    trainer.measure_wall_clock = config.report.wall_clock;

    let world_path = dir.join("world.json");
    let doc: LayoutDocument = trainer.layout().to_document();
    std::fs::write(&world_path, serde_json::to_string(&doc)?)?;
    let metrics_path = dir.join("metrics.csv");
    let traj_path = dir.join("trajectories.jsonl");
    let mut metrics = MetricsWriter::create(&metrics_path)?;
    let mut traj = TrajectoryWriter::create(&traj_path)?;

    let dims = config.experiment.world.dims;
    let mut rows = Vec::new();
    let mut heat = vec![vec![0u32; dims[1]]; dims[0]];
    let mut last_trajectories = Vec::new();
    let mut sink_err = None;
    let trained = trainer.train(|record, trajectories, eval| {
        if sink_err.is_some() {
            return;
        }
        let row = MetricsRow::from_record(record);
        let res = metrics.write(&row).and_then(|_| trajectories.iter().try_for_each(|t| traj.write(t))).and_then(|_| traj.flush());
        if let Err(e) = res {
            sink_err = Some(e);
            return;
        }
        rows.push(row);
        for row in visit_heatmap(trajectories, [dims[0], dims[1]]).iter().zip(heat.iter_mut()) {
            row.1.iter_mut().zip(row.0).for_each(|(h, c)| *h += c);
        }
        last_trajectories = trajectories.to_vec();
        if let Some(s) = eval {
            progress(&eval_line(s));
        }
    });
    let checkpoint_path = dir.join("checkpoint.json");
    std::fs::write(&checkpoint_path, trainer.checkpoint().to_json()?)?;
    trained?;
    if let Some(e) = sink_err {
        return Err(e);
    }

    let mut files = vec![metrics_path, traj_path, world_path, checkpoint_path];
    if config.report.plots {
        files.extend(emit_plots(dir, &rows, &last_trajectories, &heat)?);
    }
    Ok(RunSummary { episodes: trainer.episode(), evals: trainer.evals().to_vec(), files })
}

/// Loads a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}

/// Plots from an existing `metrics.csv`. Trajectory and heatmap figures are
/// added when `trajectories.jsonl` (and optionally `world.json`) sit next to it.
pub fn plot_from(metrics_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = read_metrics(metrics_csv)?;
    let base = metrics_csv.parent().unwrap_or(Path::new("."));
    let traj_path = base.join("trajectories.jsonl");
    let trajectories = if traj_path.exists() { read_trajectories(&traj_path)? } else { Vec::new() };
    let world_path = base.join("world.json");
    let dims = if world_path.exists() {
        let doc: LayoutDocument = serde_json::from_str(&std::fs::read_to_string(&world_path)?)?;
        [doc.dims[0], doc.dims[1]]
    } else {
        let ext = |i: usize| trajectories.iter().flat_map(|t| &t.path).map(|p| p[i].max(0) as usize + 1).max().unwrap_or(1);
        [ext(0), ext(1)]
    };
    let heat = visit_heatmap(&trajectories, dims);
    std::fs::create_dir_all(out_dir)?;
    emit_plots(out_dir, &rows, &trajectories, &heat)
}
