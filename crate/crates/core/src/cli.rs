//! Command-line driver: one JSON config, one subcommand per pipeline stage.
//!
//! Every stage reads its inputs from the config (and, for the later stages,
//! from files earlier stages left in `output_dir`) and publishes its outputs
//! atomically under `output_dir`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calibrate::{build_table, CalibrationTable};
use crate::degrade::{DegradationGrid, Family};
use crate::embed::{self, BackendDescriptor};
use crate::error::{Error, Result};
use crate::fixture;
use crate::lineup::{self, AccuracyCurve, EvalSummary, LineupPolicy, SubgroupRow, SUBGROUP_KEYS};
use crate::manifest::{self, DatasetManifest, ProbeFilter, Strictness};
use crate::report::{self, atomic_write, ReportBundle, SceneRow, Series, TaggedCurve};

#[derive(Debug, Parser)]
#[command(name = "forensic-lineup", version, about = "Lineup evaluation of face embeddings under image degradation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dot-path override applied before validation, e.g. `policy.rank_offset=10`.
    #[arg(long = "stage-override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a procedural dataset next to the configured manifest path.
    GenFixture,
    /// Embed every manifest image into `embeddings.emb`.
    Embed,
    /// Lineup accuracy, subgroup and scene-condition breakdowns.
    Eval,
    /// Accuracy curves over each configured degradation grid.
    Sweep,
    /// Accuracy and decoy similarity across rank offsets.
    RankSweep,
    /// Map real degradation levels onto synthetic ones.
    Calibrate,
    /// CSV tables, SVG plots and the run summary.
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureConfig {
    pub n_identities: usize,
    pub images_per_identity: usize,
    pub seed: u64,
}

/// One real/synthetic pair of curve files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationPair {
    pub real: PathBuf,
    pub synthetic: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub backend: BackendDescriptor,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub policy: LineupPolicy,
    #[serde(default)]
    pub probe_filter: ProbeFilter,
    #[serde(default = "default_grids")]
    pub grids: Vec<DegradationGrid>,
    /// Seed for degradation noise.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rank_offsets")]
    pub rank_offsets: Vec<usize>,
    #[serde(default)]
    pub fixture: Option<FixtureConfig>,
    #[serde(default)]
    pub calibrate: Vec<CalibrationPair>,
    #[serde(default = "default_true")]
    pub strict_manifest: bool,
}

fn default_grids() -> Vec<DegradationGrid> {
    Family::ALL
        .iter()
        .map(|&f| DegradationGrid::new(f, f.default_levels()).expect("default grids are valid"))
        .collect()
}

fn default_rank_offsets() -> Vec<usize> {
    vec![5, 15, 30]
}

fn default_true() -> bool {
    true
}

fn config_error(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

/// Sets `value` at a dot path, creating intermediate objects. Numeric
/// segments index into existing arrays.
pub fn apply_override(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(config_error(path, "empty segment in override path"));
    }
    let mut cur = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| config_error(path, format!("'{seg}' is not an array index")))?;
                let len = items.len();
                items
                    .get_mut(idx)
                    .ok_or_else(|| config_error(path, format!("index {idx} out of range for length {len}")))?
            }
            Value::Object(map) => map.entry(seg.to_string()).or_insert(Value::Null),
            other => {
                *other = Value::Object(Default::default());
                other.as_object_mut().unwrap().entry(seg.to_string()).or_insert(Value::Null)
            }
        };
        if last {
            *cur = value;
            return Ok(());
        }
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
    }
    unreachable!("non-empty path")
}

fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_error(spec, "override must look like key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

fn resolve_in(value: &mut Value, base: &Path) {
    if let Value::String(s) = value {
        let p = Path::new(s.as_str());
        if p.is_relative() {
            *s = base.join(p).to_string_lossy().into_owned();
        }
    }
}

/// Makes every path field absolute against `base`.
fn resolve_paths(root: &mut Value, base: &Path) {
    let Some(obj) = root.as_object_mut() else { return };
    for key in ["manifest", "output_dir"] {
        if let Some(v) = obj.get_mut(key) {
            resolve_in(v, base);
        }
    }
    if let Some(v) = obj.get_mut("backend").and_then(|b| b.get_mut("path")) {
        resolve_in(v, base);
    }
    if let Some(Value::Array(pairs)) = obj.get_mut("calibrate") {
        for pair in pairs {
            for key in ["real", "synthetic"] {
                if let Some(v) = pair.get_mut(key) {
                    resolve_in(v, base);
                }
            }
        }
    }
}

impl RunConfig {
    /// Validates a config document. Relative paths resolve against `base`.
    pub fn from_value(mut doc: Value, base: &Path) -> Result<Self> {
        resolve_paths(&mut doc, base);
        let cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
            let key = e.path().to_string();
            config_error(key, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.policy
            .validate()
            .map_err(|e| config_error("policy.rank_offset", e.to_string()))?;
        self.probe_filter
            .validate()
            .map_err(|e| config_error("probe_filter", e.to_string()))?;
        for (i, &n) in self.rank_offsets.iter().enumerate() {
            LineupPolicy::with_offset(n).map_err(|e| config_error(format!("rank_offsets[{i}]"), e.to_string()))?;
        }
        let mut families: Vec<Family> = self.grids.iter().map(|g| g.family()).collect();
        families.sort();
        if families.windows(2).any(|w| w[0] == w[1]) {
            return Err(config_error("grids", "each family may have at most one grid"));
        }
        Ok(())
    }

    pub fn strictness(&self) -> Strictness {
        if self.strict_manifest {
            Strictness::Strict
        } else {
            Strictness::Lenient
        }
    }
}

/// Reads, overrides and validates a config file.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| config_error("", format!("{}: {e}", path.display())))?;
    for spec in overrides {
        let (key, value) = parse_override(spec)?;
        apply_override(&mut doc, &key, value)?;
    }
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    RunConfig::from_value(doc, base)
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}

fn load(cfg: &RunConfig) -> Result<DatasetManifest> {
    manifest::load_manifest_with(&cfg.manifest, cfg.strictness())
}

/// Everything `eval` learns, kept for `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub summary: EvalSummary,
    pub skipped: Vec<lineup::SkippedProbe>,
    pub subgroups: Vec<SubgroupRow>,
    pub scene: Vec<SceneRow>,
}

/// Calibration of one family, with the curves it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub table: CalibrationTable,
    pub real: AccuracyCurve,
    pub synthetic: AccuracyCurve,
}

fn gen_fixture_stage(cfg: &RunConfig) -> Result<()> {
    let f = cfg
        .fixture
        .as_ref()
        .ok_or_else(|| config_error("fixture", "gen-fixture needs a fixture section"))?;
    if cfg.manifest.file_name().and_then(|n| n.to_str()) != Some("manifest.jsonl") {
        return Err(config_error("manifest", "gen-fixture writes manifest.jsonl; point manifest at that file name"));
    }
    let dir = cfg.manifest.parent().unwrap_or(Path::new("."));
    let m = fixture::gen_fixture(f.n_identities, f.images_per_identity, f.seed, dir)?;
    log::info!("wrote {} images for {} identities to {}", m.records.len(), m.identities().len(), dir.display());
    Ok(())
}

fn embed_stage(cfg: &RunConfig) -> Result<()> {
    let m = load(cfg)?;
    let archive = embed::batch_embed(&m, &cfg.backend, None)?;
    embed::save_archive(&archive, &out(cfg, "embeddings.emb"))
}

fn eval_stage(cfg: &RunConfig) -> Result<()> {
    let m = load(cfg)?;
    m.check_lineup_feasible()?;
    let archive = embed::batch_embed(&m, &cfg.backend, None)?;
    let probes = manifest::filter_probes(&m, &cfg.probe_filter);
    if probes.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let result = lineup::evaluate_probes(&m, &archive, &cfg.policy, &probes)?;
    let mut subgroups = Vec::new();
    for key in SUBGROUP_KEYS {
        subgroups.extend(lineup::subgroup_accuracy(&result, key)?);
    }

    let threshold = cfg.probe_filter.rotation_threshold;
    let conditions = [
        ProbeFilter::default(),
        ProbeFilter::occluded(),
        ProbeFilter::rotated(),
        ProbeFilter::low_light(),
        ProbeFilter::all_three(),
    ];
    let mut scene = Vec::new();
    for (name, filter) in report::SCENE_CONDITIONS.iter().zip(conditions) {
        let filter = ProbeFilter {
            rotation_threshold: threshold,
            ..filter
        };
        let probes = manifest::filter_probes(&m, &filter);
        match lineup::evaluate_probes(&m, &archive, &cfg.policy, &probes) {
            Ok(r) => scene.push(SceneRow::from_result(*name, &r)),
            Err(Error::EmptyEvaluation) => log::warn!("scene condition {name} has no probes; omitted"),
            Err(e) => return Err(e),
        }
    }

    atomic_write(&out(cfg, "lineups.csv"), result.lineups_csv().as_bytes())?;
    write_json(
        &out(cfg, "eval.json"),
        &EvalRecord {
            summary: result.summary(),
            skipped: result.skipped.clone(),
            subgroups,
            scene,
        },
    )
}

fn sweep_stage(cfg: &RunConfig) -> Result<()> {
    if cfg.grids.is_empty() {
        return Err(config_error("grids", "sweep needs at least one grid"));
    }
    let m = load(cfg)?;
    let curves = cfg
        .grids
        .iter()
        .map(|g| lineup::sweep_degradation(&m, &cfg.backend, g, &cfg.policy, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    for c in &curves {
        write_json(&out(cfg, &format!("curve_{}.json", c.family)), c)?;
    }
    Ok(())
}

fn rank_sweep_stage(cfg: &RunConfig) -> Result<()> {
    let m = load(cfg)?;
    let points = lineup::sweep_rank_offset(&m, &cfg.backend, &cfg.policy, &cfg.rank_offsets)?;
    let mut csv = String::from("rank_offset,accuracy,n,mean_decoy_similarity\n");
    for p in points {
        csv.push_str(&format!(
            "{},{},{},{:.6}\n",
            p.rank_offset,
            report::fmt_acc(p.accuracy),
            p.n_probes,
            p.mean_decoy_similarity
        ));
    }
    atomic_write(&out(cfg, "rank_offsets.csv"), csv.as_bytes())
}

fn calibrate_stage(cfg: &RunConfig) -> Result<()> {
    if cfg.calibrate.is_empty() {
        return Err(config_error("calibrate", "calibrate needs at least one real/synthetic curve pair"));
    }
    let mut records = Vec::with_capacity(cfg.calibrate.len());
    for pair in &cfg.calibrate {
        let real: AccuracyCurve = read_json(&pair.real)?;
        let synthetic: AccuracyCurve = read_json(&pair.synthetic)?;
        let table = build_table(&real, &synthetic)?;
        records.push(CalibrationRecord { table, real, synthetic });
    }
    let tables: Vec<CalibrationTable> = records.iter().map(|r| r.table.clone()).collect();
    atomic_write(&out(cfg, "calibration.csv"), report::calibration_csv(&tables).as_bytes())?;
    write_json(&out(cfg, "calibration.json"), &records)
}

/// Curves for the report: calibration results when present, otherwise the
/// sweep curves in `output_dir` as the real series.
fn collect_curves(cfg: &RunConfig) -> Result<Vec<TaggedCurve>> {
    let cal_path = out(cfg, "calibration.json");
    let mut curves = Vec::new();
    if cal_path.exists() {
        let records: Vec<CalibrationRecord> = read_json(&cal_path)?;
        for r in records {
            let n = r.synthetic.points.iter().map(|p| p.n_probes).max().unwrap_or(0);
            let calibrated = r.table.as_curve(&r.synthetic.dataset_id, n);
            curves.push(TaggedCurve { series: Series::Real, curve: r.real });
            curves.push(TaggedCurve { series: Series::Synthetic, curve: r.synthetic });
            curves.push(TaggedCurve { series: Series::Calibrated, curve: calibrated });
        }
    }
    for g in &cfg.grids {
        let path = out(cfg, &format!("curve_{}.json", g.family()));
        if path.exists() && !curves.iter().any(|t| t.curve.family == g.family()) {
            curves.push(TaggedCurve {
                series: Series::Real,
                curve: read_json(&path)?,
            });
        }
    }
    Ok(curves)
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub backend_id: String,
    pub chance: f64,
    pub families: Vec<Family>,
    pub eval: Option<EvalSummary>,
    pub artifacts: Vec<String>,
}

fn report_stage(cfg: &RunConfig) -> Result<()> {
    let eval_path = out(cfg, "eval.json");
    let eval: Option<EvalRecord> = if eval_path.exists() { Some(read_json(&eval_path)?) } else { None };
    let bundle = ReportBundle {
        backend_id: eval.as_ref().map(|e| e.summary.backend_id.clone()).unwrap_or_else(|| backend_label(&cfg.backend)),
        curves: collect_curves(cfg)?,
        subgroups: eval.as_ref().map(|e| e.subgroups.clone()).unwrap_or_default(),
        scene: eval.as_ref().map(|e| e.scene.clone()).unwrap_or_default(),
    };

    let mut artifacts = vec!["results.csv".to_string()];
    report::write_results_csv(&bundle, &out(cfg, "results.csv"))?;
    if eval.is_some() {
        atomic_write(&out(cfg, "subgroups.csv"), report::subgroups_csv(&bundle.subgroups).as_bytes())?;
        artifacts.push("subgroups.csv".into());
        if !bundle.scene.is_empty() {
            report::write_scene_table(&bundle.scene, &out(cfg, "scene.csv"))?;
            artifacts.push("scene.csv".into());
        }
    }
    let families = bundle.families();
    for &f in &families {
        let name = format!("curve_{f}.svg");
        report::render_curves_svg(&bundle, f, &out(cfg, &name))?;
        artifacts.push(name);
    }
    artifacts.push("summary.json".into());
    write_json(
        &out(cfg, "summary.json"),
        &RunSummary {
            config: cfg.clone(),
            backend_id: bundle.backend_id.clone(),
            chance: crate::stats::CHANCE,
            families,
            eval: eval.map(|e| e.summary),
            artifacts,
        },
    )
}

fn backend_label(b: &BackendDescriptor) -> String {
    match b {
        BackendDescriptor::Baseline { seed } => embed::BaselineEmbedder::new(*seed).backend_id(),
        BackendDescriptor::Archive { path } => format!("archive:{}", path.display()),
    }
}

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::GenFixture => gen_fixture_stage(cfg),
        Command::Embed => embed_stage(cfg),
        Command::Eval => eval_stage(cfg),
        Command::Sweep => sweep_stage(cfg),
        Command::RankSweep => rank_sweep_stage(cfg),
        Command::Calibrate => calibrate_stage(cfg),
        Command::Report => report_stage(cfg),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(k) = cli.jobs {
        if k == 0 {
            return Err(config_error("--jobs", "must be at least 1"));
        }
        // Fails only if a pool already exists, in which case it keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| config_error("--config", "a config file is required"))?;
    let cfg = parse_config(path, &cli.overrides)?;
    dispatch(cli.command, &cfg)
}

/// One-line JSON error for stderr.
pub fn error_line(e: &Error) -> String {
    serde_json::json!({
        "error": e.kind(),
        "exit_code": e.exit_code(),
        "message": e.to_string(),
    })
    .to_string()
}
