//! Config-driven end-to-end runs and cumulative ablations.
//!
//! Stage order: ingest, split, adversarial audit and filtering, lattice
//! denoising, categorical encoding, training, evaluation. Every stage writes
//! its artifacts under the output directory as soon as it finishes.
//!
//! `report.json` and every other artifact depend only on the config, seed
//! and input data. Wall-clock timings are kept out of it, in `timings.json`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::advval::{self, AdvConfig, AdvReport};
use crate::denoise::{self, CorrelationMatrix, DeltaEstimate, DenoiseConfig};
use crate::encoders::{self, EncoderKind, EncoderSpec, EncoderState, FreqWindow, Target};
use crate::gbdt::{self, GbdtModel, GbdtParams, StopReason, TrainingHistory};
use crate::metrics::{self, EvalSummary};
use crate::table::{self, ColumnRole, Schema, SplitPlan, Table};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Split,
    Adversarial,
    Denoise,
    Encode,
    Train,
    Evaluate,
    Export,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Split => "split",
            Stage::Adversarial => "adversarial",
            Stage::Denoise => "denoise",
            Stage::Encode => "encode",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Export => "export",
        };
        f.write_str(name)
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: BoxError,
    },
    #[error("unknown export format `{0}`; supported formats: {formats}", formats = EXPORT_FORMATS.join(", "))]
    UnknownFormat(String),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn at<E: Into<BoxError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

fn fail(stage: Stage, message: impl Into<String>) -> PipelineError {
    PipelineError::Stage {
        stage,
        source: message.into().into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Delimited text, or a binary table (`.rlt`) holding every day.
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            train: PathBuf::from("train.csv"),
            test: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Unset fields are derived from the inputs: the validation day is the last
/// day of the train input, training days are all earlier days of that input
/// and the test day is the single day of the test input.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_days: Option<Vec<u16>>,
    pub valid_day: Option<u16>,
    pub test_day: Option<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub adversarial: bool,
    /// Also audit engineered columns after encoding and drop shifted ones.
    pub reaudit_engineered: bool,
    pub denoise: bool,
    pub frequency: bool,
    pub target_encoding: bool,
    pub train: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            adversarial: true,
            reaudit_engineered: false,
            denoise: true,
            frequency: true,
            target_encoding: true,
            train: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeConfig {
    /// Categorical features to encode; every categorical input feature when
    /// absent. Quantized lattice features are never encoded implicitly.
    pub features: Option<Vec<String>>,
    pub frequency_window: FreqWindow,
    pub targets: Vec<Target>,
    pub smoothing: f64,
    pub drop_originals: bool,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            features: None,
            frequency_window: FreqWindow::PrevWeek,
            targets: vec![Target::Click, Target::Install],
            smoothing: 1.0,
            drop_originals: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationStep {
    Vanilla,
    Adversarial,
    Frequency,
    Denoise,
    TargetEncoding,
}

impl AblationStep {
    pub fn label(self) -> &'static str {
        match self {
            AblationStep::Vanilla => "vanilla",
            AblationStep::Adversarial => "+adversarial",
            AblationStep::Frequency => "+frequency",
            AblationStep::Denoise => "+denoise",
            AblationStep::TargetEncoding => "+target_encoding",
        }
    }

    fn set(self, stages: &mut Stages, on: bool) {
        match self {
            AblationStep::Vanilla => {}
            AblationStep::Adversarial => stages.adversarial = on,
            AblationStep::Frequency => stages.frequency = on,
            AblationStep::Denoise => stages.denoise = on,
            AblationStep::TargetEncoding => stages.target_encoding = on,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    /// Schema JSON; required for delimited input.
    pub schema: Option<PathBuf>,
    pub split: SplitConfig,
    pub stages: Stages,
    pub adversarial: AdvConfig,
    pub denoise: DenoiseConfig,
    pub encoders: EncodeConfig,
    pub gbdt: GbdtParams,
    pub ablation: Vec<AblationStep>,
    /// Overrides the seeds of the adversarial and GBDT sections.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            schema: None,
            split: SplitConfig::default(),
            stages: Stages::default(),
            adversarial: AdvConfig::default(),
            denoise: DenoiseConfig::default(),
            encoders: EncodeConfig::default(),
            gbdt: GbdtParams::default(),
            ablation: vec![
                AblationStep::Vanilla,
                AblationStep::Frequency,
                AblationStep::Denoise,
                AblationStep::TargetEncoding,
            ],
            seed: 0,
        }
    }
}

/// Sets the first object member whose key matches a prefix of `path`
/// (joined by `_`), recursing into nested objects. Longer keys win.
fn set_path(value: &mut Value, path: &str, raw: &str) -> bool {
    let Value::Object(map) = value else {
        return false;
    };
    let mut keys: Vec<String> = map.keys().cloned().collect();
    keys.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    for key in keys {
        if path == key {
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            map.insert(key, parsed);
            return true;
        }
        if let Some(rest) = path.strip_prefix(&key).and_then(|r| r.strip_prefix('_')) {
            if set_path(map.get_mut(&key).expect("key listed above"), rest, raw) {
                return true;
            }
        }
    }
    false
}

impl PipelineConfig {
    /// Parses JSON and applies `RLT_<SECTION>_<KEY>` overrides from `env`.
    /// Values are read as JSON when they parse, as strings otherwise.
    pub fn from_json_with_env<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let parsed: PipelineConfig = serde_json::from_str(text).map_err(at(Stage::Config))?;
        let mut value = serde_json::to_value(&parsed).map_err(at(Stage::Config))?;
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix("RLT_").map(|rest| (rest.to_ascii_lowercase(), v)))
            .collect();
        overrides.sort();
        for (path, raw) in overrides {
            if set_path(&mut value, &path, &raw) {
                info!("config override {path} = {raw}");
            } else {
                warn!(
                    "ignoring environment override RLT_{}: no such config key",
                    path.to_ascii_uppercase()
                );
            }
        }
        let config: PipelineConfig = serde_json::from_value(value).map_err(at(Stage::Config))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file, applying overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| fail(Stage::Config, format!("{}: {e}", path.display())))?;
        Self::from_json_with_env(&text, std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        self.adversarial.validate().map_err(at(Stage::Config))?;
        self.denoise.validate().map_err(at(Stage::Config))?;
        self.gbdt.validate().map_err(at(Stage::Config))?;
        if !(self.encoders.smoothing > 0.0 && self.encoders.smoothing.is_finite()) {
            return Err(fail(Stage::Config, "encoders.smoothing must be positive"));
        }
        Ok(())
    }

    /// Copy with the top-level seed pushed into every stochastic section.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.adversarial.seed = self.seed;
        c.gbdt.seed = self.seed;
        c
    }
}

/// Runs `f` on a pool with `threads` workers, or on the global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(at(Stage::Config))?;
            Ok(pool.install(f))
        }
    }
}

/// Ingested data with its resolved split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub table: Table,
    pub plan: SplitPlan,
}

fn is_binary_table(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "rlt")
}

fn load_part(path: &Path) -> Result<Table> {
    table::load_binary(path).map_err(at(Stage::Ingest))
}

/// Reads the configured inputs and resolves the day split.
pub fn prepare(config: &PipelineConfig) -> Result<Prepared> {
    let paths = &config.paths;
    let mut parts = Vec::new();
    if is_binary_table(&paths.train) {
        parts.push(load_part(&paths.train)?);
        if let Some(test) = &paths.test {
            parts.push(load_part(test)?);
        }
    } else {
        let schema_path = config
            .schema
            .as_ref()
            .ok_or_else(|| fail(Stage::Ingest, "delimited input needs a schema file"))?;
        let schema = Schema::from_json_file(schema_path).map_err(at(Stage::Ingest))?;
        let mut files = vec![paths.train.as_path()];
        files.extend(paths.test.as_deref());
        parts = table::ingest_csv_files(&files, &schema).map_err(at(Stage::Ingest))?;
    }
    parts[0].schema().validate_for_training().map_err(at(Stage::Ingest))?;
    let train_days = parts[0].day_set();
    let test_days = parts.get(1).map(Table::day_set).unwrap_or_default();
    let table = Table::concat(&parts).map_err(at(Stage::Ingest))?;
    let plan = resolve_plan(&config.split, &train_days, &test_days)?;
    info!(
        "ingested {} rows; train days {:?}, valid day {}, test day {:?}",
        table.n_rows(),
        plan.train_days,
        plan.valid_day,
        plan.test_day
    );
    Ok(Prepared { table, plan })
}

fn resolve_plan(split: &SplitConfig, train_days: &BTreeSet<u16>, test_days: &BTreeSet<u16>) -> Result<SplitPlan> {
    let valid_day = match split.valid_day {
        Some(d) => d,
        None => *train_days
            .last()
            .ok_or_else(|| fail(Stage::Split, "train input has no rows"))?,
    };
    let train: Vec<u16> = match &split.train_days {
        Some(days) => days.clone(),
        None => train_days.iter().copied().filter(|&d| d < valid_day).collect(),
    };
    let test_day = match split.test_day {
        Some(d) => Some(d),
        None if test_days.len() > 1 => {
            return Err(fail(
                Stage::Split,
                format!("test input spans days {test_days:?}; set split.test_day"),
            ))
        }
        None => test_days.first().copied(),
    };
    SplitPlan::new(train, valid_day, test_day).map_err(at(Stage::Split))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n_rows: usize,
    pub train_rows: usize,
    pub valid_rows: usize,
    pub test_rows: usize,
    pub plan: SplitPlan,
    pub input_features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseSection {
    pub estimates: Vec<DeltaEstimate>,
    /// Detected features grouped by agreeing step.
    pub groups: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSummary {
    pub feature: String,
    pub output: String,
    #[serde(flatten)]
    pub kind: EncoderKind,
    pub fitted_days: usize,
    pub categories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSection {
    pub features: Vec<String>,
    pub best_iteration: usize,
    pub stop_reason: StopReason,
    pub curve: TrainingHistory,
    /// `(feature, split count)`, most used first.
    pub importance: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSection {
    pub valid: EvalSummary,
    /// Pseudo-test day scores, the stand-in for a leaderboard.
    pub test: Option<EvalSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub toolkit_version: String,
    pub config: PipelineConfig,
    pub data: DataSummary,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub adversarial: Option<AdvReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reaudit: Option<AdvReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub correlation: Option<CorrelationMatrix>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub denoise: Option<DenoiseSection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub encoders: Option<Vec<EncoderSummary>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub training: Option<TrainingSection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<MetricsSection>,
    /// Written to `timings.json`, not to the report.
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

struct Timer {
    timings: Vec<StageTiming>,
    start: Instant,
}

impl Timer {
    fn new() -> Self {
        Self {
            timings: Vec::new(),
            start: Instant::now(),
        }
    }

    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage,
            seconds: (now - self.start).as_secs_f64(),
        });
        self.start = now;
    }
}

fn write_file(stage: Stage, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| fail(stage, format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(stage: Stage, value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(at(stage))?;
    s.push('\n');
    Ok(s)
}

/// Headerless `row_id,probability` lines with six decimals.
pub fn predictions_csv(row_ids: &[String], probabilities: &[f64]) -> String {
    let mut out = String::with_capacity(row_ids.len() * 16);
    for (id, p) in row_ids.iter().zip(probabilities) {
        out.push_str(&format!("{id},{p:.6}\n"));
    }
    out
}

fn train_part(table: &Table, plan: &SplitPlan) -> Result<Table> {
    Ok(table::split(table, plan).map_err(at(Stage::Split))?.train)
}

/// Runs the configured pipeline on already ingested data. `audit_cache`
/// holds a previous adversarial report on the same data and config, reused
/// when present and filled when computed.
pub fn execute(
    config: &PipelineConfig,
    prepared: &Prepared,
    output_dir: &Path,
    audit_cache: &mut Option<AdvReport>,
) -> Result<RunReport> {
    let config = config.resolved();
    config.validate()?;
    std::fs::create_dir_all(output_dir).map_err(|e| fail(Stage::Export, format!("{}: {e}", output_dir.display())))?;
    let out = |name: &str| output_dir.join(name);
    let mut timer = Timer::new();
    let plan = &prepared.plan;
    let stages = config.stages;

    let parts = table::split(&prepared.table, plan).map_err(at(Stage::Split))?;
    let input_features = prepared.table.feature_names();
    let mut report = RunReport {
        toolkit_version: TOOLKIT_VERSION.to_string(),
        config: config.clone(),
        data: DataSummary {
            n_rows: prepared.table.n_rows(),
            train_rows: parts.train.n_rows(),
            valid_rows: parts.valid.n_rows(),
            test_rows: parts.test.n_rows(),
            plan: plan.clone(),
            input_features: input_features.clone(),
        },
        adversarial: None,
        reaudit: None,
        correlation: None,
        denoise: None,
        encoders: None,
        training: None,
        metrics: None,
        timings: Vec::new(),
    };
    if parts.train.is_empty() {
        return Err(fail(Stage::Split, "no training rows"));
    }
    let audit_side = if parts.test.is_empty() {
        &parts.valid
    } else {
        &parts.test
    };
    timer.lap(Stage::Split);

    let mut table = prepared.table.clone();
    if stages.adversarial {
        let adv = match audit_cache {
            Some(cached) if cached.config == config.adversarial => cached.clone(),
            _ => {
                let fresh =
                    advval::audit(&parts.train, audit_side, &config.adversarial).map_err(at(Stage::Adversarial))?;
                *audit_cache = Some(fresh.clone());
                fresh
            }
        };
        write_file(
            Stage::Adversarial,
            &out("adversarial.json"),
            to_json(Stage::Adversarial, &adv)?,
        )?;
        write_file(Stage::Adversarial, &out("adversarial.csv"), adv.to_csv())?;
        write_file(Stage::Adversarial, &out("adversarial.svg"), adv.to_svg())?;
        table = advval::filter_features(&adv, &table);
        report.adversarial = Some(adv);
        timer.lap(Stage::Adversarial);
    }

    let continuous: Vec<String> = table
        .iter()
        .filter(|(s, _)| s.role == ColumnRole::Continuous)
        .map(|(s, _)| s.name.clone())
        .collect();
    if continuous.len() >= 2 {
        let train = train_part(&table, plan)?;
        let matrix = denoise::correlation_matrix(&train, &continuous).map_err(at(Stage::Denoise))?;
        write_file(Stage::Denoise, &out("correlation.csv"), matrix.to_csv())?;
        report.correlation = Some(matrix);
    }

    let categorical_inputs = encoders::categorical_features(&table);
    if stages.denoise {
        let mut dcfg = config.denoise.clone();
        if let Some(list) = &dcfg.features {
            let kept: Vec<String> = list.iter().filter(|f| table.column(f).is_some()).cloned().collect();
            if kept.len() != list.len() {
                warn!("denoise skips features removed by the adversarial filter");
            }
            dcfg.features = Some(kept);
        }
        let train = train_part(&table, plan)?;
        let estimates = denoise::detect_all(&train, &dcfg).map_err(at(Stage::Denoise))?;
        table = denoise::apply(&table, &estimates, dcfg.as_categorical).map_err(at(Stage::Denoise))?;
        let section = DenoiseSection {
            groups: denoise::group_deltas(&estimates),
            estimates,
        };
        write_file(Stage::Denoise, &out("deltas.json"), to_json(Stage::Denoise, &section)?)?;
        report.denoise = Some(section);
        timer.lap(Stage::Denoise);
    }

    if stages.frequency || stages.target_encoding {
        let features: Vec<String> = match &config.encoders.features {
            Some(list) => list.iter().filter(|f| table.column(f).is_some()).cloned().collect(),
            None => categorical_inputs,
        };
        let mut specs = Vec::new();
        for feature in &features {
            if stages.frequency {
                specs.push(EncoderSpec {
                    feature: feature.clone(),
                    kind: EncoderKind::Frequency {
                        window: config.encoders.frequency_window,
                    },
                });
            }
            if stages.target_encoding {
                for &target in &config.encoders.targets {
                    specs.push(EncoderSpec {
                        feature: feature.clone(),
                        kind: EncoderKind::Target {
                            target,
                            smoothing: config.encoders.smoothing,
                        },
                    });
                }
            }
        }
        let states: Vec<EncoderState> = specs
            .iter()
            .map(|s| encoders::fit(&table, s))
            .collect::<Result<_, _>>()
            .map_err(at(Stage::Encode))?;
        table = encoders::encode_table(&table, &states, config.encoders.drop_originals).map_err(at(Stage::Encode))?;
        write_file(Stage::Encode, &out("encoders.json"), to_json(Stage::Encode, &states)?)?;
        report.encoders = Some(
            states
                .iter()
                .map(|s| EncoderSummary {
                    feature: s.feature.clone(),
                    output: s.output_name(),
                    kind: s.kind.clone(),
                    fitted_days: s.days.len(),
                    categories: s.dictionary.len(),
                })
                .collect(),
        );

        if stages.reaudit_engineered && stages.adversarial {
            let engineered: Vec<String> = states.iter().map(EncoderState::output_name).collect();
            let encoded = table::split(&table, plan).map_err(at(Stage::Split))?;
            let side = if encoded.test.is_empty() {
                &encoded.valid
            } else {
                &encoded.test
            };
            let re = advval::audit_features(&encoded.train, side, &engineered, &config.adversarial)
                .map_err(at(Stage::Adversarial))?;
            write_file(Stage::Adversarial, &out("reaudit.csv"), re.to_csv())?;
            table = advval::filter_features(&re, &table);
            report.reaudit = Some(re);
        }
        timer.lap(Stage::Encode);
    }

    if stages.train {
        let parts = table::split(&table, plan).map_err(at(Stage::Split))?;
        let features = table.feature_names();
        let model = gbdt::fit(&config.gbdt, &parts.train, &parts.valid, &features).map_err(at(Stage::Train))?;
        write_file(Stage::Train, &out("model.json"), model.to_json())?;
        timer.lap(Stage::Train);

        let valid_metrics = score_part(&model, &parts.valid, &out("predictions_valid.csv"))?
            .ok_or_else(|| fail(Stage::Evaluate, "validation day has no install labels"))?;
        let test_metrics = if parts.test.is_empty() {
            None
        } else {
            score_part(&model, &parts.test, &out("predictions_test.csv"))?
        };
        let importance = model.feature_importance();
        let section = TrainingSection {
            features,
            best_iteration: model.best_iteration,
            stop_reason: model.history.stop_reason,
            curve: model.history.clone(),
            importance,
        };
        write_file(
            Stage::Evaluate,
            &out("importance.csv"),
            importance_csv(&section.importance),
        )?;
        write_file(
            Stage::Evaluate,
            &out("importance.svg"),
            importance_svg(&section.importance),
        )?;
        write_file(Stage::Evaluate, &out("training_curve.csv"), curve_csv(&section.curve))?;
        info!(
            "valid logloss {:.6} auc {:.4} nce {:.6}",
            valid_metrics.logloss, valid_metrics.auc, valid_metrics.nce
        );
        report.training = Some(section);
        report.metrics = Some(MetricsSection {
            valid: valid_metrics,
            test: test_metrics,
        });
        timer.lap(Stage::Evaluate);
    }

    write_file(Stage::Export, &out("report.json"), to_json(Stage::Export, &report)?)?;
    timer.lap(Stage::Export);
    report.timings = timer.timings;
    write_file(
        Stage::Export,
        &out("timings.json"),
        to_json(Stage::Export, &report.timings)?,
    )?;
    Ok(report)
}

/// Writes predictions for one part and scores them when labels exist.
fn score_part(model: &GbdtModel, part: &Table, path: &Path) -> Result<Option<EvalSummary>> {
    let probabilities = model.predict(part).map_err(at(Stage::Evaluate))?;
    let ids: Vec<String> = match part.row_ids() {
        Some(ids) => ids.to_vec(),
        None => (0..part.n_rows()).map(|i| i.to_string()).collect(),
    };
    write_file(Stage::Evaluate, path, predictions_csv(&ids, &probabilities))?;
    match part.install_labels() {
        Some(labels) => Ok(Some(
            metrics::summarize(labels, &probabilities).map_err(at(Stage::Evaluate))?,
        )),
        None => Ok(None),
    }
}

/// Ingests the inputs and runs every enabled stage.
pub fn run(config: &PipelineConfig) -> Result<RunReport> {
    let mut timer = Timer::new();
    let prepared = prepare(config)?;
    timer.lap(Stage::Ingest);
    let mut report = execute(config, &prepared, &config.paths.output_dir, &mut None)?;
    timer.timings.append(&mut report.timings);
    report.timings = timer.timings;
    write_file(
        Stage::Export,
        &config.paths.output_dir.join("timings.json"),
        to_json(Stage::Export, &report.timings)?,
    )?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub valid_logloss: f64,
    pub valid_nce: f64,
    pub valid_auc: f64,
    pub test_logloss: Option<f64>,
    pub test_nce: Option<f64>,
}

/// `variant,valid_logloss,valid_nce,valid_auc,test_logloss,test_nce`.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    let mut out = String::from("variant,valid_logloss,valid_nce,valid_auc,test_logloss,test_nce\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{},{}\n",
            r.variant,
            r.valid_logloss,
            r.valid_nce,
            r.valid_auc,
            opt(r.test_logloss),
            opt(r.test_nce)
        ));
    }
    out
}

/// Cumulative ablation: every stage named in `steps` starts disabled, and
/// variant `i` enables the stages of steps `0..=i`. Each variant trains and
/// reports under `output_dir/variants/`. The ingested table is cached as a
/// binary file and read back once, so every variant sees identical data.
pub fn ablate(config: &PipelineConfig, steps: &[AblationStep]) -> Result<Vec<AblationRow>> {
    if steps.is_empty() {
        return Err(fail(Stage::Config, "ablation needs at least one variant"));
    }
    let out_dir = &config.paths.output_dir;
    let prepared = prepare(config)?;
    let cache = out_dir.join("cache").join("ingest.rlt");
    std::fs::create_dir_all(cache.parent().expect("has a parent")).map_err(|e| fail(Stage::Ingest, e.to_string()))?;
    table::save_binary(&prepared.table, &cache).map_err(at(Stage::Ingest))?;
    let prepared = Prepared {
        table: table::load_binary(&cache).map_err(at(Stage::Ingest))?,
        plan: prepared.plan,
    };

    let mut stages = config.stages;
    stages.train = true;
    for s in steps {
        s.set(&mut stages, false);
    }
    let mut audit_cache = None;
    let mut rows = Vec::with_capacity(steps.len());
    for (i, step) in steps.iter().enumerate() {
        step.set(&mut stages, true);
        let variant = PipelineConfig {
            stages,
            ..config.clone()
        };
        let dir = out_dir
            .join("variants")
            .join(format!("{}_{}", i + 1, step.label().trim_start_matches('+')));
        info!("ablation variant {} ({})", i + 1, step.label());
        let report = execute(&variant, &prepared, &dir, &mut audit_cache)?;
        let m = report.metrics.expect("training is enabled for every variant");
        rows.push(AblationRow {
            variant: step.label().to_string(),
            valid_logloss: m.valid.logloss,
            valid_nce: m.valid.nce,
            valid_auc: m.valid.auc,
            test_logloss: m.test.map(|t| t.logloss),
            test_nce: m.test.map(|t| t.nce),
        });
    }
    write_file(Stage::Export, &out_dir.join("ablation.csv"), ablation_csv(&rows))?;
    Ok(rows)
}

pub const EXPORT_FORMATS: [&str; 4] = ["json", "csv", "svg", "all"];

pub fn importance_csv(importance: &[(String, u64)]) -> String {
    let mut out = String::from("feature,splits\n");
    for (name, count) in importance {
        out.push_str(&format!("{name},{count}\n"));
    }
    out
}

/// Bar chart of the twenty most used features.
pub fn importance_svg(importance: &[(String, u64)]) -> String {
    let bars: Vec<(String, f64)> = importance
        .iter()
        .take(20)
        .map(|(n, c)| (n.clone(), *c as f64))
        .collect();
    crate::report::bar_chart_svg("Split-count feature importance", &bars, None)
}

/// `iteration,train_logloss,valid_logloss`; iteration 0 is the base score.
pub fn curve_csv(history: &TrainingHistory) -> String {
    let mut out = String::from("iteration,train_logloss,valid_logloss\n");
    for (i, (t, v)) in history.train_logloss.iter().zip(&history.valid_logloss).enumerate() {
        out.push_str(&format!("{i},{t:.9},{v:.9}\n"));
    }
    out
}

/// Writes the artifacts of `report` for one format (`json`, `csv`, `svg`)
/// or all of them. Returns the written paths.
pub fn report_export(report: &RunReport, format: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    if !EXPORT_FORMATS.contains(&format) {
        return Err(PipelineError::UnknownFormat(format.to_string()));
    }
    std::fs::create_dir_all(dir).map_err(|e| fail(Stage::Export, format!("{}: {e}", dir.display())))?;
    let want = |f: &str| format == "all" || format == f;
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    if want("json") {
        files.push((dir.join("report.json"), to_json(Stage::Export, report)?));
    }
    if want("csv") {
        if let Some(adv) = &report.adversarial {
            files.push((dir.join("adversarial.csv"), adv.to_csv()));
        }
        if let Some(m) = &report.correlation {
            files.push((dir.join("correlation.csv"), m.to_csv()));
        }
        if let Some(t) = &report.training {
            files.push((dir.join("importance.csv"), importance_csv(&t.importance)));
            files.push((dir.join("training_curve.csv"), curve_csv(&t.curve)));
        }
    }
    if want("svg") {
        if let Some(adv) = &report.adversarial {
            files.push((dir.join("adversarial.svg"), adv.to_svg()));
        }
        if let Some(t) = &report.training {
            files.push((dir.join("importance.svg"), importance_svg(&t.importance)));
        }
    }
    for (path, contents) in &files {
        write_file(Stage::Export, path, contents)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

/// Scores a headerless `row_id,probability` file against the install labels
/// of `table`, matched by row id.
pub fn evaluate_predictions(predictions: &Path, table: &Table) -> Result<EvalSummary> {
    let text = std::fs::read_to_string(predictions)
        .map_err(|e| fail(Stage::Evaluate, format!("{}: {e}", predictions.display())))?;
    let ids = table
        .row_ids()
        .ok_or_else(|| fail(Stage::Evaluate, "table has no row id column"))?;
    let labels = table
        .install_labels()
        .ok_or_else(|| fail(Stage::Evaluate, "table has no install label"))?;
    let label_of: HashMap<&str, u8> = ids.iter().map(String::as_str).zip(labels.iter().copied()).collect();
    let mut y = Vec::new();
    let mut p = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (id, prob) = line.split_once(',').ok_or_else(|| {
            fail(
                Stage::Evaluate,
                format!("line {}: expected `row_id,probability`", n + 1),
            )
        })?;
        let prob: f64 = prob
            .trim()
            .parse()
            .map_err(|_| fail(Stage::Evaluate, format!("line {}: bad probability `{prob}`", n + 1)))?;
        let label = label_of
            .get(id.trim())
            .ok_or_else(|| fail(Stage::Evaluate, format!("line {}: unknown row id `{id}`", n + 1)))?;
        y.push(*label);
        p.push(prob);
    }
    metrics::summarize(&y, &p).map_err(at(Stage::Evaluate))
}
