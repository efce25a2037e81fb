use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use rlt_core::advval::{self, AdvConfig};
use rlt_core::denoise::{self, DenoiseConfig, Origin};
use rlt_core::encoders::{self, EncoderKind, EncoderSpec, EncoderState, FreqWindow, Target};
use rlt_core::gbdt::{self, GbdtParams};
use rlt_core::metrics;
use rlt_core::pipeline::{self, AblationStep, PipelineConfig, RunReport};
use rlt_core::synth::{self, SynthSpec};
use rlt_core::table::{self, Schema, Table};

#[derive(Parser)]
#[command(name = "rlt", version, about = "Day-stamped tabular response prediction toolkit")]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    PrevDay,
    PrevWeek,
    AllHistory,
}

impl From<WindowArg> for FreqWindow {
    fn from(w: WindowArg) -> Self {
        match w {
            WindowArg::PrevDay => FreqWindow::PrevDay,
            WindowArg::PrevWeek => FreqWindow::PrevWeek,
            WindowArg::AllHistory => FreqWindow::AllHistory,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OriginArg {
    Zero,
    Vmin,
}

#[derive(Clone, Copy, ValueEnum)]
enum StepArg {
    Vanilla,
    Adversarial,
    Frequency,
    Denoise,
    TargetEncoding,
}

impl From<StepArg> for AblationStep {
    fn from(s: StepArg) -> Self {
        match s {
            StepArg::Vanilla => AblationStep::Vanilla,
            StepArg::Adversarial => AblationStep::Adversarial,
            StepArg::Frequency => AblationStep::Frequency,
            StepArg::Denoise => AblationStep::Denoise,
            StepArg::TargetEncoding => AblationStep::TargetEncoding,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: train.csv, test.csv, schema.json, truth.json.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON generator spec; built-in defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rows_per_day: Option<usize>,
    },
    /// Convert delimited files into one binary table.
    Ingest {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-feature adversarial validation between two tables.
    Adversarial {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, default_value_t = 0.75)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect lattice steps in continuous features and quantize them.
    Denoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-3)]
        tol_rel: f64,
        #[arg(long, value_enum, default_value = "zero")]
        origin: OriginArg,
        /// Keep quantized features continuous instead of categorical.
        #[arg(long)]
        continuous: bool,
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise correlation matrix of numeric features as CSV.
    Correlate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Defaults to every continuous feature.
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add frequency and target encodings of categorical features.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Encoder list as JSON (`[{"feature": .., "kind": "frequency", "window": ..}]`).
        #[arg(long, conflicts_with = "state")]
        specs: Option<PathBuf>,
        /// Re-apply previously fitted encoders instead of fitting.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "prev-week")]
        window: WindowArg,
        #[arg(long, default_value_t = 1.0)]
        smoothing: f64,
        #[arg(long)]
        drop_originals: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a GBDT with early stopping on a validation table.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// GBDT parameters as JSON; defaults otherwise.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a `row_id,probability` file against a labeled table.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cumulative ablation over pipeline stages.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's ablation list.
        #[arg(long, value_enum, value_delimiter = ',')]
        steps: Option<Vec<StepArg>>,
    },
    /// Run the whole pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-export report artifacts from a saved report.json.
    Export {
        #[arg(long)]
        report: PathBuf,
        /// One of json, csv, svg, all.
        #[arg(long, default_value = "all")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_table(path: &Path, schema: Option<&Path>) -> Result<Table> {
    if path.extension().is_some_and(|e| e == "rlt") {
        return table::load_binary(path).with_context(|| format!("loading {}", path.display()));
    }
    let schema = schema.context("delimited input needs --schema")?;
    let schema = Schema::from_json_file(schema)?;
    table::ingest_csv(path, &schema).with_context(|| format!("reading {}", path.display()))
}

/// Loads two tables; delimited inputs share one set of dictionaries.
fn load_pair(a: &Path, b: &Path, schema: Option<&Path>) -> Result<(Table, Table)> {
    let binary = |p: &Path| p.extension().is_some_and(|e| e == "rlt");
    if binary(a) || binary(b) {
        return Ok((load_table(a, schema)?, load_table(b, schema)?));
    }
    let schema = Schema::from_json_file(schema.context("delimited input needs --schema")?)?;
    let mut parts = table::ingest_csv_files(&[a, b], &schema)?;
    let second = parts.pop().expect("two inputs");
    Ok((parts.pop().expect("two inputs"), second))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            spec,
            seed,
            rows_per_day,
        } => {
            let mut spec: SynthSpec = match spec {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => SynthSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            if let Some(n) = rows_per_day {
                spec.n_rows_per_day = n;
            }
            let (table, truth) = synth::generate(&spec)?;
            synth::write_dataset(&table, &truth, &out)?;
            info!("wrote {} rows to {}", table.n_rows(), out.display());
        }
        Command::Ingest { schema, input, out } => {
            let schema = Schema::from_json_file(&schema)?;
            let parts = table::ingest_csv_files(&input, &schema)?;
            let joined = Table::concat(&parts)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            table::save_binary(&joined, &out)?;
            info!("wrote {} rows to {}", joined.n_rows(), out.display());
        }
        Command::Adversarial {
            train,
            test,
            schema,
            threshold,
            seed,
            out,
        } => {
            let (train, test) = load_pair(&train, &test, schema.as_deref())?;
            let cfg = AdvConfig {
                auc_threshold: threshold,
                seed,
                ..AdvConfig::default()
            };
            let report = advval::audit(&train, &test, &cfg)?;
            write(&out.join("adversarial.json"), json(&report)?)?;
            write(&out.join("adversarial.csv"), report.to_csv())?;
            write(&out.join("adversarial.svg"), report.to_svg())?;
            println!("dropped: {}", report.dropped().join(","));
        }
        Command::Denoise {
            input,
            schema,
            tol_rel,
            origin,
            continuous,
            features,
            out,
        } => {
            let table = load_table(&input, schema.as_deref())?;
            let cfg = DenoiseConfig {
                tol_rel,
                origin: match origin {
                    OriginArg::Zero => Origin::Zero,
                    OriginArg::Vmin => Origin::Vmin,
                },
                as_categorical: !continuous,
                features,
                ..DenoiseConfig::default()
            };
            let estimates = denoise::detect_all(&table, &cfg)?;
            let transformed = denoise::apply(&table, &estimates, cfg.as_categorical)?;
            write(&out.join("deltas.json"), json(&estimates)?)?;
            table::save_binary(&transformed, &out.join("denoised.rlt"))?;
            for e in estimates.iter().filter(|e| e.detected) {
                println!("{}\tdelta={}\tunique={}", e.feature, e.delta, e.n_unique);
            }
        }
        Command::Correlate {
            input,
            schema,
            features,
            out,
        } => {
            let table = load_table(&input, schema.as_deref())?;
            let features = features.unwrap_or_else(|| {
                table
                    .iter()
                    .filter(|(s, _)| s.role == table::ColumnRole::Continuous)
                    .map(|(s, _)| s.name.clone())
                    .collect()
            });
            let matrix = denoise::correlation_matrix(&table, &features)?;
            write(&out, matrix.to_csv())?;
        }
        Command::Encode {
            input,
            schema,
            specs,
            state,
            window,
            smoothing,
            drop_originals,
            out,
        } => {
            let table = load_table(&input, schema.as_deref())?;
            let states: Vec<EncoderState> = match state {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => {
                    let specs: Vec<EncoderSpec> = match specs {
                        Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                            .with_context(|| format!("parsing {}", p.display()))?,
                        None => encoders::categorical_features(&table)
                            .into_iter()
                            .flat_map(|feature| {
                                [
                                    EncoderKind::Frequency { window: window.into() },
                                    EncoderKind::Target {
                                        target: Target::Click,
                                        smoothing,
                                    },
                                    EncoderKind::Target {
                                        target: Target::Install,
                                        smoothing,
                                    },
                                ]
                                .map(|kind| EncoderSpec {
                                    feature: feature.clone(),
                                    kind,
                                })
                            })
                            .collect(),
                    };
                    specs
                        .iter()
                        .map(|s| encoders::fit(&table, s))
                        .collect::<Result<_, _>>()?
                }
            };
            let encoded = encoders::encode_table(&table, &states, drop_originals)?;
            write(&out.join("encoders.json"), json(&states)?)?;
            table::save_binary(&encoded, &out.join("encoded.rlt"))?;
        }
        Command::Train {
            train,
            valid,
            schema,
            params,
            out,
        } => {
            let (train, valid) = load_pair(&train, &valid, schema.as_deref())?;
            let params: GbdtParams = match params {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => GbdtParams::default(),
            };
            std::fs::create_dir_all(&out)?;
            let features = train.feature_names();
            let model = gbdt::fit(&params, &train, &valid, &features)?;
            model.save(&out.join("model.json"))?;
            let p = model.predict(&valid)?;
            let ids: Vec<String> = match valid.row_ids() {
                Some(ids) => ids.to_vec(),
                None => (0..valid.n_rows()).map(|i| i.to_string()).collect(),
            };
            write(&out.join("predictions_valid.csv"), pipeline::predictions_csv(&ids, &p))?;
            write(
                &out.join("importance.csv"),
                pipeline::importance_csv(&model.feature_importance()),
            )?;
            write(
                &out.join("importance.svg"),
                pipeline::importance_svg(&model.feature_importance()),
            )?;
            write(&out.join("training_curve.csv"), pipeline::curve_csv(&model.history))?;
            let labels = valid
                .install_labels()
                .context("validation table has no install label")?;
            let summary = metrics::summarize(labels, &p)?;
            write(&out.join("metrics.json"), json(&summary)?)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Evaluate {
            predictions,
            table,
            schema,
            out,
        } => {
            let table = load_table(&table, schema.as_deref())?;
            let summary = pipeline::evaluate_predictions(&predictions, &table)?;
            let text = serde_json::to_string(&summary)?;
            if let Some(out) = out {
                write(&out, json(&summary)?)?;
            }
            println!("{text}");
        }
        Command::Ablate { config, steps } => {
            let config = PipelineConfig::load(&config)?;
            let steps: Vec<AblationStep> = match steps {
                Some(s) => s.into_iter().map(Into::into).collect(),
                None => config.ablation.clone(),
            };
            let rows = pipeline::ablate(&config, &steps)?;
            print!("{}", pipeline::ablation_csv(&rows));
        }
        Command::Run { config } => {
            let config = PipelineConfig::load(&config)?;
            let report = pipeline::run(&config)?;
            if let Some(m) = &report.metrics {
                println!("{}", serde_json::to_string(&m.valid)?);
            }
        }
        Command::Export { report, format, out } => {
            let text = std::fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let report: RunReport = serde_json::from_str(&text)?;
            for path in pipeline::report_export(&report, &format, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

/// The error chain on one line, skipping causes a message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !text.contains(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = cli.threads;
    let result = match pipeline::with_threads(threads, move || execute(cli.command)) {
        Ok(r) => r,
        Err(e) => Err(e.into()),
    };
    if let Err(e) = result {
        eprintln!("error: {}", describe(&e));
        std::process::exit(1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn steps_parse_from_a_list() {
        let cli = Cli::try_parse_from([
            "rlt",
            "ablate",
            "--config",
            "c.json",
            "--steps",
            "vanilla,frequency,target-encoding",
        ])
        .unwrap();
        match cli.command {
            Command::Ablate { steps: Some(s), .. } => assert_eq!(s.len(), 3),
            _ => panic!("parsed the wrong command"),
        }
    }

    #[test]
    fn bail_on_missing_schema() {
        let err = load_table(Path::new("x.csv"), None).unwrap_err();
        assert!(err.to_string().contains("--schema"));
    }
}
