//! Command-line driver: synthesize populations, grow/export trees, run
//! single estimates, run Monte Carlo simulations, and print design
//! diagnostics.
//!
//! Exit codes: 0 success, 1 computation error, 2 bad arguments,
//! 3 configuration error. Failures print one machine-readable line to
//! standard error: `error: <Kind>: <message>`.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use svytree::config::{AppConfig, ConfigError, EXAMPLE_CONFIG};
use svytree::estimate::{
    linear_stepwise_estimator, tree_estimator, EstimateResult, EstimatorKind,
};
use svytree::frame::VarRole;
use svytree::mc::run_simulation;
use svytree::svg::mse_chart;
use svytree::tree::{grow, io as tree_io};
use svytree::{DesignSpec, Frame, SampleDraw};

#[derive(Parser)]
#[command(
    name = "svytree",
    about = "Design-based survey estimation with a regression-tree assisted estimator",
    after_long_help = config_help(),
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn config_help() -> String {
    format!(
        "CONFIG FILE (TOML):\n\
         All subcommands read the same config file. Every key, shown with\n\
         the desk-scale defaults:\n\n{EXAMPLE_CONFIG}"
    )
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override the relevant seed (population seed for `synth`, draw seed
    /// for `tree`/`estimate`, simulation base seed for `simulate`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (or directory for `simulate`).
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured population and write it as CSV.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Draw one sample, grow the survey-weighted tree, write the tree
    /// document (JSON).
    Tree {
        #[command(flatten)]
        common: Common,
        /// Study variable to model (default: first study variable).
        #[arg(long)]
        study: Option<String>,
    },
    /// Draw one sample and write estimate records (JSON).
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of ht,greg-linear,greg-tree.
        #[arg(long, value_delimiter = ',')]
        estimators: Vec<String>,
    },
    /// Run the Monte Carlo sweep; writes report.csv, summary.txt, and the
    /// archived config into the output directory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Override the sample sizes.
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        /// Override the replicate count.
        #[arg(long)]
        replicates: Option<usize>,
        /// Comma-separated subset of ht,greg-linear,greg-tree.
        #[arg(long, value_delimiter = ',')]
        estimators: Vec<String>,
        /// Full-scale protocol: 1000 replicates at n = 2000..6000.
        #[arg(long)]
        long: bool,
        /// Also write an MSE-vs-n SVG chart per study variable.
        #[arg(long)]
        svg: bool,
    },
    /// Write design diagnostics (JSON) for the configured design.
    Diagnose {
        #[command(flatten)]
        common: Common,
    },
}

enum CliError {
    /// Exit 3: the configuration is unusable.
    Config(String),
    /// Exit 1: a computation failed.
    Compute(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

macro_rules! compute_err {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Compute(e.to_string())
            }
        }
    )*};
}
compute_err!(
    svytree::frame::FrameError,
    svytree::design::DesignError,
    svytree::tree::TreeError,
    svytree::estimate::EstimateError,
    svytree::mc::McError,
    std::io::Error
);

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, msg, code) = match e {
                CliError::Config(m) => ("Config", m, 3),
                CliError::Compute(m) => ("Compute", m, 1),
            };
            // One machine-readable line: newlines collapsed.
            let msg = msg.split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error: {kind}: {msg}");
            ExitCode::from(code)
        }
    }
}

fn parse_estimators(names: &[String]) -> Result<Option<Vec<EstimatorKind>>, CliError> {
    if names.is_empty() {
        return Ok(None);
    }
    let mut out = Vec::new();
    for name in names {
        out.push(match name.as_str() {
            "ht" => EstimatorKind::Ht,
            "greg-linear" => EstimatorKind::GregLinear,
            "greg-tree" => EstimatorKind::GregTree,
            other => {
                return Err(CliError::Config(format!(
                    "unknown estimator `{other}` (expected ht, greg-linear, greg-tree)"
                )))
            }
        });
    }
    Ok(Some(out))
}

/// Write atomically: temp file in the destination directory, then rename.
fn write_atomic(path: &Path, content: &str) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(|e| CliError::Compute(format!("creating temp file: {e}")))?;
    tmp.write_all(content.as_bytes())
        .map_err(|e| CliError::Compute(format!("writing {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::Compute(format!("renaming into {}: {e}", path.display())))?;
    Ok(())
}

fn load(common: &Common) -> Result<AppConfig, CliError> {
    Ok(AppConfig::from_path(&common.config)?)
}

fn draw_sample(
    config: &AppConfig,
    frame: &Frame,
    seed: Option<u64>,
) -> Result<(DesignSpec, SampleDraw), CliError> {
    let design = config
        .design
        .clone()
        .ok_or_else(|| CliError::Config("config has no [design] section".into()))?;
    let sample = design.draw(frame, seed.unwrap_or(0))?;
    Ok((design, sample))
}

fn predictor_names(config: &AppConfig, frame: &Frame) -> Vec<String> {
    if config.estimate.predictors.is_empty() {
        frame
            .predictor_specs()
            .iter()
            .map(|s| s.name.clone())
            .collect()
    } else {
        config.estimate.predictors.clone()
    }
}

fn study_names(config: &AppConfig, frame: &Frame) -> Vec<String> {
    if config.estimate.study_variables.is_empty() {
        frame
            .specs()
            .iter()
            .filter(|s| s.role == VarRole::Study)
            .map(|s| s.name.clone())
            .collect()
    } else {
        config.estimate.study_variables.clone()
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { common } => {
            let mut config = load(&common)?;
            if let Some(seed) = common.seed {
                config.population = match config.population {
                    svytree::config::PopulationConfig::Reference { n, .. } => {
                        svytree::config::PopulationConfig::Reference { n, seed }
                    }
                    svytree::config::PopulationConfig::Synthetic { mut config } => {
                        config.seed = seed;
                        svytree::config::PopulationConfig::Synthetic { config }
                    }
                    other @ svytree::config::PopulationConfig::Csv { .. } => other,
                };
            }
            let frame = config.population.build()?;
            let mut csv = Vec::new();
            frame.write_csv(&mut csv)?;
            write_atomic(
                &common.out,
                std::str::from_utf8(&csv).expect("CSV is UTF-8"),
            )
        }
        Command::Tree { common, study } => {
            let config = load(&common)?;
            let frame = config.population.build()?;
            let (_, sample) = draw_sample(&config, &frame, common.seed)?;
            let studies = study_names(&config, &frame);
            let study = match study {
                Some(s) => s,
                None => studies
                    .first()
                    .cloned()
                    .ok_or_else(|| CliError::Config("frame has no study variables".into()))?,
            };
            let predictors = predictor_names(&config, &frame);
            let predictor_refs: Vec<&str> = predictors.iter().map(|s| s.as_str()).collect();
            let part = grow(&sample, &frame, &predictor_refs, &study, &config.tree)?;
            write_atomic(&common.out, &tree_io::export(&part)?)
        }
        Command::Estimate { common, estimators } => {
            let config = load(&common)?;
            let kinds =
                parse_estimators(&estimators)?.unwrap_or_else(|| config.estimate.estimators.clone());
            let frame = config.population.build()?;
            let (_, sample) = draw_sample(&config, &frame, common.seed)?;
            let predictors = predictor_names(&config, &frame);
            let predictor_refs: Vec<&str> = predictors.iter().map(|s| s.as_str()).collect();
            #[derive(serde::Serialize)]
            struct Row {
                variable: String,
                #[serde(flatten)]
                record: svytree::estimate::EstimateRecord,
            }
            let mut rows = Vec::new();
            for var in study_names(&config, &frame) {
                for &kind in &kinds {
                    let result: EstimateResult = match kind {
                        EstimatorKind::Ht => {
                            let y = sample.values(&frame, &var)?;
                            EstimateResult {
                                total: svytree::estimate::ht_total(&y, &sample.weights)?,
                                estimator_kind: EstimatorKind::Ht,
                                model_summary: "none".into(),
                                calibration_weights: None,
                            }
                        }
                        EstimatorKind::GregLinear => linear_stepwise_estimator(
                            &frame,
                            &sample,
                            &var,
                            &predictor_refs,
                            &config.stepwise,
                        )?,
                        EstimatorKind::GregTree => {
                            let part =
                                grow(&sample, &frame, &predictor_refs, &var, &config.tree)?;
                            tree_estimator(&sample, &frame, &var, &part)?
                        }
                    };
                    rows.push(Row {
                        variable: var.clone(),
                        record: result.to_record(),
                    });
                }
            }
            let json = serde_json::to_string_pretty(&rows)
                .map_err(|e| CliError::Compute(e.to_string()))?;
            write_atomic(&common.out, &json)
        }
        Command::Simulate {
            common,
            n,
            replicates,
            estimators,
            long,
            svg,
        } => {
            let config = load(&common)?;
            let mut sim = config.simulation()?;
            if long {
                sim.sample_sizes = vec![2000, 3000, 4000, 5000, 6000];
                sim.replicates = 1000;
            }
            if !n.is_empty() {
                sim.sample_sizes = n;
            }
            if let Some(r) = replicates {
                sim.replicates = r;
            }
            if let Some(kinds) = parse_estimators(&estimators)? {
                sim.estimators = kinds;
            }
            if let Some(seed) = common.seed {
                sim.base_seed = seed;
            }
            let frame = config.population.build()?;
            eprintln!(
                "simulate: N={} replicates={} n={:?}",
                frame.n(),
                sim.replicates,
                sim.sample_sizes
            );
            let report = run_simulation(&frame, &sim)?;
            std::fs::create_dir_all(&common.out)?;
            write_atomic(&common.out.join("report.csv"), &report.to_csv())?;
            write_atomic(&common.out.join("summary.txt"), &report.summary_text())?;
            // Archive the exact configuration used, for provenance.
            let archived = toml::to_string_pretty(&sim)
                .map_err(|e| CliError::Compute(e.to_string()))?;
            write_atomic(&common.out.join("simulate.toml"), &archived)?;
            if svg {
                let mut variables: Vec<&str> = Vec::new();
                for c in &report.cells {
                    if !variables.contains(&c.variable.as_str()) {
                        variables.push(&c.variable);
                    }
                }
                for var in variables {
                    if let Some(chart) = mse_chart(&report, var) {
                        write_atomic(&common.out.join(format!("{var}.svg")), &chart)?;
                    }
                }
            }
            Ok(())
        }
        Command::Diagnose { common } => {
            let config = load(&common)?;
            let frame = config.population.build()?;
            let design = config
                .design
                .clone()
                .ok_or_else(|| CliError::Config("config has no [design] section".into()))?;
            let diag = design.diagnostics(&frame)?;
            let json = serde_json::to_string_pretty(&diag)
                .map_err(|e| CliError::Compute(e.to_string()))?;
            write_atomic(&common.out, &json)
        }
    }
}
