//! `eqgnn` command-line entry point.
//!
//! Exit codes: 0 success, 1 config, 2 data, 3 training, 4 verification
//! failure. Failures print one `error kind=<kind> code=<n> reason=<text>`
//! line on standard error.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use eqgnn_core::data::{convert_energyflow_jsonl, image_to_graph, ingest_jsonl, parse_image_jsonl, synth_jets, write_jsonl, SynthParams};
use eqgnn_core::qsim::run_program;
use eqgnn_core::train::run_experiment;
use eqgnn_core::verify::{run_suite, Suite, VerifyOptions};
use eqgnn_core::{CircuitShape, DressedCircuit, Error, JetGraph, LorentzEqgnn, RunConfig};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "eqgnn", version, about = "Lorentz-equivariant quantum graph network for jet tagging")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with a stratified split or k-fold cross-validation.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = DataFormat::Jets)]
        format: DataFormat,
    },
    /// Run an invariant suite against a checkpoint.
    Verify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(Suite::NAMES))]
        suite: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Inspect the dressed circuit gate program.
    Circuit {
        #[arg(value_enum)]
        action: CircuitAction,
        #[arg(long)]
        qubits: usize,
        #[arg(long)]
        depth: usize,
        /// JSON array of weights, flat or `depth × qubits` (default zeros).
        #[arg(long)]
        weights: Option<String>,
        /// JSON array of `qubits` embedding angles (default zeros).
        #[arg(long)]
        angles: Option<String>,
    },
    /// Write a synthetic two-class jet corpus.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert external particle lists to jet JSONL.
    Convert {
        #[arg(long, value_enum)]
        format: ConvertFormat,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Append particle charge as a node scalar.
        #[arg(long)]
        with_charge: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DataFormat {
    Jets,
    Images,
}

#[derive(Clone, Copy, ValueEnum)]
enum CircuitAction {
    Dump,
    Run,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConvertFormat {
    EnergyflowNpzManifest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Config = 1,
    Data = 2,
    Training = 3,
    Verification = 4,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Config => "config",
            Kind::Data => "data",
            Kind::Training => "training",
            Kind::Verification => "verification",
        }
    }
}

struct Failure {
    kind: Kind,
    reason: String,
}

impl Failure {
    fn new(kind: Kind, reason: impl ToString) -> Self {
        Self {
            kind,
            reason: reason.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("could not size thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Train { config, data, out, format } => cmd_train(&config, &data, &out, format),
        Command::Verify { checkpoint, suite, seed } => cmd_verify(&checkpoint, &suite, seed),
        Command::Circuit {
            action,
            qubits,
            depth,
            weights,
            angles,
        } => cmd_circuit(action, qubits, depth, weights.as_deref(), angles.as_deref()),
        Command::Synth { seed, per_class, out } => cmd_synth(seed, per_class, &out),
        Command::Convert {
            format: ConvertFormat::EnergyflowNpzManifest,
            input,
            out,
            with_charge,
        } => cmd_convert(&input, &out, with_charge),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let reason = f.reason.replace(['\n', '\r'], " ");
            eprintln!("error kind={} code={} reason={reason}", f.kind.name(), f.kind as u8);
            ExitCode::from(f.kind as u8)
        }
    }
}

/// Exit class for an error raised while training.
fn training_kind(e: &Error) -> Kind {
    match e {
        Error::InsufficientData(_) | Error::Schema { .. } | Error::EmptyGraph(_) | Error::Io { .. } => Kind::Data,
        Error::InvalidArgument(_) => Kind::Config,
        _ => Kind::Training,
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(Kind::Training, e))?;
    fs::write(path, text + "\n").map_err(|e| Failure::new(Kind::Data, format!("{}: {e}", path.display())))
}

fn load_graphs(path: &Path, cfg: &RunConfig, format: DataFormat) -> Result<Vec<JetGraph>, Failure> {
    let data_err = |e: Error| Failure::new(Kind::Data, e);
    let graphs = match format {
        DataFormat::Jets => {
            let (graphs, report) = ingest_jsonl(path, cfg.data.min_particles).map_err(data_err)?;
            info!(
                "read {} lines: {} jets kept, {} below {} particles, {} malformed",
                report.read,
                graphs.len(),
                report.skipped_min_particles,
                cfg.data.min_particles,
                report.errors.len()
            );
            for e in report.errors.iter().take(5) {
                warn!("{e}");
            }
            graphs
        }
        DataFormat::Images => parse_image_jsonl(path)
            .map_err(data_err)?
            .iter()
            .map(|r| image_to_graph(&r.pixels, cfg.data.max_points, cfg.data.feature_mode, r.label))
            .collect::<Result<Vec<_>, _>>()
            .map_err(data_err)?,
    };
    if graphs.is_empty() {
        return Err(Failure::new(Kind::Data, format!("{}: no usable jets", path.display())));
    }
    let width = graphs[0].scalars.first().map_or(0, Vec::len);
    if width + 1 > cfg.model.n_scalar_in {
        return Err(Failure::new(
            Kind::Config,
            format!("data carries {width} node scalars but model.n_scalar_in = {} leaves room for {}", cfg.model.n_scalar_in, cfg.model.n_scalar_in - 1),
        ));
    }
    Ok(graphs)
}

fn cmd_train(config: &Path, data: &Path, out: &Path, format: DataFormat) -> CmdResult {
    let mut manifest = RunManifest::start("train");
    let cfg = RunConfig::load(config).map_err(|e| Failure::new(Kind::Config, e))?;
    let digest = cfg.digest().map_err(|e| Failure::new(Kind::Config, e))?;
    manifest.set_config(config, &digest, cfg.train.seed);
    let graphs = load_graphs(data, &cfg, format)?;
    fs::create_dir_all(out).map_err(|e| Failure::new(Kind::Data, format!("{}: {e}", out.display())))?;

    let exp = run_experiment(&cfg, &graphs).map_err(|e| Failure::new(training_kind(&e), e))?;
    for f in &exp.folds {
        let path = out.join(format!("fold_{}.model.json", f.metrics.fold));
        f.model.save(&path).map_err(|e| Failure::new(Kind::Data, e))?;
        manifest.output(&path);
        let csv_path = out.join(format!("roc_fold_{}.csv", f.metrics.fold));
        let csv: String = std::iter::once("fpr,tpr\n".to_string()).chain(f.roc.iter().map(|(x, y)| format!("{x},{y}\n"))).collect();
        fs::write(&csv_path, csv).map_err(|e| Failure::new(Kind::Data, format!("{}: {e}", csv_path.display())))?;
        manifest.output(&csv_path);
    }
    let metrics = out.join("metrics.json");
    write_json(&metrics, &exp.report)?;
    manifest.output(&metrics);
    let roc: Vec<_> = exp.folds.iter().map(|f| &f.roc).collect();
    let roc_path = out.join("roc.json");
    write_json(&roc_path, &roc)?;
    manifest.output(&roc_path);
    let history: Vec<_> = exp.folds.iter().map(|f| &f.history).collect();
    let history_path = out.join("history.json");
    write_json(&history_path, &history)?;
    manifest.output(&history_path);
    manifest.finish(&out.join("manifest.json")).map_err(|e| Failure::new(Kind::Data, e))?;
    println!(
        "test accuracy {:.4} ± {:.4}, AUC {:.4} ± {:.4}, 1/eps_B@0.3 {}, 1/eps_B@0.5 {}",
        exp.report.mean.accuracy, exp.report.std.accuracy, exp.report.mean.auc, exp.report.std.auc, exp.report.mean.rej03, exp.report.mean.rej05
    );
    Ok(())
}

fn cmd_verify(checkpoint: &Path, suite: &str, seed: u64) -> CmdResult {
    let model = LorentzEqgnn::load(checkpoint).map_err(|e| Failure::new(Kind::Config, e))?;
    let suite: Suite = suite.parse().map_err(|e| Failure::new(Kind::Config, e))?;
    let opts = VerifyOptions { seed, ..VerifyOptions::default() };
    let checks = run_suite(&model, suite, &opts).map_err(|e| Failure::new(Kind::Verification, e))?;
    for c in &checks {
        println!("{c}");
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed()).map(|c| format!("{} deviation {:.3e} > {:.1e}", c.name, c.max_deviation, c.tolerance)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(Kind::Verification, failed.join("; ")))
    }
}

fn parse_floats(label: &str, text: &str) -> Result<Vec<f64>, Failure> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Failure::new(Kind::Config, format!("--{label}: {e}")))?;
    let mut out = Vec::new();
    fn walk(v: &serde_json::Value, out: &mut Vec<f64>) -> bool {
        match v {
            serde_json::Value::Array(items) => items.iter().all(|i| walk(i, out)),
            serde_json::Value::Number(n) => n.as_f64().map(|x| out.push(x)).is_some(),
            _ => false,
        }
    }
    if !walk(&value, &mut out) {
        return Err(Failure::new(Kind::Config, format!("--{label} must be a (nested) array of numbers")));
    }
    Ok(out)
}

fn cmd_circuit(action: CircuitAction, qubits: usize, depth: usize, weights: Option<&str>, angles: Option<&str>) -> CmdResult {
    let cfg_err = |e: Error| Failure::new(Kind::Config, e);
    let shape = CircuitShape::new(qubits, depth).map_err(cfg_err)?;
    let weights = weights.map(|w| parse_floats("weights", w)).transpose()?.unwrap_or_else(|| vec![0.0; shape.n_weights()]);
    let angles = angles.map(|a| parse_floats("angles", a)).transpose()?.unwrap_or_else(|| vec![0.0; qubits]);
    let circuit = DressedCircuit::with_weights(shape, weights).map_err(cfg_err)?;
    let program = circuit.program(&angles).map_err(cfg_err)?;
    let text = match action {
        CircuitAction::Dump => serde_json::to_string_pretty(&program),
        CircuitAction::Run => {
            let state = run_program(qubits, &program).map_err(cfg_err)?;
            serde_json::to_string(&state.expect_z_all())
        }
    }
    .map_err(|e| Failure::new(Kind::Config, e))?;
    println!("{text}");
    Ok(())
}

fn cmd_synth(seed: u64, per_class: usize, out: &Path) -> CmdResult {
    let mut manifest = RunManifest::start("synth");
    manifest.seed = Some(seed);
    let records = synth_jets(seed, per_class, &SynthParams::default());
    write_jsonl(out, &records).map_err(|e| Failure::new(Kind::Data, e))?;
    manifest.output(out);
    manifest.finish(&manifest::sidecar(out)).map_err(|e| Failure::new(Kind::Data, e))?;
    info!("wrote {} jets to {}", records.len(), out.display());
    Ok(())
}

fn cmd_convert(input: &Path, out: &Path, with_charge: bool) -> CmdResult {
    let mut manifest = RunManifest::start("convert");
    let stats = convert_energyflow_jsonl(input, out, with_charge).map_err(|e| Failure::new(Kind::Data, e))?;
    for e in stats.errors.iter().take(5) {
        warn!("{e}");
    }
    manifest.output(out);
    manifest.finish(&manifest::sidecar(out)).map_err(|e| Failure::new(Kind::Data, e))?;
    info!(
        "converted {} of {} jets ({} padding rows dropped, {} errors)",
        stats.written,
        stats.read,
        stats.padding_rows_dropped,
        stats.errors.len()
    );
    Ok(())
}
