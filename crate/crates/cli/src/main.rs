//! Console front-end and experiment runner: seeded simulations of the three
//! content distribution models, loss/CBR sweeps, and model comparisons, with
//! CSV reports on disk.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use distsim_core::chunking::make_pieces;
use distsim_core::experiment::{
    compare_models, run_experiment, sweep, Axis, ExpError, ExperimentConfig, TopologySource,
};
use distsim_core::protocols::Model;
use distsim_core::topology::{build_paper_topology, serialize_topology};

#[derive(Parser)]
#[command(
    name = "distsim",
    version,
    about = "Deterministic simulator comparing unicast, swarm, and hybrid \
             multicast content distribution"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one model for N seeded repetitions and write per-run CSV trees.
    Simulate(SimulateArgs),
    /// Run all three models on identical seeds and report reductions.
    Compare(CommonArgs),
    /// Sweep induced loss or CBR cross traffic over a list of values.
    Sweep(SimulateArgs),
    /// Topology utilities.
    Topology {
        #[command(subcommand)]
        cmd: TopologyCmd,
    },
    /// Print the piece table (index, offset, length, digest) of a real file.
    Pieces(PiecesArgs),
}

#[derive(Subcommand)]
enum TopologyCmd {
    /// Emit the built-in study topology in the config format.
    PrintBuiltin,
}

#[derive(Args)]
struct SimulateArgs {
    /// Distribution model: www, p2p, or hybrid.
    #[arg(long)]
    model: String,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CommonArgs {
    /// Topology config file; the built-in study topology when omitted.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Shared file size in bytes.
    #[arg(long, default_value_t = 1 << 20)]
    file_size: u64,
    /// Piece size in bytes.
    #[arg(long, default_value_t = 256 * 1024)]
    piece_size: u32,
    /// Seeded repetitions per configuration point.
    #[arg(long, default_value_t = 5)]
    runs: u32,
    /// Base seed; run i uses seed + i.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Induced LAN-spoke loss in percent; a comma list selects a sweep.
    #[arg(long, default_value = "0")]
    loss: String,
    /// CBR cross traffic in percent of the bottleneck; comma list sweeps.
    #[arg(long, default_value = "0")]
    cbr: String,
    /// Output directory for CSV reports.
    #[arg(long, default_value = "distsim-out")]
    out: PathBuf,
}

enum CliError {
    Config(String),
    Run(String),
}

impl From<ExpError> for CliError {
    fn from(e: ExpError) -> Self {
        match e {
            ExpError::Config(m) => CliError::Config(m),
            other => CliError::Run(other.to_string()),
        }
    }
}

fn parse_percent_axis(name: &str, text: &str) -> Result<Axis, CliError> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Config(format!("bad {name} value `{text}`")))?;
    let fractions: Vec<f64> = values.iter().map(|v| v / 100.0).collect();
    Ok(if fractions.len() == 1 {
        Axis::Scalar(fractions[0])
    } else {
        Axis::Sweep(fractions)
    })
}

fn build_config(model: Model, common: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::new(model);
    cfg.topology = match &common.topology {
        Some(path) => TopologySource::File(path.clone()),
        None => TopologySource::BuiltinPaper,
    };
    cfg.file_size = common.file_size;
    cfg.piece_size = common.piece_size;
    cfg.runs = common.runs;
    cfg.base_seed = common.seed;
    cfg.loss = parse_percent_axis("loss", &common.loss)?;
    cfg.cbr = parse_percent_axis("cbr", &common.cbr)?;
    cfg.out_dir = Some(common.out.clone());
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let model: Model = args
        .model
        .parse()
        .map_err(|_| CliError::Config(format!("unknown model `{}`", args.model)))?;
    let cfg = build_config(model, &args.common)?;
    if cfg.loss.is_sweep() || cfg.cbr.is_sweep() {
        return Err(CliError::Config(
            "simulate takes single loss/cbr values; use the sweep subcommand for lists".into(),
        ));
    }
    let report = run_experiment(&cfg)?;
    println!(
        "{}: {} runs, mean completion {:.3} s (min {:.3}, max {:.3}), mean core stress {:.3}",
        model.as_str(),
        report.per_run.len(),
        report.mean_completion_s,
        report.min_completion_s,
        report.max_completion_s,
        report.mean_core_stress,
    );
    if report.failed_runs > 0 {
        eprintln!(
            "warning: {} run(s) had failed clients and were excluded from aggregates",
            report.failed_runs
        );
    }
    println!("reports written to {}", args.common.out.display());
    Ok(())
}

fn cmd_compare(common: &CommonArgs) -> Result<(), CliError> {
    let cfg = build_config(Model::Hybrid, common)?;
    if cfg.loss.is_sweep() || cfg.cbr.is_sweep() {
        return Err(CliError::Config(
            "compare takes single loss/cbr values".into(),
        ));
    }
    let report = compare_models(&cfg)?;
    for r in &report.per_model {
        println!(
            "{:>6}: mean completion {:.3} s, core bytes {:.0}, mean core stress {:.3}",
            r.model.as_str(),
            r.mean_completion_s,
            r.mean_core_content_bytes,
            r.mean_core_stress,
        );
    }
    for (label, base) in [("p2p", Model::P2p), ("www", Model::Www)] {
        println!(
            "hybrid vs {label}: completion -{:.1}%, core bytes -{:.1}%",
            report.reduction_pct(base, |r| r.mean_completion_s),
            report.reduction_pct(base, |r| r.mean_core_content_bytes),
        );
    }
    println!("reports written to {}", common.out.display());
    Ok(())
}

fn cmd_sweep(args: &SimulateArgs) -> Result<(), CliError> {
    let model: Model = args
        .model
        .parse()
        .map_err(|_| CliError::Config(format!("unknown model `{}`", args.model)))?;
    let cfg = build_config(model, &args.common)?;
    let points = sweep(&cfg)?;
    for (value, report) in &points {
        println!(
            "axis {:.4}: mean completion {:.3} s, mean core stress {:.3}",
            value, report.mean_completion_s, report.mean_core_stress,
        );
    }
    println!("reports written to {}", args.common.out.display());
    Ok(())
}

fn cmd_pieces(args: &PiecesArgs) -> Result<(), CliError> {
    let bytes = fs::read(&args.file)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.file.display())))?;
    let (spec, pieces) = make_pieces(
        &args.file.file_name().unwrap_or_default().to_string_lossy(),
        &bytes,
        args.piece_size,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    println!("file {} bytes, {} pieces of {} bytes", spec.size, spec.piece_count(), spec.piece_size);
    println!("index,offset,length,digest");
    for p in &pieces {
        println!(
            "{},{},{},{}",
            p.index,
            spec.piece_offset(p.index),
            p.bytes.len(),
            p.digest.hex()
        );
    }
    Ok(())
}

#[derive(Args)]
struct PiecesArgs {
    /// File to cut into pieces.
    #[arg(long)]
    file: PathBuf,
    #[arg(long, default_value_t = 256 * 1024)]
    piece_size: u32,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Compare(common) => cmd_compare(common),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Topology { cmd: TopologyCmd::PrintBuiltin } => {
            print!("{}", serialize_topology(&build_paper_topology()));
            Ok(())
        }
        Cmd::Pieces(args) => cmd_pieces(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("run failed: {msg}");
            ExitCode::from(2)
        }
    }
}
