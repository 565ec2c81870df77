use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use glider::harness::{cmd_ablate, cmd_eval, cmd_synth, cmd_train, parse_config, summarize, ResultRow};
use glider::train::Variant;

#[derive(Parser)]
#[command(name = "glider", version, about = "Node-level out-of-distribution generalization on graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the leave-one-domain-out protocol for the configured variant(s).
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a saved checkpoint on one graph.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        nodes: PathBuf,
        /// Directory for the metrics CSV (default: the checkpoint directory).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the configured synthetic domains as edge lists and node tables.
    Synth {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the protocol once per listed variant.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "GLIDER,GLIDER-C,GLIDER-A,ERM")]
        variants: Vec<String>,
    },
}

fn print_summary(rows: &[ResultRow]) {
    let metrics: Vec<_> = rows.iter().map(|r| r.metrics.clone()).collect();
    println!("{:<10} {:>6} {:>9} {:>9}", "variant", "runs", "accuracy", "macro_f1");
    for (v, acc, f1, n) in summarize(&metrics) {
        println!("{:<10} {:>6} {:>9.4} {:>9.4}", v.as_str(), n, acc, f1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config } => {
            let spec = parse_config(&config)?;
            let rows = cmd_train(&spec)?;
            print_summary(&rows);
            println!("results in {}", spec.output_dir.display());
        }
        Command::Eval {
            checkpoint,
            edges,
            nodes,
            output,
        } => {
            let m = cmd_eval(&checkpoint, &edges, &nodes, output.as_deref())
                .with_context(|| format!("evaluating {}", checkpoint.display()))?;
            println!("accuracy {:.4}\nmacro_f1 {:.4}", m.accuracy, m.macro_f1);
        }
        Command::Synth { config } => {
            let spec = parse_config(&config)?;
            let files = cmd_synth(&spec)?;
            println!("wrote {} files to {}", files.len(), spec.output_dir.display());
        }
        Command::Ablate { config, variants } => {
            let spec = parse_config(&config)?;
            let variants = variants
                .iter()
                .map(|v| v.parse::<Variant>())
                .collect::<glider::Result<Vec<_>>>()?;
            let rows = cmd_ablate(&spec, &variants)?;
            print_summary(&rows);
            println!("results in {}", spec.output_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
