use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod context;
mod evaluate;
mod fs;
mod gen;
mod pareto;
mod simulate;
mod train;

use context::{Context, Failure};

#[derive(Debug, Parser)]
#[command(name = "gesture", version, about = "Desk-scale gesture engine workflows")]
#[command(after_help = concat!(
    "Configuration: `--config FILE` holds `key = value` lines; `--set key=value` and\n",
    "command flags override it. Run `gesture keys` for the list of keys."
))]
struct Cli {
    /// Configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// More logging on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset: frames plus a JSON-lines manifest.
    GenData(gen::GenArgs),
    /// Rank backbone filters against a class's boxes and keep the best.
    SelectFilters(fs::SelectArgs),
    /// Fingertip boxes from a filter set, as JSON lines.
    Localize(fs::LocalizeArgs),
    /// Train the routing classifier, the pinch head or the caption head.
    TrainHead(train::TrainArgs),
    /// Run the engine over a directory of frames.
    Simulate(simulate::SimulateArgs),
    /// Score predictions against a manifest.
    Evaluate(evaluate::EvaluateArgs),
    /// Filter-selection F1 over a parameter grid.
    Sweep(fs::SweepArgs),
    /// Flag the non-dominated models of an (F1, parameters) list.
    Pareto(pareto::ParetoArgs),
    /// List configuration keys.
    Keys,
}

/// Flags shared by commands that apply filter selection.
#[derive(Debug, Clone, Args, Default)]
pub struct FsFlags {
    /// Binarization threshold.
    #[arg(long)]
    beta: Option<f64>,
    /// Odd dilation kernel size.
    #[arg(long)]
    kernel: Option<usize>,
    /// Smallest blob kept, in pixels.
    #[arg(long)]
    min_area: Option<usize>,
}

impl FsFlags {
    fn apply(&self, ctx: &mut Context) -> Result<(), Failure> {
        ctx.set_opt("fs.beta", self.beta)?;
        ctx.set_opt("fs.kernel", self.kernel)?;
        ctx.set_opt("fs.min_area", self.min_area)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrameFormat {
    Atn,
    Ppm,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut ctx = Context::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::GenData(a) => gen::run(&mut ctx, a),
        Command::SelectFilters(a) => fs::select(&mut ctx, a),
        Command::Localize(a) => fs::localize(&mut ctx, a),
        Command::TrainHead(a) => train::run(&mut ctx, a),
        Command::Simulate(a) => simulate::run(&mut ctx, a),
        Command::Evaluate(a) => evaluate::run(&mut ctx, a),
        Command::Sweep(a) => fs::sweep(&mut ctx, a),
        Command::Pareto(a) => pareto::run(a),
        Command::Keys => {
            print!("{}", gesture_core::config::describe_keys());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return Failure::Usage(first_line(&e.to_string())).report(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}

fn first_line(s: &str) -> String {
    s.lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or_default()
        .trim_start_matches("error: ")
        .to_string()
}
