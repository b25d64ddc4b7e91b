//! `pianovis` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 detection or processing failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(name = "pianovis", version, about = "Piano transcription from overhead keyboard video")]
struct Cli {
    /// Settings file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Frame rate of the video; overrides the settings file.
    #[arg(long, global = true)]
    fps: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Locate the keyboard and its keys in a hands-free frame.
    DetectKeyboard(DetectArgs),
    /// Cut labelled per-key samples from a frame directory and its MIDI file.
    Extract(ExtractArgs),
    /// Train one network on a dataset.
    Train(TrainArgs),
    /// Accuracy and confusion matrix of a network on a dataset.
    Evaluate(EvaluateArgs),
    /// Turn a frame directory into a MIDI file.
    Transcribe(TranscribeArgs),
    /// Render a synthetic performance: frames, MIDI and true layout.
    Synth(SynthArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Onoff,
    Intensity,
    IntensityFlow,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ColorArg {
    White,
    Black,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// A frame directory (its background frame is used) or a single PGM/PPM file.
    #[arg(long)]
    background: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Lowest MIDI note on the keyboard; overrides the settings file.
    #[arg(long)]
    first_key: Option<u8>,
    /// Number of keys; overrides the settings file.
    #[arg(long)]
    keys: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    layout: PathBuf,
    #[arg(long)]
    midi: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Output file; without `--color`, `_white` and `_black` files are written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    color: Option<ColorArg>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    model: TaskArg,
    #[arg(long, value_enum)]
    color: ColorArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the recipe's epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Per-epoch metrics; defaults to the weights path with `.log` appended.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    weights: PathBuf,
}

#[derive(Args, Debug)]
pub struct TranscribeArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    layout: PathBuf,
    /// On/off weights for white then black keys.
    #[arg(long, num_args = 2, value_names = ["WHITE", "BLACK"], required = true)]
    weights_onoff: Vec<PathBuf>,
    /// Intensity weights for white then black keys (stacked or flow).
    #[arg(long, num_args = 2, value_names = ["WHITE", "BLACK"], required = true)]
    weights_intensity: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Use raw per-frame decisions without smoothing.
    #[arg(long)]
    no_debounce: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    midi: PathBuf,
    /// Also write the true key layout here.
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long, default_value_t = 48)]
    first_key: u8,
    #[arg(long, default_value_t = 24)]
    keys: usize,
    #[arg(long, default_value_t = 40)]
    notes: usize,
    #[arg(long, default_value_t = 14)]
    white_width: usize,
    #[arg(long, default_value_t = 64)]
    key_height: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Only play keys of this color.
    #[arg(long, value_enum)]
    color: Option<ColorArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match settings(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::DetectKeyboard(a) => commands::detect(a, &cfg),
        Command::Extract(a) => commands::extract(a, &cfg),
        Command::Train(a) => commands::train(a, &cfg),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Transcribe(a) => commands::transcribe(a, &cfg),
        Command::Synth(a) => commands::synth(a, &cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn settings(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(fps) = cli.fps {
        cfg.set("fps", &fps.to_string())?;
    }
    Ok(cfg)
}
