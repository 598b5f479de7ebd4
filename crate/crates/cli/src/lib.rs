//! The `glioseg` command line: ingest, preprocess, train, evaluate, segment
//! and report, each writing a reproducibility record beside its outputs.

mod commands;
pub mod record;
pub mod render;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use glioseg::models::{Arch, Task};
use glioseg::Error;

#[derive(Debug, Parser)]
#[command(name = "glioseg", version, about = "Brain MRI tumor detection and segmentation pipeline")]
pub struct Cli {
    /// Log verbosity: off, error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan a yes/no dataset folder into a split manifest.
    Ingest(IngestArgs),
    /// Write preprocessed 8-bit grayscale copies of a manifest's images.
    Preprocess(PreprocessArgs),
    /// Train (or fine-tune with --init) a model on a preprocessed manifest.
    Train(TrainArgs),
    /// Score a checkpoint on one manifest split.
    Evaluate(EvaluateArgs),
    /// Segment a single image with K-means or a trained model.
    Segment(SegmentArgs),
    /// Render a confusion grid and training curves.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Manifest JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = glioseg::dataset::DEFAULT_SPLIT_RATIOS)]
    pub ratios: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for images, masks and the new manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Preprocessing config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's target side.
    #[arg(long)]
    pub side: Option<usize>,
    /// Augmented copies to write per training image.
    #[arg(long, default_value_t = 0)]
    pub materialize: usize,
    /// Augmentation config JSON used by --materialize.
    #[arg(long)]
    pub augment_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<Arch>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    /// Training config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoints and history.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to fine-tune instead of training from scratch.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Input side length (images must already have this size).
    #[arg(long)]
    pub side: Option<usize>,
    /// Channels of the first encoder level.
    #[arg(long)]
    pub base: Option<usize>,
    /// UNet encoder levels.
    #[arg(long)]
    pub depth: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = glioseg::evaluation::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Output directory for the report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Kmeans,
    Model,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long, value_enum, default_value_t = Method::Kmeans)]
    pub method: Method,
    #[arg(long)]
    pub image: PathBuf,
    /// Number of K-means clusters.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Smallest tumor component kept, in pixels.
    #[arg(long, default_value_t = glioseg::classical_seg::DEFAULT_MIN_AREA)]
    pub min_area: usize,
    /// Segmentation checkpoint for --method model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Overlay PNG to write.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    /// Class-index mask PNG to write.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Binary tumor mask PNG to write.
    #[arg(long)]
    pub tumor_mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// History CSV written by `train`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Report JSON written by `evaluate`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    Arch::parse(s).map_err(|e| e.to_string())
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::parse(s).map_err(|e| e.to_string())
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;

/// Exit status for a failed command.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Io { .. } | Error::Decode { .. } => EXIT_IO,
        Error::Training(_) => EXIT_TRAINING,
        _ => EXIT_INVALID,
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INVALID,
            };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .try_init();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::execute(&cli, argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
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
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_INVALID);
        assert_eq!(exit_code(&Error::Validation("x".into())), EXIT_INVALID);
        assert_eq!(exit_code(&Error::Training("x".into())), EXIT_TRAINING);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(exit_code(&Error::io("p", io)), EXIT_IO);
    }

    #[test]
    fn ratios_parse_as_three_values() {
        let cli = Cli::try_parse_from(["glioseg", "ingest", "--data-dir", "d", "--out", "m.json", "--ratios", "0.8,0.1,0.1"])
            .unwrap();
        let Command::Ingest(a) = cli.command else { panic!() };
        assert_eq!(a.ratios, vec![0.8, 0.1, 0.1]);
        // The count is checked when the command runs, as a configuration error.
        let cli = Cli::try_parse_from(["glioseg", "ingest", "--data-dir", "d", "--out", "m", "--ratios", "0.5,0.5"]).unwrap();
        let Command::Ingest(a) = cli.command else { panic!() };
        assert_eq!(a.ratios.len(), 2);
    }
}
