//! `cetool`: coded-exposure toolkit front end.

mod commands;
mod config;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::TypedValueParser as _;
use clap::{Args, Parser, Subcommand};
use coded_exposure::energy::{Link, SweepParameter};
use coded_exposure::ingest::FrameFormat;
use coded_exposure::stats::ContrastMode;
use coded_exposure::Error;

#[derive(Debug, Parser)]
#[command(name = "cetool", version, about = "Coded-exposure video compression toolkit")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Flat `key = value` file of default flags; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,

    /// Root seed; every random stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a frame sequence, convert to linear gray, resize and center-crop.
    Ingest(IngestArgs),
    /// Generate a baseline tile pattern.
    GenPattern(GenPatternArgs),
    /// Learn a decorrelating tile pattern from video clips.
    TrainPattern(TrainArgs),
    /// Encode one clip into a coded image.
    Encode(EncodeArgs),
    /// Tile correlation statistics and decorrelation loss.
    Stats(StatsArgs),
    /// Edge energy report and parameter sweeps.
    Energy(EnergyArgs),
    /// Cycle-level pixel-array simulation of one capture.
    Hwsim(HwsimArgs),
    /// Check the encoder against the pixel-array simulator on built-in fixtures.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Frame directory or multi-image file.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Output directory for the processed frames.
    #[arg(short, long, value_name = "DIR")]
    pub output: PathBuf,
    /// Input format (pgm8, pgm16, png); detected per file when omitted.
    #[arg(long)]
    pub format: Option<FrameFormat>,
    /// Keep input codes as-is instead of undoing the display transfer function.
    #[arg(long)]
    pub no_linearize: bool,
    /// Target length of the shorter side before cropping.
    #[arg(long, default_value_t = 112)]
    pub short_side: usize,
    /// Side of the centered square crop.
    #[arg(long, default_value_t = 112)]
    pub crop: usize,
    /// Output PGM bit depth (8 or 16).
    #[arg(long, default_value_t = 16, value_parser = clap::builder::PossibleValuesParser::new(["8", "16"]).map(|s| s.parse::<u8>().unwrap()))]
    pub bits: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum KindArg {
    Long,
    Short,
    Random,
    SparseRandom,
}

#[derive(Debug, Args)]
pub struct GenPatternArgs {
    /// Baseline family.
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Exposure slots per clip.
    #[arg(long = "T", value_name = "T", default_value_t = 16)]
    pub slots: usize,
    /// Tile side.
    #[arg(long = "M", value_name = "M", default_value_t = 8)]
    pub tile: usize,
    /// Exposure probability of the random pattern.
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    /// Exposure window length of the short pattern.
    #[arg(long, default_value_t = 8)]
    pub period: usize,
    /// First exposed slot of the short pattern.
    #[arg(long, default_value_t = 0)]
    pub offset: usize,
    /// Pattern file to write.
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

/// Where clips come from: frame sequences cut into windows, or the seeded
/// synthetic corpus.
#[derive(Debug, Args)]
pub struct ClipSource {
    /// Frame sequence (directory or multi-image file); repeatable.
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic")]
    pub input: Vec<PathBuf>,
    /// Input format (pgm8, pgm16, png); detected per file when omitted.
    #[arg(long)]
    pub format: Option<FrameFormat>,
    /// Undo the display transfer function on load (frames written by `ingest` are already linear).
    #[arg(long)]
    pub linearize: bool,
    /// Frames between consecutive clip windows (default: T).
    #[arg(long)]
    pub stride: Option<usize>,
    /// Use this many synthetic clips instead of files.
    #[arg(long, value_name = "CLIPS")]
    pub synthetic: Option<usize>,
    /// Synthetic frame height.
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    /// Synthetic frame width.
    #[arg(long, default_value_t = 32)]
    pub width: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: ClipSource,
    /// Exposure slots per clip.
    #[arg(long = "T", value_name = "T", default_value_t = 16)]
    pub slots: usize,
    /// Tile side.
    #[arg(long = "M", value_name = "M", default_value_t = 8)]
    pub tile: usize,
    /// Passes over the training clips.
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    /// Clips per optimizer step.
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    /// Contrast encoding: dataset or per-sample.
    #[arg(long, default_value = "dataset")]
    pub contrast: ContrastMode,
    /// Train on raw sums instead of exposure-normalized values.
    #[arg(long)]
    pub no_normalize: bool,
    /// Pattern file to write.
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
    /// CSV of per-step and per-epoch losses.
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub source: ClipSource,
    /// Pattern file.
    #[arg(long, value_name = "FILE")]
    pub pattern: PathBuf,
    /// Index of the clip window to encode.
    #[arg(long, default_value_t = 0)]
    pub clip: usize,
    /// Divide each value by its exposure count.
    #[arg(long)]
    pub normalize: bool,
    /// Coded image file to write.
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
    /// Also write an 8-bit PGM preview.
    #[arg(long, value_name = "FILE")]
    pub pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Coded image files to analyse; needs --M.
    #[arg(long, value_name = "FILE", num_args = 1.., conflicts_with_all = ["pattern", "input", "synthetic"])]
    pub coded: Vec<PathBuf>,
    /// Tile side for --coded inputs (taken from the pattern otherwise).
    #[arg(long = "M", value_name = "M")]
    pub tile: Option<usize>,
    /// Pattern to evaluate on the clip source.
    #[arg(long, value_name = "FILE")]
    pub pattern: Option<PathBuf>,
    #[command(flatten)]
    pub source: ClipSource,
    /// Contrast encoding: dataset or per-sample.
    #[arg(long, default_value = "dataset")]
    pub contrast: ContrastMode,
    /// With --pattern: use raw sums instead of exposure-normalized values.
    #[arg(long)]
    pub no_normalize: bool,
    /// CSV file for the correlation matrix.
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LinkArg {
    ShortWifi,
    LongLora,
    None,
    All,
}

impl LinkArg {
    pub fn links(self) -> Vec<Link> {
        match self {
            LinkArg::ShortWifi => vec![Link::ShortWifi],
            LinkArg::LongLora => vec![Link::LongLora],
            LinkArg::None => vec![Link::None],
            LinkArg::All => vec![Link::ShortWifi, Link::LongLora, Link::None],
        }
    }
}

#[derive(Debug, Args)]
pub struct EnergyArgs {
    /// Sensing energy per pixel readout (pJ).
    #[arg(long, default_value_t = 220.0)]
    pub e_sense: f64,
    /// Share of the sensing energy spent in ADC and MIPI.
    #[arg(long, default_value_t = 0.956)]
    pub adc_mipi_fraction: f64,
    /// Pattern-control energy per pixel per slot (pJ).
    #[arg(long, default_value_t = 9.0)]
    pub e_ce: f64,
    /// WiFi backscatter energy per pixel (pJ).
    #[arg(long, default_value_t = 43.04)]
    pub e_wifi: f64,
    /// LoRa backscatter energy per pixel (pJ).
    #[arg(long, default_value_t = 7.4e6)]
    pub e_lora: f64,
    /// Exposure slots per coded frame.
    #[arg(long = "T", value_name = "T", default_value_t = 16)]
    pub slots: u32,
    /// Bits per raw pixel.
    #[arg(long, default_value_t = 8)]
    pub bits: u32,
    /// Bits per coded pixel.
    #[arg(long, default_value_t = 8)]
    pub coded_bits: u32,
    /// Charge the control energy once per readout rather than per slot.
    #[arg(long)]
    pub ce_per_readout: bool,
    /// Wireless link to report.
    #[arg(long, value_enum, default_value = "all")]
    pub link: LinkArg,
    /// Parameter to sweep (e-sense, adc-mipi-fraction, e-ce, e-wifi, e-lora, slots).
    #[arg(long, requires = "values")]
    pub sweep: Option<SweepParameter>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',', requires = "sweep")]
    pub values: Vec<f64>,
    /// CSV file for the report or sweep.
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HwsimArgs {
    #[command(flatten)]
    pub source: ClipSource,
    /// Pattern file.
    #[arg(long, value_name = "FILE")]
    pub pattern: PathBuf,
    /// Index of the clip window to capture.
    #[arg(long, default_value_t = 0)]
    pub clip: usize,
    /// Pattern clock (Hz).
    #[arg(long, default_value_t = 20e6)]
    pub clock_hz: f64,
    /// Photodiode full-well capacity in charge units (unlimited when omitted).
    #[arg(long)]
    pub pd_full_well: Option<u64>,
    /// Floating-diffusion capacity in charge units (unlimited when omitted).
    #[arg(long)]
    pub fd_capacity: Option<u64>,
    /// Pattern-control energy per pixel per slot (pJ), for the energy line.
    #[arg(long, default_value_t = 9.0)]
    pub e_ce: f64,
    /// JSON file for the per-slot event trace.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    /// Coded image file for the FD readout.
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Print only failures and the final line.
    #[arg(long)]
    pub quiet: bool,
}

/// One-line, machine-parsable error report.
fn report(err: &Error) {
    let msg = err.to_string().replace(['\n', '\r'], " ");
    eprintln!("error: kind={} msg={}", err.kind(), msg);
}

fn main() -> ExitCode {
    let args = match config::merge_config(std::env::args_os().collect()) {
        Ok(args) => args,
        Err(e) => {
            report(&e);
            return ExitCode::from(1);
        }
    };
    let cli = Cli::parse_from(args);
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            report(&Error::InvalidParameter(e.to_string()));
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn every_flag_is_documented() {
        let mut cmd = Cli::command();
        cmd.build();
        let mut missing = Vec::new();
        for sub in cmd.get_subcommands() {
            assert!(sub.get_about().is_some(), "{} has no description", sub.get_name());
            let help = sub.clone().render_long_help().to_string();
            for arg in sub.get_arguments() {
                let Some(long) = arg.get_long() else { continue };
                if ["help", "version"].contains(&long) {
                    continue;
                }
                if arg.get_help().is_none() || !help.contains(&format!("--{long}")) {
                    missing.push(format!("{} --{long}", sub.get_name()));
                }
            }
        }
        assert!(missing.is_empty(), "undocumented flags: {missing:?}");
    }

    #[test]
    fn subcommand_names_match_config_splicing() {
        let cmd = Cli::command();
        let names: Vec<&str> = cmd.get_subcommands().map(|s| s.get_name()).collect();
        assert_eq!(names, config::SUBCOMMANDS);
    }
}
