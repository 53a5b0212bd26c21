//! `wgfi` command line: fault-injection campaigns over quantized CNNs.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use wgfi::io::{generate_dataset, generate_toy_model, save_dataset, save_model, ToySpec};
use wgfi::{BitWidth, ClampMode, Engine, Granularity};

use crate::commands::{load_model_arg, Campaign};
use crate::config::{CampaignConfig, Command, ExposureName, Format};
use crate::error::{CliError, CliResult};
use crate::output::{meta, parse_meta, render, write_or_print, Sources};

#[derive(Debug, Parser)]
#[command(
    name = "wgfi",
    version,
    about = "Soft-error injection for direct and Winograd quantized convolution"
)]
pub struct Cli {
    /// Worker threads for trials (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "WGFI_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Accuracy versus BER.
    Sweep(CampaignArgs),
    /// Accuracy gained by keeping each conv layer fault-free.
    LayerVuln(CampaignArgs),
    /// Accuracy gained by keeping all MULs, or all ADDs, fault-free.
    OptypeVuln(CampaignArgs),
    /// Choose op segments to triplicate until a target accuracy is met.
    PlanTmr(CampaignArgs),
    /// Evaluate a TMR plan under faults.
    EvalTmr(CampaignArgs),
    /// Record fault-free activation ranges for constrained activations.
    ProfileRanges(CampaignArgs),
    /// Re-run a campaign from its result file.
    Replay(ReplayArgs),
    /// Write a random toy model.
    GenModel(GenModelArgs),
    /// Write a random dataset for a model.
    GenDataset(GenDatasetArgs),
}

/// Campaign flags. Each overrides the same key of `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct CampaignArgs {
    /// TOML or JSON file with any of the keys below.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Model manifest, or builtin:toycnn-int8 / builtin:toycnn-int16.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Random inputs to generate when no dataset is given.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub dataset_seed: Option<u64>,
    #[arg(long)]
    pub engine: Option<Engine>,
    #[arg(long, value_enum)]
    pub exposure: Option<ExposureName>,
    /// Also execute (and expose) the Winograd filter transform.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub emit_filter_transform: Option<bool>,
    #[arg(long)]
    pub granularity: Option<Granularity>,
    /// Comma-separated bit error rates.
    #[arg(long, value_delimiter = ',')]
    pub ber: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<u32>,
    /// `all`, or `;`-separated items such as `layers=0,2;types=mul;exclude-ops=0..100`.
    #[arg(long)]
    pub scope: Option<String>,
    #[arg(long)]
    pub clamp_profile: Option<PathBuf>,
    #[arg(long)]
    pub clamp_mode: Option<ClampMode>,
    #[arg(long)]
    pub segment_size: Option<u64>,
    #[arg(long)]
    pub target_acc: Option<f64>,
    #[arg(long)]
    pub mul_weight: Option<f64>,
    #[arg(long)]
    pub add_weight: Option<f64>,
    /// Protect at least one segment even if the target already holds.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub literal_do_while: Option<bool>,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub profile_out: Option<PathBuf>,
    /// Record one fault trace per BER point here, enabling exact replay.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

impl CampaignArgs {
    fn flags(&self) -> CampaignConfig {
        CampaignConfig {
            model: self.model.clone(),
            dataset: self.dataset.clone(),
            samples: self.samples,
            dataset_seed: self.dataset_seed,
            engine: self.engine,
            exposure: self.exposure,
            emit_filter_transform: self.emit_filter_transform,
            granularity: self.granularity,
            ber: self.ber.clone(),
            seed: self.seed,
            trials: self.trials,
            scope: self.scope.clone(),
            clamp_profile: self.clamp_profile.clone(),
            clamp_mode: self.clamp_mode,
            segment_size: self.segment_size,
            target_acc: self.target_acc,
            mul_weight: self.mul_weight,
            add_weight: self.add_weight,
            literal_do_while: self.literal_do_while,
            plan: self.plan.clone(),
            profile_out: self.profile_out.clone(),
            trace_dir: self.trace_dir.clone(),
            format: self.format,
            output: self.output.clone(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Result file (CSV or JSON) written by a campaign command.
    #[arg(long)]
    pub result: PathBuf,
    /// Trace directory, if it moved since the campaign ran.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Fail unless the regenerated result is byte-identical.
    #[arg(long)]
    pub check: bool,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenModelArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Copy a built-in model instead of generating one.
    #[arg(long, conflicts_with_all = ["bits", "in_channels", "channels", "input_hw", "classes"])]
    pub builtin: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub bits: u32,
    #[arg(long, default_value_t = 3)]
    pub in_channels: usize,
    /// Output channels per 3x3 conv + ReLU block.
    #[arg(long, value_delimiter = ',', default_value = "8,8")]
    pub channels: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "8,8")]
    pub input_hw: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GenDatasetArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> CliResult<()> {
    let workers = cli.workers;
    if workers == Some(0) {
        return Err(CliError::config("workers must be at least 1"));
    }
    match cli.command {
        Cmd::Sweep(a) => run_campaign(Command::Sweep, &a, workers),
        Cmd::LayerVuln(a) => run_campaign(Command::LayerVuln, &a, workers),
        Cmd::OptypeVuln(a) => run_campaign(Command::OptypeVuln, &a, workers),
        Cmd::PlanTmr(a) => run_campaign(Command::PlanTmr, &a, workers),
        Cmd::EvalTmr(a) => run_campaign(Command::EvalTmr, &a, workers),
        Cmd::ProfileRanges(a) => run_campaign(Command::ProfileRanges, &a, workers),
        Cmd::Replay(a) => replay(&a, workers),
        Cmd::GenModel(a) => gen_model(&a),
        Cmd::GenDataset(a) => gen_dataset(&a),
    }
}

fn run_campaign(command: Command, args: &CampaignArgs, workers: Option<usize>) -> CliResult<()> {
    let flags = args.flags();
    let file_config = args.config.as_deref().map(CampaignConfig::load).transpose()?;
    let merged = file_config.clone().unwrap_or_default().overlay(&flags);
    let campaign = Campaign::prepare(command, merged, workers, false)?;
    let table = campaign.run()?;
    let sources = Sources {
        file: args.config.as_deref(),
        file_config: file_config.as_ref(),
        flags: &flags,
    };
    let meta = meta(command, &campaign.config, &sources);
    let text = render(&meta, &table, campaign.config.format.unwrap_or_default());
    write_or_print(&text, campaign.config.output.as_deref())
}

fn replay(args: &ReplayArgs, workers: Option<usize>) -> CliResult<()> {
    let original = std::fs::read_to_string(&args.result)
        .map_err(|e| CliError::config(format!("{}: {e}", args.result.display())))?;
    let meta = parse_meta(&original)?;
    let command: Command = meta_str(&meta, "command")?.parse()?;
    let mut config: CampaignConfig = serde_json::from_value(meta.get("config").cloned().unwrap_or(Value::Null))
        .map_err(|e| CliError::config(format!("meta config: {e}")))?;
    if args.trace_dir.is_some() {
        config.trace_dir = args.trace_dir.clone();
    }
    let format = config.format.unwrap_or_default();
    let campaign = Campaign::prepare(command, config, workers, true)?;
    let table = campaign.run()?;
    let text = render(&meta, &table, format);
    if args.check && text != original {
        return Err(CliError::ReplayMismatch {
            path: args.result.clone(),
            detail: first_difference(&original, &text),
        });
    }
    if args.check && args.output.is_none() {
        log::info!("replay matches {}", args.result.display());
        return Ok(());
    }
    write_or_print(&text, args.output.as_deref())
}

fn meta_str<'a>(meta: &'a Value, key: &str) -> CliResult<&'a str> {
    meta.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| CliError::config(format!("meta has no '{key}'")))
}

fn first_difference(a: &str, b: &str) -> String {
    let mut lines = a.lines().zip(b.lines()).enumerate();
    match lines.find(|(_, (x, y))| x != y) {
        Some((i, (x, y))) => format!("line {}: expected '{x}', got '{y}'", i + 1),
        None => format!("{} lines expected, {} produced", a.lines().count(), b.lines().count()),
    }
}

fn gen_model(args: &GenModelArgs) -> CliResult<()> {
    let model = match &args.builtin {
        Some(name) => wgfi::io::builtin_model(name)?,
        None => {
            let bw = BitWidth::try_from(args.bits)?;
            let [h, w] = <[usize; 2]>::try_from(args.input_hw.as_slice())
                .map_err(|_| CliError::config("input-hw takes two values"))?;
            let mut spec = ToySpec::new(bw, args.in_channels, args.channels.clone(), [h, w]);
            spec.classes = Some(args.classes);
            if let Some(name) = &args.name {
                spec.name = name.clone();
            }
            generate_toy_model(&spec, args.seed)?
        }
    };
    let path = save_model(&model, &args.out)?;
    println!("{}", path.display());
    Ok(())
}

fn gen_dataset(args: &GenDatasetArgs) -> CliResult<()> {
    if args.samples == 0 {
        return Err(CliError::config("samples must be at least 1"));
    }
    let model = load_model_arg(&args.model)?;
    let data = generate_dataset(&model, args.samples, args.seed);
    let path = save_dataset(&data, &args.out)?;
    println!("{}", path.display());
    Ok(())
}

/// Entry point shared by the binary: parse, run, report errors as JSON on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.record());
            e.exit_code()
        }
    }
}
