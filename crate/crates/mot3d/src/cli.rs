//! Command-line interface.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mot3d_core::simgen::Template;

use crate::config::{AssociatorKind, RunConfig};
use crate::pipeline;

#[derive(Debug, Parser)]
#[command(name = "mot3d", version, about = "Online 3D multi-object tracking with joint MIP association")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every subcommand that reads a run configuration.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set tracker.cls_threshold=0.9`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AssociatorArg {
    Mip,
    Hungarian,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TemplateArg {
    Lanes,
    Crossing,
    CrossingSimilar,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track every sequence under INPUT/detections into OUTPUT/<seq>.txt.
    Track {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long)]
        associator: Option<AssociatorArg>,
        #[arg(long)]
        cls_threshold: Option<f64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate result directories against KITTI tracking labels.
    Eval {
        #[arg(long, short)]
        labels: PathBuf,
        /// Results directory, optionally named as NAME=DIR. Repeat to compare.
        #[arg(long, short, required = true)]
        results: Vec<String>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate synthetic sequences under OUTPUT/{detections,labels}.
    Simulate {
        /// Scenario description (TOML); defaults are used when absent.
        #[arg(long, short)]
        scenario: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, default_value_t = 1)]
        sequences: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        template: Option<TemplateArg>,
        #[arg(long, default_value = "Car")]
        object_type: String,
    },
    /// Track and evaluate over a parameter grid, writing one CSV row per point.
    Sweep {
        /// Grid description (TOML).
        #[arg(long, short)]
        grid: PathBuf,
        /// Generate the data from this scenario ...
        #[arg(long, conflicts_with = "input", required_unless_present = "input")]
        scenario: Option<PathBuf>,
        /// ... or read it from a dataset root with detections and labels.
        #[arg(long, short)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        sequences: usize,
        #[arg(long, short)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print the effective run configuration.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

impl ConfigArgs {
    fn load(&self, extra: Vec<String>) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        overrides.extend(extra);
        if let Some(t) = self.threads {
            overrides.push(format!("run.threads={t}"));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn parse_results(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, dir)) if !name.is_empty() => (name.to_string(), PathBuf::from(dir)),
        _ => {
            let path = PathBuf::from(spec);
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| spec.to_string());
            (name, path)
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Track { input, output, associator, cls_threshold, config } => {
            let mut extra = Vec::new();
            if let Some(a) = associator {
                let name = match a {
                    AssociatorArg::Mip => "mip",
                    AssociatorArg::Hungarian => "hungarian",
                };
                extra.push(format!("tracker.associator=\"{name}\""));
            }
            if let Some(t) = cls_threshold {
                extra.push(format!("tracker.cls_threshold={t}"));
            }
            let cfg = config.load(extra)?;
            let timings = pipeline::run_track(&cfg, &input, &output)?;
            let mut frames = 0;
            let mut total = 0.0;
            for t in &timings {
                println!("{}: {} frames, {} detections, {:.3} ms/frame", t.name, t.frames, t.detections, t.mean_frame_ms());
                frames += t.frames;
                total += t.elapsed.as_secs_f64();
            }
            if frames > 0 {
                println!("{} sequences, {} frames, {:.3} ms/frame", timings.len(), frames, total * 1e3 / frames as f64);
            }
        }
        Command::Eval { labels, results, json, config } => {
            let cfg = config.load(Vec::new())?;
            let sets: Vec<(String, PathBuf)> = results.iter().map(|s| parse_results(s)).collect();
            let mut names: Vec<&str> = sets.iter().map(|(n, _)| n.as_str()).collect();
            names.sort_unstable();
            if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
                bail!("results name `{}` given twice", w[0]);
            }
            let summary = pipeline::run_eval(&cfg, &labels, &sets)?;
            print!("{}", summary.table());
            if let Some(path) = json {
                fs::write(&path, summary.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Simulate { scenario, output, sequences, seed, template, object_type } => {
            let mut sc = match &scenario {
                Some(p) => pipeline::load_scenario(p)?,
                None => Default::default(),
            };
            if let Some(s) = seed {
                sc.seed = s;
            }
            if let Some(t) = template {
                sc.template = match t {
                    TemplateArg::Lanes => Template::Lanes,
                    TemplateArg::Crossing => Template::Crossing,
                    TemplateArg::CrossingSimilar => Template::CrossingSimilar,
                };
            }
            let names = pipeline::run_simulate(&sc, sequences, &object_type, &output)?;
            println!("wrote {} sequences to {}", names.len(), output.display());
        }
        Command::Sweep { grid, scenario, input, sequences, output, config } => {
            let cfg = config.load(Vec::new())?;
            let grid = pipeline::SweepGrid::load(&grid)?;
            let data = match (scenario, input) {
                (Some(p), _) => pipeline::simulated_sequences(&cfg, &pipeline::load_scenario(&p)?, sequences)?,
                (None, Some(root)) => pipeline::dataset_sequences(&cfg, &root)?,
                (None, None) => unreachable!("clap requires one data source"),
            };
            let rows = pipeline::run_sweep(&cfg, &grid, &data)?;
            let file = File::create(&output).with_context(|| format!("creating {}", output.display()))?;
            pipeline::write_sweep_csv(BufWriter::new(file), &rows)?;
            for r in &rows {
                let assoc = match r.associator {
                    AssociatorKind::Mip => "mip",
                    AssociatorKind::Hungarian => "hungarian",
                };
                println!(
                    "beta/alpha {} w_cls {} w_aff {} w_se {} cls {} {assoc}: MOTA {:.2}% IDSW {}",
                    r.beta_over_alpha,
                    r.w_cls,
                    r.w_aff,
                    r.w_se,
                    r.cls_threshold,
                    100.0 * r.mota,
                    r.idsw
                );
            }
        }
        Command::Config { config } => {
            print!("{}", config.load(Vec::new())?.to_toml());
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
