use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use coopdiv_core::analysis::{analyze, sweep_threshold, write_threshold_csv, AnalysisConfig};
use coopdiv_core::diversity::Policy;
use coopdiv_core::synth::{generate_scenario, ScenarioSpec};
use coopdiv_core::trace::{align_to_grid, parse_records, DenseTraceSet, LinkClass};

#[derive(Parser)]
#[command(
    name = "coopdiv",
    version,
    about = "Cooperative diversity outage analysis for body-area-network channel traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Combine branches, compute outage and COD statistics, write a report.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for summary.json, curves/ and runs/.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Generate a synthetic record CSV from a scenario file.
    Synth {
        /// Scenario TOML.
        spec: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Switch-and-examine outage and switching rate for a list of thresholds.
    SweepThreshold {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated thresholds in dB.
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            required = true
        )]
        thresholds: Vec<f64>,
        /// CSV destination; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Analysis config TOML; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Record CSV files, one per subject (subject = file stem).
    #[arg(long = "input", short = 'i')]
    inputs: Vec<PathBuf>,
    /// Scenario TOML to generate in memory instead of reading inputs.
    #[arg(long, conflicts_with = "inputs")]
    scenario: Option<PathBuf>,
    /// Seed for --scenario (defaults to the scenario's own seed).
    #[arg(long, requires = "scenario")]
    seed: Option<u64>,
    /// Comma-separated subset of DL, SC, SwC.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<Policy>>,
    #[arg(long, allow_negative_numbers = true)]
    swc_threshold: Option<f64>,
    /// Sensitivity sweep as start:stop:step in dB.
    #[arg(long, allow_hyphen_values = true)]
    sweep: Option<String>,
    /// Sensitivities (dB) at which COD curves are written.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    cod_sensitivities: Option<Vec<f64>>,
    /// COD duration thresholds in seconds.
    #[arg(long, value_delimiter = ',')]
    cod_thresholds: Option<Vec<f64>>,
    /// Sensitivity (dB) used for the summary's OP and COD fields.
    #[arg(long, allow_negative_numbers = true)]
    summary_sensitivity: Option<f64>,
    /// Value written into lost-packet slots, in dB (below -100).
    #[arg(long, allow_negative_numbers = true)]
    floor: Option<f64>,
    #[arg(long)]
    delta_ms: Option<u32>,
    /// Explicit source:dest pair; repeatable.
    #[arg(long = "pair")]
    pairs: Vec<String>,
    /// Analyse every pair of the selected classes (ignores configured pairs).
    #[arg(long, conflicts_with = "pairs")]
    all: bool,
    /// Link class filter for --all; repeatable.
    #[arg(long = "class")]
    classes: Vec<LinkClass>,
}

impl CommonArgs {
    fn config(&self) -> Result<AnalysisConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                AnalysisConfig::from_toml(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => AnalysisConfig::default(),
        };
        if let Some(p) = &self.policies {
            config.policies = p.clone();
        }
        if let Some(t) = self.swc_threshold {
            config.swc_threshold_db = t;
        }
        if let Some(s) = &self.sweep {
            let parts: Vec<f64> = s
                .split(':')
                .map(str::parse)
                .collect::<Result<_, _>>()
                .with_context(|| format!("invalid --sweep '{s}'"))?;
            let [start, stop, step] = parts[..] else {
                bail!("--sweep expects start:stop:step, got '{s}'");
            };
            (
                config.sweep_start_db,
                config.sweep_stop_db,
                config.sweep_step_db,
            ) = (start, stop, step);
        }
        if let Some(c) = &self.cod_sensitivities {
            config.cod_sensitivities_db = c.clone();
        }
        if let Some(c) = &self.cod_thresholds {
            config.cod_thresholds_s = c.clone();
        }
        if let Some(s) = self.summary_sensitivity {
            config.summary_sensitivity_db = s;
        }
        if let Some(f) = self.floor {
            config.floor_db = f;
        }
        if let Some(d) = self.delta_ms {
            config.delta_ms = d;
        }
        if !self.pairs.is_empty() {
            config.pairs = self.pairs.clone();
        }
        if self.all {
            config.pairs.clear();
        }
        if !self.classes.is_empty() {
            config.classes = self.classes.clone();
        }
        config.validate()?;
        Ok(config)
    }

    fn load(&self, config: &AnalysisConfig) -> Result<Vec<DenseTraceSet>> {
        if let Some(path) = &self.scenario {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading scenario {}", path.display()))?;
            let spec = ScenarioSpec::from_toml(&text)
                .with_context(|| format!("parsing scenario {}", path.display()))?;
            let seed = self.seed.unwrap_or(spec.seed);
            let set = generate_scenario(&spec, seed)?.impute(config.floor_db)?;
            return Ok(vec![set]);
        }
        if self.inputs.is_empty() {
            bail!("no inputs: pass --input <records.csv> (repeatable) or --scenario <spec.toml>");
        }
        self.inputs
            .iter()
            .map(|p| load_records(p, config))
            .collect()
    }
}

fn load_records(path: &Path, config: &AnalysisConfig) -> Result<DenseTraceSet> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let records = parse_records(file).with_context(|| format!("parsing {}", path.display()))?;
    let subject = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(align_to_grid(&records, config.delta_ms)?
        .with_subject(subject)
        .impute(config.floor_db)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze { common, out } => {
            let config = common.config()?;
            let sets = common.load(&config)?;
            let report = analyze(&config, &sets)?;
            report
                .write_to(&out)
                .with_context(|| format!("writing report to {}", out.display()))?;
            for (class, table) in &report.summary.pooled {
                for (policy, s) in table {
                    println!(
                        "{:<9} {:<4} pairs={:<3} best_case_op={:.4} cod>{}s={:.4} cod>{}s={:.4}",
                        class.label(),
                        policy.label(),
                        s.pairs,
                        s.best_case_op,
                        config.long_outage_s,
                        s.cod_gt_long,
                        config.latency_s,
                        s.cod_gt_latency
                    );
                }
            }
            println!("report written to {}", out.display());
        }
        Command::Synth { spec, seed, out } => {
            let text = fs::read_to_string(&spec)
                .with_context(|| format!("reading scenario {}", spec.display()))?;
            let spec = ScenarioSpec::from_toml(&text)?;
            let set = generate_scenario(&spec, seed.unwrap_or(spec.seed))?;
            let mut buf = Vec::new();
            set.write_records_csv(&mut buf)?;
            fs::write(&out, buf).with_context(|| format!("writing {}", out.display()))?;
            eprintln!(
                "{} slots x {} links, {} lost packets -> {}",
                set.len(),
                set.links().count(),
                set.missing_count(),
                out.display()
            );
        }
        Command::SweepThreshold {
            common,
            thresholds,
            out,
        } => {
            let config = common.config()?;
            if !config.policies.contains(&Policy::SwitchExamine) {
                bail!("sweep-threshold needs SwC among the policies");
            }
            let sets = common.load(&config)?;
            let rows = sweep_threshold(&config, &sets, &thresholds)?;
            match out {
                Some(path) => {
                    let mut buf = Vec::new();
                    write_threshold_csv(&rows, &mut buf)?;
                    fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
                }
                None => write_threshold_csv(&rows, std::io::stdout().lock())?,
            }
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
