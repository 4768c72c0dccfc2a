//! `pbc`: fit mixed models to longitudinal cd4 data, build threshold rules,
//! and evaluate them.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{check_key, read_config, ConfigMap, KEYS};
use crate::error::CliError;
use crate::manifest::{compare_outputs, read_manifest};

#[derive(Debug, Parser)]
#[command(name = "pbc", version, about = "Prediction-based classification for longitudinal biomarkers")]
struct Cli {
    /// key = value config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (0: all logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Set any config key, e.g. --set col.cd4=CD4. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a cohort with known parameters.
    Simulate(SimulateArgs),
    /// Fit a model and write its artifact.
    Fit(FitArgs),
    /// Select rules on a learning sample and apply them to a test sample.
    Validate(ValidateArgs),
    /// ROC curves for one or both models.
    Roc(RocArgs),
    /// Subject-level bootstrap intervals for the selected rules.
    Bootstrap(BootstrapArgs),
    /// Re-run from a manifest and check every output hash.
    Replay(ReplayArgs),
    /// List config keys.
    Keys,
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    knot_months: Option<String>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// lmm or glmm.
    #[arg(long)]
    model: Option<String>,
    /// laplace or agq.
    #[arg(long)]
    integration: Option<String>,
    /// Quadrature nodes per dimension.
    #[arg(long)]
    nodes: Option<String>,
    /// with_re or simple.
    #[arg(long)]
    variance: Option<String>,
    /// population_average or subject_specific.
    #[arg(long)]
    resubstitution: Option<String>,
    #[arg(long)]
    alpha_step: Option<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n_subjects: Option<String>,
    /// london or logistic.
    #[arg(long)]
    preset: Option<String>,
    /// Write a binary-outcome cohort dichotomized at this K.
    #[arg(long)]
    dichotomize: Option<String>,
    #[arg(long)]
    sigma2: Option<String>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// Cohort file.
    #[arg(long, alias = "data")]
    learning: Option<String>,
    /// Threshold(s) for the logistic model.
    #[arg(long = "k", alias = "thresholds")]
    thresholds: Option<String>,
    /// covariate or response.
    #[arg(long)]
    baseline_mode: Option<String>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    learning: Option<String>,
    #[arg(long)]
    test: Option<String>,
    /// predicted,observed indicator file; skips model fitting.
    #[arg(long)]
    predictions: Option<String>,
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long)]
    budgets: Option<String>,
}

#[derive(Debug, Args)]
struct RocArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    learning: Option<String>,
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long)]
    budgets: Option<String>,
    /// Experimental: score relative change between consecutive visits.
    #[arg(long)]
    pct_change: bool,
}

#[derive(Debug, Args)]
struct BootstrapArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    learning: Option<String>,
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long)]
    budgets: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write the replayed outputs here instead of the recorded directory.
    #[arg(long)]
    out: Option<String>,
}

type Pairs = Vec<(&'static str, Option<String>)>;

impl Common {
    fn pairs(&self) -> Pairs {
        vec![("out", self.out.clone()), ("seed", self.seed.clone()), ("knot_months", self.knot_months.clone())]
    }
}

impl ModelArgs {
    fn pairs(&self) -> Pairs {
        vec![
            ("model", self.model.clone()),
            ("integration", self.integration.clone()),
            ("nodes", self.nodes.clone()),
            ("variance", self.variance.clone()),
            ("resubstitution", self.resubstitution.clone()),
            ("alpha_step", self.alpha_step.clone()),
        ]
    }
}

fn flag_pairs(cmd: &Command) -> Pairs {
    match cmd {
        Command::Simulate(a) => {
            let mut p = a.common.pairs();
            p.extend([
                ("n_subjects", a.n_subjects.clone()),
                ("sim.preset", a.preset.clone()),
                ("sim.dichotomize", a.dichotomize.clone()),
                ("sim.sigma2", a.sigma2.clone()),
            ]);
            p
        }
        Command::Fit(a) => {
            let mut p = a.common.pairs();
            p.extend(a.model.pairs());
            p.extend([
                ("learning", a.learning.clone()),
                ("thresholds", a.thresholds.clone()),
                ("baseline_mode", a.baseline_mode.clone()),
            ]);
            p
        }
        Command::Validate(a) => {
            let mut p = a.common.pairs();
            p.extend(a.model.pairs());
            p.extend([
                ("learning", a.learning.clone()),
                ("test", a.test.clone()),
                ("predictions", a.predictions.clone()),
                ("thresholds", a.thresholds.clone()),
                ("budgets", a.budgets.clone()),
            ]);
            p
        }
        Command::Roc(a) => {
            let mut p = a.common.pairs();
            p.extend(a.model.pairs());
            p.extend([
                ("learning", a.learning.clone()),
                ("test", a.test.clone()),
                ("thresholds", a.thresholds.clone()),
                ("budgets", a.budgets.clone()),
                ("pct_change", a.pct_change.then(|| "true".to_string())),
            ]);
            p
        }
        Command::Bootstrap(a) => {
            let mut p = a.common.pairs();
            p.extend(a.model.pairs());
            p.extend([
                ("learning", a.learning.clone()),
                ("thresholds", a.thresholds.clone()),
                ("budgets", a.budgets.clone()),
                ("replicates", a.replicates.clone()),
            ]);
            p
        }
        Command::Replay(_) | Command::Keys => Vec::new(),
    }
}

fn merged_config(cli: &Cli) -> Result<ConfigMap, CliError> {
    let mut map = match &cli.config {
        Some(p) => read_config(p)?,
        None => ConfigMap::new(),
    };
    for s in &cli.set {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {s}")))?;
        check_key(k.trim())?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(t) = cli.threads {
        map.insert("threads".into(), t.to_string());
    }
    for (k, v) in flag_pairs(&cli.command) {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    }
    Ok(map)
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Simulate(_) => "simulate",
        Command::Fit(_) => "fit",
        Command::Validate(_) => "validate",
        Command::Roc(_) => "roc",
        Command::Bootstrap(_) => "bootstrap",
        Command::Replay(_) => "replay",
        Command::Keys => "keys",
    }
}

fn replay(cli: &Cli, args: &ReplayArgs) -> Result<String, CliError> {
    let recorded = read_manifest(&args.manifest)?;
    if !commands::COMMANDS.contains(&recorded.command.as_str()) {
        return Err(CliError::Config(format!("manifest records unknown command {}", recorded.command)));
    }
    let mut map = recorded.config.clone();
    if let Some(out) = &args.out {
        map.insert("out".into(), out.clone());
    }
    if let Some(t) = cli.threads {
        map.insert("threads".into(), t.to_string());
    }
    for input in &recorded.inputs {
        let now = manifest::hash_file(std::path::Path::new(&input.path))?;
        if now.sha256 != input.sha256 {
            return Err(CliError::Mismatch(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let outcome = commands::run(&recorded.command, &map)?;
    let diffs = compare_outputs(&recorded.outputs, &outcome.manifest.outputs);
    if !diffs.is_empty() {
        return Err(CliError::Mismatch(diffs.join("; ")));
    }
    Ok(format!("replay of {}: {} output files match", recorded.command, recorded.outputs.len()))
}

fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Keys => Ok(KEYS.iter().map(|(k, d)| format!("{k:<18} {d}")).collect::<Vec<_>>().join("\n")),
        Command::Replay(args) => replay(cli, args),
        cmd => {
            let map = merged_config(cli)?;
            Ok(commands::run(command_name(cmd), &map)?.summary)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
