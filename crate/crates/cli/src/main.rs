use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use debtmine::pipeline::config::apply_override;
use debtmine::pipeline::{cmd_clean, cmd_evaluate, cmd_factors, cmd_report, cmd_synth, PipelineConfig, REPORT_FILE};
use debtmine::survey::GeneratorConfig;
use debtmine::{Error, Result};

/// Survey mining for consumer indebtedness: clean, extract factors, evaluate classifiers.
#[derive(Parser)]
#[command(name = "debtmine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic survey, its schema and a ready-to-run pipeline.toml.
    Synth(SynthArgs),
    /// Homals diagnostics and removal of systematic non-responders.
    Clean(StageArgs),
    /// Parallel analysis, factor extraction, rotation and reliability.
    Factors(StageArgs),
    /// Stepwise classifier evaluation with repeated cross-validation.
    Evaluate(StageArgs),
    /// Assemble report.md from a finished run.
    Report(StageArgs),
    /// Run clean, factors, evaluate and report in order.
    Run(StageArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to write the survey into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Pipeline config whose [synth] section and seed are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a generator setting, e.g. `synth.n=500`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the config's run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override any config key, e.g. `evaluation.repeats=5`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl StageArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::from_path(&self.config, &self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.paths.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn synth(args: &SynthArgs) -> Result<()> {
    let (base_gen, base_seed) = match &args.config {
        Some(path) => {
            let cfg = PipelineConfig::from_path(path, &[])?;
            (cfg.synth, Some(cfg.seed))
        }
        None => (GeneratorConfig::default(), None),
    };
    let seed = args
        .seed
        .or(base_seed)
        .ok_or_else(|| Error::validation("synth needs --seed or a --config with a seed"))?;
    let mut table = toml::Table::new();
    let gen_table = toml::Table::try_from(&base_gen).expect("generator config serializes");
    table.insert("synth".into(), toml::Value::Table(gen_table));
    for o in &args.overrides {
        if !o.trim_start().starts_with("synth.") {
            return Err(Error::validation(format!("synth only accepts `synth.*` overrides, got `{o}`")));
        }
        apply_override(&mut table, o)?;
    }
    let gen: GeneratorConfig = table
        .remove("synth")
        .expect("synth table present")
        .try_into()
        .map_err(|e: toml::de::Error| Error::validation(format!("synth settings: {}", e.message())))?;
    let out = cmd_synth(&gen, seed, &args.out)?;
    println!("wrote {} rows to {}", out.rows, out.data.display());
    println!("schema: {}", out.schema.display());
    println!("config: {}", out.config.display());
    Ok(())
}

fn clean(cfg: &PipelineConfig) -> Result<()> {
    let s = cmd_clean(cfg)?;
    println!("rows: {} -> {} ({} removed)", s.rows_before, s.rows_after, s.rows_before - s.rows_after);
    for (group, var, cat) in &s.flagged {
        println!("flagged [{group}] {var}: {cat}");
    }
    Ok(())
}

fn factors(cfg: &PipelineConfig) -> Result<()> {
    let s = cmd_factors(cfg)?;
    println!("parallel analysis retained {}; extracted {}", s.retained, s.factors);
    for (name, alpha) in &s.alphas {
        println!("alpha {name}: {alpha:.3}");
    }
    Ok(())
}

fn evaluate(cfg: &PipelineConfig) -> Result<()> {
    let s = cmd_evaluate(cfg)?;
    for (mode, res) in &s.results {
        for t in &res.tests {
            println!(
                "{} {} {}: step3 {:.4} vs step2 {:.4}, p = {:.4}{}",
                mode.as_str(),
                t.variant.as_str(),
                t.family,
                t.step3_mean,
                t.step2_mean,
                t.test.p,
                if t.test.significant { " (significant)" } else { "" }
            );
        }
    }
    Ok(())
}

fn report(run_dir: &Path) -> Result<()> {
    cmd_report(run_dir)?;
    println!("wrote {}", run_dir.join(REPORT_FILE).display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Clean(a) => clean(&a.load()?),
        Command::Factors(a) => factors(&a.load()?),
        Command::Evaluate(a) => evaluate(&a.load()?),
        Command::Report(a) => report(&a.load()?.paths.out),
        Command::Run(a) => {
            let cfg = a.load()?;
            clean(&cfg)?;
            factors(&cfg)?;
            evaluate(&cfg)?;
            report(&cfg.paths.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(hint) = missing_hint(&e) {
                eprintln!("{hint}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn missing_hint(e: &Error) -> Option<&'static str> {
    match e {
        Error::Stage { source, .. } => missing_hint(source),
        Error::MissingArtifact(_) => Some("hint: run the earlier stages first, or `debtmine run` for all of them"),
        _ => None,
    }
}
