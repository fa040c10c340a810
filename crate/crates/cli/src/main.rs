use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use soliton_well::scenario::{self, OutputWriter, ScenarioConfig};

#[derive(Parser)]
#[command(name = "soliton-well", version, about = "Soliton-in-a-well simulator and diagnostics")]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides SOLITON_WELL_OUT and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true, env = "SOLITON_WELL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline of a scenario.
    Run,
    /// Check a scenario without running it; prints the error list as JSON.
    Validate,
    /// Solve the stationary profile only.
    Profile,
    /// Recompute diagnostics from the snapshots of a finished run (`--out`).
    Report,
}

fn load(cli: &Cli) -> Result<(ScenarioConfig, String)> {
    let path = cli.config.as_ref().context("--config is required")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = ScenarioConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok((cfg, text))
}

fn execute(cli: &Cli) -> Result<bool> {
    match cli.command {
        Command::Validate => {
            let errors = match load(cli) {
                Ok((cfg, _)) => scenario::validate(&cfg),
                Err(e) => vec![format!("{e:#}")],
            };
            println!("{}", serde_json::json!({ "errors": errors }));
            Ok(errors.is_empty())
        }
        Command::Run => {
            let (cfg, text) = load(cli)?;
            let errors = scenario::validate(&cfg);
            if !errors.is_empty() {
                println!("{}", serde_json::json!({ "errors": errors }));
                return Ok(false);
            }
            let out = scenario::output_dir(&cfg, cli.out.as_deref());
            let outcome = scenario::run(&cfg, &text, &out)?;
            if !cli.quiet {
                println!(
                    "{}: {} files in {} ({:.1} s)",
                    cfg.name,
                    outcome.manifest.files.len(),
                    outcome.out_dir.display(),
                    outcome.manifest.wall_time_s
                );
            }
            Ok(true)
        }
        Command::Profile => {
            let (cfg, text) = load(cli)?;
            let errors = scenario::validate(&cfg);
            if !errors.is_empty() {
                println!("{}", serde_json::json!({ "errors": errors }));
                return Ok(false);
            }
            let out = scenario::output_dir(&cfg, cli.out.as_deref());
            let mut w = OutputWriter::new(&out, &cfg.outputs.formats)?;
            w.write_bytes("config.toml", text.as_bytes())?;
            let p = scenario::write_profile(&cfg, &mut w)?;
            if !cli.quiet {
                println!("E = {:.12}, mass = {:.12}, residual = {:.3e}", p.e, p.mass(), p.residual);
            }
            Ok(true)
        }
        Command::Report => {
            let Some(dir) = cli.out.as_ref() else { bail!("report needs --out pointing at a finished run") };
            let m = scenario::report_from_snapshots(dir)?;
            if !cli.quiet {
                println!("{}: manifest lists {} files", m.name, m.files.len());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
