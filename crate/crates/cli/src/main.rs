use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use leafflow_cli::config::{parse_config, preset, RunConfig, PRESETS};
use leafflow_cli::emit::emit_run;
use leafflow_cli::pipeline::{run, Check, RunOptions, RunReport, Verdict};
use leafflow_cli::sweep::{emit_sweep, sweep};

/// Exit status for configuration and pipeline errors.
const EXIT_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "leafflow", version, about = "Leaf-wise flow of the mixed scalar curvature")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its outputs.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Integrate even when the initial condition is unmet.
        #[arg(long)]
        override_hypotheses: bool,
        /// Print nothing but errors.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Run a configuration once per value of a numeric key.
    Sweep {
        config: PathBuf,
        /// Dotted key, e.g. `scenario.phi` or `params.amp`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        override_hypotheses: bool,
        /// Run the values one after another.
        #[arg(long)]
        sequential: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// List the built-in scenarios or print one as a config template.
    Presets {
        #[arg(long)]
        show: Option<String>,
    },
}

fn read_config(path: &Path) -> Result<(String, RunConfig), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let config = parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok((text, config))
}

fn out_dir(flag: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    flag.or_else(|| config.output.dir.clone()).unwrap_or_else(|| PathBuf::from("leafflow-out"))
}

fn print_checks(report: &RunReport) {
    println!("scenario: {}", report.scenario);
    if let Some(s) = &report.spectral {
        println!("lambda0 = {:.10e}  lambda1 = {:.10e}  gap = {:.6e}", s.lambda0, s.lambda1, s.gap);
    }
    for Check { name, verdict, value, bound, detail } in &report.checks {
        let v = value.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into());
        let b = bound.map(|b| format!("{b:.3e}")).unwrap_or_else(|| "-".into());
        println!("{name:<22} {verdict:<19} value {v:<10} bound {b:<10} {detail}");
    }
    println!("verdict: {}", report.verdict);
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, override_hypotheses, quiet } => (|| {
            let (_, cfg) = read_config(&config)?;
            let outcome = run(&cfg, RunOptions { override_hypotheses }).map_err(|e| e.to_string())?;
            let dir = out_dir(out, &cfg);
            emit_run(&outcome, &dir).map_err(|e| format!("emit stage failed: {e}"))?;
            if !quiet {
                print_checks(&outcome.report);
                println!("outputs: {}", dir.display());
            }
            Ok(outcome.report.verdict)
        })(),
        Command::Sweep { config, axis, values, out, override_hypotheses, sequential, quiet } => (|| {
            let (text, cfg) = read_config(&config)?;
            let s = sweep(&text, &axis, &values, RunOptions { override_hypotheses }, !sequential)
                .map_err(|e| e.to_string())?;
            let dir = out_dir(out, &cfg);
            emit_sweep(&s, &dir).map_err(|e| format!("emit stage failed: {e}"))?;
            if !quiet {
                for (k, r) in s.report.rows.iter().enumerate() {
                    let verdict = r.verdict.map(|v| v.to_string()).unwrap_or_else(|| "error".into());
                    let lambda0 = r.lambda0.map(|l| format!("{l:.6e}")).unwrap_or_else(|| "-".into());
                    let cont = k
                        .checked_sub(1)
                        .and_then(|j| s.report.continuity[j])
                        .map(|c| format!("{c:.3e}"))
                        .unwrap_or_else(|| "-".into());
                    println!("{axis} = {:<12} {verdict:<19} lambda0 {lambda0:<14} jump {cont}", r.value);
                    if let Some(e) = &r.error {
                        println!("    {e}");
                    }
                }
                println!("verdict: {}", s.report.verdict);
                println!("outputs: {}", dir.display());
            }
            Ok(s.report.verdict)
        })(),
        Command::Presets { show } => match show {
            None => {
                for p in &PRESETS {
                    println!("{:<16} {}", p.name, p.summary);
                }
                Ok(Verdict::Pass)
            }
            Some(name) => match preset(&name) {
                Some(p) => {
                    print!("{}", p.template);
                    Ok(Verdict::Pass)
                }
                None => Err(format!("unknown preset `{name}`")),
            },
        },
    };
    match result {
        Ok(v) => ExitCode::from(v.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
