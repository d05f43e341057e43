//! Command-line entry point. Exit codes: 0 all checks pass, 1 an acceptance
//! check failed, 2 invalid configuration, 3 solver or internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use alh_compactify::harness::{
    emit_report, lemma_suite, riccati_certificate, run_experiment, ExperimentConfig,
    ExperimentReport, Format, GridSpec, Outcome, Stage,
};
use alh_compactify::metric_zoo::ModelSpec;
use alh_compactify::Error;

#[derive(Parser)]
#[command(
    name = "alh-compactify",
    version,
    about = "Conformal compactification experiments on asymptotically hyperbolic model metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for report files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the randomized suites.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report format: csv or json.
    #[arg(long, global = true, value_parser = parse_format, default_value = "csv")]
    format: Format,
    /// Grid resolution as `Nw,Nx`.
    #[arg(long, global = true, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Model order `a`.
    #[arg(long, global = true)]
    order: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Decay certificates of the scalar Riccati equation.
    Riccati {
        #[arg(long)]
        j: Option<f64>,
        #[arg(long)]
        lambda0: Option<f64>,
    },
    /// Solve for the radial eigenfunction.
    Eigenfunction,
    /// Extend harmonic boundary charts into the interior.
    Charts,
    /// Compactify and measure Hölder exponents.
    Compactify,
    /// Run the component decay battery.
    Battery,
    /// Window, Gronwall and Codazzi property suites.
    VerifyLemmas {
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value_t = 50)]
        gronwall_cases: usize,
    },
    /// Full pipeline from the configuration.
    Run,
}

fn parse_format(s: &str) -> Result<Format, String> {
    match s {
        "csv" => Ok(Format::Csv),
        "json" => Ok(Format::Json),
        _ => Err(format!("unknown format `{s}`, expected csv or json")),
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected Nw,Nx")?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(a)?, num(b)?))
}

fn config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(
            ModelSpec::perturbed(1, 0.5, 0.05, 0.05),
            GridSpec::standard(),
        ),
    };
    if let Some(a) = cli.order {
        cfg.model.order = a;
    }
    if let Some((nw, nx)) = cli.grid {
        cfg.grid.nw = nw;
        cfg.grid.nx = nx;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stages(command: &Command) -> Option<Vec<Stage>> {
    use Stage::*;
    match command {
        Command::Eigenfunction => Some(vec![Eigenfunction]),
        Command::Charts => Some(vec![Charts]),
        Command::Compactify => Some(vec![Eigenfunction, Charts, Compactify, Holder]),
        Command::Battery => Some(vec![Eigenfunction, Charts, Battery]),
        _ => None,
    }
}

fn execute(cli: &Cli) -> Result<ExperimentReport, Error> {
    match &cli.command {
        Command::Riccati { j, lambda0 } => {
            let orders = cli.order.map_or(vec![0.5, 1.0, 1.5], |a| vec![a]);
            let js = j.map_or(vec![0.3, 0.8], |v| vec![v]);
            let ls = lambda0.map_or(vec![0.5, 2.0], |v| vec![v]);
            let mut report = ExperimentReport::empty(None);
            for &a in &orders {
                for &jj in &js {
                    for &l in &ls {
                        report.verdicts.push(riccati_certificate(a, jj, l)?);
                    }
                }
            }
            Ok(report)
        }
        Command::VerifyLemmas {
            cases,
            gronwall_cases,
        } => {
            let mut report = ExperimentReport::empty(None);
            report.verdicts =
                lemma_suite(cli.seed.unwrap_or(0), *cases, *gronwall_cases)?.verdicts();
            Ok(report)
        }
        command => {
            let mut cfg = config(cli)?;
            if let Some(s) = stages(command) {
                cfg.stages = s;
            }
            run_experiment(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report = match execute(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if e.is_config() { 2 } else { 3 });
        }
    };
    for s in &report.stages {
        if let Some(err) = &s.error {
            eprintln!("{}: {err}", s.stage.name());
        }
    }
    for v in &report.verdicts {
        println!(
            "{} {} {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.id,
            v.detail
        );
    }
    for r in report.battery.iter().filter(|r| !r.pass) {
        println!(
            "FAIL battery {} measured {:?} predicted {}",
            r.estimate_id, r.measured_rate, r.predicted_rate
        );
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| report.config.as_ref().and_then(|c| c.output.clone()))
        .unwrap_or_else(|| ".".into());
    match emit_report(&report, cli.format, &dir) {
        Ok(paths) => paths
            .iter()
            .for_each(|p| eprintln!("wrote {}", p.display())),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    ExitCode::from(match report.outcome() {
        Outcome::Pass => 0,
        Outcome::AcceptanceFailure => 1,
        Outcome::StageFailure => 3,
    })
}
