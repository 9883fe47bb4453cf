mod args;
mod plot;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use advspur_core::experiments::{run_experiment, Experiment};
use advspur_core::validation::{run_validation, ValidationConfig};
use advspur_core::LossConstants;
use anyhow::{Context, Result};
use clap::Parser;

use args::{Cli, Command, SweepArgs, ValidateArgs};

const EXIT_VALIDATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;

enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

fn validate(args: &ValidateArgs) -> Result<bool, Failure> {
    let plan = args.plan().map_err(Failure::Config)?;
    let mut config = ValidationConfig::default();
    if let Some(seed) = plan.seed {
        config.seed = seed;
    }
    if let Some(c1) = plan.c1 {
        config.constants = LossConstants::with_c1(c1);
    }
    let report = run_validation(&config).map_err(|e| Failure::Run(e.into()))?;
    let text = report.to_string();
    print!("{text}");
    if let Some(out) = &plan.out {
        std::fs::write(out, &text)
            .with_context(|| format!("cannot write {}", out.display()))
            .map_err(Failure::Run)?;
    }
    Ok(report.passed())
}

fn sweep(experiment: Experiment, args: &SweepArgs) -> Result<(), Failure> {
    let plan = args.plan(experiment).map_err(Failure::Config)?;
    let table = run_experiment(&plan.config).map_err(|e| Failure::Run(e.into()))?;
    let run = |r: Result<()>| r.map_err(Failure::Run);
    match &plan.out {
        Some(path) => {
            let file = std::fs::File::create(path)
                .with_context(|| format!("cannot create {}", path.display()));
            run(file.and_then(|f| {
                table
                    .write_csv(std::io::BufWriter::new(f))
                    .map_err(Into::into)
            }))?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            run(table.write_csv(&mut lock).map_err(Into::into))?;
            run(lock.flush().map_err(Into::into))?;
        }
    }
    if plan.emit_plots {
        let svg = plan
            .out
            .as_ref()
            .map(|p| p.with_extension("svg"))
            .unwrap_or_else(|| PathBuf::from(format!("{experiment}.svg")));
        run(plot::render(experiment, &table, &svg))?;
    }
    let unconverged = table.unconverged();
    if unconverged > 0 {
        eprintln!(
            "warning: {unconverged} of {} fits hit the iteration budget",
            table.records.len()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Validate(a) => validate(a).map(|passed| if passed { 0 } else { EXIT_VALIDATION }),
        Command::NfsSweep(a) => sweep(Experiment::NfsSweep, a).map(|_| 0),
        Command::ScaleHeatmap(a) => sweep(Experiment::ScaleHeatmap, a).map(|_| 0),
        Command::ShiftRobustness(a) => sweep(Experiment::ShiftRobustness, a).map(|_| 0),
        Command::Plateau(a) => sweep(Experiment::Plateau, a).map(|_| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}
