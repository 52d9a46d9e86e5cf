//! `spraykit`: run scenario files, list and describe the builtin catalog.

mod error;
mod report;
mod scenario;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use spraykit::catalog::{self, CatalogItem};

use crate::report::Status;

#[derive(Parser)]
#[command(name = "spraykit", version, about = "Numerical toolkit for sprays, Jacobi fields and projective changes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task of a scenario file and write reports to a directory.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Multiplies the integration tolerances.
        #[arg(long, default_value_t = 1.0)]
        tol_scale: f64,
        /// Run tasks one at a time.
        #[arg(long)]
        serial: bool,
    },
    /// Print the builtin models and projective factors.
    ListCatalog,
    /// Print one catalog entry with its parameters and formulas.
    Describe { key: String },
}

const EXIT_ASSERTION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, out, tol_scale, serial } => run(&scenario, &out, tol_scale, serial),
        Command::ListCatalog => {
            print!("{}", catalog::list_catalog());
            ExitCode::SUCCESS
        }
        Command::Describe { key } => describe(&key),
    }
}

fn run(path: &std::path::Path, out: &std::path::Path, tol_scale: f64, serial: bool) -> ExitCode {
    if !(tol_scale > 0.0 && tol_scale.is_finite()) {
        eprintln!("error: --tol-scale must be positive, got {tol_scale}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let scenario = match scenario::load(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let tol = scenario.tol.scaled(tol_scale);
    let exec = |task: &scenario::Task| report::check(task, tasks::run(task, tol));
    let reports: Vec<_> = if serial {
        scenario.tasks.iter().map(exec).collect()
    } else {
        scenario.tasks.par_iter().map(exec).collect()
    };
    let code = if reports.iter().any(|r| r.status == Status::Error) {
        EXIT_NUMERIC
    } else if reports.iter().any(|r| r.status == Status::Fail) {
        EXIT_ASSERTION
    } else {
        0
    };
    for (task, r) in scenario.tasks.iter().zip(&reports) {
        let failed = r.checks.iter().filter(|c| !c.pass).count();
        println!(
            "task {:02} {:<10} {:<5} {} ({} assertions, {} failed)",
            task.index,
            task.kind.name(),
            r.status.label().to_uppercase(),
            task.name,
            r.checks.len(),
            failed
        );
        if let Some(e) = &r.error {
            println!("    error: {e}");
        }
        for c in r.checks.iter().filter(|c| !c.pass) {
            let value = c.value.map_or("missing".to_string(), |v| format!("{v:e}"));
            println!("    {} = {value}: {:?}", c.assertion.metric, c.assertion.expect);
        }
    }
    if let Err(e) = report::write_all(out, &scenario, &reports, i32::from(code)) {
        eprintln!("error: cannot write reports to {}: {e}", out.display());
        return ExitCode::from(EXIT_NUMERIC.max(code));
    }
    ExitCode::from(code)
}

fn describe(key: &str) -> ExitCode {
    let entry = match catalog::entry(key) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    println!("key:        {}", entry.key);
    println!("kind:       {:?}", entry.kind);
    println!("dimension:  {}", entry.dim);
    println!("summary:    {}", entry.summary);
    if entry.params.is_empty() {
        println!("parameters: none");
    }
    for (name, default, range) in entry.params {
        println!("parameter:  {name} (default {default}, {range})");
    }
    match catalog::catalog(key, &[]) {
        Ok(CatalogItem::Spray(s)) => println!("default:    {}", s.label()),
        Ok(CatalogItem::Finsler(f)) => println!("default:    {} with F = {}", f.label(), f.formula().source()),
        Ok(CatalogItem::Factor(p)) => println!("default:    {} with P = {}", p.label(), p.expr().source()),
        Err(e) => println!("default:    unavailable ({e})"),
    }
    ExitCode::SUCCESS
}
