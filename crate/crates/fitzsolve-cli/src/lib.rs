//! `fitzsolve run <config>` executes one experiment and writes CSV outputs plus
//! `manifest.toml`; `fitzsolve compare <m1> <m2>` diffs two manifests.
//!
//! Exit status: 0 all verdicts pass, 1 a verdict (or compare drift) failed,
//! 2 config error, 3 numerical failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod compare;
mod config;
mod expr;
mod manifest;
mod run;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::manifest::RunManifest;
use crate::run::RunError;

const OUT_ENV: &str = "FITZSOLVE_OUT";
const DEFAULT_OUT: &str = "fitzsolve-out";

#[derive(Parser)]
#[command(
    name = "fitzsolve",
    version,
    about = "Monotone-inclusion experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Output directory (default: config `output_dir`, then $FITZSOLVE_OUT, then ./fitzsolve-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppresses the verdict summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a config file or a previous manifest.
    Run { config: PathBuf },
    /// Compare the metrics of two run manifests.
    Compare {
        m1: PathBuf,
        m2: PathBuf,
        /// Absolute difference above which a metric counts as drift.
        #[arg(long, default_value_t = 0.0)]
        tol: f64,
    },
}

fn out_dir(cli: Option<&Path>, cfg: Option<&Path>) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| cfg.map(Path::to_path_buf))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn cmd_run(path: &Path, out: Option<&Path>, seed: Option<u64>, quiet: bool) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let mut prepared = match config::parse(&text, base) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config error: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    if let Some(s) = seed {
        prepared.config.seed = s;
    }
    let dir = out_dir(out, prepared.config.output_dir.as_deref());
    match run::run(&prepared, &dir) {
        Ok(m) => {
            if !quiet {
                report(&m, &dir);
            }
            if m.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                RunError::Config(_) => 2,
                RunError::Numeric(_) | RunError::Output(_) => 3,
            })
        }
    }
}

fn report(m: &RunManifest, dir: &Path) {
    println!("{} ({}) -> {}", m.experiment, m.operator, dir.display());
    for v in &m.verdicts {
        println!(
            "{} {}: {:e} (threshold {:e})",
            if v.passed { "PASS" } else { "FAIL" },
            v.name,
            v.value,
            v.threshold
        );
    }
}

fn cmd_compare(a: &Path, b: &Path, tol: f64, out: Option<&Path>) -> ExitCode {
    let load = |p: &Path| RunManifest::load(p);
    let (ma, mb) = match (load(a), load(b)) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let rep = match compare::compare(&ma, &mb, tol) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    let csv = rep.to_csv();
    print!("{csv}");
    if let Some(dir) = out {
        let path = dir.join("compare.csv");
        if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, &csv)) {
            eprintln!("output error: {}: {e}", path.display());
            return ExitCode::from(3);
        }
    }
    if rep.drifted() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match &cli.cmd {
        Cmd::Run { config } => cmd_run(config, cli.out.as_deref(), cli.seed, cli.quiet),
        Cmd::Compare { m1, m2, tol } => cmd_compare(m1, m2, *tol, cli.out.as_deref()),
    }
}
