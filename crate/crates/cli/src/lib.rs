//! Front end for `qcinf-core`: argument grammar, commands and run manifests.

pub mod args;
pub mod commands;
pub mod manifest;
pub mod verify;

use std::time::Instant;

use args::{Cli, Command, MapsAction};
use commands::{exit_code, EXIT_CONFIG};
use manifest::{with_suffix, RunManifest};
use qcinf_core::error::{QcError, Result};

/// Environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "QCINF_THREADS";

/// Worker count: `QCINF_THREADS`, then `--threads`, then available parallelism.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> Result<usize> {
    let n = match env {
        Some(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|_| QcError::Config(format!("{THREADS_ENV}='{s}' is not a thread count")))?,
        None => match flag {
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(QcError::Config("thread count must be positive".into()));
    }
    Ok(n)
}

fn command_info(cmd: &Command) -> (&'static str, Option<std::path::PathBuf>, Option<u64>) {
    match cmd {
        Command::Verify(a) => ("verify", a.out.clone(), Some(a.seed)),
        Command::Residual(a) => ("residual", Some(a.out.clone()), None),
        Command::Phase(a) => ("phase", Some(a.out.clone()), None),
        Command::Solve(a) => ("solve", Some(a.out.clone()), a.seed),
        Command::Vary(a) => ("vary", Some(a.out.clone()), Some(a.seed)),
        Command::Counterexample(a) => ("counterexample", a.out.clone(), Some(a.seed)),
        Command::Maps { .. } => ("maps list", None, None),
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let start = Instant::now();
    let (name, out, seed) = command_info(&cli.command);
    let env = std::env::var(THREADS_ENV).ok();
    let threads = match resolve_threads(cli.threads, env.as_deref()) {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let flags = serde_json::to_value(&cli).expect("arguments serialize");
    let mut manifest = RunManifest::new(name, flags, seed, threads);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build();
    let result = match pool {
        Ok(pool) => pool.install(|| dispatch(&cli, &mut manifest)),
        Err(e) => Err(QcError::Config(format!("cannot start {threads} worker threads: {e}"))),
    };
    let code = result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    });
    manifest.exit_code = code;
    if cli.timing {
        manifest.wall_seconds = Some(start.elapsed().as_secs_f64());
    }
    match out {
        Some(out) => {
            let path = with_suffix(&out, ".manifest.json");
            if let Err(e) = std::fs::write(&path, manifest.to_json()) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return if code == 0 { EXIT_CONFIG } else { code };
            }
        }
        None => eprintln!("manifest: {}", serde_json::to_string(&manifest).expect("manifest serializes")),
    }
    code
}

fn dispatch(cli: &Cli, m: &mut RunManifest) -> Result<i32> {
    match &cli.command {
        Command::Verify(a) => commands::verify(a, m),
        Command::Residual(a) => commands::residual(a, m),
        Command::Phase(a) => commands::phase(a, m),
        Command::Solve(a) => commands::solve_cmd(a, cli.timing, m),
        Command::Vary(a) => commands::vary(a, m),
        Command::Counterexample(a) => commands::counterexample(a, m),
        Command::Maps { action: MapsAction::List { json } } => commands::maps_list(*json),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn environment_overrides_the_flag() {
        assert_eq!(resolve_threads(Some(4), Some("2")).unwrap(), 2);
        assert_eq!(resolve_threads(Some(4), None).unwrap(), 4);
        assert!(resolve_threads(None, None).unwrap() >= 1);
        assert!(resolve_threads(Some(4), Some("many")).is_err());
        assert!(resolve_threads(Some(0), None).is_err());
    }

    #[test]
    fn grammar_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
