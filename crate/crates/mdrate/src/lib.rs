//! Command-line front end for the moderate deviation rate computations:
//! configuration, CSV and JSON output, and parallel replication.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod parallel;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use crate::commands::execute;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub quiet: bool,
}

/// Runs one invocation and returns the process exit code.
///
/// Configuration errors leave the output directory untouched. Numerical
/// failures still produce `summary.json`.
pub fn run(inv: &Invocation) -> i32 {
    let cfg = match RunConfig::load(&inv.config) {
        Ok(mut c) => {
            if let Some(s) = inv.seed {
                c.seed = s;
            }
            c
        }
        Err(e) => return report_error(&e),
    };
    let base = inv.config.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    if let Err(e) = cfg.validate(&base) {
        return report_error(&e);
    }
    let (results, files, status, code, message) = match execute(&cfg, &base) {
        Ok(o) => match o.failure {
            None => (o.results, o.files, "ok", 0, None),
            Some(m) => (o.results, o.files, "numerical-failure", 1, Some(m)),
        },
        Err(e @ CliError::Numerical(_)) => (serde_json::Value::Null, Vec::new(), e.status(), e.exit_code(), Some(e.to_string())),
        Err(e) => return report_error(&e),
    };
    let names: Vec<String> = files.iter().map(|(n, _)| n.clone()).collect();
    let doc = report::summary(cfg.command, cfg.seed, status, code, message.as_deref(), &names, results);
    if let Err(e) = write_outputs(&inv.out, &files, &report::render(&doc)) {
        return report_error(&e);
    }
    if !inv.quiet {
        match &message {
            Some(m) => eprintln!("{}: {status}: {m}", cfg.command.name()),
            None => println!("{}: ok, {} files in {}", cfg.command.name(), names.len() + 1, inv.out.display()),
        }
    }
    code
}

fn write_outputs(dir: &Path, files: &[(String, Vec<u8>)], summary: &[u8]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        fs::write(dir.join(name), bytes)?;
    }
    fs::write(dir.join("summary.json"), summary)?;
    Ok(())
}

fn report_error(e: &CliError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}
