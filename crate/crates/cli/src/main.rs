//! `percolab run <config.json>` and `percolab report <dir>`.
//!
//! Exit status: 0 on success, 2 for an invalid config, 1 for any other
//! failure. Failures print one JSON object on standard error.

mod config;
mod manifest;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde_json::json;

use config::ExperimentConfig;
use manifest::{RunManifest, MANIFEST};
use run::RunError;

#[derive(Parser)]
#[command(name = "percolab", version, about = "Run and summarise percolation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run { config: PathBuf },
    /// Print the verdicts of a run directory, or of every run below it.
    Report { dir: PathBuf },
}

enum Failure {
    Config { message: String, line: Option<usize>, column: Option<usize> },
    Runtime(anyhow::Error),
}

impl Failure {
    fn emit(&self) -> ExitCode {
        let (value, code) = match self {
            Failure::Config { message, line, column } => (json!({ "error": "invalid_config", "message": message, "line": line, "column": column }), 2),
            Failure::Runtime(e) => (json!({ "error": "runtime", "message": format!("{e:#}") }), 1),
        };
        eprintln!("{value}");
        ExitCode::from(code)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => run_config(&config),
        Command::Report { dir } => report(&dir).map_err(Failure::Runtime),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.emit(),
    }
}

fn parse_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::Config { message: format!("cannot read {}: {e}", path.display()), line: None, column: None })?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Failure::Config { message: e.to_string(), line: Some(e.line()), column: Some(e.column()) })?;
    if cfg.workers == 0 {
        return Err(Failure::Config { message: "workers must be at least 1".into(), line: None, column: None });
    }
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig, hash: &str) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| {
        let root = std::env::var_os("PERCOLAB_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(format!("{}-{}", cfg.experiment.kind(), &hash[..12]))
    })
}

fn run_config(path: &Path) -> Result<(), Failure> {
    let cfg = parse_config(path)?;
    let hash = manifest::config_hash(&cfg);
    let dir = output_dir(&cfg, &hash);
    let runtime = |e: anyhow::Error| Failure::Runtime(e);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).map_err(runtime)?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build().map_err(|e| runtime(e.into()))?;
    let start = Instant::now();
    let result = pool.install(|| run::execute(&cfg));
    let wall = start.elapsed().as_secs_f64();

    let mut m = RunManifest {
        kind: cfg.experiment.kind().into(),
        config_hash: hash,
        code_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_secs: wall,
        config: cfg.clone(),
        parameters: serde_json::Value::Null,
        summary: serde_json::Value::Null,
        verdicts: vec![],
        files: vec![],
        error: None,
    };
    let failure = match result {
        Ok(out) => {
            for (name, contents) in &out.files {
                std::fs::write(dir.join(name), contents).with_context(|| format!("writing {name}")).map_err(runtime)?;
                m.files.push(manifest::file_entry(name, contents.as_bytes()));
            }
            let summary = serde_json::to_string_pretty(&out.summary).expect("json value");
            std::fs::write(dir.join("summary.json"), &summary).context("writing summary.json").map_err(runtime)?;
            m.files.push(manifest::file_entry("summary.json", summary.as_bytes()));
            m.parameters = out.parameters;
            m.summary = out.summary;
            m.verdicts = out.verdicts;
            None
        }
        Err(RunError::Config(message)) => Some(Failure::Config { message, line: None, column: None }),
        Err(RunError::Runtime(e)) => Some(Failure::Runtime(e.into())),
    };
    if let Some(f) = &failure {
        m.error = Some(match f {
            Failure::Config { message, .. } => message.clone(),
            Failure::Runtime(e) => format!("{e:#}"),
        });
    }
    let text = serde_json::to_string_pretty(&m).expect("manifest serialises");
    std::fs::write(dir.join(MANIFEST), text).context("writing manifest").map_err(runtime)?;
    match failure {
        Some(f) => Err(f),
        None => {
            println!("{}", dir.display());
            for v in &m.verdicts {
                println!("{} {}", v.id, if v.pass { "PASS" } else { "FAIL" });
            }
            Ok(())
        }
    }
}

fn report(dir: &Path) -> anyhow::Result<()> {
    if dir.join(MANIFEST).is_file() {
        let m = manifest::load(dir).with_context(|| format!("reading {}", dir.join(MANIFEST).display()))?;
        println!("{} run, config {}, {:.1} s", m.kind, &m.config_hash[..12], m.wall_time_secs);
        if let Some(e) = &m.error {
            println!("error: {e}");
        }
        for v in &m.verdicts {
            println!("{} {}  {}", v.id, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        }
        return Ok(());
    }
    let mut runs = vec![];
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.join(MANIFEST).is_file() {
            runs.push((path.clone(), manifest::load(&path).with_context(|| format!("reading {}", path.display()))?));
        }
    }
    if runs.is_empty() {
        return Err(anyhow!("no {MANIFEST} in {} or its subdirectories", dir.display()));
    }
    runs.sort_by(|a, b| a.0.cmp(&b.0));
    println!("{:<32} {:<16} {:<8} {:<6}", "run", "kind", "id", "verdict");
    for (path, m) in &runs {
        let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        if m.verdicts.is_empty() {
            let status = if m.error.is_some() { "ERROR" } else { "-" };
            println!("{name:<32} {:<16} {:<8} {status:<6}", m.kind, "-");
        }
        for v in &m.verdicts {
            println!("{name:<32} {:<16} {:<8} {:<6}", m.kind, v.id, if v.pass { "PASS" } else { "FAIL" });
        }
    }
    Ok(())
}
