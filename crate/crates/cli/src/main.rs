mod args;
mod commands;
mod config;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::error::ErrorKind;
use clap::parser::ValueSource;
use clap::{CommandFactory, FromArgMatches};
use serde_json::json;

use args::{Cli, Command};

const EXIT_USAGE: i32 = 1;
const EXIT_RUNTIME: i32 = 2;

fn main() {
    std::process::exit(run(std::env::args_os().collect()));
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use deepbox::Error as E;
    for cause in e.chain() {
        if let Some(d) = cause.downcast_ref::<E>() {
            return match d {
                E::CoordinateOrder(_) | E::DegenerateBox(_) => "geometry",
                E::Dimension(_) => "dimension",
                E::Label(_) => "label",
                E::State(_) => "state",
                E::Config(_) => "config",
                E::SamplingExhausted(_) | E::Composition(_) => "sampling",
                E::Divergence { .. } => "divergence",
                E::AtBox { .. } | E::Data(_) | E::Record { .. } | E::Parse { .. } => "data",
                E::Checkpoint(_) => "checkpoint",
                E::Image { .. } => "image",
                E::Io { .. } => "io",
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "runtime"
}

fn report_error(kind: &str, message: &str, code: i32) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message, "exit_code": code } }));
}

fn usage_error(e: clap::Error) -> i32 {
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = e.print();
            0
        }
        _ => {
            let _ = e.print();
            report_error("usage", e.render().to_string().trim(), EXIT_USAGE);
            EXIT_USAGE
        }
    }
}

/// Drop every occurrence of `--flag VALUE` / `--flag=VALUE`.
fn strip_flag(argv: &[String], flag: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    let eq = format!("{flag}=");
    for a in argv {
        if skip {
            skip = false;
            continue;
        }
        if a == flag {
            skip = true;
        } else if !a.starts_with(&eq) {
            out.push(a.clone());
        }
    }
    out
}

pub fn run(argv: Vec<OsString>) -> i32 {
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => return usage_error(e),
    };
    let config_path = matches.get_one::<PathBuf>("config").cloned();
    let argv = match config::resolve_argv(argv, &matches, config_path.as_deref()) {
        Ok(a) => a,
        Err(e) => {
            report_error("usage", &format!("{e:#}"), EXIT_USAGE);
            return EXIT_USAGE;
        }
    };
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => return usage_error(e),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => return usage_error(e),
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let argv = strip_flag(&argv, "--config");
    let explicit_threads = matches.value_source("threads") == Some(ValueSource::CommandLine);
    match execute(cli, argv, explicit_threads) {
        Ok(()) => 0,
        Err(e) => {
            report_error(error_kind(&e), &format!("{e:#}"), EXIT_RUNTIME);
            EXIT_RUNTIME
        }
    }
}

fn default_manifest(cmd: &Command) -> Option<PathBuf> {
    let (split, name) = match cmd {
        Command::GenSynth(a) => (&a.split, None),
        Command::ProposeBaseline(a) => (&a.split, Some(a.name.clone())),
        Command::Train(a) => (&a.split, Some(a.out.clone().unwrap_or_else(|| format!("deepbox-s{}", a.stage)))),
        Command::Rerank(a) => (
            &a.split,
            Some(a.out_name.clone().unwrap_or_else(|| if a.random { "random".into() } else { "deepbox".into() })),
        ),
        Command::Eval(a) => (&a.split, Some(a.out.clone().unwrap_or_else(|| a.proposals.clone()))),
        Command::Report(a) => (&a.split, Some(a.out.clone())),
        Command::Replay(_) => return None,
    };
    let file = match name {
        Some(n) => format!("{}-{n}.manifest.json", cmd.name()),
        None => format!("{}.manifest.json", cmd.name()),
    };
    Some(split.root.join("runs").join(&split.split).join(file))
}

fn execute(cli: Cli, argv: Vec<String>, explicit_threads: bool) -> Result<()> {
    if let Command::Replay(r) = &cli.command {
        let m = manifest::load(&r.manifest_path)?;
        let stale = manifest::stale_inputs(&m);
        if !stale.is_empty() && !r.force {
            bail!(
                "inputs changed since the recorded run (use --force to replay anyway): {}",
                stale.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
            );
        }
        let mut inner = m.argv.clone();
        if explicit_threads {
            inner = strip_flag(&inner, "--threads");
            inner.push(format!("--threads={}", cli.threads));
        }
        if let Some(mp) = &cli.manifest {
            inner = strip_flag(&inner, "--manifest");
            inner.push(format!("--manifest={}", mp.display()));
        }
        let code = run(inner.into_iter().map(OsString::from).collect());
        if code != 0 {
            bail!("replayed command exited with status {code}");
        }
        return Ok(());
    }

    if let Err(e) = deepbox::par::set_threads(cli.threads) {
        bail!("could not start {} worker threads: {e}", cli.threads);
    }
    let threads = deepbox::par::current_threads();
    let manifest_path = cli.manifest.clone().or_else(|| default_manifest(&cli.command)).expect("non-replay command");
    let config = match &cli.command {
        Command::GenSynth(a) => serde_json::to_value(a)?,
        Command::ProposeBaseline(a) => serde_json::to_value(a)?,
        Command::Train(a) => serde_json::to_value(a)?,
        Command::Rerank(a) => serde_json::to_value(a)?,
        Command::Eval(a) => serde_json::to_value(a)?,
        Command::Report(a) => serde_json::to_value(a)?,
        Command::Replay(_) => unreachable!("handled above"),
    };
    let mut rec = manifest::Recorder::new(cli.command.name(), argv, config, threads);
    let results = match &cli.command {
        Command::GenSynth(a) => commands::gen_synth(a, &mut rec),
        Command::ProposeBaseline(a) => commands::propose_baseline(a, &mut rec),
        Command::Train(a) => commands::train(a, &mut rec),
        Command::Rerank(a) => commands::rerank_cmd(a, &mut rec),
        Command::Eval(a) => commands::eval(a, &mut rec),
        Command::Report(a) => commands::report(a, &mut rec),
        Command::Replay(_) => unreachable!("handled above"),
    }?;
    rec.manifest.results = results;
    rec.finish(&manifest_path)?;
    Ok(())
}
