//! Config-file merging. Values from the TOML file are turned into extra
//! command-line tokens for every flag not given on the command line, and the
//! result is parsed again, so file values pass through the same validation
//! as flags.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory};

use crate::args::Cli;

fn token(key: &str, v: &toml::Value) -> Result<Option<String>> {
    let flag = format!("--{}", key.replace('_', "-"));
    Ok(match v {
        toml::Value::Boolean(true) => Some(flag),
        toml::Value::Boolean(false) => None,
        toml::Value::String(s) => Some(format!("{flag}={s}")),
        toml::Value::Integer(i) => Some(format!("{flag}={i}")),
        toml::Value::Float(f) => Some(format!("{flag}={f}")),
        toml::Value::Array(a) => {
            let parts: Result<Vec<String>> = a
                .iter()
                .map(|x| match x {
                    toml::Value::String(s) => Ok(s.clone()),
                    toml::Value::Integer(i) => Ok(i.to_string()),
                    toml::Value::Float(f) => Ok(f.to_string()),
                    _ => Err(anyhow!("config key {key:?}: arrays may hold only strings and numbers")),
                })
                .collect();
            let parts = parts?;
            if parts.is_empty() {
                None
            } else {
                Some(format!("{flag}={}", parts.join(",")))
            }
        }
        _ => bail!("config key {key:?} has an unsupported value type"),
    })
}

/// Extend `argv` with the config file's values. Returns `argv` unchanged when
/// no config file was given.
pub fn resolve_argv(argv: Vec<OsString>, matches: &ArgMatches, config: Option<&Path>) -> Result<Vec<OsString>> {
    let Some(path) = config else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .with_context(|| format!("parsing config {}", path.display()))?;
    let Some((name, sub)) = matches.subcommand() else {
        return Ok(argv);
    };
    let cmd = Cli::command();
    let sub_cmd = cmd.find_subcommand(name).expect("parsed subcommand exists");
    let ids: Vec<String> = sub_cmd
        .get_arguments()
        .filter(|a| a.get_long().is_some())
        .map(|a| a.get_id().to_string())
        .collect();
    let all_ids: Vec<String> = cmd
        .get_subcommands()
        .flat_map(|s| s.get_arguments().map(|a| a.get_id().to_string()).collect::<Vec<_>>())
        .collect();
    let subcommand_names: Vec<&str> = cmd.get_subcommands().map(|s| s.get_name()).collect();

    let mut entries: Vec<(String, toml::Value, bool)> = Vec::new();
    for (k, v) in &table {
        if let toml::Value::Table(t) = v {
            if !subcommand_names.contains(&k.as_str()) {
                bail!("config table [{k}] does not name a subcommand");
            }
            if k == name {
                for (k2, v2) in t {
                    entries.push((k2.replace('-', "_"), v2.clone(), true));
                }
            }
        } else {
            entries.push((k.replace('-', "_"), v.clone(), false));
        }
    }
    // table entries come last so they win over top-level ones
    entries.sort_by_key(|e| e.2);
    let mut chosen: Vec<(String, toml::Value)> = Vec::new();
    for (k, v, in_table) in entries {
        let global = k == "threads" || k == "manifest";
        if k == "config" {
            bail!("config files cannot name another config file");
        }
        if !global && !ids.contains(&k) {
            if in_table || !all_ids.contains(&k) {
                bail!("unknown config key {k:?} for `{name}`");
            }
            continue;
        }
        let from_cli = if global {
            matches.value_source(&k) == Some(ValueSource::CommandLine)
        } else {
            sub.value_source(&k) == Some(ValueSource::CommandLine)
        };
        if !from_cli {
            chosen.retain(|(c, _)| c != &k);
            chosen.push((k, v));
        }
    }
    let mut out = argv;
    for (k, v) in chosen {
        if let Some(t) = token(&k, &v)? {
            out.push(t.into());
        }
    }
    Ok(out)
}
