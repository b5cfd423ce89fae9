use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use deepbox::dataio::{file_sha256, write_atomic};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
}

/// Everything needed to repeat a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Command line after merging the config file; replaying it needs no config.
    pub argv: Vec<String>,
    /// Resolved subcommand options.
    pub config: serde_json::Value,
    pub threads: usize,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub timings: Vec<Phase>,
    pub total_seconds: f64,
    /// Command-specific results (metrics, counts).
    pub results: serde_json::Value,
}

pub struct Recorder {
    pub manifest: RunManifest,
    start: Instant,
}

impl Recorder {
    pub fn new(command: &str, argv: Vec<String>, config: serde_json::Value, threads: usize) -> Self {
        Self {
            manifest: RunManifest {
                tool: "deepbox".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                argv,
                config,
                threads,
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                timings: Vec::new(),
                total_seconds: 0.0,
                results: serde_json::Value::Null,
            },
            start: Instant::now(),
        }
    }

    pub fn seed(&mut self, name: &str, v: u64) {
        self.manifest.seeds.insert(name.into(), v);
    }

    /// Time `f` as a named phase.
    pub fn phase<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        self.manifest.timings.push(Phase {
            name: name.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(hash(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.manifest.outputs.push(hash(path)?);
        Ok(())
    }

    pub fn finish(mut self, path: &Path) -> Result<RunManifest> {
        self.manifest.total_seconds = self.start.elapsed().as_secs_f64();
        let json = serde_json::to_vec_pretty(&self.manifest)?;
        write_atomic(path, &json).with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(self.manifest)
    }
}

fn hash(path: &Path) -> Result<FileHash> {
    Ok(FileHash {
        path: path.to_path_buf(),
        sha256: file_sha256(path)?,
    })
}

pub fn load(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
}

/// Inputs whose current hash differs from the recorded one.
pub fn stale_inputs(m: &RunManifest) -> Vec<PathBuf> {
    m.inputs
        .iter()
        .filter(|f| file_sha256(&f.path).ok().as_deref() != Some(f.sha256.as_str()))
        .map(|f| f.path.clone())
        .collect()
}
