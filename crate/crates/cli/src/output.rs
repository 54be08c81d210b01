//! Staged outputs and the run manifest.
//!
//! A command computes everything first and stages its files in memory; only
//! then are they written, each to a temporary sibling that is renamed into
//! place. A failing command therefore leaves the output directory untouched.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

/// Everything needed to rerun a command and check its outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    /// Effective configuration after defaults and overrides.
    pub config: serde_json::Value,
    pub version: String,
    pub wall_time_s: f64,
}

pub struct Run {
    pub command: &'static str,
    pub args: Vec<String>,
    pub out_dir: PathBuf,
    started: Instant,
    inputs: Vec<PathBuf>,
    files: Vec<(String, Vec<u8>)>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
}

impl Run {
    pub fn new(command: &'static str, args: Vec<String>, out_dir: PathBuf) -> Self {
        Self {
            command,
            args,
            out_dir,
            started: Instant::now(),
            inputs: Vec::new(),
            files: Vec::new(),
            seed: None,
            config: serde_json::Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn stage(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn has_outputs(&self) -> bool {
        !self.files.is_empty()
    }

    /// Writes staged files and the manifest. Returns the output paths.
    pub fn commit(self) -> CliResult<Vec<PathBuf>> {
        fs::create_dir_all(&self.out_dir)?;
        let outputs: Vec<PathBuf> = self.files.iter().map(|(n, _)| self.out_dir.join(n)).collect();
        let manifest = RunManifest {
            command: self.command.to_string(),
            args: self.args,
            cwd: std::env::current_dir()?,
            inputs: self.inputs,
            outputs: outputs.clone(),
            seed: self.seed,
            config: self.config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let mut files = self.files;
        let manifest_json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        files.push((format!("{}{MANIFEST_SUFFIX}", self.command), manifest_json));
        write_all_atomic(&self.out_dir, &files)?;
        Ok(outputs)
    }
}

fn write_all_atomic(dir: &Path, files: &[(String, Vec<u8>)]) -> CliResult<()> {
    let pid = std::process::id();
    let temps: Vec<PathBuf> = files.iter().map(|(n, _)| dir.join(format!(".{n}.tmp{pid}"))).collect();
    for (tmp, (_, bytes)) in temps.iter().zip(files) {
        if let Err(e) = fs::write(tmp, bytes) {
            for t in &temps {
                let _ = fs::remove_file(t);
            }
            return Err(CliError::from(e));
        }
    }
    for (tmp, (name, _)) in temps.iter().zip(files) {
        fs::rename(tmp, dir.join(name))?;
    }
    Ok(())
}
