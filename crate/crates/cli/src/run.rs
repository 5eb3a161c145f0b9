//! Run directories: one per invocation, never overwritten.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use stanlab::{Result, StanError};

use crate::config::RunConfig;

pub struct RunDir {
    pub path: PathBuf,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    inputs: &'a [(&'a str, String)],
    outputs: Vec<String>,
}

impl RunDir {
    /// Create `out`, or `runs/{command}-seed{seed}` when unset. An existing
    /// directory must be empty.
    pub fn create(out: Option<&Path>, command: &str, seed: u64) -> Result<Self> {
        let path = out.map_or_else(|| PathBuf::from(format!("runs/{command}-seed{seed}")), Path::to_path_buf);
        if path.exists() {
            let mut entries = fs::read_dir(&path).map_err(|e| StanError::io(&path, e))?;
            if entries.next().is_some() {
                return Err(StanError::Config(format!(
                    "run directory {} is not empty; pass a new --out",
                    path.display()
                )));
            }
        }
        fs::create_dir_all(&path).map_err(|e| StanError::io(&path, e))?;
        Ok(Self { path })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.file(name);
        fs::write(&p, contents).map_err(|e| StanError::io(&p, e))?;
        Ok(p)
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        self.write(name, serde_json::to_string_pretty(value)? + "\n")
    }

    pub fn create_file(&self, name: &str) -> Result<File> {
        let p = self.file(name);
        File::create(&p).map_err(|e| StanError::io(&p, e))
    }

    /// Echo the resolved config and record inputs, seed and version. Called
    /// last, so the listing covers every artifact.
    pub fn finish(&self, command: &str, seed: u64, cfg: &RunConfig, inputs: &[(&str, String)]) -> Result<()> {
        self.write("config.toml", cfg.to_toml())?;
        let mut outputs: Vec<String> = fs::read_dir(&self.path)
            .map_err(|e| StanError::io(&self.path, e))?
            .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect();
        outputs.push("run.json".into());
        outputs.sort();
        let manifest = RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            inputs,
            outputs,
        };
        self.write_json("run.json", &manifest)?;
        Ok(())
    }
}

/// Append one JSON object per line.
pub fn write_jsonl(file: &mut File, path: &Path, value: &impl Serialize) -> Result<()> {
    let line = serde_json::to_string(value)?;
    writeln!(file, "{line}").map_err(|e| StanError::io(path, e))
}
