use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;

pub const OUT_DIR_ENV: &str = "CONCERNDP_OUT_DIR";

/// Flat `key=value` settings. Later sources override earlier ones: the
/// config file first, then any flags given on the command line.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut s = Settings::default();
        let Some(path) = path else { return Ok(s) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("{}:{}: expected key=value, got `{line}`", path.display(), n + 1);
            };
            s.0.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(s)
    }

    /// Records a flag value if it was given.
    pub fn flag<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.0.insert(key.to_string(), v.to_string());
        }
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    pub fn take_parsed<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: std::str::FromStr,
    {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| anyhow::anyhow!("bad value `{v}` for `{key}`")),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &String)> {
        self.0.iter()
    }

    /// Fails on any key nobody consumed.
    pub fn finish(self) -> Result<()> {
        if let Some(k) = self.0.keys().next() {
            bail!("unknown setting `{k}`");
        }
        Ok(())
    }
}

pub fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Provenance of one run, written next to its outputs. Holds wall-clock
/// times, so it is the one file that differs between identical runs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
}

pub struct Run {
    command: String,
    seed: u64,
    started: Instant,
    started_unix: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    dir: PathBuf,
}

impl Run {
    pub fn start(command: &str, seed: u64, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            command: command.to_string(),
            seed,
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            inputs: Vec::new(),
            outputs: Vec::new(),
            dir: dir.to_path_buf(),
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    /// Path for an output file inside the run directory.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.outputs.push(p.display().to_string());
        p
    }

    pub fn finish(self, manifest_name: &str, config: impl Serialize) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config: serde_json::to_value(config)?,
            inputs: self.inputs,
            outputs: self.outputs,
            started_unix: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join(format!("{manifest_name}.manifest.json"));
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
