//! Artifact directory layout shared by every subcommand.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "HESSPEN_OUT";
pub const DEFAULT_ROOT: &str = "hesspen-runs";

pub const SUBDIRS: [&str; 3] = ["checkpoints", "reports", "heatmaps"];

pub fn default_dir(subcommand: &str) -> PathBuf {
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT));
    root.join(subcommand)
}

/// `config.json`, `log.jsonl`, `checkpoints/`, `reports/`, `heatmaps/` under one root.
pub struct RunDir {
    root: PathBuf,
    log: BufWriter<File>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in SUBDIRS {
            let d = root.join(sub);
            fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        }
        let log_path = root.join("log.jsonl");
        let log = File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
        Ok(RunDir { root: root.to_path_buf(), log: BufWriter::new(log) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn heatmaps(&self) -> PathBuf {
        self.root.join("heatmaps")
    }

    pub fn write_config(&self, command: &str, seed: u64, effective: Map<String, Value>) -> Result<()> {
        let doc = json!({
            "command": command,
            "toolkit_version": hessian_penalty::VERSION,
            "seed": seed,
            "config": effective,
        });
        write_json(&self.root.join("config.json"), &doc)
    }

    pub fn write_report<T: Serialize>(&self, name: &str, report: &T) -> Result<PathBuf> {
        let path = self.root.join("reports").join(format!("{name}.json"));
        write_json(&path, report)?;
        Ok(path)
    }

    pub fn log<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.log, record)?;
        self.log.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.log.flush().context("flushing log.jsonl")
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
