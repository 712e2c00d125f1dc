//! Output files. Every artifact carries the command, the configuration hash
//! and the seed: CSV files in a leading `#` comment line, JSON files in a
//! `meta` object.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: &'static str,
}

pub struct Artifacts {
    dir: PathBuf,
    meta: Meta,
}

/// Shortest representation that round-trips.
pub fn fmt(x: f64) -> String {
    format!("{x}")
}

impl Artifacts {
    pub fn new(dir: &Path, meta: Meta) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Artifacts { dir: dir.to_path_buf(), meta })
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.path(name);
        let mut buf = format!("# command={} config_hash={} seed={} version={}\n", self.meta.command, self.meta.config_hash, self.meta.seed, self.meta.version).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header).map_err(|e| CliError::io(&path, e))?;
            for r in rows {
                w.write_record(r).map_err(|e| CliError::io(&path, e))?;
            }
            w.flush().map_err(|e| CliError::io(&path, e))?;
        }
        fs::write(&path, buf).map_err(|e| CliError::io(&path, e))
    }

    pub fn json<T: Serialize>(&self, name: &str, data: &T) -> Result<(), CliError> {
        let path = self.path(name);
        let doc = serde_json::json!({ "meta": self.meta, "data": data });
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::io(&path, e))?;
        text.push('\n');
        fs::File::create(&path).and_then(|mut f| f.write_all(text.as_bytes())).map_err(|e| CliError::io(&path, e))
    }

    /// The resolved configuration, loadable with `--config` to rerun.
    pub fn config<T: Serialize>(&self, config: &T) -> Result<(), CliError> {
        let path = self.path("config.json");
        let mut text = serde_json::to_string_pretty(config).map_err(|e| CliError::io(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}
