//! Files written by the commands: manifests, trajectory tables and reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use stlcbf::dynamics::Dynamics;
use stlcbf::sim::Episode;

use crate::error::CliError;

pub const MANIFEST_SCHEMA: &str = "stlcbf-manifest/1";
pub const REPORT_SCHEMA: &str = "stlcbf-report/1";

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub schema: &'static str,
    pub command: &'static str,
    pub config: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub files: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub stlcbf: &'static str,
    pub stlcbf_cli: &'static str,
}

impl Versions {
    pub fn current() -> Self {
        Versions {
            stlcbf: stlcbf::VERSION,
            stlcbf_cli: env!("CARGO_PKG_VERSION"),
        }
    }
}

/// Collects the files of one run below a common output directory.
pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(CliError::io(root))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        }
        fs::write(&path, contents).map_err(CliError::io(&path))?;
        self.files.push(rel.to_string());
        Ok(path)
    }

    /// Registers a file that was written by someone else.
    pub fn record(&mut self, rel: &str) {
        self.files.push(rel.to_string());
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf, CliError> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Internal(format!("serializing {rel}: {e}")))?;
        self.write(rel, text.as_bytes())
    }

    pub fn finish(
        mut self,
        command: &'static str,
        config: &Path,
        config_hash: String,
        seed: u64,
    ) -> Result<PathBuf, CliError> {
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA,
            command,
            config: config.display().to_string(),
            config_hash,
            seed,
            versions: Versions::current(),
            files: self.files.clone(),
        };
        self.write_json("manifest.json", &manifest)
    }
}

/// One row per sample: time, state, then the control applied from that
/// sample (empty on the final row).
pub fn trajectory_csv(dynamics: Dynamics, dt: f64, ep: &Episode) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t"];
    header.extend_from_slice(dynamics.state_names());
    header.extend_from_slice(dynamics.control_names());
    w.write_record(&header).map_err(csv_internal)?;
    let m = dynamics.control_dim();
    for (k, x) in ep.states.iter().enumerate() {
        let mut row = Vec::with_capacity(header.len());
        row.push(format!("{:.9}", k as f64 * dt));
        row.extend(x.iter().map(|v| fmt_float(*v)));
        match ep.controls.get(k) {
            Some(u) => row.extend(u.iter().map(|v| fmt_float(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), m)),
        }
        w.write_record(&row).map_err(csv_internal)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn csv_internal(e: csv::Error) -> CliError {
    CliError::Internal(format!("writing CSV: {e}"))
}

/// Shortest text that parses back to the same float.
pub fn fmt_float(v: f64) -> String {
    format!("{v:?}")
}
