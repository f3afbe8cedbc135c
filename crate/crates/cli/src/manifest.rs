use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use lagmhd::{Direction, SimConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Record of one command invocation, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Entries as written in the config file.
    pub config: BTreeMap<String, String>,
    pub resolved: SimConfig,
    pub m_list: Vec<f64>,
    pub checkpoint_every: usize,
    pub tool_version: String,
    pub direction: Direction,
    pub warnings: Vec<String>,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub outputs: Vec<String>,
    pub status: String,
    /// SHA-256 over the command, tool version and resolved configuration.
    pub run_hash: String,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn run_hash(command: &str, cfg: &RunConfig) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(b"\n");
    h.update(TOOL_VERSION.as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_vec(&cfg.sim).expect("config serializes"));
    h.update(serde_json::to_vec(&cfg.m_list).expect("list serializes"));
    h.update(cfg.checkpoint_every.to_le_bytes());
    hex::encode(h.finalize())
}

impl RunManifest {
    pub fn start(command: &str, cfg: &RunConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            config: cfg.entries.clone(),
            resolved: cfg.sim.clone(),
            m_list: cfg.m_list.clone(),
            checkpoint_every: cfg.checkpoint_every,
            tool_version: TOOL_VERSION.to_string(),
            direction: cfg.sim.direction.clone(),
            warnings: cfg.warnings.clone(),
            started_unix: unix_now(),
            finished_unix: None,
            outputs: Vec::new(),
            status: "running".into(),
            run_hash: run_hash(command, cfg),
        }
    }

    pub fn finish(&mut self, status: &str) {
        self.status = status.to_string();
        self.finished_unix = Some(unix_now());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
