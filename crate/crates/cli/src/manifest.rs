//! Run manifest: the only output carrying timestamps.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn config_hash(raw: &[u8]) -> String {
    hex::encode(Sha256::digest(raw))
}

#[derive(Debug, Serialize)]
pub struct TaskStatus {
    pub name: String,
    pub status: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
    pub tasks: Vec<TaskStatus>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: &str) -> Self {
        let now = chrono::Utc::now().to_rfc3339();
        Self {
            command: command.into(),
            config_hash: config_hash.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            started: now.clone(),
            finished: now,
            outputs: Vec::new(),
            tasks: Vec::new(),
        }
    }

    pub fn task(&mut self, name: &str, status: &str) {
        self.tasks.push(TaskStatus { name: name.into(), status: status.into() });
    }

    pub fn write(mut self, dir: &Path) -> std::io::Result<()> {
        self.finished = chrono::Utc::now().to_rfc3339();
        let path = dir.join("manifest.json");
        std::fs::write(path, serde_json::to_string_pretty(&self)? + "\n")
    }
}
