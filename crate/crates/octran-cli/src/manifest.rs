//! Run manifest: a small text record written next to each command's
//! outputs so a run can be audited later. Written atomically
//! (temp file + rename) so a crashed run never leaves a half manifest.
//!
//! The `started_unix` timestamp is informational only; artifact
//! determinism is judged on the artifacts themselves, never on the
//! manifest.

use std::fmt::Display;
use std::fs;
use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

pub struct RunManifest {
    command: String,
    started_unix: u64,
    entries: Vec<(String, String)>,
    outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunManifest {
            command: command.to_string(),
            started_unix,
            entries: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn render(&self) -> String {
        let mut s = String::from("octran-run v1\n");
        s.push_str(&format!("command={}\n", self.command));
        s.push_str(&format!("started_unix={}\n", self.started_unix));
        for (k, v) in &self.entries {
            s.push_str(&format!("{k}={v}\n"));
        }
        for out in &self.outputs {
            s.push_str(&format!("output={out}\n"));
        }
        s
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.render())?;
        fs::rename(&tmp, path)
    }
}
