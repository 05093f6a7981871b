use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{input_error, Failure};

pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize)]
struct Input {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Output {
    path: String,
    sha256: String,
    bytes: usize,
}

/// Record of one command invocation, written as `manifest.json`.
#[derive(Serialize)]
pub struct Manifest {
    schema_version: u32,
    command: &'static str,
    toolkit_version: &'static str,
    config: Input,
    scenario: Option<Input>,
    outputs: Vec<Output>,
    status: &'static str,
    failure: Option<String>,
    wall_clock_s: f64,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new(command: &'static str, config: &Path, bytes: &[u8]) -> Self {
        Self {
            schema_version: vacts_core::report::SCHEMA_VERSION,
            command,
            toolkit_version: env!("CARGO_PKG_VERSION"),
            config: Input {
                path: config.display().to_string(),
                sha256: digest(bytes),
            },
            scenario: None,
            outputs: Vec::new(),
            status: "ok",
            failure: None,
            wall_clock_s: 0.0,
        }
    }

    pub fn scenario(&mut self, path: &Path, bytes: &[u8]) {
        self.scenario = Some(Input {
            path: path.display().to_string(),
            sha256: digest(bytes),
        });
    }

    /// Writes `name` into `dir` and records its digest.
    pub fn output(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        self.outputs.push(Output {
            path: name.to_string(),
            sha256: digest(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn fail(&mut self, message: &str) {
        self.status = "failed";
        self.failure = Some(message.to_string());
    }

    pub fn write(mut self, dir: &Path, start: Instant) -> Result<(), Failure> {
        self.wall_clock_s = start.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self).map_err(|e| input_error(e.to_string()))?;
        let path = dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| input_error(format!("{}: {e}", path.display())))
    }
}
