//! Versioned JSON documents written by the subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use irtrel::datagen::Calibration;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Bumped whenever a field is renamed or removed.
pub const SCHEMA_VERSION: u32 = 1;

/// Enough to rerun the command that produced a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reproducibility {
    pub library: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version_tag: Option<String>,
}

impl Reproducibility {
    pub fn new(command: &str, args: &[String], config: serde_json::Value) -> Self {
        Reproducibility {
            library: "irtrel".into(),
            version: irtrel::VERSION.into(),
            command: command.into(),
            args: args.to_vec(),
            seeds: BTreeMap::new(),
            config,
            version_tag: None,
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.into(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDocument {
    pub schema_version: u32,
    #[serde(flatten)]
    pub calibration: Calibration,
    pub reproducibility: Reproducibility,
}

impl CalibrationDocument {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let doc: CalibrationDocument = serde_json::from_str(&text).map_err(|e| CliError::Config {
            origin: format!("calibration file `{}`", path.display()),
            message: e.to_string(),
        })?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config {
                origin: format!("calibration file `{}`", path.display()),
                message: format!(
                    "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                    doc.schema_version
                ),
            });
        }
        Ok(doc)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents serialize to JSON");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &to_json(value))
}
