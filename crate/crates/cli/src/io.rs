use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::CliError;

pub const CSV_VERSION: &str = "# triad-csv v1";

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    s.push('\n');
    Ok(s)
}

pub fn versioned_csv(body: &str) -> String {
    format!("{CSV_VERSION}\n{body}")
}

/// Files written together: every one lands in a temporary file next to its
/// target first, and nothing is renamed unless all writes succeed.
#[derive(Default)]
pub struct Outputs {
    pending: Vec<(PathBuf, String)>,
}

impl Outputs {
    pub fn add(&mut self, path: &Path, contents: String) {
        self.pending.push((path.to_path_buf(), contents));
    }

    pub fn commit(self) -> Result<(), CliError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CliError::Io { path, source }
        };
        let mut staged = Vec::with_capacity(self.pending.len());
        for (path, contents) in &self.pending {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let mut tmp = NamedTempFile::new_in(dir).map_err(io(path))?;
            tmp.write_all(contents.as_bytes()).map_err(io(path))?;
            tmp.flush().map_err(io(path))?;
            staged.push((tmp, path));
        }
        for (tmp, path) in staged {
            tmp.persist(path).map_err(|e| CliError::Io {
                path: path.clone(),
                source: e.error,
            })?;
        }
        Ok(())
    }
}
