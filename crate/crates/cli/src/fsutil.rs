//! Atomic file replacement.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::CliError;

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp"))
}

/// Write `contents` to a sibling temp file, sync it, then rename over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let tmp = temp_path(path);
    let io = |e| CliError::io(path, e);
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(contents).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

/// Line-oriented log that is rewritten atomically on every append, so a
/// crash leaves either the old or the new file, never a torn line.
#[derive(Debug)]
pub struct AtomicLog {
    path: PathBuf,
    buf: String,
}

impl AtomicLog {
    /// Start an empty log, replacing any existing file.
    pub fn create(path: &Path) -> Result<Self, CliError> {
        write_atomic(path, b"")?;
        Ok(Self {
            path: path.to_path_buf(),
            buf: String::new(),
        })
    }

    /// Continue an existing log with the given contents.
    pub fn with_contents(path: &Path, contents: String) -> Self {
        Self {
            path: path.to_path_buf(),
            buf: contents,
        }
    }

    pub fn append_line(&mut self, line: &str) -> Result<(), CliError> {
        self.buf.push_str(line);
        self.buf.push('\n');
        write_atomic(&self.path, self.buf.as_bytes())
    }

    pub fn contents(&self) -> &str {
        &self.buf
    }
}
