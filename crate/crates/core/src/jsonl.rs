//! Append-only JSON-lines files with crash recovery.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{path} line {line}: {source}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
}

/// Parses the complete lines of `bytes`, skipping blank ones. A final line
/// without a newline is a torn write and is ignored. Returns the records and
/// the byte length of the intact prefix.
pub fn parse_prefix<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<(Vec<T>, u64), LogError> {
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let Some(len) = bytes[offset..].iter().position(|b| *b == b'\n') else {
            log::warn!("{}: dropping torn final line {line_no}", path.display());
            break;
        };
        let line = &bytes[offset..offset + len];
        offset += len + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let record = serde_json::from_slice(line).map_err(|source| LogError::Corrupt {
            path: path.to_path_buf(),
            line: line_no,
            source,
        })?;
        records.push(record);
    }
    Ok((records, offset as u64))
}

/// Reads every intact record without opening the file for writing.
pub fn read_all<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, LogError> {
    Ok(parse_prefix(path, &fs::read(path)?)?.0)
}

/// Writer half of a JSON-lines log. Each append is synced before returning.
pub struct AppendLog<T> {
    path: PathBuf,
    file: File,
    _record: PhantomData<fn(&T)>,
}

impl<T: Serialize + DeserializeOwned> AppendLog<T> {
    /// Opens or creates the log, truncating a torn tail, and returns the existing records.
    pub fn open(path: &Path) -> Result<(Self, Vec<T>), LogError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let (records, keep_len) = if path.exists() {
            parse_prefix(path, &fs::read(path)?)?
        } else {
            (Vec::new(), 0)
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        if file.metadata()?.len() != keep_len {
            file.set_len(keep_len)?;
            file.sync_all()?;
        }
        let log = Self {
            path: path.to_path_buf(),
            file,
            _record: PhantomData,
        };
        Ok((log, records))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &T) -> Result<(), LogError> {
        let mut line = serde_json::to_vec(record).map_err(io::Error::from)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}
