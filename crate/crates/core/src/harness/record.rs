//! Append-only JSONL files that survive interruption.

use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;

/// One line per record, flushed as it is written.
#[derive(Debug)]
pub struct JsonlWriter {
    file: File,
    path: PathBuf,
}

impl JsonlWriter {
    /// Opens `path` for appending after its last complete, parseable line and
    /// returns the records already there. A torn trailing line is discarded.
    pub fn resume<T: DeserializeOwned>(path: &Path) -> Result<(Self, Vec<T>)> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut records = Vec::new();
        let mut keep = 0;
        let mut start = 0;
        while let Some(nl) = bytes[start..].iter().position(|&b| b == b'\n') {
            let line = &bytes[start..start + nl];
            match serde_json::from_slice::<T>(line) {
                Ok(r) => records.push(r),
                Err(e) => {
                    log::warn!("{}: dropping unreadable line and everything after it: {e}", path.display());
                    break;
                }
            }
            start += nl + 1;
            keep = start;
        }
        if keep < bytes.len() {
            log::info!("{}: truncating {} bytes of partial output", path.display(), bytes.len() - keep);
        }
        let file = OpenOptions::new().create(true).truncate(false).write(true).open(path)?;
        file.set_len(keep as u64)?;
        let mut w = Self { file, path: path.to_path_buf() };
        w.file.seek(SeekFrom::End(0))?;
        Ok((w, records))
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
