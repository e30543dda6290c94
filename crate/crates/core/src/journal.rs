//! Append-only JSON-lines journal.
//!
//! Each record is one line of JSON. `append` returns only after the line
//! has been written and `fsync`ed. On open, every complete line is
//! replayed; a torn final line (no trailing newline, left by a crash during
//! append) is truncated away. A malformed line anywhere else is an error.
//!
//! An open journal holds an exclusive lock on its file, so a second writer
//! fails fast instead of interleaving records. [`Journal::read`] takes no
//! lock and is safe next to a live writer.

use std::fs::{File, OpenOptions, TryLockError};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("journal {path} is locked by another process")]
    Locked { path: PathBuf },
    #[error("journal {path} line {line} is corrupt: {detail}")]
    Corrupt { path: PathBuf, line: usize, detail: String },
}

pub struct Journal<T> {
    file: File,
    path: PathBuf,
    _records: PhantomData<fn(T) -> T>,
}

impl<T> std::fmt::Debug for Journal<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Journal").field("path", &self.path).finish()
    }
}

impl<T: Serialize + DeserializeOwned> Journal<T> {
    /// Opens (creating if needed) the journal and returns every stored record.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<T>), JournalError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| JournalError::Io { path: path.clone(), source };
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path).map_err(io)?;
        match file.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(JournalError::Locked { path }),
            Err(TryLockError::Error(e)) => return Err(io(e)),
        }

        let (records, good_len) = replay(&file, &path)?;
        let len = file.metadata().map_err(io)?.len();
        if len != good_len {
            file.set_len(good_len).map_err(io)?;
            file.sync_all().map_err(io)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io)?;
        Ok((Self { file, path, _records: PhantomData }, records))
    }

    /// Reads every complete record without locking or repairing the file.
    /// A missing file reads as empty.
    pub fn read(path: impl AsRef<Path>) -> Result<Vec<T>, JournalError> {
        let path = path.as_ref();
        match File::open(path) {
            Ok(file) => Ok(replay(&file, path)?.0),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(source) => Err(JournalError::Io { path: path.to_path_buf(), source }),
        }
    }

    /// Appends one record durably.
    pub fn append(&mut self, record: &T) -> Result<(), JournalError> {
        let mut line = serde_json::to_vec(record).expect("journal record serializes");
        line.push(b'\n');
        let io = |source| JournalError::Io { path: self.path.clone(), source };
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Parses complete lines; returns the records and the byte length they span.
fn replay<T: DeserializeOwned>(file: &File, path: &Path) -> Result<(Vec<T>, u64), JournalError> {
    let io = |source| JournalError::Io { path: path.to_path_buf(), source };
    let mut records = Vec::new();
    let mut good_len = 0u64;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(io)?;
        if read == 0 {
            break;
        }
        number += 1;
        if !line.ends_with('\n') {
            // torn tail
            break;
        }
        let text = line.trim_end();
        if !text.is_empty() {
            let record = serde_json::from_str(text).map_err(|e| JournalError::Corrupt {
                path: path.to_path_buf(),
                line: number,
                detail: e.to_string(),
            })?;
            records.push(record);
        }
        good_len += read as u64;
    }
    Ok((records, good_len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn records_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        {
            let (mut j, existing) = Journal::<Vec<u32>>::open(&path).unwrap();
            assert!(existing.is_empty());
            j.append(&vec![1, 2]).unwrap();
            j.append(&vec![3]).unwrap();
        }
        let (_, records) = Journal::<Vec<u32>>::open(&path).unwrap();
        assert_eq!(records, [vec![1, 2], vec![3]]);
    }

    #[test]
    fn torn_tail_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        fs::write(&path, "[1]\n[2, 3").unwrap();
        let (mut j, records) = Journal::<Vec<u32>>::open(&path).unwrap();
        assert_eq!(records, [vec![1]]);
        j.append(&vec![4]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "[1]\n[4]\n");
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        fs::write(&path, "[1]\nnot json\n[2]\n").unwrap();
        match Journal::<Vec<u32>>::open(&path) {
            Err(JournalError::Corrupt { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn second_writer_is_refused_but_readers_are_not() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let (mut j, _) = Journal::<u8>::open(&path).unwrap();
        j.append(&7).unwrap();
        assert!(matches!(Journal::<u8>::open(&path), Err(JournalError::Locked { .. })));
        assert_eq!(Journal::<u8>::read(&path).unwrap(), [7]);
        drop(j);
        assert!(Journal::<u8>::open(&path).is_ok());
        assert!(Journal::<u8>::read(dir.path().join("absent.jsonl")).unwrap().is_empty());
    }
}
