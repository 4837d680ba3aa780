use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::{read_events, write_events, Event, ExperimentConfig, ReplayBuffer};

/// Paths of a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn buffer(&self) -> PathBuf {
        self.root.join("buffer.csv")
    }

    pub fn events(&self) -> PathBuf {
        self.root.join("events.jsonl")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn evaluation(&self) -> PathBuf {
        self.root.join("evaluation.csv")
    }

    pub fn calibration(&self) -> PathBuf {
        self.root.join("calibration.csv")
    }

    pub fn timing(&self) -> PathBuf {
        self.root.join("timing.csv")
    }

    pub fn create(&self) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        fs::create_dir_all(self.checkpoints())?;
        fs::create_dir_all(self.reports())?;
        Ok(())
    }

    pub fn write_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        let mut text = cfg.to_json()?;
        text.push('\n');
        write_atomic(&self.config(), text.as_bytes())
    }

    pub fn read_config(&self) -> Result<ExperimentConfig> {
        let path = self.config();
        if !path.exists() {
            return Err(Error::MissingArtifacts(path.display().to_string()));
        }
        ExperimentConfig::load(&path)
    }

    pub fn write_buffer(&self, buffer: &ReplayBuffer) -> Result<()> {
        let mut bytes = Vec::new();
        buffer.write_csv(&mut bytes)?;
        write_atomic(&self.buffer(), &bytes)
    }

    pub fn read_buffer(&self) -> Result<ReplayBuffer> {
        let path = self.buffer();
        if !path.exists() {
            return Err(Error::MissingArtifacts(path.display().to_string()));
        }
        ReplayBuffer::read_csv(BufReader::new(fs::File::open(path)?))
    }

    pub fn write_events(&self, events: &[Event]) -> Result<()> {
        let mut bytes = Vec::new();
        write_events(&mut bytes, events)?;
        write_atomic(&self.events(), &bytes)
    }

    pub fn read_events(&self) -> Result<Vec<Event>> {
        let path = self.events();
        if !path.exists() {
            return Err(Error::MissingArtifacts(path.display().to_string()));
        }
        read_events(BufReader::new(fs::File::open(path)?))
    }

    /// Takes the directory's writer lock.
    pub fn lock(&self) -> Result<RunLock> {
        if !self.root.is_dir() {
            return Err(Error::MissingArtifacts(self.root.display().to_string()));
        }
        let path = self.root.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::InvalidArgument(format!(
                "run directory {} is locked by another process (remove {} if it is stale)",
                self.root.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

/// Removes the lock file when dropped.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(bytes)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        let lock = run.lock().unwrap();
        assert!(run.lock().is_err());
        drop(lock);
        assert!(run.lock().is_ok());
    }

    #[test]
    fn missing_artifacts_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        match run.read_buffer() {
            Err(Error::MissingArtifacts(p)) => assert!(p.ends_with("buffer.csv")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
