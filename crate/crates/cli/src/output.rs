//! Output directory handling and the structured run log.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use irtlong::{Error, Result};

const LOCK_NAME: &str = ".irtlong.lock";

/// An output directory held exclusively for the lifetime of the value.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn acquire(root: &Path) -> Result<OutputDir> {
        fs::create_dir_all(root)?;
        match OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(root.join(LOCK_NAME))
        {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::spec(format!(
                    "output directory {} is in use (remove {LOCK_NAME} if no run is active)",
                    root.display()
                )));
            }
            Err(e) => return Err(e.into()),
        }
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Creates `name` (relative, `/`-separated) and records it in the log.
    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.written.push(name.to_string());
        Ok(BufWriter::new(File::create(path)?))
    }

    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
    ) -> Result<()> {
        let mut w = self.create(name)?;
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Writes `run_log.json` listing every file written so far.
    pub fn finish<T: Serialize>(mut self, log: RunLog<T>) -> Result<()> {
        let log = RunLog {
            outputs: std::mem::take(&mut self.written),
            ..log
        };
        let mut w = self.create("run_log.json")?;
        serde_json::to_writer_pretty(&mut w, &log)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK_NAME));
    }
}

/// Schema of `run_log.json`. Contains nothing that varies between repeated
/// runs with the same inputs (no timings, thread counts or output paths).
#[derive(Debug, Serialize)]
pub struct RunLog<T: Serialize> {
    pub schema: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub nodes: usize,
    pub inputs: Vec<InputRecord>,
    /// `ok`, `not_converged` or `failed_replications`.
    pub status: &'static str,
    pub outputs: Vec<String>,
    pub details: T,
}

impl<T: Serialize> RunLog<T> {
    pub fn new(
        command: &'static str,
        seed: u64,
        nodes: usize,
        inputs: Vec<InputRecord>,
        status: &'static str,
        details: T,
    ) -> Self {
        RunLog {
            schema: 1,
            tool: "irtlong",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            nodes,
            inputs,
            status,
            outputs: Vec::new(),
            details,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub role: &'static str,
    pub path: String,
    /// FNV-1a of the file bytes, hex.
    pub fnv1a: String,
}

impl InputRecord {
    pub fn read(role: &'static str, path: &Path) -> Result<(InputRecord, Vec<u8>)> {
        let bytes = fs::read(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in &bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Ok((
            InputRecord {
                role,
                path: path.display().to_string(),
                fnv1a: format!("{h:016x}"),
            },
            bytes,
        ))
    }
}
