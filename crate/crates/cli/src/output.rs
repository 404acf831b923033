use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Writes the files of one experiment and records them for the manifest.
pub struct OutputDir {
    dir: PathBuf,
    echo: String,
    written: Vec<(String, Vec<u8>)>,
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    file: &'a str,
    bytes: usize,
    sha256: String,
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

impl OutputDir {
    /// `echo` is copied, one `# `-prefixed line per input line, above the
    /// header of every CSV file.
    pub fn create(dir: &Path, echo: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let echo = echo.lines().map(|l| format!("# {l}\n")).collect();
        Ok(OutputDir { dir: dir.to_path_buf(), echo, written: Vec::new() })
    }

    fn put(&mut self, name: &str, bytes: Vec<u8>) -> Result<(), CliError> {
        fs::write(self.dir.join(name), &bytes)?;
        self.written.push((name.to_string(), bytes));
        Ok(())
    }

    pub fn csv<I, R>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let mut buf = self.echo.clone().into_bytes();
        {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(&mut buf);
            w.write_record(header)?;
            for row in rows {
                w.write_record(row.into_iter().collect::<Vec<_>>())?;
            }
            w.flush()?;
        }
        self.put(name, buf)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.put(name, text)
    }

    /// Writes `manifest.json` with the size and SHA-256 of every file.
    pub fn finish(self) -> Result<PathBuf, CliError> {
        let entries: Vec<ManifestEntry> = self
            .written
            .iter()
            .map(|(name, bytes)| ManifestEntry { file: name, bytes: bytes.len(), sha256: hex::encode(Sha256::digest(bytes)) })
            .collect();
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_vec_pretty(&entries)?;
        text.push(b'\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}
