use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::wav::read_wav;
use crate::dsp::{resample, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Clean,
    Noise,
    Wind,
    Rir,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Clean => "clean",
            Role::Noise => "noise",
            Role::Wind => "wind",
            Role::Rir => "rir",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub role: Role,
    pub rate: u32,
    pub duration_s: f64,
}

/// Line-delimited JSON list of audio files and their roles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    /// Reads a manifest; relative paths are resolved against the manifest's directory
    /// and every path must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut entries = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut entry: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            if entry.path.is_relative() {
                entry.path = base.join(&entry.path);
            }
            if !entry.path.exists() {
                return Err(Error::io(
                    &entry.path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "manifest entry not found"),
                ));
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for e in &self.entries {
            writeln!(file, "{}", serde_json::to_string(e)?).map_err(|err| Error::io(path, err))?;
        }
        Ok(())
    }

    pub fn by_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    pub fn count(&self, role: Role) -> usize {
        self.by_role(role).count()
    }

    pub fn total_duration_s(&self, role: Role) -> f64 {
        self.by_role(role).map(|e| e.duration_s).sum()
    }

    /// Reads every file of `role`, resampled to `rate`.
    pub fn load_role(&self, role: Role, rate: u32) -> Result<Vec<Waveform>> {
        self.by_role(role)
            .map(|e| {
                let w = read_wav(&e.path)?;
                if w.rate() == rate {
                    Ok(w)
                } else {
                    resample(&w, rate)
                }
            })
            .collect()
    }
}
