//! Output files: everything is written to a temporary file in the target
//! directory and renamed into place, so readers never see partial output.

use std::fs;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut r = BufReader::new(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

/// Write `path` atomically with whatever `fill` puts into the writer.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("creating a file in {}", dir.display()))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        Ok(w.write_all(b"\n")?)
    })
}

/// CSV with a header row, plus a `<name>.columns.txt` legend next to it.
pub fn write_csv(path: &Path, columns: &[(&str, &str)], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(columns.iter().map(|c| c.0))?;
        for r in rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    })?;
    let legend: String = columns.iter().map(|(name, doc)| format!("{name}: {doc}\n")).collect();
    write_text(&legend_path(path), &legend)
}

pub fn legend_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("table");
    csv.with_file_name(format!("{stem}.columns.txt"))
}

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileEntry {
    pub fn of(path: &Path) -> Result<Self> {
        Self::named(path, path.display().to_string())
    }

    /// Recorded by file name only, for files inside the output directory.
    pub fn output(path: &Path) -> Result<Self> {
        Self::named(
            path,
            path.file_name()
                .map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        )
    }

    fn named(path: &Path, name: String) -> Result<Self> {
        Ok(FileEntry {
            path: name,
            sha256: sha256_file(path)?,
            bytes: fs::metadata(path)?.len(),
        })
    }
}

/// Everything needed to replay a command: the resolved config (saved next
/// to it as `<command>.config.toml`), its hash, the seed, and the files
/// read and written.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub config_file: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<serde_json::Value>,
}

impl Manifest {
    pub fn new(command: &str, config_toml: &str, seed: Option<u64>) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_sha256: sha256_bytes(config_toml.as_bytes()),
            config_file: String::new(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: None,
        }
    }

    /// Save the config and the manifest into `dir`, named after the command.
    pub fn save(mut self, dir: &Path, config_toml: &str) -> Result<PathBuf> {
        let config_path = dir.join(format!("{}.config.toml", self.command));
        write_text(&config_path, config_toml)?;
        self.config_file = config_path.file_name().unwrap().to_string_lossy().into_owned();
        let path = dir.join(format!("{}.manifest.json", self.command));
        write_json(&path, &self)?;
        Ok(path)
    }
}

/// Shortest round-trip form for CSV cells; empty for NaN.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(
            sha256_bytes(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn csv_and_legend() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, &[("a", "first"), ("b", "second")], &[vec!["1".into(), "2".into()]]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n1,2\n");
        assert_eq!(
            fs::read_to_string(dir.path().join("t.columns.txt")).unwrap(),
            "a: first\nb: second\n"
        );
    }
}
