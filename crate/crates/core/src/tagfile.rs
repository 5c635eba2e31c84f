//! Tag file I/O.
//!
//! Binary files start with a short text header and continue with 9-byte
//! little-endian records (`u64` timestamp in ps, `u8` channel):
//!
//! ```text
//! TBRFI-TAGS v1
//! layout=six-two
//! side=alice
//! encoding=binary
//! end
//! ```
//!
//! CSV files carry a single `timestamp_ps,channel` header row. Writers go
//! through a temporary file in the target directory and rename on commit.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::tags::TimeTag;

const MAGIC: &str = "TBRFI-TAGS";
const VERSION: &str = "v1";
const CSV_HEADER: &str = "timestamp_ps,channel";
const RECORD: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Alice,
    Bob,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Alice => "alice",
            Side::Bob => "bob",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Binary,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagHeader {
    pub layout: String,
    /// `None` for CSV files, which carry no side information.
    pub side: Option<Side>,
    pub encoding: Encoding,
}

impl TagHeader {
    pub fn binary(layout: &str, side: Side) -> Self {
        TagHeader {
            layout: layout.to_string(),
            side: Some(side),
            encoding: Encoding::Binary,
        }
    }
}

/// Streaming writer; nothing appears at the target path until [`TagWriter::commit`].
pub struct TagWriter {
    out: BufWriter<NamedTempFile>,
    encoding: Encoding,
    target: std::path::PathBuf,
    written: u64,
}

impl TagWriter {
    pub fn create(path: &Path, header: &TagHeader) -> Result<Self> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let tmp = NamedTempFile::new_in(dir)?;
        let mut out = BufWriter::with_capacity(1 << 20, tmp);
        match header.encoding {
            Encoding::Binary => {
                let side = header
                    .side
                    .ok_or_else(|| Error::Format("binary tag files need a side".into()))?;
                if header.layout.is_empty() || header.layout.contains(char::is_whitespace) {
                    return Err(Error::Format("layout name must be a single word".into()));
                }
                write!(
                    out,
                    "{MAGIC} {VERSION}\nlayout={}\nside={side}\nencoding=binary\nend\n",
                    header.layout
                )?;
            }
            Encoding::Csv => writeln!(out, "{CSV_HEADER}")?,
        }
        Ok(TagWriter {
            out,
            encoding: header.encoding,
            target: path.to_path_buf(),
            written: 0,
        })
    }

    pub fn write(&mut self, tags: &[TimeTag]) -> Result<()> {
        match self.encoding {
            Encoding::Binary => {
                let mut buf = [0u8; RECORD];
                for t in tags {
                    buf[..8].copy_from_slice(&t.timestamp.to_le_bytes());
                    buf[8] = t.channel;
                    self.out.write_all(&buf)?;
                }
            }
            Encoding::Csv => {
                for t in tags {
                    writeln!(self.out, "{},{}", t.timestamp, t.channel)?;
                }
            }
        }
        self.written += tags.len() as u64;
        Ok(())
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn commit(self) -> Result<u64> {
        let tmp = self.out.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        tmp.as_file().sync_all()?;
        tmp.persist(&self.target).map_err(|e| Error::Io(e.error))?;
        Ok(self.written)
    }
}

pub fn write_tags(path: &Path, header: &TagHeader, tags: &[TimeTag]) -> Result<()> {
    let mut w = TagWriter::create(path, header)?;
    w.write(tags)?;
    w.commit().map(|_| ())
}

enum Body {
    Binary(BufReader<File>),
    Csv(csv::Reader<BufReader<File>>),
}

/// Streaming reader over either encoding, detected from the first line.
pub struct TagReader {
    header: TagHeader,
    body: Body,
    read: u64,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl TagReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut input = BufReader::with_capacity(1 << 20, File::open(path)?);
        let mut first = String::new();
        read_header_line(&mut input, &mut first)?;
        let first = first.trim_end();
        if first == CSV_HEADER {
            let csv = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
            return Ok(TagReader {
                header: TagHeader {
                    layout: String::new(),
                    side: None,
                    encoding: Encoding::Csv,
                },
                body: Body::Csv(csv),
                read: 0,
            });
        }
        let mut words = first.split(' ');
        if words.next() != Some(MAGIC) {
            return Err(format_err(format!("{}: not a tag file", path.display())));
        }
        match words.next() {
            Some(VERSION) => {}
            Some(v) => return Err(format_err(format!("{}: unsupported version {v}", path.display()))),
            None => return Err(format_err(format!("{}: missing version", path.display()))),
        }
        let (mut layout, mut side, mut encoding) = (None, None, None);
        loop {
            let mut line = String::new();
            read_header_line(&mut input, &mut line)?;
            let line = line.trim_end();
            if line == "end" {
                break;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format_err(format!("bad header line `{line}`")))?;
            match key {
                "layout" => layout = Some(value.to_string()),
                "side" => {
                    side = Some(match value {
                        "alice" => Side::Alice,
                        "bob" => Side::Bob,
                        _ => return Err(format_err(format!("unknown side `{value}`"))),
                    })
                }
                "encoding" => {
                    if value != "binary" {
                        return Err(format_err(format!("unsupported encoding `{value}`")));
                    }
                    encoding = Some(Encoding::Binary);
                }
                _ => return Err(format_err(format!("unknown header key `{key}`"))),
            }
        }
        let header = TagHeader {
            layout: layout.ok_or_else(|| format_err("header has no layout"))?,
            side: Some(side.ok_or_else(|| format_err("header has no side"))?),
            encoding: encoding.ok_or_else(|| format_err("header has no encoding"))?,
        };
        Ok(TagReader {
            header,
            body: Body::Binary(input),
            read: 0,
        })
    }

    pub fn header(&self) -> &TagHeader {
        &self.header
    }

    /// Up to `max` more tags; an empty vector means end of file.
    pub fn read_chunk(&mut self, max: usize) -> Result<Vec<TimeTag>> {
        let mut out = Vec::with_capacity(max.min(1 << 20));
        match &mut self.body {
            Body::Binary(r) => {
                let mut buf = vec![0u8; RECORD * max.min(1 << 16)];
                while out.len() < max {
                    let want = RECORD * (max - out.len()).min(1 << 16);
                    let got = read_full(r, &mut buf[..want])?;
                    if got % RECORD != 0 {
                        return Err(format_err(format!(
                            "truncated record after {} tags",
                            self.read + out.len() as u64 + (got / RECORD) as u64
                        )));
                    }
                    for rec in buf[..got].chunks_exact(RECORD) {
                        let ts = u64::from_le_bytes(rec[..8].try_into().unwrap());
                        out.push(TimeTag::new(ts, rec[8]));
                    }
                    if got < want {
                        break;
                    }
                }
            }
            Body::Csv(r) => {
                let mut rec = csv::StringRecord::new();
                while out.len() < max {
                    let more = r.read_record(&mut rec).map_err(|e| format_err(e.to_string()))?;
                    if !more {
                        break;
                    }
                    // the column header was consumed before the csv reader started
                    let line = rec.position().map_or(0, |p| p.line() + 1);
                    let parse = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
                    let ts = parse(0)
                        .parse::<u64>()
                        .map_err(|e| format_err(format!("line {line}: timestamp: {e}")))?;
                    let ch = parse(1)
                        .parse::<u8>()
                        .map_err(|e| format_err(format!("line {line}: channel: {e}")))?;
                    out.push(TimeTag::new(ts, ch));
                }
            }
        }
        self.read += out.len() as u64;
        Ok(out)
    }
}

fn read_header_line(r: &mut impl BufRead, line: &mut String) -> Result<()> {
    let mut raw = Vec::new();
    let n = r.take(256).read_until(b'\n', &mut raw)?;
    if n == 0 || raw.last() != Some(&b'\n') {
        return Err(format_err("incomplete header"));
    }
    *line = String::from_utf8(raw).map_err(|_| format_err("header is not text"))?;
    Ok(())
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

pub fn read_tags(path: &Path) -> Result<(TagHeader, Vec<TimeTag>)> {
    let mut r = TagReader::open(path)?;
    let mut all = Vec::new();
    loop {
        let chunk = r.read_chunk(1 << 20)?;
        if chunk.is_empty() {
            break;
        }
        all.extend(chunk);
    }
    Ok((r.header.clone(), all))
}
