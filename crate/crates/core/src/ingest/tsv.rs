//! Header-checked TSV reading and writing. Values may not contain TAB or
//! newline characters.

use std::fs::File;
use std::io::{BufRead, BufReader, Lines, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub struct TsvReader {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    width: usize,
    line: usize,
}

impl TsvReader {
    /// Opens `path` and checks its header against `header`. A completely
    /// empty file is accepted and yields no rows.
    pub fn open(path: impl AsRef<Path>, header: &[&str]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path)?;
        let mut lines = BufReader::new(file).lines();
        if let Some(first) = lines.next() {
            let first = first?;
            let got: Vec<&str> = first.trim_end_matches('\r').split('\t').collect();
            if got != header {
                return Err(Error::Parse {
                    path,
                    line: 1,
                    msg: format!("expected header {:?}, found {:?}", header.join("\t"), first),
                });
            }
        }
        Ok(Self {
            path,
            lines,
            width: header.len(),
            line: 1,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Line number of the row last returned.
    pub fn line(&self) -> usize {
        self.line
    }

    pub fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line,
            msg: msg.into(),
        }
    }

    /// Next row, split into exactly `header.len()` fields.
    pub fn next_row(&mut self) -> Result<Option<Vec<String>>> {
        loop {
            let Some(raw) = self.lines.next() else {
                return Ok(None);
            };
            let raw = raw?;
            self.line += 1;
            let raw = raw.trim_end_matches('\r');
            if raw.is_empty() {
                continue;
            }
            let fields: Vec<String> = raw.split('\t').map(str::to_string).collect();
            if fields.len() != self.width {
                return Err(self.error(format!("expected {} fields, found {}", self.width, fields.len())));
            }
            return Ok(Some(fields));
        }
    }
}

/// Writes one TSV row, rejecting values that would break the framing.
pub fn write_row<W: Write, S: AsRef<str>>(out: &mut W, fields: &[S]) -> Result<()> {
    for (i, f) in fields.iter().enumerate() {
        let f = f.as_ref();
        if f.contains(['\t', '\n', '\r']) {
            return Err(Error::Config(format!("value {f:?} contains TAB or newline")));
        }
        if i > 0 {
            out.write_all(b"\t")?;
        }
        out.write_all(f.as_bytes())?;
    }
    out.write_all(b"\n")?;
    Ok(())
}
