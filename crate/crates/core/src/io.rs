//! Line-oriented input and atomic file output.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::{Error, Result};

/// What to do with input lines that are not valid UTF-8.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Utf8Policy {
    /// Substitute U+FFFD for invalid sequences and count the line.
    #[default]
    Replace,
    /// Fail on the first invalid line.
    Strict,
}

/// Reads `\n`-terminated lines, dropping the terminator (and a preceding
/// `\r`). A final line without a terminator is still yielded.
pub struct LineReader<R> {
    inner: R,
    policy: Utf8Policy,
    buf: Vec<u8>,
    line: usize,
    replaced: usize,
}

impl<R: BufRead> LineReader<R> {
    pub fn new(inner: R, policy: Utf8Policy) -> Self {
        LineReader {
            inner,
            policy,
            buf: Vec::new(),
            line: 0,
            replaced: 0,
        }
    }

    /// Lines read so far.
    pub fn lines_read(&self) -> usize {
        self.line
    }

    /// Lines that contained invalid UTF-8 and were repaired.
    pub fn replaced(&self) -> usize {
        self.replaced
    }

    pub fn next_line(&mut self) -> Result<Option<String>> {
        self.buf.clear();
        let n = self
            .inner
            .read_until(b'\n', &mut self.buf)
            .map_err(|source| Error::LineIo {
                line: self.line + 1,
                source,
            })?;
        if n == 0 {
            return Ok(None);
        }
        self.line += 1;
        if self.buf.last() == Some(&b'\n') {
            self.buf.pop();
            if self.buf.last() == Some(&b'\r') {
                self.buf.pop();
            }
        }
        match std::str::from_utf8(&self.buf) {
            Ok(s) => Ok(Some(s.to_string())),
            Err(_) if self.policy == Utf8Policy::Strict => Err(Error::InvalidUtf8 { line: self.line }),
            Err(_) => {
                self.replaced += 1;
                Ok(Some(String::from_utf8_lossy(&self.buf).into_owned()))
            }
        }
    }
}

impl<R: BufRead> Iterator for LineReader<R> {
    type Item = Result<String>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_line().transpose()
    }
}

pub fn open_lines(path: &Path, policy: Utf8Policy) -> Result<LineReader<BufReader<File>>> {
    Ok(LineReader::new(BufReader::new(File::open(path)?), policy))
}

/// Number of lines in a file, counted the same way [`LineReader`] does.
pub fn count_lines(path: &Path) -> Result<usize> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut count = 0;
    let mut last = None;
    loop {
        let buf = reader.fill_buf()?;
        if buf.is_empty() {
            break;
        }
        count += buf.iter().filter(|&&b| b == b'\n').count();
        last = buf.last().copied();
        let len = buf.len();
        reader.consume(len);
    }
    if matches!(last, Some(b) if b != b'\n') {
        count += 1;
    }
    Ok(count)
}

/// A file that only appears at its destination once committed. Dropping it
/// uncommitted removes the temporary.
pub struct AtomicFile {
    dest: PathBuf,
    writer: BufWriter<NamedTempFile>,
}

impl AtomicFile {
    pub fn create(dest: impl Into<PathBuf>) -> Result<Self> {
        let dest = dest.into();
        let dir = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let tmp = NamedTempFile::new_in(dir)?;
        Ok(AtomicFile {
            dest,
            writer: BufWriter::new(tmp),
        })
    }

    pub fn commit(self) -> Result<()> {
        let tmp = self.writer.into_inner().map_err(|e| e.into_error())?;
        tmp.as_file().sync_all()?;
        tmp.persist(&self.dest).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }
}

impl Write for AtomicFile {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.writer.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.writer.flush()
    }
}

/// Formats a score with shortest round-trip precision.
pub fn format_score(score: f64) -> String {
    format!("{score}")
}
