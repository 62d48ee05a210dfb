//! Little-endian binary containers shared by the pipeline stages.
//!
//! | magic  | contents                                   |
//! |--------|--------------------------------------------|
//! | `EGFR` | raw 8-bit grayscale frame stream           |
//! | `EGFL` | per-cell flow fields                       |
//! | `EGVD` | stacked flow volumes with labels           |
//! | `EGNT` | trained network, labels and normalization  |
//!
//! Frames can also be read from a directory of binary PGM files.

mod flow;
mod frames;
mod model;
mod volumes;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub use flow::{read_flow, write_flow, FLOW_MAGIC};
pub use frames::{
    read_frame_stream, read_frames, read_pgm, read_pgm_dir, write_frame_stream, write_pgm,
    write_pgm_dir, FRAME_MAGIC,
};
pub use model::{read_model, write_model, MODEL_MAGIC};
pub use volumes::{read_volumes, write_volumes, VolumeWriter, VOLUME_MAGIC};

use crate::{Error, Result};

/// Version written into, and accepted from, every versioned container.
pub const FORMAT_VERSION: u32 = 1;

pub(crate) struct Reader<R> {
    inner: R,
    what: &'static str,
}

impl<R: Read> Reader<R> {
    pub(crate) fn new(inner: R, what: &'static str) -> Self {
        Reader { inner, what }
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => {
                Error::format(format!("{} file is truncated", self.what))
            }
            _ => Error::Io(e),
        })
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0; N];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.array::<4>()?;
        if &got != magic {
            return Err(Error::format(format!(
                "expected {} magic {:?}, found {:?}",
                self.what,
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&got)
            )));
        }
        Ok(())
    }

    pub(crate) fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported {} version {v}",
                self.what
            )));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.bytes(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    /// Fails unless the stream is exhausted.
    pub(crate) fn finish(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::format(format!(
                "trailing bytes after {} data",
                self.what
            ))),
        }
    }
}

pub(crate) struct Writer<W> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub(crate) fn new(inner: W) -> Self {
        Writer { inner }
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) -> Result<()> {
        Ok(self.inner.write_all(b)?)
    }

    pub(crate) fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn i32(&mut self, v: i32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn f32(&mut self, v: f32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn f32s(&mut self, vs: impl IntoIterator<Item = f32>) -> Result<()> {
        for v in vs {
            self.f32(v)?;
        }
        Ok(())
    }

    pub(crate) fn finish(mut self) -> Result<()> {
        Ok(self.inner.flush()?)
    }
}

/// Converts a length to the u32 the containers store.
pub(crate) fn count(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::format(format!("too many {what} for a u32 count: {n}")))
}

/// Buffered reader for `path`.
pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

/// Buffered writer that creates or truncates `path`.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Newline-separated class names, one per line; blank lines are skipped.
pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_labels(&text))
}

pub fn parse_labels(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

pub fn write_labels(path: &Path, labels: &[String]) -> Result<()> {
    let mut text = labels.join("\n");
    text.push('\n');
    Ok(std::fs::write(path, text)?)
}
