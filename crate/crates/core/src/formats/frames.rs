use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{count, Reader, Writer};
use crate::flow::Frame;
use crate::{Error, Result};

pub const FRAME_MAGIC: &[u8; 4] = b"EGFR";

/// Writes an `EGFR` stream: header then `width * height` bytes per frame.
pub fn write_frame_stream<W: Write>(out: W, frames: &[Frame], native_fps: f32) -> Result<()> {
    let first = frames.first().ok_or(Error::EmptyInput("frames"))?;
    let (w, h) = (first.width(), first.height());
    let mut wr = Writer::new(out);
    wr.bytes(FRAME_MAGIC)?;
    wr.u32(count(w, "columns")?)?;
    wr.u32(count(h, "rows")?)?;
    wr.f32(native_fps)?;
    for f in frames {
        if (f.width(), f.height()) != (w, h) {
            return Err(Error::DimensionMismatch("frames differ in size".into()));
        }
        wr.bytes(&f.to_bytes())?;
    }
    wr.finish()
}

/// Reads an `EGFR` stream. Frame `k` is timestamped `k / native_fps`.
pub fn read_frame_stream<R: Read>(input: R) -> Result<(Vec<Frame>, f64)> {
    let mut r = Reader::new(input, "EGFR");
    r.magic(FRAME_MAGIC)?;
    let (w, h) = (r.u32()? as usize, r.u32()? as usize);
    let fps = r.f32()? as f64;
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::format(format!("EGFR frame rate {fps}")));
    }
    let mut rest = Vec::new();
    r.inner.read_to_end(&mut rest)?;
    let size = w * h;
    if size == 0 || rest.len() % size != 0 {
        return Err(Error::format(format!(
            "EGFR payload of {} bytes is not a whole number of {w}x{h} frames",
            rest.len()
        )));
    }
    let frames = rest
        .chunks_exact(size)
        .enumerate()
        .map(|(k, b)| Frame::from_bytes(w, h, b, k as f64 / fps))
        .collect::<Result<_>>()?;
    Ok((frames, fps))
}

/// Binary PGM (`P5`, maxval 255).
pub fn write_pgm<W: Write>(out: W, frame: &Frame) -> Result<()> {
    let mut w = Writer::new(out);
    w.bytes(format!("P5\n{} {}\n255\n", frame.width(), frame.height()).as_bytes())?;
    w.bytes(&frame.to_bytes())?;
    w.finish()
}

/// Reads a binary PGM with maxval 255, stamping it with `timestamp`.
pub fn read_pgm<R: Read>(mut input: R, timestamp: f64) -> Result<Frame> {
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < raw.len() && raw[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < raw.len() && raw[pos] == b'#' {
                while pos < raw.len() && raw[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("PGM header is truncated"));
        }
        Ok(String::from_utf8_lossy(&raw[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::format("not a binary PGM (P5)"));
    }
    let mut number = || -> Result<usize> {
        let t = token()?;
        t.parse()
            .map_err(|_| Error::format(format!("bad PGM header field {t:?}")))
    };
    let (w, h, maxval) = (number()?, number()?, number()?);
    if maxval != 255 {
        return Err(Error::format(format!(
            "PGM maxval {maxval}, only 255 is supported"
        )));
    }
    // Exactly one whitespace byte separates the header from the pixels.
    let body = &raw[(pos + 1).min(raw.len())..];
    if body.len() != w * h {
        return Err(Error::format(format!(
            "PGM has {} pixel bytes, expected {}",
            body.len(),
            w * h
        )));
    }
    Frame::from_bytes(w, h, body, timestamp)
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads every `.pgm` file of `dir` in lexicographic order; frame `k` is
/// timestamped `k / fps`.
pub fn read_pgm_dir(dir: &Path, fps: f64) -> Result<Vec<Frame>> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::InvalidArgument(format!("frame rate {fps}")));
    }
    let files = pgm_files(dir)?;
    if files.is_empty() {
        return Err(Error::EmptyInput("PGM directory"));
    }
    files
        .iter()
        .enumerate()
        .map(|(k, p)| read_pgm(super::open(p)?, k as f64 / fps))
        .collect()
}

/// Writes `frame_00000.pgm`, `frame_00001.pgm`, ... into `dir`.
pub fn write_pgm_dir(dir: &Path, frames: &[Frame]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (k, f) in frames.iter().enumerate() {
        write_pgm(super::create(&dir.join(format!("frame_{k:05}.pgm")))?, f)?;
    }
    Ok(())
}

/// Frames from a PGM directory (at `fps`, default 15) or an `EGFR` file
/// (at its stored rate, unless `fps` overrides it). Returns the frames and
/// their native rate.
pub fn read_frames(path: &Path, fps: Option<f64>) -> Result<(Vec<Frame>, f64)> {
    if path.is_dir() {
        let fps = fps.unwrap_or(crate::TARGET_FPS);
        return Ok((read_pgm_dir(path, fps)?, fps));
    }
    let (frames, stored) = read_frame_stream(super::open(path)?)?;
    match fps {
        Some(f) if f != stored => {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::InvalidArgument(format!("frame rate {f}")));
            }
            let frames = frames
                .into_iter()
                .enumerate()
                .map(|(k, fr)| fr.with_timestamp(k as f64 / f))
                .collect();
            Ok((frames, f))
        }
        _ => Ok((frames, stored)),
    }
}
