use std::io::{Read, Write};
use std::path::Path;

use super::{count, Reader, Writer, FORMAT_VERSION};
use crate::flow::{FlowField, CELLS};
use crate::{Error, Result, GRID_SIZE};

pub const FLOW_MAGIC: &[u8; 4] = b"EGFL";

/// Writes fields as `EGFL`. Convergence flags are not stored.
pub fn write_flow<W: Write>(out: W, fields: &[FlowField]) -> Result<()> {
    let mut w = Writer::new(out);
    w.bytes(FLOW_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u32(GRID_SIZE as u32)?;
    w.u32(GRID_SIZE as u32)?;
    w.u32(count(fields.len(), "flow fields")?)?;
    for f in fields {
        if f.u.len() != CELLS || f.v.len() != CELLS {
            return Err(Error::DimensionMismatch(format!(
                "flow field {} is not {GRID_SIZE}x{GRID_SIZE}",
                f.frame_index
            )));
        }
        w.u32(f.frame_index)?;
        w.f32s(f.u.iter().copied())?;
        w.f32s(f.v.iter().copied())?;
    }
    w.finish()
}

/// Reads an `EGFL` stream; every field comes back marked converged.
pub fn read_flow<R: Read>(input: R) -> Result<Vec<FlowField>> {
    let mut r = Reader::new(input, "EGFL");
    r.magic(FLOW_MAGIC)?;
    r.version()?;
    let (rows, cols) = (r.u32()?, r.u32()?);
    if rows as usize != GRID_SIZE || cols as usize != GRID_SIZE {
        return Err(Error::format(format!(
            "EGFL grid {rows}x{cols}, expected {GRID_SIZE}x{GRID_SIZE}"
        )));
    }
    let n = r.u32()?;
    let mut fields = Vec::with_capacity(n.min(1 << 16) as usize);
    for _ in 0..n {
        let frame_index = r.u32()?;
        let u = r.f32s(CELLS)?;
        let v = r.f32s(CELLS)?;
        fields.push(FlowField::from_components(frame_index, u, v)?);
    }
    r.finish()?;
    Ok(fields)
}

impl FlowField {
    pub fn save_all(path: &Path, fields: &[FlowField]) -> Result<()> {
        write_flow(super::create(path)?, fields)
    }

    pub fn load_all(path: &Path) -> Result<Vec<FlowField>> {
        read_flow(super::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<FlowField> {
        (0..3u32)
            .map(|k| {
                let u = (0..CELLS).map(|i| i as f32 * 0.25 - k as f32).collect();
                let v = (0..CELLS).map(|i| -(i as f32) / 7.0).collect();
                FlowField::from_components(k * 2, u, v).unwrap()
            })
            .collect()
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_flow(&mut buf, &sample()).unwrap();
        assert_eq!(&buf[..4], b"EGFL");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 32);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 3);
        assert_eq!(buf.len(), 20 + 3 * (4 + 2 * 4 * CELLS));
        assert_eq!(read_flow(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn rejects_damage() {
        let mut buf = Vec::new();
        write_flow(&mut buf, &sample()).unwrap();
        assert!(matches!(
            read_flow(&buf[..buf.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_flow(bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_flow(bad.as_slice()), Err(Error::Format(_))));
        let mut extra = buf;
        extra.push(0);
        assert!(matches!(read_flow(extra.as_slice()), Err(Error::Format(_))));
    }
}
