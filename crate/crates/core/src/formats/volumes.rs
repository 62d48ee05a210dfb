use std::io::{Read, Write};
use std::path::Path;

use super::{count, Reader, Writer, FORMAT_VERSION};
use crate::volume::{FlowVolume, VOLUME_LEN};
use crate::{Error, Result, GRID_SIZE, VOLUME_DEPTH};

pub const VOLUME_MAGIC: &[u8; 4] = b"EGVD";

/// Writes volumes as `EGVD`; an unlabeled volume is stored with label -1.
/// Normalization state is not stored.
pub fn write_volumes<W: Write>(out: W, volumes: &[FlowVolume]) -> Result<()> {
    let mut w = VolumeWriter::new(out, volumes.len())?;
    for v in volumes {
        w.push(v)?;
    }
    w.finish()
}

/// Streams an `EGVD` file whose volume count is known up front.
pub struct VolumeWriter<W: Write> {
    w: Writer<W>,
    remaining: u32,
}

impl<W: Write> VolumeWriter<W> {
    pub fn new(out: W, volumes: usize) -> Result<Self> {
        let mut w = Writer::new(out);
        let remaining = count(volumes, "volumes")?;
        w.bytes(VOLUME_MAGIC)?;
        w.u32(FORMAT_VERSION)?;
        w.u32(remaining)?;
        for d in [GRID_SIZE, GRID_SIZE, VOLUME_DEPTH] {
            w.u32(d as u32)?;
        }
        Ok(VolumeWriter { w, remaining })
    }

    pub fn push(&mut self, v: &FlowVolume) -> Result<()> {
        if self.remaining == 0 {
            return Err(Error::format("more volumes than the EGVD header announced"));
        }
        if v.data.len() != VOLUME_LEN {
            return Err(Error::shape(format!("volume has {} values", v.data.len())));
        }
        let label = match v.label {
            None => -1,
            Some(l) => {
                i32::try_from(l).map_err(|_| Error::format(format!("label {l} too large")))?
            }
        };
        self.w.i32(label)?;
        self.w.u32(v.start_frame)?;
        self.w.f32s(v.data.iter().copied())?;
        self.remaining -= 1;
        Ok(())
    }

    /// Flushes; fails if fewer volumes were pushed than announced.
    pub fn finish(self) -> Result<()> {
        if self.remaining != 0 {
            return Err(Error::format(format!(
                "{} announced EGVD volumes were never written",
                self.remaining
            )));
        }
        self.w.finish()
    }
}

pub fn read_volumes<R: Read>(input: R) -> Result<Vec<FlowVolume>> {
    let mut r = Reader::new(input, "EGVD");
    r.magic(VOLUME_MAGIC)?;
    r.version()?;
    let n = r.u32()?;
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    if dims != [GRID_SIZE as u32, GRID_SIZE as u32, VOLUME_DEPTH as u32] {
        return Err(Error::format(format!("EGVD volume dims {dims:?}")));
    }
    let mut out = Vec::with_capacity(n.min(1 << 12) as usize);
    for _ in 0..n {
        let label = match r.i32()? {
            -1 => None,
            l if l >= 0 => Some(l as u32),
            l => return Err(Error::format(format!("EGVD label {l}"))),
        };
        let start = r.u32()?;
        out.push(FlowVolume::from_data(r.f32s(VOLUME_LEN)?, start, label)?);
    }
    r.finish()?;
    Ok(out)
}

impl FlowVolume {
    pub fn save_all(path: &Path, volumes: &[FlowVolume]) -> Result<()> {
        write_volumes(super::create(path)?, volumes)
    }

    pub fn load_all(path: &Path) -> Result<Vec<FlowVolume>> {
        read_volumes(super::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_round_trip() {
        let mut a = FlowVolume::zeros(30, Some(4));
        a.data[FlowVolume::index(1, 2, 3)] = -0.5;
        let b = FlowVolume::zeros(60, None);
        let mut buf = Vec::new();
        write_volumes(&mut buf, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(&buf[..4], b"EGVD");
        assert_eq!(buf.len(), 24 + 2 * (8 + 4 * VOLUME_LEN));
        assert_eq!(i32::from_le_bytes(buf[24..28].try_into().unwrap()), 4);
        let second = 24 + 8 + 4 * VOLUME_LEN;
        assert_eq!(
            i32::from_le_bytes(buf[second..second + 4].try_into().unwrap()),
            -1
        );
        assert_eq!(read_volumes(buf.as_slice()).unwrap(), vec![a, b]);
    }

    #[test]
    fn rejects_bad_dims_and_truncation() {
        let mut buf = Vec::new();
        write_volumes(&mut buf, &[FlowVolume::zeros(0, None)]).unwrap();
        assert!(matches!(read_volumes(&buf[..100]), Err(Error::Format(_))));
        buf[20] = 119;
        assert!(matches!(
            read_volumes(buf.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
