//! Frame ingestion and per-cell sparse optical flow.

mod interpolate;
mod lk;
mod resample;

pub use interpolate::interpolate_failures;
pub use lk::{extract_flow, lk_cell_flow, LkConfig};
pub use resample::{resample_indices, resample_to_15fps};

use crate::{Error, Result, GRID_SIZE};

/// A decoded grayscale frame with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    luma: Vec<f32>,
    timestamp: f64,
}

impl Frame {
    pub fn new(width: usize, height: usize, luma: Vec<f32>, timestamp: f64) -> Result<Self> {
        if width < GRID_SIZE || height < GRID_SIZE {
            return Err(Error::DimensionMismatch(format!(
                "frame {width}x{height} is smaller than the {GRID_SIZE}x{GRID_SIZE} grid"
            )));
        }
        if luma.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "luma has {} values, expected {}",
                luma.len(),
                width * height
            )));
        }
        if let Some(bad) = luma.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "luma value {} at {bad} outside [0, 1]",
                luma[bad]
            )));
        }
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(Error::InvalidArgument(format!("bad timestamp {timestamp}")));
        }
        Ok(Frame {
            width,
            height,
            luma,
            timestamp,
        })
    }

    /// Builds a frame from 8-bit samples (`0..=255` mapped to `[0, 1]`).
    pub fn from_bytes(width: usize, height: usize, bytes: &[u8], timestamp: f64) -> Result<Self> {
        let luma = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Frame::new(width, height, luma, timestamp)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn luma(&self) -> &[f32] {
        &self.luma
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn with_timestamp(mut self, timestamp: f64) -> Self {
        self.timestamp = timestamp;
        self
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.luma[y * self.width + x]
    }

    /// Quantizes back to 8-bit samples.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.luma
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Pixel rectangle of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub left: usize,
    pub top: usize,
    pub width: usize,
    pub height: usize,
}

impl CellRect {
    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

/// The 32x32 tiling of a frame. Leftover pixels from non-divisible
/// dimensions go to the last row and column of cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridGeometry {
    frame_width: usize,
    frame_height: usize,
    cells: Vec<CellRect>,
}

impl GridGeometry {
    pub fn for_frame(frame_width: usize, frame_height: usize) -> Result<Self> {
        if frame_width < GRID_SIZE || frame_height < GRID_SIZE {
            return Err(Error::DimensionMismatch(format!(
                "frame {frame_width}x{frame_height} is smaller than the grid"
            )));
        }
        let cw = frame_width / GRID_SIZE;
        let ch = frame_height / GRID_SIZE;
        let mut cells = Vec::with_capacity(GRID_SIZE * GRID_SIZE);
        for row in 0..GRID_SIZE {
            for col in 0..GRID_SIZE {
                let width = if col + 1 == GRID_SIZE {
                    frame_width - cw * col
                } else {
                    cw
                };
                let height = if row + 1 == GRID_SIZE {
                    frame_height - ch * row
                } else {
                    ch
                };
                cells.push(CellRect {
                    left: col * cw,
                    top: row * ch,
                    width,
                    height,
                });
            }
        }
        Ok(GridGeometry {
            frame_width,
            frame_height,
            cells,
        })
    }

    pub fn rows(&self) -> usize {
        GRID_SIZE
    }

    pub fn cols(&self) -> usize {
        GRID_SIZE
    }

    pub fn frame_size(&self) -> (usize, usize) {
        (self.frame_width, self.frame_height)
    }

    pub fn cell(&self, row: usize, col: usize) -> CellRect {
        self.cells[row * GRID_SIZE + col]
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> &[CellRect] {
        &self.cells
    }
}

/// One (u, v) translation per grid cell between frame `frame_index` and
/// the frame after it. Arrays are row-major, 32x32.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub frame_index: u32,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
    pub converged: Vec<bool>,
}

pub const CELLS: usize = GRID_SIZE * GRID_SIZE;

impl FlowField {
    pub fn zeros(frame_index: u32) -> Self {
        FlowField {
            frame_index,
            u: vec![0.0; CELLS],
            v: vec![0.0; CELLS],
            converged: vec![true; CELLS],
        }
    }

    /// Builds a fully converged field from row-major components.
    pub fn from_components(frame_index: u32, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if u.len() != CELLS || v.len() != CELLS {
            return Err(Error::DimensionMismatch(format!(
                "flow components must have {CELLS} values, got {} and {}",
                u.len(),
                v.len()
            )));
        }
        Ok(FlowField {
            frame_index,
            u,
            v,
            converged: vec![true; CELLS],
        })
    }

    #[inline]
    pub fn u_at(&self, row: usize, col: usize) -> f32 {
        self.u[row * GRID_SIZE + col]
    }

    #[inline]
    pub fn v_at(&self, row: usize, col: usize) -> f32 {
        self.v[row * GRID_SIZE + col]
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    pub fn failure_count(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_rejects_small_or_inconsistent_input() {
        assert!(Frame::new(31, 40, vec![0.0; 31 * 40], 0.0).is_err());
        assert!(Frame::new(32, 32, vec![0.0; 10], 0.0).is_err());
        assert!(Frame::new(32, 32, vec![1.5; 1024], 0.0).is_err());
        assert!(Frame::new(32, 32, vec![0.5; 1024], 0.0).is_ok());
    }

    #[test]
    fn residual_pixels_go_to_last_cells() {
        let g = GridGeometry::for_frame(100, 70).unwrap();
        assert_eq!(
            g.cell(0, 0),
            CellRect {
                left: 0,
                top: 0,
                width: 3,
                height: 2
            }
        );
        assert_eq!(
            g.cell(31, 31),
            CellRect {
                left: 93,
                top: 62,
                width: 7,
                height: 8
            }
        );
    }

    proptest! {
        #[test]
        fn grid_tiles_the_frame(w in 32usize..300, h in 32usize..300) {
            let g = GridGeometry::for_frame(w, h).unwrap();
            let total: usize = g.cells().iter().map(CellRect::area).sum();
            prop_assert_eq!(total, w * h);
            let mut owner = vec![0u8; w * h];
            for c in g.cells() {
                prop_assert!(c.width >= 1 && c.height >= 1);
                for y in c.top..c.top + c.height {
                    for x in c.left..c.left + c.width {
                        owner[y * w + x] += 1;
                    }
                }
            }
            prop_assert!(owner.iter().all(|&n| n == 1));
        }
    }
}
