use rayon::prelude::*;

use super::{interpolate_failures, CellRect, FlowField, Frame, GridGeometry, CELLS};
use crate::{Error, Result};

/// Single-level iterative Lucas-Kanade settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LkConfig {
    pub max_iterations: usize,
    /// Stop once the update step is shorter than this (pixels).
    pub epsilon: f64,
    /// A cell fails when the smaller structure-tensor eigenvalue is below
    /// `min_eigen_ratio * pixel_count`.
    pub min_eigen_ratio: f64,
    /// Estimates that wander further than this (pixels) count as failures.
    pub max_displacement: f64,
}

impl Default for LkConfig {
    fn default() -> Self {
        LkConfig {
            max_iterations: 20,
            epsilon: 0.01,
            min_eigen_ratio: 1e-6,
            max_displacement: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct CellFlow {
    u: f64,
    v: f64,
    converged: bool,
}

/// Bilinear sample with coordinates clamped to the frame.
#[inline]
fn sample(frame: &Frame, x: f64, y: f64) -> f64 {
    let max_x = (frame.width() - 1) as f64;
    let max_y = (frame.height() - 1) as f64;
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as usize;
    let y0 = y0 as usize;
    let x1 = (x0 + 1).min(frame.width() - 1);
    let y1 = (y0 + 1).min(frame.height() - 1);
    let top = frame.at(x0, y0) as f64 * (1.0 - fx) + frame.at(x1, y0) as f64 * fx;
    let bottom = frame.at(x0, y1) as f64 * (1.0 - fx) + frame.at(x1, y1) as f64 * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Derivative along one cell axis using only samples inside the cell.
#[inline]
fn cell_derivative(get: impl Fn(usize) -> f64, pos: usize, lo: usize, len: usize) -> f64 {
    if len < 2 {
        0.0
    } else if pos == lo {
        get(pos + 1) - get(pos)
    } else if pos + 1 == lo + len {
        get(pos) - get(pos - 1)
    } else {
        0.5 * (get(pos + 1) - get(pos - 1))
    }
}

/// Inverse-compositional translation LK on one cell: the template and its
/// gradients come from `prev`, and `next` is resampled at the current
/// translation each iteration.
fn track_cell(prev: &Frame, next: &Frame, rect: CellRect, cfg: &LkConfig) -> CellFlow {
    let n = rect.area();
    let mut template = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for y in rect.top..rect.top + rect.height {
        for x in rect.left..rect.left + rect.width {
            let gx = cell_derivative(|xx| prev.at(xx, y) as f64, x, rect.left, rect.width);
            let gy = cell_derivative(|yy| prev.at(x, yy) as f64, y, rect.top, rect.height);
            template.push(prev.at(x, y) as f64);
            grad.push((gx, gy));
            sxx += gx * gx;
            sxy += gx * gy;
            syy += gy * gy;
        }
    }

    let half_trace = 0.5 * (sxx + syy);
    let min_eig = half_trace - (0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy).sqrt();
    if !(min_eig >= cfg.min_eigen_ratio * n as f64) {
        return CellFlow {
            u: 0.0,
            v: 0.0,
            converged: false,
        };
    }
    let det = sxx * syy - sxy * sxy;
    let (ixx, ixy, iyy) = (syy / det, -sxy / det, sxx / det);

    let (mut u, mut v) = (0.0f64, 0.0f64);
    for _ in 0..cfg.max_iterations {
        let (mut bx, mut by) = (0.0, 0.0);
        let mut k = 0;
        for y in rect.top..rect.top + rect.height {
            for x in rect.left..rect.left + rect.width {
                let err = sample(next, x as f64 + u, y as f64 + v) - template[k];
                bx += grad[k].0 * err;
                by += grad[k].1 * err;
                k += 1;
            }
        }
        let du = ixx * bx + ixy * by;
        let dv = ixy * bx + iyy * by;
        u -= du;
        v -= dv;
        if !(u.is_finite() && v.is_finite()) || u.hypot(v) > cfg.max_displacement {
            return CellFlow {
                u: 0.0,
                v: 0.0,
                converged: false,
            };
        }
        if du.hypot(dv) < cfg.epsilon {
            return CellFlow {
                u,
                v,
                converged: true,
            };
        }
    }
    CellFlow {
        u,
        v,
        converged: false,
    }
}

/// Per-cell translation between two consecutive frames. The returned field
/// has `frame_index` 0; [`extract_flow`] numbers fields along a sequence.
pub fn lk_cell_flow(
    prev: &Frame,
    next: &Frame,
    geom: &GridGeometry,
    cfg: &LkConfig,
) -> Result<FlowField> {
    if prev.width() != next.width() || prev.height() != next.height() {
        return Err(Error::DimensionMismatch(format!(
            "frames are {}x{} and {}x{}",
            prev.width(),
            prev.height(),
            next.width(),
            next.height()
        )));
    }
    if geom.frame_size() != (prev.width(), prev.height()) {
        return Err(Error::DimensionMismatch(format!(
            "grid built for {:?}, frames are {}x{}",
            geom.frame_size(),
            prev.width(),
            prev.height()
        )));
    }
    let cells: Vec<CellFlow> = geom
        .cells()
        .par_iter()
        .map(|&rect| track_cell(prev, next, rect, cfg))
        .collect();
    let mut field = FlowField::zeros(0);
    for (i, c) in cells.into_iter().enumerate() {
        field.u[i] = c.u as f32;
        field.v[i] = c.v as f32;
        field.converged[i] = c.converged;
    }
    debug_assert_eq!(field.u.len(), CELLS);
    Ok(field)
}

/// Flow for every consecutive pair of an (already 15 FPS) sequence, with
/// failed cells filled in by temporal interpolation. `n` frames give `n - 1`
/// fields.
pub fn extract_flow(frames: &[Frame], cfg: &LkConfig) -> Result<Vec<FlowField>> {
    let first = frames.first().ok_or(Error::EmptyInput("frame sequence"))?;
    let geom = GridGeometry::for_frame(first.width(), first.height())?;
    let mut fields = Vec::with_capacity(frames.len().saturating_sub(1));
    for (k, pair) in frames.windows(2).enumerate() {
        let mut field = lk_cell_flow(&pair[0], &pair[1], &geom, cfg)?;
        field.frame_index = k as u32;
        fields.push(field);
    }
    Ok(interpolate_failures(&fields))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_frame_pair, textured_frame};

    fn interior(i: usize) -> bool {
        let (r, c) = (i / 32, i % 32);
        (1..31).contains(&r) && (1..31).contains(&c)
    }

    #[test]
    fn recovers_horizontal_shift() {
        let (a, b) = generate_frame_pair((3, 0), 7);
        let geom = GridGeometry::for_frame(a.width(), a.height()).unwrap();
        let f = lk_cell_flow(&a, &b, &geom, &LkConfig::default()).unwrap();
        for i in (0..CELLS).filter(|&i| interior(i)) {
            assert!((f.u[i] - 3.0).abs() <= 0.25, "cell {i}: u = {}", f.u[i]);
            assert!(f.v[i].abs() <= 0.25, "cell {i}: v = {}", f.v[i]);
        }
    }

    #[test]
    fn identical_frames_have_zero_flow() {
        let a = textured_frame(256, 256, 3);
        let geom = GridGeometry::for_frame(256, 256).unwrap();
        let f = lk_cell_flow(&a, &a, &geom, &LkConfig::default()).unwrap();
        assert!(f.u.iter().chain(&f.v).all(|&x| x == 0.0));
        assert!(f.converged.iter().all(|&c| c));
    }

    #[test]
    fn flat_cell_fails_to_converge() {
        let mut a = textured_frame(256, 256, 5);
        // Cell (5, 5) covers x, y in 40..48.
        let mut luma = a.luma().to_vec();
        for y in 40..48 {
            for x in 40..48 {
                luma[y * 256 + x] = 0.5;
            }
        }
        a = Frame::new(256, 256, luma, 0.0).unwrap();
        let geom = GridGeometry::for_frame(256, 256).unwrap();
        let f = lk_cell_flow(&a, &a, &geom, &LkConfig::default()).unwrap();
        assert!(!f.converged[5 * 32 + 5]);
        assert_eq!(f.failure_count(), 1);
    }

    #[test]
    fn mismatched_frames_are_rejected() {
        let a = textured_frame(64, 64, 1);
        let b = textured_frame(96, 64, 1);
        let geom = GridGeometry::for_frame(64, 64).unwrap();
        assert!(matches!(
            lk_cell_flow(&a, &b, &geom, &LkConfig::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn deterministic() {
        let (a, b) = generate_frame_pair((-2, 1), 11);
        let geom = GridGeometry::for_frame(a.width(), a.height()).unwrap();
        let f1 = lk_cell_flow(&a, &b, &geom, &LkConfig::default()).unwrap();
        let f2 = lk_cell_flow(&a, &b, &geom, &LkConfig::default()).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn sequence_numbers_fields() {
        let frames: Vec<Frame> = (0..4)
            .map(|i| textured_frame(64, 64, 9).with_timestamp(i as f64))
            .collect();
        let fields = extract_flow(&frames, &LkConfig::default()).unwrap();
        assert_eq!(fields.len(), 3);
        assert_eq!(
            fields.iter().map(|f| f.frame_index).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }
}
