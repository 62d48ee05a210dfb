use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::net::NetworkModel;
use crate::nn::Conv3d;
use crate::{Error, Result};

/// Side of a C1 kernel slice, and of the arrow grid.
pub const KERNEL_SIDE: usize = 17;
/// Pixels per grid cell in the rendered images.
const CELL_PX: usize = 20;
/// Length of the longest arrow, in pixels.
const MAX_ARROW_PX: f64 = 0.9 * CELL_PX as f64;
const IMAGE_PX: usize = KERNEL_SIDE * CELL_PX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    /// Draw every `sparsity`-th row and column of arrows; 1 draws all.
    pub sparsity: usize,
    /// Also rasterize to binary PPM.
    pub ppm: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            sparsity: 1,
            ppm: false,
        }
    }
}

/// One arrow in pixel coordinates: origin at the cell center, `y` down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrow {
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelImage {
    pub pair: usize,
    /// All 17×17 arrows, row-major, regardless of sparsity.
    pub arrows: Vec<Arrow>,
    pub svg: String,
    pub ppm: Option<Vec<u8>>,
}

impl KernelImage {
    /// The arrow at grid `(row, col)`.
    pub fn arrow(&self, row: usize, col: usize) -> Arrow {
        self.arrows[row * KERNEL_SIDE + col]
    }
}

/// Weights of depth slices `2 pair` (u) and `2 pair + 1` (v) of kernel `k`,
/// each row-major over the 17×17 slice.
pub fn kernel_field(conv: &Conv3d, k: usize, pair: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = conv.kernel_shape;
    if k >= conv.kernels {
        return Err(Error::Index {
            index: k,
            limit: conv.kernels,
        });
    }
    if 2 * pair + 1 >= s.depth {
        return Err(Error::Index {
            index: pair,
            limit: s.depth / 2,
        });
    }
    let w = conv.kernel(k);
    let cells = s.rows * s.cols;
    let (mut u, mut v) = (Vec::with_capacity(cells), Vec::with_capacity(cells));
    for cell in 0..cells {
        u.push(w[cell * s.depth + 2 * pair]);
        v.push(w[cell * s.depth + 2 * pair + 1]);
    }
    Ok((u, v))
}

/// Renders every u/v slice pair of C1 kernel `kernel_id` as an arrow field.
/// Arrow lengths are scaled by the largest vector magnitude over the whole
/// kernel.
pub fn render_kernel_flowfields(
    model: &NetworkModel,
    kernel_id: usize,
    opts: &RenderOptions,
) -> Result<Vec<KernelImage>> {
    let conv = &model.params.c1;
    if kernel_id >= conv.kernels {
        return Err(Error::Index {
            index: kernel_id,
            limit: conv.kernels,
        });
    }
    let s = conv.kernel_shape;
    if s.rows != KERNEL_SIDE || s.cols != KERNEL_SIDE {
        return Err(Error::shape(format!(
            "rendering needs {KERNEL_SIDE}x{KERNEL_SIDE} slices, kernel is {}x{}",
            s.rows, s.cols
        )));
    }
    if opts.sparsity == 0 {
        return Err(Error::InvalidArgument("sparsity must be at least 1".into()));
    }
    let fields: Vec<(Vec<f64>, Vec<f64>)> = (0..s.depth / 2)
        .map(|p| kernel_field(conv, kernel_id, p))
        .collect::<Result<_>>()?;
    let max = fields
        .iter()
        .flat_map(|(u, v)| u.iter().zip(v).map(|(a, b)| a.hypot(*b)))
        .fold(0.0f64, f64::max);
    let scale = if max > 0.0 { MAX_ARROW_PX / max } else { 0.0 };
    Ok(fields
        .iter()
        .enumerate()
        .map(|(pair, (u, v))| {
            let arrows: Vec<Arrow> = (0..KERNEL_SIDE * KERNEL_SIDE)
                .map(|cell| Arrow {
                    x: ((cell % KERNEL_SIDE) * CELL_PX) as f64 + CELL_PX as f64 / 2.0,
                    y: ((cell / KERNEL_SIDE) * CELL_PX) as f64 + CELL_PX as f64 / 2.0,
                    dx: u[cell] * scale,
                    dy: v[cell] * scale,
                })
                .collect();
            let shown: Vec<Arrow> = arrows
                .iter()
                .enumerate()
                .filter(|(cell, _)| {
                    (cell / KERNEL_SIDE).is_multiple_of(opts.sparsity)
                        && (cell % KERNEL_SIDE).is_multiple_of(opts.sparsity)
                })
                .map(|(_, a)| *a)
                .collect();
            KernelImage {
                pair,
                svg: svg(&shown),
                ppm: opts.ppm.then(|| ppm(&shown)),
                arrows,
            }
        })
        .collect())
}

/// Writes `kernel_<id>_pair_<p>.svg` (and `.ppm` when rasterized) into
/// `dir`, returning the paths written.
pub fn write_kernel_images(
    dir: &Path,
    kernel_id: usize,
    images: &[KernelImage],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for img in images {
        let stem = format!("kernel_{kernel_id}_pair_{}", img.pair);
        let path = dir.join(format!("{stem}.svg"));
        std::fs::write(&path, &img.svg)?;
        written.push(path);
        if let Some(bytes) = &img.ppm {
            let path = dir.join(format!("{stem}.ppm"));
            std::fs::write(&path, bytes)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn is_dot(a: &Arrow) -> bool {
    a.dx.hypot(a.dy) < 0.5
}

fn svg(arrows: &[Arrow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{IMAGE_PX}" height="{IMAGE_PX}" viewBox="0 0 {IMAGE_PX} {IMAGE_PX}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<g stroke="black" fill="black" stroke-width="1">"#);
    for a in arrows {
        if is_dot(a) {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.3}" cy="{:.3}" r="1.000"/>"#,
                a.x, a.y
            );
            continue;
        }
        let (tx, ty) = (a.x + a.dx, a.y + a.dy);
        let len = a.dx.hypot(a.dy);
        let (ux, uy) = (a.dx / len, a.dy / len);
        let head = len.min(12.0) * 0.3;
        let (bx, by) = (tx - ux * head, ty - uy * head);
        let (px, py) = (-uy * head * 0.5, ux * head * 0.5);
        let _ = writeln!(
            out,
            r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}"/><polygon points="{:.3},{:.3} {:.3},{:.3} {:.3},{:.3}"/>"#,
            a.x,
            a.y,
            bx,
            by,
            tx,
            ty,
            bx + px,
            by + py,
            bx - px,
            by - py
        );
    }
    out.push_str("</g>\n</svg>\n");
    out
}

fn ppm(arrows: &[Arrow]) -> Vec<u8> {
    let mut pixels = vec![255u8; IMAGE_PX * IMAGE_PX * 3];
    let mut plot = |x: f64, y: f64| {
        let (x, y) = (x.round(), y.round());
        if x >= 0.0 && y >= 0.0 && (x as usize) < IMAGE_PX && (y as usize) < IMAGE_PX {
            let i = (y as usize * IMAGE_PX + x as usize) * 3;
            pixels[i..i + 3].fill(0);
        }
    };
    for a in arrows {
        if is_dot(a) {
            plot(a.x, a.y);
            continue;
        }
        let steps = (a.dx.abs().max(a.dy.abs()).ceil() as usize).max(1) * 2;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            plot(a.x + a.dx * t, a.y + a.dy * t);
        }
        let len = a.dx.hypot(a.dy);
        let head = len.min(12.0) * 0.3;
        let (ux, uy) = (a.dx / len, a.dy / len);
        for side in [-0.5, 0.5] {
            let (hx, hy) = (-ux * head - uy * head * side, -uy * head + ux * head * side);
            let n = (head.ceil() as usize).max(1) * 2;
            for s in 0..=n {
                let t = s as f64 / n as f64;
                plot(a.x + a.dx + hx * t, a.y + a.dy + hy * t);
            }
        }
    }
    let mut out = format!("P6\n{IMAGE_PX} {IMAGE_PX}\n255\n").into_bytes();
    out.extend(pixels);
    out
}
