//! FFT evaluation of a strided valid 3D convolution.
//!
//! The input and each kernel are transformed once on an FFT grid whose
//! extents are multiples of the stride. The strided output samples are
//! obtained by folding the product spectrum onto a grid `stride` times
//! smaller per axis (aliasing sums) and inverse transforming only that small
//! grid, which cuts the work for large, strided kernels by an order of
//! magnitude over direct summation. Transforms run in single precision;
//! results agree with [`Conv3d::forward`] to about 1e-6 relative.

use std::cell::RefCell;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::conv::Conv3d;
use super::tensor::{Shape3, Tensor3};
use crate::{Error, Result};

/// Working precision of the transforms. Single precision halves memory
/// traffic and doubles vector width; outputs differ from the direct sum by
/// about 1e-6 relative.
type Real = f32;
type Cx = Complex<Real>;

const ZERO: Cx = Cx::new(0.0, 0.0);
/// Samples folded together per cache block.
const SAMPLE_CHUNK: usize = 16;
/// Folded depth is padded to a multiple of this many lanes.
const LANES: usize = 16;

#[derive(Clone, Copy)]
enum Axis {
    Rows,
    Cols,
    Depth,
}

/// Per-thread buffers, kept between calls so that large arrays are not
/// re-faulted on every batch.
#[derive(Default)]
struct Workspace {
    buf: Vec<Cx>,
    tmp: Vec<Cx>,
    scratch: Vec<Cx>,
    x_re: Vec<Real>,
    x_im: Vec<Real>,
    fold_re: Vec<Real>,
    fold_im: Vec<Real>,
}

thread_local! {
    static WORKSPACE: RefCell<Workspace> = RefCell::new(Workspace::default());
}

/// Transform planned for one input shape, kernel shape and stride.
pub struct SpectralConv3d {
    input: Shape3,
    kernel: Shape3,
    stride: Shape3,
    output: Shape3,
    grid: Shape3,
    folded: Shape3,
    /// Folded depth padded to a multiple of [`LANES`].
    depth_pad: usize,
    forward: [Arc<dyn Fft<Real>>; 3],
    inverse: [Arc<dyn Fft<Real>>; 3],
}

impl std::fmt::Debug for SpectralConv3d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralConv3d")
            .field("input", &self.input)
            .field("kernel", &self.kernel)
            .field("stride", &self.stride)
            .field("grid", &self.grid)
            .finish()
    }
}

/// Conjugated kernel spectra in folding-block layout, plus biases.
#[derive(Debug, Clone)]
pub struct KernelSpectra {
    kernels: usize,
    re: Vec<Real>,
    im: Vec<Real>,
    biases: Vec<f64>,
}

impl SpectralConv3d {
    pub fn new(input: Shape3, kernel: Shape3, stride: Shape3) -> Result<Self> {
        let output = super::tensor::output_shape(input, kernel, stride)?;
        let up = |n: usize, s: usize| n.div_ceil(s) * s;
        let grid = Shape3::new(
            up(input.rows, stride.rows),
            up(input.cols, stride.cols),
            up(input.depth, stride.depth),
        );
        let folded = Shape3::new(
            grid.rows / stride.rows,
            grid.cols / stride.cols,
            grid.depth / stride.depth,
        );
        let mut planner = FftPlanner::new();
        let forward = [
            planner.plan_fft_forward(grid.rows),
            planner.plan_fft_forward(grid.cols),
            planner.plan_fft_forward(grid.depth),
        ];
        let inverse = [
            planner.plan_fft_inverse(folded.rows),
            planner.plan_fft_inverse(folded.cols),
            planner.plan_fft_inverse(folded.depth),
        ];
        let depth_pad = folded.depth.div_ceil(LANES) * LANES;
        Ok(SpectralConv3d {
            input,
            kernel,
            stride,
            output,
            grid,
            folded,
            depth_pad,
            forward,
            inverse,
        })
    }

    /// Output shape of one kernel's map.
    pub fn output_shape(&self) -> Shape3 {
        self.output
    }

    fn blocks(&self) -> usize {
        self.folded.rows * self.folded.cols
    }

    /// Blocks with folded row frequency at most half the folded rows.
    fn half_blocks(&self) -> usize {
        (self.folded.rows / 2 + 1) * self.folded.cols
    }

    /// Products summed into one folded value: spatial aliases times depth
    /// aliases.
    fn terms(&self) -> usize {
        self.stride.len()
    }

    /// Length of one spectrum in blocked layout.
    fn blocked_len(&self) -> usize {
        self.blocks() * self.terms() * self.depth_pad
    }

    /// Blocked offset of grid frequency `(f1, f2, 0)`. A block holds every
    /// frequency that folds onto one `(g1, g2)`: aliases `(a1, a2)`, then
    /// depth aliases, then `depth_pad` folded depth positions.
    fn blocked_offset(&self, f1: usize, f2: usize) -> usize {
        let (g1, a1) = (f1 % self.folded.rows, f1 / self.folded.rows);
        let (g2, a2) = (f2 % self.folded.cols, f2 / self.folded.cols);
        let block = g1 * self.folded.cols + g2;
        let alias = a1 * self.stride.cols + a2;
        (block * self.stride.rows * self.stride.cols + alias) * self.stride.depth * self.depth_pad
    }

    /// Forward 3D FFT of a zero-padded buffer whose nonzero content lies in
    /// the first `rows x cols` depth lines.
    fn fft3(
        &self,
        buf: &mut [Cx],
        rows: usize,
        cols: usize,
        tmp: &mut Vec<Cx>,
        scratch: &mut Vec<Cx>,
    ) {
        let g = self.grid;
        transform_axis(
            buf,
            g,
            Axis::Depth,
            rows,
            cols,
            &*self.forward[2],
            tmp,
            scratch,
        );
        transform_axis(
            buf,
            g,
            Axis::Cols,
            rows,
            g.depth,
            &*self.forward[1],
            tmp,
            scratch,
        );
        transform_axis(
            buf,
            g,
            Axis::Rows,
            g.cols,
            g.depth,
            &*self.forward[0],
            tmp,
            scratch,
        );
    }

    /// Transforms two real arrays with one complex FFT (`a` as the real
    /// part, `b` as the imaginary part), separates them by conjugate
    /// symmetry and writes both in blocked layout, conjugated when
    /// `conjugate`. Padding positions are left untouched.
    #[allow(clippy::too_many_arguments)]
    fn transform_pair(
        &self,
        a: &[f64],
        b: Option<&[f64]>,
        shape: Shape3,
        conjugate: bool,
        ws: &mut Workspace,
        out_a: (&mut [Real], &mut [Real]),
        mut out_b: Option<(&mut [Real], &mut [Real])>,
    ) {
        let g = self.grid;
        let buf = &mut ws.buf;
        buf.clear();
        buf.resize(g.len(), ZERO);
        for r in 0..shape.rows {
            for c in 0..shape.cols {
                let src = shape.index(r, c, 0);
                let dst = g.index(r, c, 0);
                for d in 0..shape.depth {
                    let im = b.map_or(0.0, |b| b[src + d]);
                    buf[dst + d] = Cx::new(a[src + d] as Real, im as Real);
                }
            }
        }
        self.fft3(buf, shape.rows, shape.cols, &mut ws.tmp, &mut ws.scratch);

        let sign = if conjugate { -1.0 } else { 1.0 };
        let md = self.folded.depth;
        let (a_re, a_im) = out_a;
        for f1 in 0..g.rows {
            let n1 = (g.rows - f1) % g.rows;
            for f2 in 0..g.cols {
                let n2 = (g.cols - f2) % g.cols;
                let base = self.blocked_offset(f1, f2);
                let row = &buf[g.index(f1, f2, 0)..g.index(f1, f2, 0) + g.depth];
                let mirror = &buf[g.index(n1, n2, 0)..g.index(n1, n2, 0) + g.depth];
                for f3 in 0..g.depth {
                    let dst = base + (f3 / md) * self.depth_pad + f3 % md;
                    let z = row[f3];
                    let zn = mirror[(g.depth - f3) % g.depth].conj();
                    a_re[dst] = 0.5 * (z.re + zn.re);
                    a_im[dst] = sign * 0.5 * (z.im + zn.im);
                    if let Some((b_re, b_im)) = out_b.as_mut() {
                        // (z - zn) / 2i
                        b_re[dst] = 0.5 * (z.im - zn.im);
                        b_im[dst] = -sign * 0.5 * (z.re - zn.re);
                    }
                }
            }
        }
    }

    fn check_layer(&self, conv: &Conv3d) -> Result<()> {
        if conv.kernel_shape != self.kernel || conv.stride != self.stride {
            return Err(Error::shape(format!(
                "plan is for kernel {} stride {}, layer has {} stride {}",
                self.kernel, self.stride, conv.kernel_shape, conv.stride
            )));
        }
        if conv.weights.len() != conv.kernels * self.kernel.len()
            || conv.biases.len() != conv.kernels
        {
            return Err(Error::shape(
                "conv3d parameter lengths do not match its shape",
            ));
        }
        Ok(())
    }

    pub fn kernel_spectra(&self, conv: &Conv3d) -> Result<KernelSpectra> {
        let mut spectra = KernelSpectra {
            kernels: 0,
            re: Vec::new(),
            im: Vec::new(),
            biases: Vec::new(),
        };
        self.update_kernel_spectra(&mut spectra, conv)?;
        Ok(spectra)
    }

    /// Recomputes `spectra` for new weights, reusing its storage.
    pub fn update_kernel_spectra(&self, spectra: &mut KernelSpectra, conv: &Conv3d) -> Result<()> {
        self.check_layer(conv)?;
        let n = self.blocked_len();
        spectra.kernels = conv.kernels;
        spectra.re.resize(conv.kernels * n, 0.0);
        spectra.im.resize(conv.kernels * n, 0.0);
        spectra.biases.clone_from(&conv.biases);
        spectra
            .re
            .par_chunks_mut(2 * n)
            .zip(spectra.im.par_chunks_mut(2 * n))
            .enumerate()
            .for_each(|(p, (re, im))| {
                let k = 2 * p;
                let (re_a, re_b) = re.split_at_mut(n);
                let (im_a, im_b) = im.split_at_mut(n);
                let second = (k + 1 < conv.kernels).then(|| conv.kernel(k + 1));
                let out_b = second.map(|_| (re_b, im_b));
                WORKSPACE.with_borrow_mut(|ws| {
                    self.transform_pair(
                        conv.kernel(k),
                        second,
                        self.kernel,
                        true,
                        ws,
                        (re_a, im_a),
                        out_b,
                    )
                });
            });
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input.len() {
            return Err(Error::shape(format!(
                "spectral conv expects a {} input, got {} values",
                self.input,
                x.len()
            )));
        }
        Ok(())
    }

    /// Convolves every input with every kernel, biases included, returning
    /// one map per kernel for each input.
    pub fn forward_maps(
        &self,
        spectra: &KernelSpectra,
        inputs: &[&[f64]],
    ) -> Result<Vec<Vec<Tensor3>>> {
        let mut out = Vec::new();
        self.forward_maps_into(spectra, inputs, &mut out)?;
        Ok(out)
    }

    /// As [`Self::forward_maps`], reusing the tensors already in `out` when
    /// their shapes fit. Every value in `out` is overwritten.
    pub fn forward_maps_into(
        &self,
        spectra: &KernelSpectra,
        inputs: &[&[f64]],
        out: &mut Vec<Vec<Tensor3>>,
    ) -> Result<()> {
        for x in inputs {
            self.check_input(x)?;
        }
        if spectra.re.len() != spectra.kernels * self.blocked_len() {
            return Err(Error::shape(
                "kernel spectra were computed for a different plan",
            ));
        }
        out.resize_with(inputs.len(), Vec::new);
        for maps in out.iter_mut() {
            if maps.len() != spectra.kernels || maps.iter().any(|m| m.shape() != self.output) {
                *maps = vec![Tensor3::zeros(self.output); spectra.kernels];
            }
        }
        inputs
            .par_chunks(SAMPLE_CHUNK)
            .zip(out.par_chunks_mut(SAMPLE_CHUNK))
            .for_each(|(chunk, maps)| {
                WORKSPACE.with_borrow_mut(|ws| self.forward_chunk(spectra, chunk, ws, maps))
            });
        Ok(())
    }

    /// As [`Self::forward_maps`], with each input's maps concatenated along
    /// depth (see [`Tensor3::concat_depth`]).
    pub fn forward_batch(
        &self,
        spectra: &KernelSpectra,
        inputs: &[&[f64]],
    ) -> Result<Vec<Tensor3>> {
        self.forward_maps(spectra, inputs)?
            .iter()
            .map(|maps| Tensor3::concat_depth(maps))
            .collect()
    }

    pub fn forward(&self, spectra: &KernelSpectra, input: &[f64]) -> Result<Tensor3> {
        Ok(self
            .forward_batch(spectra, &[input])?
            .pop()
            .expect("one output"))
    }

    fn forward_chunk(
        &self,
        spectra: &KernelSpectra,
        inputs: &[&[f64]],
        ws: &mut Workspace,
        out: &mut [Vec<Tensor3>],
    ) {
        let n = self.blocked_len();
        let samples = inputs.len();
        let mut x_re = std::mem::take(&mut ws.x_re);
        let mut x_im = std::mem::take(&mut ws.x_im);
        x_re.resize(samples * n, 0.0);
        x_im.resize(samples * n, 0.0);
        for (p, pair) in inputs.chunks(2).enumerate() {
            let span = 2 * p * n..(2 * p + pair.len()) * n;
            let (re_a, re_b) = x_re[span.clone()].split_at_mut(n);
            let (im_a, im_b) = x_im[span].split_at_mut(n);
            let out_b = (pair.len() == 2).then_some((re_b, im_b));
            self.transform_pair(
                pair[0],
                pair.get(1).copied(),
                self.input,
                false,
                ws,
                (re_a, im_a),
                out_b,
            );
        }

        let k_count = spectra.kernels;
        let dp = self.depth_pad;
        // The folded product spectrum is Hermitian (its inverse is real), so
        // only block rows up to the middle are folded.
        let half = self.half_blocks();
        let len = samples * k_count * half * dp;
        ws.fold_re.resize(len, 0.0);
        ws.fold_im.resize(len, 0.0);
        let geometry = FoldGeometry {
            blocks: half,
            block_len: self.terms() * dp,
            depth_pad: dp,
            kernels: k_count,
            samples,
            spectrum_len: n,
        };
        fold_all(
            &geometry,
            &x_re,
            &x_im,
            &spectra.re,
            &spectra.im,
            &mut ws.fold_re,
            &mut ws.fold_im,
        );
        ws.x_re = x_re;
        ws.x_im = x_im;

        let per_map = half * dp;
        let scale = 1.0 / self.grid.len() as f64;
        let f = self.folded;
        let o = self.output;
        let mut ibuf = std::mem::take(&mut ws.buf);
        for (s, maps) in out.iter_mut().enumerate() {
            for k in (0..k_count).step_by(2) {
                // Kernels k and k + 1 packed as real and imaginary
                // parts; both inverse transforms are real.
                let pair = k + 1 < k_count;
                let a = (s * k_count + k) * per_map;
                ibuf.clear();
                ibuf.resize(f.len(), ZERO);
                let span = if pair { 2 * per_map } else { per_map };
                let (fr, fi) = (&ws.fold_re[a..a + span], &ws.fold_im[a..a + span]);
                for g1 in 0..f.rows {
                    for g2 in 0..f.cols {
                        let dst = &mut ibuf[(g1 * f.cols + g2) * f.depth..][..f.depth];
                        if g1 < half / f.cols {
                            let src = (g1 * f.cols + g2) * dp;
                            for (m, z) in dst.iter_mut().enumerate() {
                                let i = src + m;
                                let (br, bi) = if pair {
                                    (fr[i + per_map], fi[i + per_map])
                                } else {
                                    (0.0, 0.0)
                                };
                                *z = Cx::new(fr[i] - bi, fi[i] + br);
                            }
                        } else {
                            let src =
                                (((f.rows - g1) % f.rows) * f.cols + (f.cols - g2) % f.cols) * dp;
                            for (m, z) in dst.iter_mut().enumerate() {
                                let i = src + (f.depth - m) % f.depth;
                                let (br, bi) = if pair {
                                    (fr[i + per_map], -fi[i + per_map])
                                } else {
                                    (0.0, 0.0)
                                };
                                *z = Cx::new(fr[i] - bi, -fi[i] + br);
                            }
                        }
                    }
                }
                self.inverse_folded(&mut ibuf, &mut ws.tmp, &mut ws.scratch);
                let (head, tail) = maps.split_at_mut(k + 1);
                let first = head[k].data_mut();
                let mut second = if pair { Some(tail[0].data_mut()) } else { None };
                for r in 0..o.rows {
                    for c in 0..o.cols {
                        let line = &ibuf[f.index(r, c, 0)..][..o.depth];
                        let at = o.index(r, c, 0);
                        for (d, z) in line.iter().enumerate() {
                            first[at + d] = z.re as f64 * scale + spectra.biases[k];
                        }
                        if let Some(second) = second.as_deref_mut() {
                            for (d, z) in line.iter().enumerate() {
                                second[at + d] = z.im as f64 * scale + spectra.biases[k + 1];
                            }
                        }
                    }
                }
            }
        }
        ws.buf = ibuf;
    }

    /// Inverse 3D FFT on the folded grid, computing only what the output
    /// corner needs.
    fn inverse_folded(&self, buf: &mut [Cx], tmp: &mut Vec<Cx>, scratch: &mut Vec<Cx>) {
        let f = self.folded;
        let o = self.output;
        transform_axis(
            buf,
            f,
            Axis::Rows,
            f.cols,
            f.depth,
            &*self.inverse[0],
            tmp,
            scratch,
        );
        transform_axis(
            buf,
            f,
            Axis::Cols,
            o.rows,
            f.depth,
            &*self.inverse[1],
            tmp,
            scratch,
        );
        transform_axis(
            buf,
            f,
            Axis::Depth,
            o.rows,
            o.cols,
            &*self.inverse[2],
            tmp,
            scratch,
        );
    }
}

/// Runs `fft` over every line along `axis`, restricted to the first `ea`
/// and `eb` indices of the two other axes (in (rows, cols, depth) order
/// with `axis` removed).
#[allow(clippy::too_many_arguments)]
fn transform_axis(
    buf: &mut [Cx],
    shape: Shape3,
    axis: Axis,
    ea: usize,
    eb: usize,
    fft: &dyn Fft<Real>,
    tmp: &mut Vec<Cx>,
    scratch: &mut Vec<Cx>,
) {
    let (len, stride, sa, sb) = match axis {
        Axis::Depth => (shape.depth, 1, shape.cols * shape.depth, shape.depth),
        Axis::Cols => (shape.cols, shape.depth, shape.cols * shape.depth, 1),
        Axis::Rows => (shape.rows, shape.cols * shape.depth, shape.depth, 1),
    };
    let lines = ea * eb;
    if lines == 0 {
        return;
    }
    scratch.resize(fft.get_inplace_scratch_len(), ZERO);
    if let Axis::Depth = axis {
        if eb == shape.cols {
            // Whole rows of contiguous lines: transform in place.
            fft.process_with_scratch(&mut buf[..lines * len], scratch);
            return;
        }
    }
    tmp.clear();
    tmp.resize(lines * len, ZERO);
    for a in 0..ea {
        for b in 0..eb {
            let base = a * sa + b * sb;
            let line = &mut tmp[(a * eb + b) * len..(a * eb + b + 1) * len];
            for (t, z) in line.iter_mut().enumerate() {
                *z = buf[base + t * stride];
            }
        }
    }
    fft.process_with_scratch(tmp, scratch);
    for a in 0..ea {
        for b in 0..eb {
            let base = a * sa + b * sb;
            let line = &tmp[(a * eb + b) * len..(a * eb + b + 1) * len];
            for (t, z) in line.iter().enumerate() {
                buf[base + t * stride] = *z;
            }
        }
    }
}

struct FoldGeometry {
    blocks: usize,
    block_len: usize,
    depth_pad: usize,
    kernels: usize,
    samples: usize,
    spectrum_len: usize,
}

/// Samples and kernels per register tile of the fold.
const TILE_SAMPLES: usize = 2;
const TILE_KERNELS: usize = 3;

super::simd::dispatch! {
    /// Folds every (sample, kernel) product spectrum into
    /// `[sample][kernel][block][depth_pad]` order. Each block is a batch of
    /// small complex matrix products, one per `LANES` depth positions,
    /// computed in register tiles of samples by kernels.
    fn fold_all(g: &FoldGeometry, xr: &[Real], xi: &[Real], wr: &[Real], wi: &[Real], out_re: &mut [Real], out_im: &mut [Real]) {
        let ops = FoldOperands { g, xr, xi, wr, wi };
        for block in 0..g.blocks {
            for m in (0..g.depth_pad).step_by(LANES) {
                let mut k = 0;
                while k < g.kernels {
                    let kn = (g.kernels - k).min(TILE_KERNELS);
                    let mut s = 0;
                    while s < g.samples {
                        let sn = (g.samples - s).min(TILE_SAMPLES);
                        let at = Tile { block, lane: m, sample: s, kernel: k };
                        match (sn, kn) {
                            (2, 3) => fold_tile::<2, 3>(&ops, at, out_re, out_im),
                            (2, 2) => fold_tile::<2, 2>(&ops, at, out_re, out_im),
                            (2, _) => fold_tile::<2, 1>(&ops, at, out_re, out_im),
                            (_, 3) => fold_tile::<1, 3>(&ops, at, out_re, out_im),
                            (_, 2) => fold_tile::<1, 2>(&ops, at, out_re, out_im),
                            _ => fold_tile::<1, 1>(&ops, at, out_re, out_im),
                        }
                        s += sn;
                    }
                    k += kn;
                }
            }
        }
    }
}

struct FoldOperands<'a> {
    g: &'a FoldGeometry,
    xr: &'a [Real],
    xi: &'a [Real],
    wr: &'a [Real],
    wi: &'a [Real],
}

#[derive(Clone, Copy)]
struct Tile {
    block: usize,
    lane: usize,
    sample: usize,
    kernel: usize,
}

/// Sums `x * w` over the block's terms for `S` samples, `K` kernels and
/// `LANES` depth positions, accumulating in registers in term order.
#[inline(always)]
fn fold_tile<const S: usize, const K: usize>(
    ops: &FoldOperands,
    at: Tile,
    out_re: &mut [Real],
    out_im: &mut [Real],
) {
    let g = ops.g;
    let base = at.block * g.block_len + at.lane;
    let lanes = |v: &[Real], spectrum: usize, t: usize| -> [Real; LANES] {
        let o = spectrum * g.spectrum_len + base + t * g.depth_pad;
        v[o..o + LANES].try_into().expect("LANES values")
    };
    let mut ar = [[[0.0; LANES]; K]; S];
    let mut ai = [[[0.0; LANES]; K]; S];
    for t in 0..g.block_len / g.depth_pad {
        let xr: [[Real; LANES]; S] = std::array::from_fn(|a| lanes(ops.xr, at.sample + a, t));
        let xi: [[Real; LANES]; S] = std::array::from_fn(|a| lanes(ops.xi, at.sample + a, t));
        let wr: [[Real; LANES]; K] = std::array::from_fn(|b| lanes(ops.wr, at.kernel + b, t));
        let wi: [[Real; LANES]; K] = std::array::from_fn(|b| lanes(ops.wi, at.kernel + b, t));
        for a in 0..S {
            for b in 0..K {
                for l in 0..LANES {
                    ar[a][b][l] += xr[a][l] * wr[b][l] - xi[a][l] * wi[b][l];
                    ai[a][b][l] += xr[a][l] * wi[b][l] + xi[a][l] * wr[b][l];
                }
            }
        }
    }
    let per_map = g.blocks * g.depth_pad;
    for a in 0..S {
        for b in 0..K {
            let o = ((at.sample + a) * g.kernels + at.kernel + b) * per_map
                + at.block * g.depth_pad
                + at.lane;
            out_re[o..o + LANES].copy_from_slice(&ar[a][b]);
            out_im[o..o + LANES].copy_from_slice(&ai[a][b]);
        }
    }
}
