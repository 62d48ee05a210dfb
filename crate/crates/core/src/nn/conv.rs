//! Valid-region (no padding) strided convolutions. Kernels are correlated
//! with the input, as in every CNN framework.

use super::tensor::{output_shape, Shape3, Tensor3};
use crate::{Error, Result};

/// A bank of 3D kernels applied with a 3D stride. Weights are stored kernel
/// after kernel, each in `(row, col, depth)` order with depth fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    pub kernels: usize,
    pub kernel_shape: Shape3,
    pub stride: Shape3,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub input: Option<Tensor3>,
}

impl Conv3d {
    pub fn zeros(kernels: usize, kernel_shape: Shape3, stride: Shape3) -> Result<Self> {
        if kernels == 0 || kernel_shape.is_empty() || stride.is_empty() {
            return Err(Error::shape(
                "kernel count, kernel extents and strides must be positive",
            ));
        }
        Ok(Conv3d {
            kernels,
            kernel_shape,
            stride,
            weights: vec![0.0; kernels * kernel_shape.len()],
            biases: vec![0.0; kernels],
        })
    }

    pub fn kernel(&self, k: usize) -> &[f64] {
        let n = self.kernel_shape.len();
        &self.weights[k * n..(k + 1) * n]
    }

    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        output_shape(input, self.kernel_shape, self.stride)
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.kernels * self.kernel_shape.len()
            || self.biases.len() != self.kernels
        {
            return Err(Error::shape(
                "conv3d parameter lengths do not match its shape",
            ));
        }
        Ok(())
    }

    /// One output map per kernel.
    pub fn forward(&self, input: &Tensor3) -> Result<Vec<Tensor3>> {
        self.check()?;
        let ishape = input.shape();
        let oshape = self.output_shape(ishape)?;
        let ks = self.kernel_shape;
        let x = input.data();
        Ok((0..self.kernels)
            .map(|k| {
                let w = self.kernel(k);
                let mut out = Tensor3::zeros(oshape);
                let o = out.data_mut();
                for r in 0..oshape.rows {
                    for c in 0..oshape.cols {
                        for d in 0..oshape.depth {
                            let mut acc = self.biases[k];
                            for i in 0..ks.rows {
                                for j in 0..ks.cols {
                                    let xo = ishape.index(
                                        r * self.stride.rows + i,
                                        c * self.stride.cols + j,
                                        d * self.stride.depth,
                                    );
                                    let wo = ks.index(i, j, 0);
                                    acc += dot(&w[wo..wo + ks.depth], &x[xo..xo + ks.depth]);
                                }
                            }
                            o[oshape.index(r, c, d)] = acc;
                        }
                    }
                }
                out
            })
            .collect())
    }

    /// Gradients of a scalar loss given `upstream = dL/d(output maps)`.
    /// Zero upstream entries are skipped, so sparse upstream (after max
    /// pooling) is cheap. The input gradient is only formed on request.
    pub fn backward(
        &self,
        input: &Tensor3,
        upstream: &[Tensor3],
        need_input: bool,
    ) -> Result<ConvGrads> {
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.kernels];
        let mut gx = need_input.then(|| Tensor3::zeros(input.shape()));
        self.backward_into(input, upstream, &mut gw, &mut gb, gx.as_mut())?;
        Ok(ConvGrads {
            weights: gw,
            biases: gb,
            input: gx,
        })
    }

    /// As [`Conv3d::backward`], adding into existing gradient buffers.
    pub fn backward_into(
        &self,
        input: &Tensor3,
        upstream: &[Tensor3],
        gw: &mut [f64],
        gb: &mut [f64],
        mut gx: Option<&mut Tensor3>,
    ) -> Result<()> {
        self.check()?;
        let ishape = input.shape();
        let oshape = self.output_shape(ishape)?;
        if upstream.len() != self.kernels || upstream.iter().any(|u| u.shape() != oshape) {
            return Err(Error::shape(format!(
                "conv3d upstream must be {} maps of {oshape}",
                self.kernels
            )));
        }
        if gw.len() != self.weights.len()
            || gb.len() != self.kernels
            || gx.as_ref().is_some_and(|g| g.shape() != ishape)
        {
            return Err(Error::shape(
                "conv3d gradient buffers do not match the layer",
            ));
        }
        let ks = self.kernel_shape;
        let x = input.data();
        let mut taps: Vec<(f64, usize)> = Vec::new();
        for (k, up) in upstream.iter().enumerate() {
            taps.clear();
            for r in 0..oshape.rows {
                for c in 0..oshape.cols {
                    for d in 0..oshape.depth {
                        let g = up.at(r, c, d);
                        if g == 0.0 {
                            continue;
                        }
                        gb[k] += g;
                        let s = self.stride;
                        taps.push((g, ishape.index(r * s.rows, c * s.cols, d * s.depth)));
                    }
                }
            }
            let gwk = &mut gw[k * ks.len()..(k + 1) * ks.len()];
            windows_axpy(&taps, x, gwk, ks, ishape);
            if let Some(gx) = gx.as_deref_mut() {
                let wk = self.kernel(k);
                let row = ishape.cols * ishape.depth;
                for &(g, xo) in &taps {
                    for i in 0..ks.rows {
                        for j in 0..ks.cols {
                            let xo = xo + i * row + j * ishape.depth;
                            let wo = ks.index(i, j, 0);
                            axpy(
                                g,
                                &wk[wo..wo + ks.depth],
                                &mut gx.data_mut()[xo..xo + ks.depth],
                            );
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

super::simd::dispatch! {
    /// `gw += g * x[window at xo]` for every tap `(g, xo)` in order. Each
    /// depth segment of `gw` stays in registers across all taps; the sums
    /// happen in the same order as one tap at a time.
    fn windows_axpy(taps: &[(f64, usize)], x: &[f64], gw: &mut [f64], ks: Shape3, ishape: Shape3) {
        let row = ishape.cols * ishape.depth;
        for i in 0..ks.rows {
            for j in 0..ks.cols {
                let off = i * row + j * ishape.depth;
                let w = &mut gw[(i * ks.cols + j) * ks.depth..][..ks.depth];
                match ks.depth {
                    20 => segment_fixed::<20>(taps, x, off, w),
                    _ => segment_dynamic(taps, x, off, w),
                }
            }
        }
    }
}

#[inline(always)]
fn segment_fixed<const D: usize>(taps: &[(f64, usize)], x: &[f64], off: usize, w: &mut [f64]) {
    let mut acc: [f64; D] = (&*w).try_into().expect("segment of D");
    for &(g, xo) in taps {
        let xs: &[f64; D] = x[xo + off..][..D].try_into().expect("segment of D");
        for m in 0..D {
            acc[m] += g * xs[m];
        }
    }
    w.copy_from_slice(&acc);
}

#[inline(always)]
fn segment_dynamic(taps: &[(f64, usize)], x: &[f64], off: usize, w: &mut [f64]) {
    for &(g, xo) in taps {
        for (a, &v) in w.iter_mut().zip(&x[xo + off..]) {
            *a += g * v;
        }
    }
}

/// A 2D convolution whose kernels span every input channel (the depth axis).
/// Weights are `(kernel, row, col, channel)` with channel fastest; the output
/// has one channel per kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub kernels: usize,
    pub kernel_rows: usize,
    pub kernel_cols: usize,
    pub channels: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(
        kernels: usize,
        kernel_rows: usize,
        kernel_cols: usize,
        channels: usize,
    ) -> Result<Self> {
        if kernels == 0 || kernel_rows == 0 || kernel_cols == 0 || channels == 0 {
            return Err(Error::shape("conv2d extents must be positive"));
        }
        Ok(Conv2d {
            kernels,
            kernel_rows,
            kernel_cols,
            channels,
            weights: vec![0.0; kernels * kernel_rows * kernel_cols * channels],
            biases: vec![0.0; kernels],
        })
    }

    pub fn kernel_shape(&self) -> Shape3 {
        Shape3::new(self.kernel_rows, self.kernel_cols, self.channels)
    }

    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        if input.depth != self.channels {
            return Err(Error::shape(format!(
                "conv2d expects {} channels, input is {input}",
                self.channels
            )));
        }
        let s = output_shape(input, self.kernel_shape(), Shape3::new(1, 1, 1))?;
        Ok(Shape3::new(s.rows, s.cols, self.kernels))
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.kernels * self.kernel_shape().len()
            || self.biases.len() != self.kernels
        {
            return Err(Error::shape(
                "conv2d parameter lengths do not match its shape",
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor3) -> Result<Tensor3> {
        self.check()?;
        let ishape = input.shape();
        let oshape = self.output_shape(ishape)?;
        let ks = self.kernel_shape();
        let x = input.data();
        let mut out = Tensor3::zeros(oshape);
        for r in 0..oshape.rows {
            for c in 0..oshape.cols {
                for k in 0..self.kernels {
                    let w = &self.weights[k * ks.len()..(k + 1) * ks.len()];
                    let mut acc = self.biases[k];
                    for i in 0..ks.rows {
                        let xo = ishape.index(r + i, c, 0);
                        let wo = ks.index(i, 0, 0);
                        let run = ks.cols * ks.depth;
                        acc += dot(&w[wo..wo + run], &x[xo..xo + run]);
                    }
                    *out.at_mut(r, c, k) = acc;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(
        &self,
        input: &Tensor3,
        upstream: &Tensor3,
        need_input: bool,
    ) -> Result<ConvGrads> {
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.kernels];
        let mut gx = need_input.then(|| Tensor3::zeros(input.shape()));
        self.backward_into(input, upstream, &mut gw, &mut gb, gx.as_mut())?;
        Ok(ConvGrads {
            weights: gw,
            biases: gb,
            input: gx,
        })
    }

    /// As [`Conv2d::backward`], adding into existing gradient buffers.
    pub fn backward_into(
        &self,
        input: &Tensor3,
        upstream: &Tensor3,
        gw: &mut [f64],
        gb: &mut [f64],
        mut gx: Option<&mut Tensor3>,
    ) -> Result<()> {
        self.check()?;
        let ishape = input.shape();
        let oshape = self.output_shape(ishape)?;
        if upstream.shape() != oshape {
            return Err(Error::shape(format!(
                "conv2d upstream must be {oshape}, got {}",
                upstream.shape()
            )));
        }
        if gw.len() != self.weights.len()
            || gb.len() != self.kernels
            || gx.as_ref().is_some_and(|g| g.shape() != ishape)
        {
            return Err(Error::shape(
                "conv2d gradient buffers do not match the layer",
            ));
        }
        let ks = self.kernel_shape();
        let run = ks.cols * ks.depth;
        let x = input.data();
        for r in 0..oshape.rows {
            for c in 0..oshape.cols {
                for k in 0..self.kernels {
                    let g = upstream.at(r, c, k);
                    if g == 0.0 {
                        continue;
                    }
                    gb[k] += g;
                    let base = k * ks.len();
                    for i in 0..ks.rows {
                        let xo = ishape.index(r + i, c, 0);
                        let wo = base + ks.index(i, 0, 0);
                        axpy(g, &x[xo..xo + run], &mut gw[wo..wo + run]);
                        if let Some(gx) = gx.as_deref_mut() {
                            axpy(
                                g,
                                &self.weights[wo..wo + run],
                                &mut gx.data_mut()[xo..xo + run],
                            );
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn conv3d_forward(input: &Tensor3, spec: &Conv3d) -> Result<Vec<Tensor3>> {
    spec.forward(input)
}

pub fn conv3d_backward(input: &Tensor3, spec: &Conv3d, upstream: &[Tensor3]) -> Result<ConvGrads> {
    spec.backward(input, upstream, true)
}

pub fn conv2d_forward(input: &Tensor3, spec: &Conv2d) -> Result<Tensor3> {
    spec.forward(input)
}

pub fn conv2d_backward(input: &Tensor3, spec: &Conv2d, upstream: &Tensor3) -> Result<ConvGrads> {
    spec.backward(input, upstream, true)
}
