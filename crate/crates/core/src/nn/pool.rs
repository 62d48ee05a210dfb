use super::tensor::{output_shape, Shape3, Tensor3};
use crate::{Error, Result};

/// 3D max pooling. In strict mode the windows must tile the input exactly
/// under the stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool3d {
    pub window: Shape3,
    pub stride: Shape3,
    pub strict: bool,
}

/// Pooled output plus, for every output element, the flat input index of
/// the winning element.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub output: Tensor3,
    pub argmax: Vec<usize>,
    pub input_shape: Shape3,
}

impl MaxPool3d {
    pub fn new(window: Shape3, stride: Shape3) -> Self {
        MaxPool3d {
            window,
            stride,
            strict: true,
        }
    }

    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        let out = output_shape(input, self.window, self.stride)?;
        if self.strict {
            let tiles = |i: usize, w: usize, s: usize, o: usize| (o - 1) * s + w == i;
            if !(tiles(input.rows, self.window.rows, self.stride.rows, out.rows)
                && tiles(input.cols, self.window.cols, self.stride.cols, out.cols)
                && tiles(input.depth, self.window.depth, self.stride.depth, out.depth))
            {
                return Err(Error::shape(format!(
                    "pool window {} stride {} does not tile input {input}",
                    self.window, self.stride
                )));
            }
        }
        Ok(out)
    }

    /// Ties resolve to the first element in `(row, col, depth)` scan order.
    pub fn forward(&self, input: &Tensor3) -> Result<Pooled> {
        let ishape = input.shape();
        let oshape = self.output_shape(ishape)?;
        let x = input.data();
        let mut out = Tensor3::zeros(oshape);
        let mut argmax = vec![0; oshape.len()];
        for r in 0..oshape.rows {
            for c in 0..oshape.cols {
                for d in 0..oshape.depth {
                    let (r0, c0, d0) = (
                        r * self.stride.rows,
                        c * self.stride.cols,
                        d * self.stride.depth,
                    );
                    let mut best = ishape.index(r0, c0, d0);
                    for i in 0..self.window.rows {
                        for j in 0..self.window.cols {
                            let base = ishape.index(r0 + i, c0 + j, d0);
                            for l in 0..self.window.depth {
                                if x[base + l] > x[best] {
                                    best = base + l;
                                }
                            }
                        }
                    }
                    let o = oshape.index(r, c, d);
                    out.data_mut()[o] = x[best];
                    argmax[o] = best;
                }
            }
        }
        Ok(Pooled {
            output: out,
            argmax,
            input_shape: ishape,
        })
    }
}

/// Routes each upstream gradient to its recorded argmax position.
pub fn maxpool3d_backward(pooled: &Pooled, upstream: &Tensor3) -> Result<Tensor3> {
    if upstream.shape() != pooled.output.shape() {
        return Err(Error::shape(format!(
            "pool upstream {} does not match output {}",
            upstream.shape(),
            pooled.output.shape()
        )));
    }
    let mut grad = Tensor3::zeros(pooled.input_shape);
    for (&src, &g) in pooled.argmax.iter().zip(upstream.data()) {
        grad.data_mut()[src] += g;
    }
    Ok(grad)
}

pub fn maxpool3d_forward(input: &Tensor3, spec: &MaxPool3d) -> Result<Pooled> {
    spec.forward(input)
}

/// Spatial max pooling applied to each channel (depth slice) separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub window: (usize, usize),
    pub stride: (usize, usize),
}

impl MaxPool2d {
    pub fn new(window: (usize, usize), stride: (usize, usize)) -> Self {
        MaxPool2d { window, stride }
    }

    fn as_3d(&self) -> MaxPool3d {
        MaxPool3d::new(
            Shape3::new(self.window.0, self.window.1, 1),
            Shape3::new(self.stride.0, self.stride.1, 1),
        )
    }

    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        self.as_3d().output_shape(input)
    }

    pub fn forward(&self, input: &Tensor3) -> Result<Pooled> {
        self.as_3d().forward(input)
    }
}

pub fn maxpool2d_forward(input: &Tensor3, spec: &MaxPool2d) -> Result<Pooled> {
    spec.forward(input)
}

pub fn maxpool2d_backward(pooled: &Pooled, upstream: &Tensor3) -> Result<Tensor3> {
    maxpool3d_backward(pooled, upstream)
}
