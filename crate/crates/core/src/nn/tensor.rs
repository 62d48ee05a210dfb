use crate::{Error, Result};

/// Extents of a `(row, col, depth)` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape3 {
    pub rows: usize,
    pub cols: usize,
    pub depth: usize,
}

impl Shape3 {
    pub const fn new(rows: usize, cols: usize, depth: usize) -> Self {
        Shape3 { rows, cols, depth }
    }

    pub const fn len(&self) -> usize {
        self.rows * self.cols * self.depth
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat offset with depth fastest.
    #[inline]
    pub const fn index(&self, row: usize, col: usize, depth: usize) -> usize {
        (row * self.cols + col) * self.depth + depth
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.depth)
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.rows, self.cols, self.depth)
    }
}

/// Valid-region output extent along one axis, or `None` if the window does
/// not fit.
pub fn output_extent(input: usize, window: usize, stride: usize) -> Option<usize> {
    if window == 0 || stride == 0 || window > input {
        None
    } else {
        Some((input - window) / stride + 1)
    }
}

pub fn output_shape(input: Shape3, window: Shape3, stride: Shape3) -> Result<Shape3> {
    let axis = |i, w, s, name| {
        output_extent(i, w, s).ok_or_else(|| {
            Error::shape(format!(
                "{name}: window {w} stride {s} does not fit input {i}"
            ))
        })
    };
    Ok(Shape3::new(
        axis(input.rows, window.rows, stride.rows, "rows")?,
        axis(input.cols, window.cols, stride.cols, "cols")?,
        axis(input.depth, window.depth, stride.depth, "depth")?,
    ))
}

/// Dense `(row, col, depth)` tensor in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    shape: Shape3,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(shape: Shape3) -> Self {
        Tensor3 {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape3, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "{shape} tensor needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor3 { shape, data })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, depth: usize) -> f64 {
        self.data[self.shape.index(row, col, depth)]
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize, depth: usize) -> &mut f64 {
        let i = self.shape.index(row, col, depth);
        &mut self.data[i]
    }

    /// Stacks same-sized tensors along depth: the depth index of map `k`,
    /// slice `d` becomes `k * depth + d`.
    pub fn concat_depth(maps: &[Tensor3]) -> Result<Tensor3> {
        let first = maps
            .first()
            .ok_or_else(|| Error::shape("nothing to concatenate"))?
            .shape;
        if maps.iter().any(|m| m.shape != first) {
            return Err(Error::shape("concatenated maps differ in shape"));
        }
        let shape = Shape3::new(first.rows, first.cols, first.depth * maps.len());
        let mut data = Vec::with_capacity(shape.len());
        for r in 0..first.rows {
            for c in 0..first.cols {
                for m in maps {
                    let o = first.index(r, c, 0);
                    data.extend_from_slice(&m.data[o..o + first.depth]);
                }
            }
        }
        Ok(Tensor3 { shape, data })
    }

    /// Inverse of [`Tensor3::concat_depth`].
    pub fn split_depth(&self, parts: usize) -> Result<Vec<Tensor3>> {
        if parts == 0 || !self.shape.depth.is_multiple_of(parts) {
            return Err(Error::shape(format!(
                "depth {} not divisible into {parts}",
                self.shape.depth
            )));
        }
        let d = self.shape.depth / parts;
        let shape = Shape3::new(self.shape.rows, self.shape.cols, d);
        let mut maps = vec![Vec::with_capacity(shape.len()); parts];
        for chunk in self.data.chunks_exact(self.shape.depth) {
            for (k, m) in maps.iter_mut().enumerate() {
                m.extend_from_slice(&chunk[k * d..(k + 1) * d]);
            }
        }
        Ok(maps
            .into_iter()
            .map(|data| Tensor3 { shape, data })
            .collect())
    }
}
