use crate::nn::{output_shape, Shape3};
use crate::{Error, Result, GRID_SIZE, VOLUME_DEPTH};

/// Layer dimensions of the network. Only [`Architecture::standard`] is the
/// published configuration; smaller instances exist for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input: Shape3,
    pub c1_kernels: usize,
    pub c1_kernel: Shape3,
    pub c1_stride: Shape3,
    /// Pooling window on each C1 map; the stride equals the window.
    pub p1_window: Shape3,
    pub c2_kernels: usize,
    pub c2_kernel: (usize, usize),
    /// Spatial pooling window after C2; the stride equals the window.
    pub p2_window: (usize, usize),
    pub fc1: usize,
    pub fc2: usize,
    pub classes: usize,
}

/// Activation shapes through the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeChain {
    pub input: Shape3,
    /// One C1 output map.
    pub c1_map: Shape3,
    /// All C1 maps concatenated along depth.
    pub c1: Shape3,
    /// After P1, concatenated.
    pub p1: Shape3,
    pub c2: Shape3,
    pub p2: Shape3,
    pub fc1: usize,
    pub fc2: usize,
    pub classes: usize,
}

impl Architecture {
    pub fn standard(classes: usize) -> Self {
        Architecture {
            input: Shape3::new(GRID_SIZE, GRID_SIZE, VOLUME_DEPTH),
            c1_kernels: 30,
            c1_kernel: Shape3::new(17, 17, 20),
            c1_stride: Shape3::new(2, 2, 4),
            p1_window: Shape3::new(2, 2, 13),
            c2_kernels: 100,
            c2_kernel: (3, 3),
            p2_window: (2, 2),
            fc1: 400,
            fc2: 50,
            classes,
        }
    }

    /// Scaled-down clone: 8x8x12 input, two 3x3x4 C1 kernels with stride
    /// (1, 1, 2).
    pub fn tiny(classes: usize) -> Self {
        Architecture {
            input: Shape3::new(8, 8, 12),
            c1_kernels: 2,
            c1_kernel: Shape3::new(3, 3, 4),
            c1_stride: Shape3::new(1, 1, 2),
            p1_window: Shape3::new(2, 2, 5),
            c2_kernels: 3,
            c2_kernel: (2, 2),
            p2_window: (2, 2),
            fc1: 6,
            fc2: 4,
            classes,
        }
    }

    pub fn with_classes(self, classes: usize) -> Self {
        Architecture { classes, ..self }
    }

    pub fn p1_pool(&self) -> crate::nn::MaxPool3d {
        crate::nn::MaxPool3d::new(self.p1_window, self.p1_window)
    }

    pub fn p2_pool(&self) -> crate::nn::MaxPool2d {
        crate::nn::MaxPool2d::new(self.p2_window, self.p2_window)
    }

    /// Validates every layer and returns the activation shapes.
    pub fn shape_chain(&self) -> Result<ShapeChain> {
        if self.classes == 0
            || self.c1_kernels == 0
            || self.c2_kernels == 0
            || self.fc1 == 0
            || self.fc2 == 0
        {
            return Err(Error::shape("layer sizes must be positive"));
        }
        if !self.c1_kernel.depth.is_multiple_of(2) || !self.c1_stride.depth.is_multiple_of(2) {
            return Err(Error::shape(format!(
                "C1 depth extent {} and stride {} must be even to keep u/v slices aligned",
                self.c1_kernel.depth, self.c1_stride.depth
            )));
        }
        let c1_map = output_shape(self.input, self.c1_kernel, self.c1_stride)?;
        let c1 = Shape3::new(c1_map.rows, c1_map.cols, c1_map.depth * self.c1_kernels);
        let p1_map = self.p1_pool().output_shape(c1_map)?;
        let p1 = Shape3::new(p1_map.rows, p1_map.cols, p1_map.depth * self.c1_kernels);
        let c2 = crate::nn::Conv2d::zeros(
            self.c2_kernels,
            self.c2_kernel.0,
            self.c2_kernel.1,
            p1.depth,
        )?
        .output_shape(p1)?;
        let p2 = self.p2_pool().output_shape(c2)?;
        Ok(ShapeChain {
            input: self.input,
            c1_map,
            c1,
            p1,
            c2,
            p2,
            fc1: self.fc1,
            fc2: self.fc2,
            classes: self.classes,
        })
    }
}

impl ShapeChain {
    /// Length of the flattened P2 output feeding FC1.
    pub fn flat(&self) -> usize {
        self.p2.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_chain() {
        let s = Architecture::standard(7).shape_chain().unwrap();
        assert_eq!(s.c1_map, Shape3::new(8, 8, 26));
        assert_eq!(s.c1, Shape3::new(8, 8, 780));
        assert_eq!(s.p1, Shape3::new(4, 4, 60));
        assert_eq!(s.c2, Shape3::new(2, 2, 100));
        assert_eq!(s.p2, Shape3::new(1, 1, 100));
        assert_eq!(s.flat(), 100);
    }

    #[test]
    fn tiny_chain() {
        let s = Architecture::tiny(3).shape_chain().unwrap();
        assert_eq!(s.c1_map, Shape3::new(6, 6, 5));
        assert_eq!(s.p1, Shape3::new(3, 3, 2));
        assert_eq!(s.c2, Shape3::new(2, 2, 3));
        assert_eq!(s.p2, Shape3::new(1, 1, 3));
    }

    #[test]
    fn odd_temporal_stride_rejected() {
        let mut a = Architecture::standard(2);
        a.c1_stride = Shape3::new(2, 2, 3);
        assert!(a.shape_chain().is_err());
    }
}
