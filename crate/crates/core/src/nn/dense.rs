use crate::{Error, Result};

/// Fully connected layer `y = W x + b` with `W` stored row-major
/// (`out_size` rows of `in_size`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_size: usize,
    pub out_size: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub input: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_size: usize, out_size: usize) -> Result<Self> {
        if in_size == 0 || out_size == 0 {
            return Err(Error::shape("dense sizes must be positive"));
        }
        Ok(Dense {
            in_size,
            out_size,
            weights: vec![0.0; in_size * out_size],
            biases: vec![0.0; out_size],
        })
    }

    fn check(&self, input: &[f64]) -> Result<()> {
        if self.weights.len() != self.in_size * self.out_size || self.biases.len() != self.out_size
        {
            return Err(Error::shape(
                "dense parameter lengths do not match its shape",
            ));
        }
        if input.len() != self.in_size {
            return Err(Error::shape(format!(
                "dense expects {} inputs, got {}",
                self.in_size,
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check(input)?;
        Ok(self
            .weights
            .chunks_exact(self.in_size)
            .zip(&self.biases)
            .map(|(row, b)| b + super::conv::dot(row, input))
            .collect())
    }

    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<DenseGrads> {
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.out_size];
        let gx = self.backward_into(input, upstream, &mut gw, &mut gb)?;
        Ok(DenseGrads {
            weights: gw,
            biases: gb,
            input: gx,
        })
    }

    /// Adds the parameter gradients into `gw` and `gb`; returns the input
    /// gradient.
    pub fn backward_into(
        &self,
        input: &[f64],
        upstream: &[f64],
        gw: &mut [f64],
        gb: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check(input)?;
        if upstream.len() != self.out_size {
            return Err(Error::shape(format!(
                "dense upstream must have {} values",
                self.out_size
            )));
        }
        if gw.len() != self.weights.len() || gb.len() != self.out_size {
            return Err(Error::shape(
                "dense gradient buffers do not match the layer",
            ));
        }
        let mut gx = vec![0.0; self.in_size];
        for (o, &g) in upstream.iter().enumerate() {
            gb[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = o * self.in_size..(o + 1) * self.in_size;
            super::conv::axpy(g, input, &mut gw[row.clone()]);
            super::conv::axpy(g, &self.weights[row], &mut gx);
        }
        Ok(gx)
    }
}

pub fn dense_forward(input: &[f64], spec: &Dense) -> Result<Vec<f64>> {
    spec.forward(input)
}

pub fn dense_backward(input: &[f64], spec: &Dense, upstream: &[f64]) -> Result<DenseGrads> {
    spec.backward(input, upstream)
}
