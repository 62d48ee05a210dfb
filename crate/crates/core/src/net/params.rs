use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::Architecture;
use crate::nn::{
    cross_entropy, relu_backward, relu_forward, softmax, xavier_uniform, Conv2d, Conv3d, Dense,
    Pooled, Tensor3,
};
use crate::{Error, Result};

/// RNG stream used for full initialization.
const INIT_STREAM: u64 = 0;
/// RNG stream used when only the classifier is re-initialized.
const CLASSIFIER_STREAM: u64 = 1;

/// Trainable tensors of the network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub c1: Conv3d,
    pub c2: Conv2d,
    pub fc1: Dense,
    pub fc2: Dense,
    pub classifier: Dense,
}

/// Tensor names in storage order, matching [`Params::tensors`].
pub const TENSOR_NAMES: [&str; 10] = [
    "c1.weights",
    "c1.biases",
    "c2.weights",
    "c2.biases",
    "fc1.weights",
    "fc1.biases",
    "fc2.weights",
    "fc2.biases",
    "classifier.weights",
    "classifier.biases",
];

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    pub c1_pre: Vec<Tensor3>,
    pub p1: Vec<Pooled>,
    pub p1_out: Tensor3,
    pub c2_pre: Tensor3,
    pub p2: Pooled,
    pub fc1_pre: Vec<f64>,
    pub fc2_pre: Vec<f64>,
    /// Post-ReLU FC2 output, the classifier input.
    pub features: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Params {
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        let chain = arch.shape_chain()?;
        Ok(Params {
            c1: Conv3d::zeros(arch.c1_kernels, arch.c1_kernel, arch.c1_stride)?,
            c2: Conv2d::zeros(
                arch.c2_kernels,
                arch.c2_kernel.0,
                arch.c2_kernel.1,
                chain.p1.depth,
            )?,
            fc1: Dense::zeros(chain.flat(), arch.fc1)?,
            fc2: Dense::zeros(arch.fc1, arch.fc2)?,
            classifier: Dense::zeros(arch.fc2, arch.classes)?,
        })
    }

    /// Xavier-uniform weights, zero biases. Convolution fans count the
    /// receptive field: `fan_in = kernel volume x input channels`,
    /// `fan_out = kernel volume x output channels`.
    pub fn xavier(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut p = Params::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let k1 = arch.c1_kernel.len();
        p.c1.weights = xavier_uniform(p.c1.weights.len(), k1, k1 * arch.c1_kernels, &mut rng);
        let k2 = arch.c2_kernel.0 * arch.c2_kernel.1;
        p.c2.weights = xavier_uniform(
            p.c2.weights.len(),
            k2 * p.c2.channels,
            k2 * arch.c2_kernels,
            &mut rng,
        );
        for d in [&mut p.fc1, &mut p.fc2, &mut p.classifier] {
            d.weights = xavier_uniform(d.weights.len(), d.in_size, d.out_size, &mut rng);
        }
        Ok(p)
    }

    /// Replaces the classifier with a fresh Xavier layer of `classes` outputs.
    pub fn reinit_classifier(&mut self, classes: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(CLASSIFIER_STREAM);
        let mut d = Dense::zeros(self.fc2.out_size, classes)?;
        d.weights = xavier_uniform(d.weights.len(), d.in_size, d.out_size, &mut rng);
        self.classifier = d;
        Ok(())
    }

    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            &self.c1.weights,
            &self.c1.biases,
            &self.c2.weights,
            &self.c2.biases,
            &self.fc1.weights,
            &self.fc1.biases,
            &self.fc2.weights,
            &self.fc2.biases,
            &self.classifier.weights,
            &self.classifier.biases,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.c1.weights,
            &mut self.c1.biases,
            &mut self.c2.weights,
            &mut self.c2.biases,
            &mut self.fc1.weights,
            &mut self.fc1.biases,
            &mut self.fc2.weights,
            &mut self.fc2.biases,
            &mut self.classifier.weights,
            &mut self.classifier.biases,
        ]
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Rounds every value to the nearest `f32`, the precision of the model
    /// file.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Checks that the tensors have the sizes `arch` requires.
    pub fn check(&self, arch: &Architecture) -> Result<()> {
        let want = Params::zeros(arch)?;
        let same = want.c1.kernels == self.c1.kernels
            && want.c1.kernel_shape == self.c1.kernel_shape
            && want.c1.stride == self.c1.stride
            && want.c2.kernels == self.c2.kernels
            && want.c2.kernel_rows == self.c2.kernel_rows
            && want.c2.kernel_cols == self.c2.kernel_cols
            && want.c2.channels == self.c2.channels
            && want
                .tensors()
                .iter()
                .zip(self.tensors())
                .all(|(a, b)| a.len() == b.len());
        if !same {
            return Err(Error::shape("parameters do not match the architecture"));
        }
        Ok(())
    }

    /// C1 pre-activations by direct summation, as one map per kernel.
    pub fn c1_direct(&self, input: &Tensor3) -> Result<Vec<Tensor3>> {
        self.c1.forward(input)
    }

    /// Everything after C1, given its per-kernel pre-activation maps.
    pub fn forward_from_c1(&self, arch: &Architecture, c1_pre: Vec<Tensor3>) -> Result<Trace> {
        let p1_pool = arch.p1_pool();
        let p1: Vec<Pooled> = c1_pre
            .iter()
            .map(|m| p1_pool.forward(&Tensor3::from_vec(m.shape(), relu_forward(m.data()))?))
            .collect::<Result<_>>()?;
        let p1_out =
            Tensor3::concat_depth(&p1.iter().map(|p| p.output.clone()).collect::<Vec<_>>())?;
        let c2_pre = self.c2.forward(&p1_out)?;
        let p2 = arch.p2_pool().forward(&Tensor3::from_vec(
            c2_pre.shape(),
            relu_forward(c2_pre.data()),
        )?)?;
        let fc1_pre = self.fc1.forward(p2.output.data())?;
        let fc2_pre = self.fc2.forward(&relu_forward(&fc1_pre))?;
        let features = relu_forward(&fc2_pre);
        let probs = softmax(&self.classifier.forward(&features)?);
        Ok(Trace {
            c1_pre,
            p1,
            p1_out,
            c2_pre,
            p2,
            fc1_pre,
            fc2_pre,
            features,
            probs,
        })
    }

    /// Reference forward pass with direct convolution.
    pub fn forward(&self, arch: &Architecture, input: &Tensor3) -> Result<Trace> {
        if input.shape() != arch.input {
            return Err(Error::shape(format!(
                "network expects a {} input, got {}",
                arch.input,
                input.shape()
            )));
        }
        self.forward_from_c1(arch, self.c1_direct(input)?)
    }

    /// Cross-entropy loss of one sample and the gradient of every tensor.
    pub fn backward(&self, input: &Tensor3, trace: &Trace, label: usize) -> Result<(f64, Params)> {
        let mut grads = self.zeros_like();
        let loss = self.backward_into(input, trace, label, &mut grads)?;
        Ok((loss, grads))
    }

    /// As [`Params::backward`], adding the gradients into `grads`.
    pub fn backward_into(
        &self,
        input: &Tensor3,
        trace: &Trace,
        label: usize,
        grads: &mut Params,
    ) -> Result<f64> {
        let (loss, d_logits) = cross_entropy(&trace.probs, label)?;
        let g = grads;
        let d_features = self.classifier.backward_into(
            &trace.features,
            &d_logits,
            &mut g.classifier.weights,
            &mut g.classifier.biases,
        )?;
        let d_fc2 = relu_backward(&trace.fc2_pre, &d_features)?;
        let h1 = relu_forward(&trace.fc1_pre);
        let d_h1 = self
            .fc2
            .backward_into(&h1, &d_fc2, &mut g.fc2.weights, &mut g.fc2.biases)?;
        let d_fc1 = relu_backward(&trace.fc1_pre, &d_h1)?;
        let d_h0 = self.fc1.backward_into(
            trace.p2.output.data(),
            &d_fc1,
            &mut g.fc1.weights,
            &mut g.fc1.biases,
        )?;
        let d_p2 = Tensor3::from_vec(trace.p2.output.shape(), d_h0)?;
        let d_c2_post = crate::nn::maxpool2d_backward(&trace.p2, &d_p2)?;
        let d_c2 = Tensor3::from_vec(
            d_c2_post.shape(),
            relu_backward(trace.c2_pre.data(), d_c2_post.data())?,
        )?;
        let mut d_p1 = Tensor3::zeros(trace.p1_out.shape());
        self.c2.backward_into(
            &trace.p1_out,
            &d_c2,
            &mut g.c2.weights,
            &mut g.c2.biases,
            Some(&mut d_p1),
        )?;
        let d_p1 = d_p1.split_depth(trace.p1.len())?;
        let upstream: Vec<Tensor3> = trace
            .p1
            .iter()
            .zip(&d_p1)
            .zip(&trace.c1_pre)
            .map(|((pooled, d), pre)| {
                let d_post = crate::nn::maxpool3d_backward(pooled, d)?;
                Tensor3::from_vec(pre.shape(), relu_backward(pre.data(), d_post.data())?)
            })
            .collect::<Result<_>>()?;
        self.c1
            .backward_into(input, &upstream, &mut g.c1.weights, &mut g.c1.biases, None)?;
        Ok(loss)
    }

    /// Same shapes, all values zero.
    pub fn zeros_like(&self) -> Params {
        let mut p = self.clone();
        p.fill(0.0);
        p
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// Mean cross-entropy of one sample, for gradient checks.
    pub fn loss(&self, arch: &Architecture, input: &Tensor3, label: usize) -> Result<f64> {
        let t = self.forward(arch, input)?;
        Ok(cross_entropy(&t.probs, label)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(arch: &Architecture, seed: u64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor3::from_vec(
            arch.input,
            (0..arch.input.len())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let arch = Architecture::tiny(4);
        let p = Params::zeros(&arch).unwrap();
        let t = p.forward(&arch, &Tensor3::zeros(arch.input)).unwrap();
        assert_eq!(t.probs, vec![0.25; 4]);
    }

    #[test]
    fn xavier_is_seeded_with_zero_biases() {
        let arch = Architecture::tiny(3);
        let a = Params::xavier(&arch, 5).unwrap();
        assert_eq!(a, Params::xavier(&arch, 5).unwrap());
        assert_ne!(a, Params::xavier(&arch, 6).unwrap());
        for (i, t) in a.tensors().iter().enumerate() {
            if i % 2 == 1 {
                assert!(t.iter().all(|&b| b == 0.0));
            }
        }
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let arch = Architecture::tiny(3);
        let mut p = Params::xavier(&arch, 11).unwrap();
        // Nonzero biases keep ReLUs away from exact ties at zero.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (i, t) in p.tensors_mut().into_iter().enumerate() {
            if i % 2 == 1 {
                t.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
            }
        }
        let x = random_input(&arch, 2);
        let trace = p.forward(&arch, &x).unwrap();
        let (_, g) = p.backward(&x, &trace, 1).unwrap();
        let h = 1e-4;
        for t in 0..10 {
            for i in (0..p.tensors()[t].len()).step_by(7) {
                let mut plus = p.clone();
                plus.tensors_mut()[t][i] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[t][i] -= h;
                let fd = (plus.loss(&arch, &x, 1).unwrap() - minus.loss(&arch, &x, 1).unwrap())
                    / (2.0 * h);
                let an = g.tensors()[t][i];
                assert!(
                    (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3),
                    "{} [{i}]: {fd} vs {an}",
                    TENSOR_NAMES[t]
                );
            }
        }
    }
}
