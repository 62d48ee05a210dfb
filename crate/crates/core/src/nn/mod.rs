//! Numeric core: layers, their exact backward passes, initialization and
//! SGD. Everything is double precision except the FFT transforms in
//! [`spectral`].

pub mod activation;
pub mod conv;
pub mod dense;
pub mod init;
pub mod pool;
pub mod sgd;
mod simd;
pub mod spectral;
pub mod tensor;

pub use activation::{cross_entropy, relu_backward, relu_forward, softmax};
pub use conv::{
    conv2d_backward, conv2d_forward, conv3d_backward, conv3d_forward, Conv2d, Conv3d, ConvGrads,
};
pub use dense::{dense_backward, dense_forward, Dense, DenseGrads};
pub use init::{xavier_bound, xavier_init, xavier_uniform};
pub use pool::{
    maxpool2d_backward, maxpool2d_forward, maxpool3d_backward, maxpool3d_forward, MaxPool2d,
    MaxPool3d, Pooled,
};
pub use sgd::sgd_step;
pub use spectral::{KernelSpectra, SpectralConv3d};
pub use tensor::{output_extent, output_shape, Shape3, Tensor3};
