//! Evaluation metrics, dataset splits, class-kernel affinity and kernel
//! flow-field rendering.

mod affinity;
mod evaluate;
mod metrics;
mod render;
mod split;

pub use affinity::{kernel_affinity, top_kernels, AffinityMatrix, DEFAULT_VOTE_DEPTH};
pub use evaluate::{evaluate, infer_groups, predict_sequences, sequences, Evaluation};
pub use metrics::{f1_score, ClassMetrics, ConfusionMatrix, MetricsReport};
pub use render::{
    kernel_field, render_kernel_flowfields, write_kernel_images, Arrow, KernelImage, RenderOptions,
    KERNEL_SIDE,
};
pub use split::{split, SplitMode, SplitSpec};
