//! Layer primitives with hand-written gradients.

pub mod activation;
pub mod conv;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activation::{relu_backward, relu_forward};
pub use conv::{
    conv1d_backward, conv1d_forward, conv2d_backward, conv2d_forward, Conv1dParams, Conv2dParams, ConvGrads,
    Padding,
};
pub use loss::{softmax, softmax_xent};
pub use norm::{batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormConfig, BatchNormState, Mode};
pub use pool::{gap_backward, gap_forward, maxpool1d_forward, maxpool2d_forward, maxpool_backward};
