//! Dense tensors and the attention operations the injection stage builds on.

mod attention;
mod io;
mod tensor;

pub use attention::{
    attention, decoupled_cross_attention, image_attention, softmax_rows, text_attention,
    AttentionWeights, STUB_WEIGHT_RANGE,
};
pub use io::TENSOR_MAGIC;
pub use tensor::{Result, Tensor, TensorError};
