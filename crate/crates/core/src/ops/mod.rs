//! Differentiable operators. Every forward function has a hand-derived
//! backward counterpart; [`gradcheck`] verifies them by central differences.

mod basic;
mod conv;
pub mod gradcheck;

pub use basic::{
    add, concat_channels, crop_backward, crop_border, decimate, decimate_backward, pad_replicate,
    pad_replicate_backward, relu, relu_backward, split_channels_backward, Border,
};
pub use conv::{
    conv2d, conv2d_backward, transposed_conv2d, transposed_conv2d_backward, ConvGrads, ConvParams,
};
