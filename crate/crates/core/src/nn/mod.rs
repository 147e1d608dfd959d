//! Structured operations on feature maps and token matrices.
//!
//! Feature maps are `[C, H, W]`; token matrices are `[n, d]` with channels
//! last. Token order is row-major everywhere.

mod conv;
mod norm;
mod select;
mod shuffle;
mod window;

pub use conv::{conv2d_forward, depthwise_conv2d_forward};
pub use select::topk_select;
pub use window::{reflect_index, WindowLayout};

pub(crate) fn chw(op: &'static str, s: &[usize]) -> crate::Result<(usize, usize, usize)> {
    match s {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(crate::Error::dim(op, format!("expected [C, H, W], got {:?}", s))),
    }
}
