//! Forward and backward kernels. The [`crate::Graph`] records which of these
//! ran; inference calls them directly so both paths share arithmetic.

pub mod conv;
pub mod warp;

pub use conv::ConvSpec;
