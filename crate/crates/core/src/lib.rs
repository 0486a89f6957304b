//! Patch-based learned point cloud geometry compression.

mod bytes;
pub mod codec;
pub mod entropy;
pub mod geometry;
pub mod metrics;
pub mod network;
pub mod patching;
pub mod training;
pub mod upsampler;
