//! Depth-guided local filtering for monocular 3D detection.
//!
//! The crate is split the way a detector pipeline consumes it:
//!
//! 1. [`tensor`]: dense NCHW `f64` arrays, zero-padded spatial shifts, the `DTEN` file format.
//! 2. [`dgfilter`]: the depth-guided dynamic-depthwise-dilated local convolution
//!    operator, its adaptive dilation weights, analytic backward pass and a
//!    finite-difference checker.
//! 3. [`geometry`]: projection, 3D corners, pose conversion, 2D/BEV IoU, NMS and
//!    hill-climbing pose refinement.
//! 4. [`anchors`] and [`codec`]: 2D-3D anchor templates, fitted 3D priors and the
//!    residual transform between network outputs and boxes.
//! 5. [`losses`]: focal-weighted classification and SmoothL1 regression terms.
//! 6. [`kitti`] and [`eval`]: label/calibration/depth file I/O and interpolated AP.

pub mod anchors;
pub mod codec;
pub mod dgfilter;
pub mod eval;
pub mod geometry;
pub mod kitti;
pub mod losses;
pub mod tensor;

pub use tensor::{ShiftVector, Tensor};
