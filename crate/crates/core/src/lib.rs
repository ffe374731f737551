//! Next-frame prediction from monocular video using scene geometry.
//!
//! A recurrent convolutional network predicts per-pixel depth from a frame
//! sequence; the predicted depth, the current frame and the camera's
//! ego-motion are then combined by a forward warp to synthesize the next
//! frame.
//!
//! Modules, bottom up:
//!
//! - [`geometry`]: camera model, poses, rigid transforms, ego-motion and the
//!   unproject / project primitives.
//! - [`depth_data`]: depth labels, synthetic scenes and the on-disk dataset
//!   layout.
//! - [`model`]: the depth network, its losses and the training loop.
//! - [`synthesis`]: forward warping with z-buffering and splatting.
//! - [`metrics`]: PSNR, masked SSIM and the evaluation harness.

pub mod depth_data;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod synthesis;

pub use geometry::{CameraIntrinsics, DepthMap, EgoMotion, PointCloud, Pose, RigidTransform};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Nn(#[from] geoframe_nn::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

/// Version tag written into every JSON file this crate produces.
pub const FORMAT_VERSION: u32 = 1;
