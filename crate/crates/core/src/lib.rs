//! Streaming 3D Gaussian splatting with image-space redundancy compression.
//!
//! The engine keeps a global, identity-indexed store of Gaussians. For every
//! incoming frame the store is rendered into a Gaussian-image representation
//! (one dominant Gaussian per pixel plus an id map), history Gaussians that are
//! covered by current-frame Gaussians are detected through oriented-box overlap
//! and removed through the id map, and the frame's candidates are inserted.
//!
//! Module map:
//! - [`scene`]: Gaussians, the global store, cameras
//! - [`raster`]: projection and tile-parallel compositing
//! - [`gir`]: Gaussian-image construction, id resolution, binary format
//! - [`redundancy`]: oriented boxes, exact overlap volume, windowed overlap scores
//! - [`pipeline`]: mask predictors and the per-frame update loop
//! - [`metrics`]: losses, PSNR/SSIM, compression ratio
//! - [`io`], [`synth`], [`cli`]: files, synthetic scenes and the command line

pub mod cli;
pub mod gir;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod redundancy;
pub mod scene;
pub mod synth;

pub use gir::{GaussianImage, SelectionStrategy};
pub use pipeline::{StreamConfig, StreamState};
pub use raster::{RenderedImage, Splat2D};
pub use redundancy::{OrientedBoundingBox, RedundancyConfig, RedundancyReport};
pub use scene::{CameraModel, Gaussian, GaussianId, GaussianParams, GlobalGaussianStore, Intrinsics};
