//! Tile-based differentiable splatting of semantic Gaussians.
//!
//! The forward pass projects every Gaussian, bins the screen-space
//! footprints into 16x16 tiles and alpha-blends them front to back into
//! color, depth, accumulated alpha and a semantic feature map. The backward
//! pass replays the per-pixel blend and returns exact gradients for every
//! Gaussian parameter.

mod backward;
mod camera;
mod forward;
pub mod gradcheck;
mod project;

pub use backward::{render_backward, GaussianGradient, UpstreamGradients};
pub use camera::Camera;
pub use forward::{render, render_forward, ForwardState, RenderOptions, RenderOutput};
pub use project::{project_gaussians, Projected2DGaussian};

/// Gaussians with view-space depth at or below this are culled.
pub const NEAR_PLANE: f64 = 0.2;
/// Added to the diagonal of every screen-space covariance (pixels^2).
pub const LOW_PASS_FLOOR: f64 = 0.3;
pub const TILE_SIZE: usize = 16;
/// Per-pixel blending stops once transmittance falls below this value.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
