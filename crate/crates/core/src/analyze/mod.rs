//! Analysis tools: filter grids with PCA, class activation maps, decision
//! boundary maps, PPM rendering and the rank test used to compare models.

mod boundary;
mod cam;
mod kernels;
mod ppm;
mod stats;

pub use boundary::{boundary_map, BoundaryMap, DEFAULT_RESOLUTION, DEFAULT_SPAN_FACTOR};
pub use cam::{gradcam, CamMap, CamVariant};
pub use kernels::{conv_filters, kernel_grid, pca, Pca, PCA_MAX_ITERATIONS, PCA_TOLERANCE};
pub use ppm::{parse_ppm, render_ppm, to_rgb, Rgb, PALETTE};
pub use stats::{average_ranks, mann_whitney_u, MannWhitney};
