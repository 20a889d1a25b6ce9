//! Segmentation and image-quality metrics.

mod frechet;
mod iou;
mod plane;
mod pyramid;
mod report;
mod ssim;
mod swd;

pub use frechet::{frechet_distance, frechet_of_images, gaussian_fit, FeatureExtractor, HistogramFeatures};
pub use iou::{miou, Confusion, EVAL_CLASSES};
pub use plane::Plane;
pub use pyramid::{expand, laplacian_pyramid, reduce, LaplacianPyramid};
pub use report::MetricReport;
pub use ssim::{ssim, SSIM_C1, SSIM_C2, SSIM_WINDOW};
pub use swd::{extract_patches, sliced_w1, swd, swd_projections, swd_pyramid, PatchSet, SwdConfig};
