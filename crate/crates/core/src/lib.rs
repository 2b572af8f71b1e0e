//! Ground-truth density maps from line-segment annotations.
//!
//! Elongated objects are labelled with one segment each. This crate turns
//! those labels into density maps (dot, sampled-line and anisotropic
//! Gaussian schemes), counts objects by integrating maps, scores predicted
//! maps, and removes near-duplicate images from a dataset.

pub mod annotations;
pub mod dedup;
pub mod densitymap;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod io;
pub mod kernels;
pub mod numeric;

pub use annotations::{line_length, midpoint, sample_points, slope_angle, AnnotationSet, LineLabel, Point2};
pub use dedup::{builtin_feature_pyramid, deduplicate, feature_distance, DedupOutcome, FeatureStack, FeatureTensor};
pub use densitymap::{
    agk_density_map, count_from_density, density_map, density_map_with, dot_density_map, line_density_map,
    DensityMap, Scheme,
};
pub use error::{Error, Result};
pub use evaluation::{
    density_level, evaluate_dataset, mae, pixel_mse, rmse, DensityLevel, EvalRecord, EvalReport,
};
pub use exec::Execution;
pub use kernels::{agk_patch, agk_sigmas, isotropic_patch, line_sigma, KernelConfig, KernelPatch};
