//! Unsupervised port berth localization from AIS records.

pub mod augment;
pub mod baseline;
pub mod divergence;
pub mod error;
pub mod geohash;
pub mod geometry;
pub mod ingest;
pub mod mixture;
pub mod pipeline;
pub mod preprocess;
pub mod scalar;
pub mod seed;
pub mod stopdetect;
pub mod synth;
pub mod tuner;
pub mod types;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Real;

/// Mixture model over `f64`.
pub type GmmModel = mixture::Gmm<f64>;
/// Geographic-to-model transform over `f64`.
pub type StandardizationTransform = preprocess::Standardizer<f64>;
/// Monte-Carlo integration region over `f64`.
pub type PortRegion = divergence::PortArea<f64>;
/// Planar rotated rectangle over `f64`.
pub type PlanarRectangle = geometry::PlanarRect<f64>;

pub use ingest::Dataset;
pub use pipeline::{cmd_ablate, cmd_evaluate, cmd_localize, AblationAxis, EvaluationReport, TunedParams};
pub use stopdetect::DbscanParams;
pub use types::{AisRecord, GeoPoint, PortConfig, RoiPolygon};
