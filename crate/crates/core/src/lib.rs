//! City-level exposure to automation and the labor structure behind it.
//!
//! Given employment per (city, occupation), skill importances per
//! occupation and an automation probability per occupation, the crate
//! computes expected job impact, job and skill entropies, the Theil
//! index, occupation-shift decompositions between cities, urban scaling
//! exponents, k-means job and skill clusters, regression models and
//! Monte-Carlo robustness checks.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! [`pipeline`] stages and reports use `f64`. Every random draw comes from
//! [`rng::stream_rng`], so results depend only on the seed and the trial
//! index, never on the thread count.
//!
//! ```
//! use cityscale::synthetic::{planted_corpus, PlantedConfig};
//! use cityscale::{city_metrics_table, size_impact_trend, ProbSource};
//!
//! let planted = planted_corpus::<f64>(&PlantedConfig::default(), 1).unwrap();
//! let metrics = city_metrics_table(&planted.corpus, ProbSource::FreyOsborne).unwrap();
//! let trend = size_impact_trend(&metrics).unwrap();
//! assert!(trend.correlation.r < 0.0);
//! ```

// `!(x > 0.0)` style guards are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod corpus;
pub mod error;
pub mod grouping;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod robustness;
pub mod scalar;
pub mod scaling;
pub mod shift;
pub mod special;
pub mod stats;
pub mod synthetic;

pub use clustering::{kmeans, ClusterAssignment, FeatureMatrix, KMeansOptions};
pub use corpus::{load_corpus, Corpus, CorpusPaths, LoadOptions, ProbSource};
pub use error::{Error, Result};
pub use grouping::Grouping;
pub use linalg::Matrix;
pub use metrics::{city_metrics_table, expected_impact, normalized_shannon_entropy, theil, CityMetrics, Distribution};
pub use pipeline::{cmd_full_pipeline, run_stage, RunConfig, Stage};
pub use scalar::Scalar;
pub use scaling::{fit_power_law, ScalingFit};
pub use shift::{occupation_shift, ShiftReport};
pub use stats::{ols, pearson, size_impact_trend, CorrelationResult, RegressionFit};

pub type Corpus64 = Corpus<f64>;
pub type Distribution64 = Distribution<f64>;
pub type CityMetrics64 = CityMetrics<f64>;
pub type ShiftReport64 = ShiftReport<f64>;
pub type ScalingFit64 = ScalingFit<f64>;
pub type ClusterAssignment64 = ClusterAssignment<f64>;
pub type CorrelationResult64 = CorrelationResult<f64>;
pub type RegressionFit64 = RegressionFit<f64>;

pub type Corpus32 = Corpus<f32>;
pub type Distribution32 = Distribution<f32>;
pub type CityMetrics32 = CityMetrics<f32>;
pub type ShiftReport32 = ShiftReport<f32>;
pub type ScalingFit32 = ScalingFit<f32>;
pub type ClusterAssignment32 = ClusterAssignment<f32>;
pub type CorrelationResult32 = CorrelationResult<f32>;
pub type RegressionFit32 = RegressionFit<f32>;
