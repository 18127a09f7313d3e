//! Mining of foreground/background training patches from unlabeled frame
//! sequences.
//!
//! Per video the pipeline drops exposure outliers and scene cuts, computes
//! dense optical flow between consecutive frames, scores sliding-window
//! proposals on both the RGB frame and the flow-magnitude image, keeps the
//! best proposals per frame, links them across time by appearance, and
//! picks one foreground and one background patch per frame.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision used by the pipeline.

pub mod config;
pub mod domain;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod export;
pub mod filter;
pub mod flow;
pub mod geometry;
pub mod ingest;
pub mod pipeline;
pub mod probe;
pub mod proposals;
pub mod scalar;
pub mod selection;
pub mod synth;

pub use domain::{normalize_scores, Source};
pub use error::{Error, Result};
pub use geometry::{iou, iou_exact, BoundingBox};
pub use ingest::{Frame, VideoSequence};
pub use scalar::Scalar;

pub type Proposal32 = domain::Proposal<f32>;
pub type Proposal64 = domain::Proposal<f64>;
pub type Embedding32 = domain::Embedding<f32>;
pub type Embedding64 = domain::Embedding<f64>;
pub type Cluster32 = domain::Cluster<f32>;
pub type Cluster64 = domain::Cluster<f64>;
pub type FlowField32 = flow::FlowField<f32>;
pub type FlowField64 = flow::FlowField<f64>;
