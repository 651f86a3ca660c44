//! Streaming 4D scene graphs for latency-aware teleoperation.
//!
//! The engine lifts per-frame detections into 3D, merges fragments within a
//! frame, associates objects across frames, and answers operator commands
//! against the frame the operator actually saw.

pub mod assignment;
pub mod config;
pub mod error;
pub mod geometry;
pub mod graph_store;
pub mod io;
pub mod metrics;
pub mod model;
pub mod query;
pub mod replay;
pub mod scalar;
pub mod sim;
pub mod spatial;
pub mod temporal;

pub use error::{Error, Result};
pub use scalar::{Point3, Scalar};

pub type SceneGraph = model::SceneGraph4D<f64>;
pub type FrameGraph = model::FrameGraph<f64>;
pub type ObjectNode = model::ObjectNode<f64>;
pub type Track = model::Track<f64>;
pub type Command = model::Command<f64>;
pub type CameraModel = model::CameraModel<f64>;
pub type FrameInput = graph_store::FrameInput<f64>;
pub type EngineConfig = config::EngineConfig<f64>;
pub type TaskSubgraph = query::TaskSubgraph<f64>;
pub type GroundingResult = query::GroundingResult<f64>;
