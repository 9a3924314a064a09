//! Core of the AR evaluation harness: capture and wire formats, session
//! storage, model inference, rendering, lighting probes, metrics, point
//! clouds and the per-frame pipeline.

pub mod imageio;
pub mod lighting;
pub mod metrics;
pub mod model;
pub mod render;
pub mod store;
pub mod wire;
pub mod pointcloud;
pub mod gateway;
pub mod synthetic;
pub mod pipeline;
