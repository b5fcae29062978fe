pub mod error;
pub mod geometry;
pub mod audio;
pub mod spectral;
pub mod beamform;
pub mod fieldpipe;
pub mod render;
pub mod simulate;
pub mod vlm;
pub mod config;
pub mod pipeline;
