//! Part-level bounding-box mesh deformation, optimized with CMA-ES against
//! pluggable image-text or geometric objectives.

pub mod fixtures;
pub mod mesh;
pub mod occupancy;
pub mod split;
pub mod graph;
pub mod cmaes;
pub mod render;
pub mod objective;
pub mod pipeline;
