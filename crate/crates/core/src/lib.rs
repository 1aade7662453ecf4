//! Reconstruct a rigged, silhouette-exact 3D body mesh from a single binary
//! silhouette and a posed articulated template rendered into image maps.

pub mod boundary;
pub mod config;
pub mod error;
pub mod export;
pub mod fixtures;
pub mod geometry;
pub mod gmm;
pub mod integrate;
pub mod labeling;
pub mod maxflow;
pub mod mesh;
pub mod morph;
pub mod mrf;
pub mod occlusion;
pub mod pipeline;
pub mod raster;
pub mod skeleton;
pub mod sparse;
pub mod template;
pub mod texture;
pub mod warp;

pub use error::{Error, Result};
pub use geometry::{BoundaryPolygon, SimilarityTransform2D, Vec2};
pub use raster::{RasterMap, Semantic};
