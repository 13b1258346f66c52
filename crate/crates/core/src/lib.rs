//! Differentiable hybrid surface/volume renderer and trainer for thin
//! semi-transparent surfaces, built on 2D Gaussian surfels.
//!
//! A render runs two passes over the same depth-sorted fragments: volumetric
//! blending with effective opacity `σα` gives the transmitted radiance, and a
//! first-surface aggregation with occupancy `σ` fills a G-buffer that is
//! shaded into a specular term and an attenuation factor.

pub mod backward;
pub mod camera;
pub mod checkpoint;
pub mod composite;
pub mod config;
pub mod dataset;
pub mod edit;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod raster;
pub mod reference;
pub mod render;
pub mod scene;
pub mod sh;
pub mod shading;
pub mod synth;
pub mod train;

pub use camera::Camera;
pub use error::{Error, Result};
pub use image::Image;
pub use raster::OpacityModel;
pub use render::{render, RenderOptions, RenderOutputs, Rendered};
pub use scene::{GaussianSurfel, ParamGroup, Scene};
pub use shading::ShadingParams;
