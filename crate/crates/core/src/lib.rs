//! Compositional Gaussian-splat scene engine.
//!
//! Scenes are built from explicit anisotropic 3D Gaussian fields, one per
//! object, glued together by pairwise interaction transforms (rotation,
//! translation, scale) that map a child object into its anchor's frame.
//! On top of that representation the crate provides:
//!
//! - a software splatting renderer with an analytic backward pass
//!   ([`render`]),
//! - gravity/contact penalty constraints and a settle optimizer
//!   ([`physics`]),
//! - anomaly-aware Monte-Carlo initialization of interaction parameters
//!   against a pluggable likelihood oracle ([`compose`]),
//! - object-level field optimization scaffolding with KNN and alpha-hull
//!   regularizers ([`forge`]),
//! - field distillation into smaller fields ([`distill`]),
//! - persistence, wire protocol, and scene editing ([`io`]).

pub mod compose;
pub mod distill;
pub mod field;
pub mod forge;
pub mod grid;
pub mod hull;
pub mod io;
pub mod physics;
pub mod quat;
pub mod render;

pub use field::{
    FlatScene, Gaussian, InteractionParams, InteractionStatus, ObjectField, PairTransform, Scene,
};
pub use render::{Camera, RenderOptions, RenderedImage, ViewGradients};

/// Errors shared across the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),
    #[error("unknown id: {0}")]
    UnknownId(String),
    #[error("scene graph: {0}")]
    Graph(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sampling: {0}")]
    Sampling(String),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
