//! Desk-scale simulation engine for hierarchical organ perfusion.
//!
//! Steady blood flow is solved jointly on 1D vascular trees (modified
//! Bernoulli with Poiseuille losses) and a 3D multicompartment Darcy
//! continuum, coupled through terminal-junction point sources and sinks.
//! A dynamic contrast-agent transport stage then produces simulated
//! tissue-density curves, including pathological (lesion) scenarios.
//!
//! Pipeline: vascular trees → hierarchy split → parameter upscaling →
//! coupled steady flow → tracer transport → probe curves and field
//! snapshots. The `perfusim` binary drives the whole pipeline from a
//! declarative scenario file; see the crate README.

pub mod error;
pub mod flow1d;
pub mod coupling;
pub mod darcy;
pub mod geometry;
pub(crate) mod linalg;
pub mod upscale;
pub mod vtree;

pub use error::{Error, Result};
