//! Text-guided 3D lesion segmentation on synthetic multi-modal phantoms.
//!
//! The crate covers data generation and persistence ([`data`]), the
//! multi-encoder U-Net ([`backbone`]), the text similarity head
//! ([`guidance`]), the cross-attention refiner ([`refiner`]), the losses
//! ([`objectives`]), the phased training loop ([`curriculum`]), evaluation
//! ([`metrics`]) and the ablation and audit drivers used by the CLI.

pub mod ablation;
pub mod audit;
pub mod backbone;
pub mod config;
pub mod curriculum;
pub mod data;
pub mod error;
pub mod guidance;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod params;
pub mod refiner;
pub mod rng;
pub mod sampling;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use lesionseg_autodiff as autodiff;
pub use model::Model;
