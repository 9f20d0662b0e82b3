//! Multimodal unsupervised image-to-image translation at desk scale.
//!
//! Images are factorized into a domain-shared content code and a
//! domain-specific style code; translation recombines the content of one
//! domain with a style of the other. The crate holds the model, its training
//! objectives and loop, a synthetic two-domain dataset with an exact inverse
//! renderer, evaluation metrics and probes of the model's optimality
//! properties.

pub mod data_synth;
pub mod domain;
pub mod error;
pub mod kv;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod probe;
pub mod registry;
pub mod trainer;

pub use domain::Domain;
pub use error::{MunitError, Result};
