//! Session-based hotel embeddings for several brands of one platform.
//!
//! The crate trains a fused click/amenity/geo embedding per hotel with
//! skip-gram negative sampling, aligns the spaces of two brands either while
//! training (a pull towards frozen source-brand vectors) or afterwards (a
//! fitted linear or orthogonal projection), and scores next-click prediction
//! with hits@k and MRR@k.

pub mod align;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod space;
pub mod synth;

pub use data::{Brand, BrandMapping, ClickSession, HotelCatalog, HotelRecord, SessionSet};
pub use error::{Error, Result};
pub use model::{ModelParams, TrainConfig};
pub use space::EmbeddingSpace;
pub use synth::{World, WorldConfig};
