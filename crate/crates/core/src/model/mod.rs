//! The hotel embedding network: click, amenity and geo sub-embeddings fused
//! into one vector per hotel, trained with skip-gram negative sampling and
//! an optional pull towards a frozen source-brand space.

mod forward;
mod grad;
mod loss;
mod params;
mod train;

pub use forward::{enriched_embedding, feature_embed, NORM_EPS};
pub use grad::{gradients, GradWorkspace, Gradients, SourceAnchors, DIFF_EPS};
pub use loss::{da_loss, sgns_loss, sigmoid, softplus};
pub use params::{Matrix, ModelParams, Optimizer, RegVariant, TrainConfig};
pub use train::{train, CurveSink, EpochStats, TrainOutcome};

use crate::data::{Brand, HotelCatalog};
use crate::space::EmbeddingSpace;

/// Embeds every catalog hotel, including hotels never seen in training.
pub fn export_embeddings(params: &ModelParams, catalog: &HotelCatalog, brand: Brand) -> EmbeddingSpace {
    let mut space = EmbeddingSpace::new(brand, params.dim());
    for (i, h) in catalog.hotels().iter().enumerate() {
        let v = forward::embed_index(i, params, catalog);
        space
            .push(h.hotel_id.clone(), &v)
            .expect("catalog ids are unique and vectors have the model dimension");
    }
    space
}
