//! Siamese encoder/decoder that relights an input image with the
//! illumination of a target image by swapping the light part of the latent.

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod head;
pub mod latent;
pub mod layers;
pub mod model;
pub mod ops;
pub mod params;
pub mod pool;

pub use config::{Upsample, Variant, VariantConfig};
pub use head::{predictions_from_tensor, IlluminationHead, IlluminationPrediction};
pub use latent::{swap_latent, LatentCode};
pub use layers::LayerKind;
pub use model::{Architecture, RelightNet, RelightOutput};
pub use pool::{envmap_estimate, weighted_pool};
