//! The trainable networks, the frozen feature extractor and inference helpers.

mod bundle;
mod discriminator;
mod enhance;
mod generator;
pub mod vgg;

pub use bundle::{build_bundle, ArchConfig, ModelBundle};
pub(crate) use discriminator::sigmoid;
pub use discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorTrace};
pub use enhance::{enhance, enhance_with_overlap, min_tile_size, DEFAULT_TILE_OVERLAP};
pub use generator::{Generator, GeneratorConfig, GeneratorTrace, ResidualBlock};
pub use vgg::{FeatureExtractor, FeatureTrace, LayerId, VggStack};
