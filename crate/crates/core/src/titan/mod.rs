//! Conditional GAN translating LiDAR range views into camera-view segment maps.

pub mod augment;
pub mod discriminator;
pub mod generator;
pub mod layers;
pub mod train;

pub use augment::{augment, AugmentConfig, Augmented};
pub use discriminator::{BlockSpec, Discriminator, DiscriminatorConfig};
pub use generator::{Generator, GeneratorConfig};
pub use layers::{Ctx, Init};
pub use train::{load_generator, predict_logits, Batch, TrainConfig, Trainer};
