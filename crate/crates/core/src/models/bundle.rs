use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::generator::{Generator, GeneratorConfig};
use super::vgg::{FeatureExtractor, LayerId};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Everything that determines the shapes and initial values of a bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub generator: GeneratorConfig,
    pub color_critic: DiscriminatorConfig,
    pub texture_critic: DiscriminatorConfig,
    pub feature_weights: PathBuf,
    pub feature_layer: String,
    pub seed: u64,
}

impl ArchConfig {
    pub fn new(patch_size: usize, feature_weights: impl Into<PathBuf>) -> Self {
        ArchConfig {
            generator: GeneratorConfig::default(),
            color_critic: DiscriminatorConfig::standard(3, patch_size),
            texture_critic: DiscriminatorConfig::standard(1, patch_size),
            feature_weights: feature_weights.into(),
            feature_layer: LayerId::DEFAULT.to_string(),
            seed: 0,
        }
    }

    pub fn layer(&self) -> Result<LayerId> {
        self.feature_layer.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.color_critic.validate()?;
        self.texture_critic.validate()?;
        if self.color_critic.in_channels != 3 {
            return Err(Error::arg("the color discriminator takes 3-channel input"));
        }
        if self.texture_critic.in_channels != 1 {
            return Err(Error::arg("the texture discriminator takes 1-channel input"));
        }
        self.layer()?;
        Ok(())
    }
}

/// The four trainable networks plus the frozen feature extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<T> {
    arch: ArchConfig,
    pub generator: Generator<T>,
    pub inverse: Generator<T>,
    pub color_critic: Discriminator<T>,
    pub texture_critic: Discriminator<T>,
    features: FeatureExtractor<T>,
}

impl<T: Scalar> ModelBundle<T> {
    /// Initializes the trainable networks from `arch.seed` around an
    /// already loaded extractor.
    pub fn with_features(arch: &ArchConfig, features: FeatureExtractor<T>) -> Result<Self> {
        arch.validate()?;
        if features.layer() != arch.layer()? {
            return Err(Error::arg(format!(
                "extractor is cut at {}, config asks for {}",
                features.layer(),
                arch.feature_layer
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(arch.seed);
        let generator = Generator::new(&arch.generator, &mut rng)?;
        let inverse = Generator::new(&arch.generator, &mut rng)?;
        let color_critic = Discriminator::new(&arch.color_critic, &mut rng)?;
        let texture_critic = Discriminator::new(&arch.texture_critic, &mut rng)?;
        Ok(ModelBundle {
            arch: arch.clone(),
            generator,
            inverse,
            color_critic,
            texture_critic,
            features,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    /// Read-only: nothing outside this module can reach the extractor weights mutably.
    pub fn features(&self) -> &FeatureExtractor<T> {
        &self.features
    }
}

/// Loads the feature weights named in `arch` and initializes everything else.
pub fn build_bundle<T: Scalar>(arch: &ArchConfig) -> Result<ModelBundle<T>> {
    arch.validate()?;
    let features = FeatureExtractor::load(&arch.feature_weights, arch.layer()?)?;
    ModelBundle::with_features(arch, features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::vgg::{VggStack, IMAGENET_MEAN, IMAGENET_STD};
    use crate::nn::Module;

    fn small_arch() -> ArchConfig {
        let mut a = ArchConfig::new(24, "unused");
        a.generator.width = 4;
        a.generator.residual_blocks = 1;
        for d in [&mut a.color_critic, &mut a.texture_critic] {
            d.channels = vec![4, 4];
            d.kernels = vec![5, 3];
            d.strides = vec![4, 2];
            d.hidden = 8;
        }
        a.feature_layer = "relu1_2".into();
        a
    }

    fn extractor() -> FeatureExtractor<f32> {
        let stack = VggStack::random([4, 4, 4, 4, 4], 2, 1);
        FeatureExtractor::new(stack, "relu1_2".parse().unwrap(), IMAGENET_MEAN, IMAGENET_STD).unwrap()
    }

    #[test]
    fn same_seed_same_parameters_and_independent_inverse() {
        let a = ModelBundle::with_features(&small_arch(), extractor()).unwrap();
        let b = ModelBundle::with_features(&small_arch(), extractor()).unwrap();
        assert!(a.generator.params_bitwise_eq(&b.generator));
        assert!(a.color_critic.params_bitwise_eq(&b.color_critic));
        assert!(!a.generator.params_bitwise_eq(&a.inverse));
        assert_eq!(a.generator.param_count(), a.inverse.param_count());
    }

    #[test]
    fn missing_weights_is_init_error() {
        let arch = small_arch();
        assert!(matches!(build_bundle::<f32>(&arch), Err(Error::Init(_))));
    }

    #[test]
    fn zero_blocks_is_argument_error() {
        let mut arch = small_arch();
        arch.generator.residual_blocks = 0;
        assert!(matches!(
            ModelBundle::with_features(&arch, extractor()),
            Err(Error::Argument(_))
        ));
    }
}
