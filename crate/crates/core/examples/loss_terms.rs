//! Evaluates each loss term on small random tensors with stand-in critics.

use photoenhance::imaging::make_blur_kernel;
use photoenhance::losses::{
    color_loss, content_loss, discriminator_loss, texture_loss, total_loss, tv_loss, ConstantCritic, LossWeights,
    TvMode,
};
use photoenhance::models::LayerId;
use photoenhance::tensor::Tensor;
use photoenhance::toy::slim_extractor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> photoenhance::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::<f64>::from_fn(&[2, 3, 16, 16], |_| rng.random());
    let y = Tensor::<f64>::from_fn(&[2, 3, 16, 16], |_| rng.random());
    let features = slim_extractor::<f64>("relu2_2".parse::<LayerId>()?, 0);
    let kernel = make_blur_kernel(10, 0.053, 3.0)?;
    let color_critic = ConstantCritic {
        probability: 0.3,
        channels: 3,
    };
    let texture_critic = ConstantCritic {
        probability: 0.6,
        channels: 1,
    };

    let content = content_loss(&x, &y, &features)?;
    let color = color_loss(&y, &color_critic, &kernel)?;
    let texture = texture_loss(&y, &texture_critic)?;
    let tv = tv_loss(&y, TvMode::Anisotropic)?;
    let total = total_loss(content, color, texture, tv, &LossWeights::default())?;
    println!("content {content:.5}  color {color:.5}  texture {texture:.5}  tv {tv:.5}  total {total:.5}");
    println!("critic loss at chance: {:.5}", discriminator_loss(&[0.5], &[0.5])?);
    println!("content(x, x) = {}", content_loss(&x, &x, &features)?);
    Ok(())
}
