//! Runs a freshly initialized generator over a large image, whole and in
//! tiles, and reports how far the two results are apart.

use photoenhance::imaging::ImageBatch;
use photoenhance::models::{enhance, min_tile_size, Generator, GeneratorConfig, DEFAULT_TILE_OVERLAP};
use photoenhance::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> photoenhance::Result<()> {
    let cfg = GeneratorConfig {
        width: 8,
        ..GeneratorConfig::default()
    };
    let g = Generator::<f32>::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    let (h, w) = (300, 300);
    let img = ImageBatch::new(Tensor::from_fn(&[1, 3, h, w], |i| {
        ((i % w) as f32 / w as f32 + (i / w % h) as f32 / h as f32) / 2.0
    }))?;
    let whole = enhance(&g, &img, None)?;
    let tile = min_tile_size(&g, DEFAULT_TILE_OVERLAP).max(128);
    let tiled = enhance(&g, &img, Some(tile))?;
    println!(
        "receptive radius {} px, tile {tile} px, max |whole - tiled| = {:.2e}",
        cfg.receptive_radius(),
        whole.tensor().max_abs_diff(tiled.tensor())
    );
    Ok(())
}
