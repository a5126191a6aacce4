//! Trains a small fave-rate scorer to tell sharp scenes from blurred copies,
//! then scores a few held-out images. The backbone starts from zero-DC
//! filters, a stand-in for pretrained edge detectors.

use photoenhance::imaging::load_image;
use photoenhance::metrics::{accuracy, ffs_score, train_ffs, FfsConfig};
use photoenhance::toy::{write_edge_feature_weights, write_sharp_blurred};

fn main() -> photoenhance::Result<()> {
    let tmp = tempfile::tempdir().map_err(|e| photoenhance::Error::Dataset(e.to_string()))?;
    let train = write_sharp_blurred(&tmp.path().join("train"), 40, 64, 1)?;
    let test = write_sharp_blurred(&tmp.path().join("test"), 10, 64, 2)?;
    let weights = tmp.path().join("vgg.safetensors");
    write_edge_feature_weights(&weights, 5)?;
    let cfg = FfsConfig {
        feature_weights: weights,
        layer: "relu1_2".into(),
        patch_size: 48,
        learning_rate: 1e-3,
        batch_size: 8,
        max_epochs: 10,
        ..FfsConfig::default()
    };
    let (scorer, report) = train_ffs(&train, &cfg)?;
    for e in &report.history {
        println!(
            "epoch {:>2}  loss {:.4}  validation accuracy {:.3}",
            e.epoch, e.train_loss, e.val_accuracy
        );
    }
    println!("held-out accuracy {:.3}", accuracy(&scorer, &test)?);
    for item in test.iter().take(4) {
        let s = ffs_score(&scorer, &load_image(&item.path)?)?;
        println!("{}  label {}  score {s:.3}", item.path.display(), item.label);
    }
    Ok(())
}
