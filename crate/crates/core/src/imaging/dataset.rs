//! Two independent image collections and a seeded patch sampler over them.
//!
//! Source and target are drawn from separate random streams, so nothing
//! about one collection (its size, file order, contents) can influence which
//! patches are drawn from the other.

use std::fs;
use std::path::{Path, PathBuf};

use image::ImageReader;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_image, replicate_channels, ImageBatch};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SOURCE_STREAM: u64 = 0;
const TARGET_STREAM: u64 = 1;
const DEFAULT_CACHE_BYTES: usize = 1 << 30;

/// Regular files in `dir` whose header parses as a raster image, sorted by path.
pub fn list_images(dir: impl AsRef<Path>, recursive: bool) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    collect(dir, recursive, &mut out)?;
    out.sort();
    Ok(out)
}

fn collect(dir: &Path, recursive: bool, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let ft = entry.file_type().map_err(|e| Error::io(&path, e))?;
        if ft.is_dir() {
            if recursive {
                collect(&path, recursive, out)?;
            }
        } else if ft.is_file() && header_dims(&path).is_some() {
            out.push(path);
        }
    }
    Ok(())
}

/// `(height, width)` from the file header, without decoding pixels.
fn header_dims(path: &Path) -> Option<(usize, usize)> {
    let (w, h) = ImageReader::open(path)
        .ok()?
        .with_guessed_format()
        .ok()?
        .into_dimensions()
        .ok()?;
    Some((h as usize, w as usize))
}

/// The images of one domain, with their sizes checked against the patch size.
#[derive(Clone, Debug)]
pub struct ImageSet {
    dir: PathBuf,
    files: Vec<PathBuf>,
    dims: Vec<(usize, usize)>,
}

impl ImageSet {
    pub fn scan(dir: impl AsRef<Path>, recursive: bool, min_side: usize) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let files = list_images(&dir, recursive)?;
        if files.is_empty() {
            return Err(Error::Dataset(format!("no images found in {}", dir.display())));
        }
        let mut dims = Vec::with_capacity(files.len());
        for f in &files {
            let (h, w) = header_dims(f).ok_or_else(|| Error::Ingestion {
                path: f.clone(),
                reason: "unreadable image header".into(),
            })?;
            if h < min_side || w < min_side {
                return Err(Error::Ingestion {
                    path: f.clone(),
                    reason: format!("{w}x{h} is smaller than the {min_side}px patch size"),
                });
            }
            dims.push((h, w));
        }
        Ok(ImageSet { dir, files, dims })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

/// Positions of the two sampling streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub source_word_pos: u128,
    pub target_word_pos: u128,
}

struct Domain {
    set: ImageSet,
    rng: ChaCha8Rng,
    cache: Vec<Option<ImageBatch>>,
    cached_bytes: usize,
}

impl Domain {
    fn new(set: ImageSet, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let n = set.len();
        Domain {
            set,
            rng,
            cache: vec![None; n],
            cached_bytes: 0,
        }
    }

    fn image(&mut self, idx: usize) -> Result<ImageBatch> {
        if let Some(img) = &self.cache[idx] {
            return Ok(img.clone());
        }
        let path = &self.set.files[idx];
        let mut img = load_image(path)?;
        if img.channels() == 1 {
            img = ImageBatch::new(replicate_channels(img.tensor())?)?;
        }
        if (img.height(), img.width()) != self.set.dims[idx] {
            return Err(Error::Ingestion {
                path: path.clone(),
                reason: "decoded size differs from header".into(),
            });
        }
        let bytes = img.len() * 4;
        if self.cached_bytes + bytes <= DEFAULT_CACHE_BYTES {
            self.cached_bytes += bytes;
            self.cache[idx] = Some(img.clone());
        }
        Ok(img)
    }

    fn sample(&mut self, n: usize, patch: usize) -> Result<ImageBatch> {
        let mut data = Vec::with_capacity(n * 3 * patch * patch);
        for _ in 0..n {
            // draw all three numbers before touching the file so the stream
            // position depends only on how many patches were taken
            let idx = self.rng.random_range(0..self.set.len());
            let (h, w) = self.set.dims[idx];
            let top = self.rng.random_range(0..=h - patch);
            let left = self.rng.random_range(0..=w - patch);
            let img = self.image(idx)?;
            data.extend_from_slice(img.crop(top, left, patch, patch)?.data());
        }
        ImageBatch::new(Tensor::from_vec(&[n, 3, patch, patch], data)?)
    }
}

/// Unpaired source (low quality) and target (high quality) collections.
pub struct UnpairedDataset {
    source: Domain,
    target: Domain,
    patch_size: usize,
    seed: u64,
}

impl UnpairedDataset {
    pub fn open(
        source_dir: impl AsRef<Path>,
        target_dir: impl AsRef<Path>,
        patch_size: usize,
        seed: u64,
        recursive: bool,
    ) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::arg("patch size must be positive"));
        }
        let source = ImageSet::scan(source_dir, recursive, patch_size)?;
        let target = ImageSet::scan(target_dir, recursive, patch_size)?;
        Ok(Self::from_sets(source, target, patch_size, seed))
    }

    pub fn from_sets(source: ImageSet, target: ImageSet, patch_size: usize, seed: u64) -> Self {
        UnpairedDataset {
            source: Domain::new(source, seed, SOURCE_STREAM),
            target: Domain::new(target, seed, TARGET_STREAM),
            patch_size,
            seed,
        }
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source(&self) -> &ImageSet {
        &self.source.set
    }

    pub fn target(&self) -> &ImageSet {
        &self.target.set
    }

    /// `n` random crops from each domain, shaped `(n, 3, patch, patch)`.
    pub fn sample_patch_batch(&mut self, n: usize) -> Result<(ImageBatch, ImageBatch)> {
        if n == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        let x = self.source.sample(n, self.patch_size)?;
        let y = self.target.sample(n, self.patch_size)?;
        Ok((x, y))
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            source_word_pos: self.source.rng.get_word_pos(),
            target_word_pos: self.target.rng.get_word_pos(),
        }
    }

    pub fn restore(&mut self, state: SamplerState) {
        self.source.rng.set_word_pos(state.source_word_pos);
        self.target.rng.set_word_pos(state.target_word_pos);
    }
}
