//! Image containers, raster I/O, the color-discriminator blur, grayscale
//! conversion and unpaired patch sampling.

mod blur;
mod color;
mod dataset;
mod io;

pub use blur::{blur, blur_backward, make_blur_kernel, BlurKernel, SigmaConvention};
pub use color::{grayscale_backward, replicate_channels, to_grayscale, LUMA_WEIGHTS};
pub use dataset::{list_images, ImageSet, SamplerState, UnpairedDataset};
pub use io::{interleaved_codes, load_image, quantize, save_image, to_dynamic_image};

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A rank-4 `(batch, channels, height, width)` stack of images with values
/// in `[0, 1]` and 1 or 3 channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch(Tensor<f32>);

impl ImageBatch {
    pub fn new(t: Tensor<f32>) -> Result<Self> {
        Self::check_shape(&t)?;
        if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!("image value {v} outside [0, 1]")));
        }
        Ok(ImageBatch(t))
    }

    /// Like [`ImageBatch::new`] but clamps values into `[0, 1]` instead of
    /// rejecting them. Non-finite values are still an error.
    pub fn clamped(mut t: Tensor<f32>) -> Result<Self> {
        Self::check_shape(&t)?;
        if !t.all_finite() {
            return Err(Error::NonFinite { term: "image" });
        }
        for v in t.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(ImageBatch(t))
    }

    fn check_shape(t: &Tensor<f32>) -> Result<()> {
        if t.rank() != 4 {
            return Err(Error::arg(format!("image batch must be rank 4, got {:?}", t.shape())));
        }
        let (n, c, h, w) = t.dims4();
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::arg(format!("empty image batch {:?}", t.shape())));
        }
        if c != 1 && c != 3 {
            return Err(Error::arg(format!("images need 1 or 3 channels, got {c}")));
        }
        Ok(())
    }

    pub fn filled(batch: usize, channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(Tensor::full(&[batch, channels, height, width], value))
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }

    pub fn item(&self, i: usize) -> ImageBatch {
        ImageBatch(self.0.slice_batch(i, i + 1))
    }

    pub fn concat(parts: &[ImageBatch]) -> Result<Self> {
        let tensors: Vec<_> = parts.iter().map(|p| p.0.clone()).collect();
        Ok(ImageBatch(Tensor::concat_batch(&tensors)?))
    }

    /// Rectangle `(top, left, height, width)` of every image in the batch.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        let (n, c, h, w) = self.0.dims4();
        if height == 0 || width == 0 || top + height > h || left + width > w {
            return Err(Error::arg(format!(
                "crop {height}x{width}+{top}+{left} outside {h}x{w} image"
            )));
        }
        let src = self.0.data();
        let mut out = Vec::with_capacity(n * c * height * width);
        for plane in 0..n * c {
            for y in top..top + height {
                let row = plane * h * w + y * w;
                out.extend_from_slice(&src[row + left..row + left + width]);
            }
        }
        Ok(ImageBatch(Tensor::from_vec(&[n, c, height, width], out)?))
    }
}

impl Deref for ImageBatch {
    type Target = Tensor<f32>;

    fn deref(&self) -> &Tensor<f32> {
        &self.0
    }
}

impl TryFrom<Tensor<f32>> for ImageBatch {
    type Error = Error;

    fn try_from(t: Tensor<f32>) -> Result<Self> {
        ImageBatch::new(t)
    }
}

/// One single-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::arg(format!("plane {height}x{width} with {} values", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!("plane value {v} outside [0, 1]")));
        }
        Ok(ImagePlane { height, width, data })
    }

    /// Channel `c` of image `i`.
    pub fn from_batch(img: &ImageBatch, i: usize, c: usize) -> Self {
        let (_, ch, h, w) = img.dims4();
        let start = (i * ch + c) * h * w;
        ImagePlane {
            height: h,
            width: w,
            data: img.data()[start..start + h * w].to_vec(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}
