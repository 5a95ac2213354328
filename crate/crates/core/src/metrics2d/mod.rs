//! Image-quality metrics between a rendered view and its held-out reference.

mod image_io;
mod lpips;

pub use image_io::{load_png, save_png};
pub use lpips::{
    lpips, lpips_distance, normalize_features, pseudo_features, read_fstk, write_fstk,
    FeatureLayer, FeatureStack,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageSmallerThanWindow {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("image {width}x{height} is too small for {levels} pyramid levels")]
    ImageTooSmall {
        width: usize,
        height: usize,
        levels: usize,
    },
    #[error("feature stacks differ in shape: {0}")]
    ShapeMismatch(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed feature file: {0}")]
    MalformedFeatures(String),
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major raster with 1 (gray) or 3 (RGB) interleaved channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::InvalidImage(format!("{channels} channels")));
        }
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidImage("zero-sized image".into()));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::InvalidImage(format!(
                "expected {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::InvalidImage(format!("sample {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    /// Single-channel luma (BT.601 weights for RGB input).
    pub fn luma(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.clone(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }
}

fn same_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), ImageError> {
    if a.dims() != b.dims() {
        return Err(ImageError::DimensionMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, ImageError> {
    same_dims(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// Peak signal-to-noise ratio in dB; `+inf` when the images are identical.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, max_i: f64) -> Result<f64, ImageError> {
    if !(max_i > 0.0) {
        return Err(ImageError::InvalidParameter(format!("max_i = {max_i}")));
    }
    Ok(psnr_from_mse(mse(a, b)?, max_i))
}

pub fn psnr_from_mse(mse: f64, max_i: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_i * max_i / mse).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Odd box-window edge, pixels.
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<(), ImageError> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(ImageError::InvalidParameter(format!(
                "window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0) {
            return Err(ImageError::InvalidParameter(
                "k1, k2 and dynamic range must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// Summed-area table with a zero first row and column.
struct Integral {
    stride: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(values: impl Fn(usize) -> f64, width: usize, height: usize) -> Self {
        let stride = width + 1;
        let mut sums = vec![0.0; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += values(y * width + x);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { stride, sums }
    }

    fn window(&self, x: usize, y: usize, size: usize) -> f64 {
        let s = self.stride;
        self.sums[(y + size) * s + x + size] - self.sums[y * s + x + size]
            - self.sums[(y + size) * s + x]
            + self.sums[y * s + x]
    }
}

/// Mean SSIM over every valid placement of a uniform `window × window` box,
/// computed on luma.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, params: &SsimParams) -> Result<f64, ImageError> {
    params.validate()?;
    same_dims(a, b)?;
    let (w, h, win) = (a.width, a.height, params.window);
    if w < win || h < win {
        return Err(ImageError::ImageSmallerThanWindow {
            width: w,
            height: h,
            window: win,
        });
    }
    let (la, lb) = (a.luma(), b.luma());
    let sa = Integral::new(|i| la[i], w, h);
    let sb = Integral::new(|i| lb[i], w, h);
    let saa = Integral::new(|i| la[i] * la[i], w, h);
    let sbb = Integral::new(|i| lb[i] * lb[i], w, h);
    let sab = Integral::new(|i| la[i] * lb[i], w, h);
    let (c1, c2) = (params.c1(), params.c2());
    let n = (win * win) as f64;

    let mut total = 0.0;
    for y in 0..=h - win {
        for x in 0..=w - win {
            let mu_a = sa.window(x, y, win) / n;
            let mu_b = sb.window(x, y, win) / n;
            let var_a = saa.window(x, y, win) / n - mu_a * mu_a;
            let var_b = sbb.window(x, y, win) / n - mu_b * mu_b;
            let cov = sab.window(x, y, win) / n - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
    }
    Ok(total / ((w - win + 1) * (h - win + 1)) as f64)
}
