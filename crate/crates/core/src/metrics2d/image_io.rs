use std::path::Path;

use image::DynamicImage;

use super::{ImageBuffer, ImageError};

/// Loads an 8- or 16-bit grayscale or RGB PNG (alpha is dropped) into `[0, 1]`.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageBuffer, ImageError> {
    let img = image::open(path.as_ref()).map_err(|e| match e {
        image::ImageError::IoError(io) => ImageError::Io(io),
        other => ImageError::Decode(other.to_string()),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let scale8 = |v: &u8| *v as f64 / 255.0;
    let scale16 = |v: &u16| *v as f64 / 65535.0;
    let (channels, data): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.as_raw().iter().map(scale8).collect()),
        DynamicImage::ImageLumaA8(b) => (1, b.as_raw().iter().step_by(2).map(scale8).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.as_raw().iter().map(scale16).collect()),
        DynamicImage::ImageLumaA16(b) => {
            (1, b.as_raw().iter().step_by(2).map(scale16).collect())
        }
        DynamicImage::ImageRgb8(b) => (3, b.as_raw().iter().map(scale8).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.as_raw().iter().map(scale16).collect()),
        DynamicImage::ImageRgba8(b) => (
            3,
            b.as_raw()
                .chunks_exact(4)
                .flat_map(|p| p[..3].iter().map(scale8))
                .collect(),
        ),
        DynamicImage::ImageRgba16(b) => (
            3,
            b.as_raw()
                .chunks_exact(4)
                .flat_map(|p| p[..3].iter().map(scale16))
                .collect(),
        ),
        other => (
            3,
            other
                .to_rgb32f()
                .as_raw()
                .iter()
                .map(|v| (*v as f64).clamp(0.0, 1.0))
                .collect(),
        ),
    };
    ImageBuffer::new(w, h, channels, data)
}

/// Writes an 8-bit PNG, rounding samples to the nearest level.
pub fn save_png(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynimg = if img.channels() == 1 {
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("sized buffer"))
    } else {
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("sized buffer"))
    };
    dynimg.save(path.as_ref()).map_err(|e| match e {
        image::ImageError::IoError(io) => ImageError::Io(io),
        other => ImageError::Decode(other.to_string()),
    })
}
