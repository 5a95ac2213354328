//! LPIPS-style perceptual distance over per-layer feature maps.
//!
//! The aggregation is
//! `d = Σ_l 1/(H_l W_l) Σ_{h,w} ‖w_l ⊙ (ŷ_l[h,w] − ŷ0_l[h,w])‖²`
//! where `ŷ` are feature vectors unit-normalized along channels. Features
//! come either from FSTK files written by an external extractor or from
//! [`pseudo_features`], a fixed hand-crafted pyramid. The pseudo features
//! are not a substitute for a pretrained network's values; they give a
//! deterministic perceptual-style distance that tracks image convergence.

use std::io::{Read, Write};

use super::{ImageBuffer, ImageError};

const FSTK_MAGIC: &[u8; 4] = b"FSTK";

/// One layer: `height × width` sites, each a `channels`-vector, stored
/// row-major as `(h, w, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    /// Per-channel weights `w_l`, nonnegative.
    pub weights: Vec<f64>,
}

impl FeatureLayer {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self, ImageError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(ImageError::ShapeMismatch("empty layer".into()));
        }
        if data.len() != height * width * channels {
            return Err(ImageError::ShapeMismatch(format!(
                "layer {height}x{width}x{channels} has {} values",
                data.len()
            )));
        }
        if weights.len() != channels {
            return Err(ImageError::ShapeMismatch(format!(
                "{} weights for {channels} channels",
                weights.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ImageError::InvalidParameter("non-finite feature value".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(ImageError::InvalidParameter("weights must be nonnegative".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            weights,
        })
    }

    /// Uniform weights `1/√C`, under which each site term is `(2/C)(1 − cos θ)`
    /// for unit vectors.
    pub fn uniform_weights(channels: usize) -> Vec<f64> {
        vec![1.0 / (channels as f64).sqrt(); channels]
    }

    pub fn sites(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub layers: Vec<FeatureLayer>,
}

/// Divides every site's feature vector by its L2 norm. Zero vectors stay zero.
pub fn normalize_features(raw: &FeatureStack) -> FeatureStack {
    let layers = raw
        .layers
        .iter()
        .map(|layer| {
            let mut data = layer.data.clone();
            for site in data.chunks_exact_mut(layer.channels) {
                let norm = site.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    site.iter_mut().for_each(|v| *v /= norm);
                }
            }
            FeatureLayer {
                data,
                ..layer.clone()
            }
        })
        .collect();
    FeatureStack { layers }
}

/// Aggregated weighted distance between two already-normalized stacks.
pub fn lpips_distance(a: &FeatureStack, b: &FeatureStack) -> Result<f64, ImageError> {
    if a.layers.len() != b.layers.len() {
        return Err(ImageError::ShapeMismatch(format!(
            "{} vs {} layers",
            a.layers.len(),
            b.layers.len()
        )));
    }
    let mut total = 0.0;
    for (l, (la, lb)) in a.layers.iter().zip(&b.layers).enumerate() {
        if (la.height, la.width, la.channels) != (lb.height, lb.width, lb.channels) {
            return Err(ImageError::ShapeMismatch(format!(
                "layer {l}: {}x{}x{} vs {}x{}x{}",
                la.height, la.width, la.channels, lb.height, lb.width, lb.channels
            )));
        }
        if la.weights != lb.weights {
            return Err(ImageError::ShapeMismatch(format!("layer {l}: weights differ")));
        }
        let mut layer_sum = 0.0;
        for (sa, sb) in la.sites().zip(lb.sites()) {
            layer_sum += sa
                .iter()
                .zip(sb)
                .zip(&la.weights)
                .map(|((x, y), w)| {
                    let d = w * (x - y);
                    d * d
                })
                .sum::<f64>();
        }
        total += layer_sum / (la.height * la.width) as f64;
    }
    Ok(total)
}

/// Normalizes both raw stacks, then aggregates.
pub fn lpips(raw_a: &FeatureStack, raw_b: &FeatureStack) -> Result<f64, ImageError> {
    lpips_distance(&normalize_features(raw_a), &normalize_features(raw_b))
}

/// Deterministic stand-in extractor: a `levels`-deep 2× box pyramid of the
/// luma image. Each level emits four channels per pixel: luma, |∂x|, |∂y|
/// (forward differences, zero on the last column/row) and the population
/// standard deviation over the clamped 3×3 neighbourhood. Weights are
/// `1/√4`; the returned stack is already normalized.
pub fn pseudo_features(img: &ImageBuffer, levels: usize) -> Result<FeatureStack, ImageError> {
    if levels == 0 {
        return Err(ImageError::InvalidParameter("levels must be >= 1".into()));
    }
    let (mut w, mut h) = (img.width(), img.height());
    if (w >> (levels - 1)) == 0 || (h >> (levels - 1)) == 0 {
        return Err(ImageError::ImageTooSmall {
            width: w,
            height: h,
            levels,
        });
    }
    let mut luma = img.luma();
    let mut layers = Vec::with_capacity(levels);
    for level in 0..levels {
        if level > 0 {
            let (nw, nh) = (w / 2, h / 2);
            let mut next = Vec::with_capacity(nw * nh);
            for y in 0..nh {
                for x in 0..nw {
                    let at = |dx: usize, dy: usize| luma[(2 * y + dy) * w + 2 * x + dx];
                    next.push(0.25 * (at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1)));
                }
            }
            luma = next;
            w = nw;
            h = nh;
        }
        layers.push(level_features(&luma, w, h));
    }
    Ok(normalize_features(&FeatureStack { layers }))
}

fn level_features(luma: &[f64], w: usize, h: usize) -> FeatureLayer {
    const C: usize = 4;
    let mut data = Vec::with_capacity(w * h * C);
    for y in 0..h {
        for x in 0..w {
            let v = luma[y * w + x];
            let dx = if x + 1 < w { (luma[y * w + x + 1] - v).abs() } else { 0.0 };
            let dy = if y + 1 < h { (luma[(y + 1) * w + x] - v).abs() } else { 0.0 };
            let mut s = 0.0;
            let mut s2 = 0.0;
            for oy in -1i64..=1 {
                for ox in -1i64..=1 {
                    let yy = (y as i64 + oy).clamp(0, h as i64 - 1) as usize;
                    let xx = (x as i64 + ox).clamp(0, w as i64 - 1) as usize;
                    let u = luma[yy * w + xx];
                    s += u;
                    s2 += u * u;
                }
            }
            let mean = s / 9.0;
            let std = (s2 / 9.0 - mean * mean).max(0.0).sqrt();
            data.extend_from_slice(&[v, dx, dy, std]);
        }
    }
    FeatureLayer {
        height: h,
        width: w,
        channels: C,
        data,
        weights: FeatureLayer::uniform_weights(C),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ImageError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, ImageError> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(truncated)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

fn truncated(e: std::io::Error) -> ImageError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        ImageError::MalformedFeatures("unexpected end of file".into())
    } else {
        ImageError::Io(e)
    }
}

/// Reads the FSTK container: magic `FSTK`, u32 layer count, then per layer
/// u32 `H`, `W`, `C`, `H·W·C` f32 values in `(h, w, c)` order and `C` f32
/// weights. All integers and floats are little-endian.
pub fn read_fstk<R: Read>(mut r: R) -> Result<FeatureStack, ImageError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != FSTK_MAGIC {
        return Err(ImageError::MalformedFeatures("bad magic".into()));
    }
    let count = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let h = read_u32(&mut r)? as usize;
        let w = read_u32(&mut r)? as usize;
        let c = read_u32(&mut r)? as usize;
        let n = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| ImageError::MalformedFeatures("layer size overflows".into()))?;
        let data = read_f32s(&mut r, n)?;
        let weights = read_f32s(&mut r, c)?;
        layers.push(FeatureLayer::new(h, w, c, data, weights)?);
    }
    Ok(FeatureStack { layers })
}

/// Writes the FSTK container (values are narrowed to f32).
pub fn write_fstk<W: Write>(stack: &FeatureStack, mut w: W) -> Result<(), ImageError> {
    w.write_all(FSTK_MAGIC)?;
    w.write_all(&(stack.layers.len() as u32).to_le_bytes())?;
    for l in &stack.layers {
        for dim in [l.height, l.width, l.channels] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for v in l.data.iter().chain(&l.weights) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}
