//! Fixed block-DCT analysis/synthesis pair and image metrics.
//!
//! Each `B×B` block is transformed with the orthonormal 2D DCT-II and its
//! coefficients are scattered to `B²` channels in zigzag order, so channel 0
//! carries the block mean and higher channels carry higher frequencies. Cutting
//! the channel axis into equal levels then orders levels from coarse to fine.
//! The frequency reading of levels is an analogy: a learned transform has no
//! such structure.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::codec::LatentTensor;
use crate::entropy::{DEFAULT_SYMBOL_MAX, DEFAULT_SYMBOL_MIN};
use crate::error::{Error, Result};

pub const DEFAULT_BLOCK: usize = 8;
/// Patch edge of [`perceptual_stub`].
pub const STUB_PATCH: usize = 8;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (y, x)))
            .map(|(y, x)| f(x, y))
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    fn same_dims(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Half-away-from-zero rounding, the single rounding rule of the codec.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// `basis[u][i] = c(u)·cos((2i+1)uπ/2B)`, orthonormal.
fn dct_basis(b: usize) -> Vec<Vec<f64>> {
    (0..b)
        .map(|u| {
            let c = if u == 0 {
                (1.0 / b as f64).sqrt()
            } else {
                (2.0 / b as f64).sqrt()
            };
            (0..b)
                .map(|i| c * (((2 * i + 1) * u) as f64 * PI / (2 * b) as f64).cos())
                .collect()
        })
        .collect()
}

/// `(row, col)` frequency of each channel, in zigzag order.
pub fn zigzag(b: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(b * b);
    for s in 0..2 * b - 1 {
        let lo = s.saturating_sub(b - 1);
        let hi = s.min(b - 1);
        if s % 2 == 0 {
            for row in (lo..=hi).rev() {
                order.push((row, s - row));
            }
        } else {
            for row in lo..=hi {
                order.push((row, s - row));
            }
        }
    }
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub block_size: usize,
    /// One positive step per channel, in zigzag order.
    pub quant_steps: Vec<f64>,
}

impl Default for TransformConfig {
    /// Steps of 1 (DC) and 2 (AC), raised where needed so that any 8-bit
    /// image quantizes inside the default symbol range.
    fn default() -> Self {
        Self::fitted(DEFAULT_BLOCK, DEFAULT_SYMBOL_MAX)
    }
}

impl TransformConfig {
    pub fn new(block_size: usize, quant_steps: Vec<f64>) -> Result<Self> {
        let cfg = Self {
            block_size,
            quant_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn unit(block_size: usize) -> Self {
        Self {
            block_size,
            quant_steps: vec![1.0; block_size * block_size],
        }
    }

    /// Smallest steps `>= 1 (DC) / 2 (AC)` keeping every coefficient of an
    /// 8-bit block within `±limit` after rounding.
    pub fn fitted(block_size: usize, limit: i32) -> Self {
        let bounds = worst_case_coefficients(block_size);
        let quant_steps = bounds
            .iter()
            .enumerate()
            .map(|(c, &bound)| {
                let base = if c == 0 { 1.0 } else { 2.0 };
                f64::max(base, bound / limit as f64)
            })
            .collect();
        Self {
            block_size,
            quant_steps,
        }
    }

    pub fn channels(&self) -> usize {
        self.block_size * self.block_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::InvalidConfig("block size must be positive".into()));
        }
        if self.quant_steps.len() != self.channels() {
            return Err(Error::InvalidConfig(format!(
                "{} quant steps for {} channels",
                self.quant_steps.len(),
                self.channels()
            )));
        }
        if self.quant_steps.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidConfig("quant steps must be positive".into()));
        }
        Ok(())
    }

    /// Rejects configurations under which some 8-bit image would quantize
    /// outside `[min, max]`.
    pub fn check_symbol_range(&self, min: i32, max: i32) -> Result<()> {
        self.validate()?;
        let limit = min.unsigned_abs().min(max.unsigned_abs()) as f64;
        for (c, (bound, step)) in worst_case_coefficients(self.block_size)
            .iter()
            .zip(&self.quant_steps)
            .enumerate()
        {
            let worst = round_half_away(bound / step);
            if worst > limit {
                return Err(Error::InvalidConfig(format!(
                    "channel {c} can reach {worst} with step {step}; symbol range is [{min}, {max}]"
                )));
            }
        }
        Ok(())
    }

    /// Parses and checks against the default symbol range.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.check_symbol_range(DEFAULT_SYMBOL_MIN, DEFAULT_SYMBOL_MAX)?;
        Ok(cfg)
    }
}

/// Largest `|coefficient|` per channel over all 8-bit blocks.
pub fn worst_case_coefficients(b: usize) -> Vec<f64> {
    let basis = dct_basis(b);
    zigzag(b)
        .into_iter()
        .map(|(u, v)| {
            let (mut pos, mut neg) = (0.0, 0.0);
            for y in 0..b {
                for x in 0..b {
                    let w = basis[u][y] * basis[v][x];
                    if w > 0.0 {
                        pos += w;
                    } else {
                        neg -= w;
                    }
                }
            }
            255.0 * f64::max(pos, neg)
        })
        .collect()
}

fn check_blocks(width: usize, height: usize, b: usize) -> Result<()> {
    if width % b != 0 || height % b != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{width}x{height} is not a multiple of the block size {b}"
        )));
    }
    Ok(())
}

/// Real-valued forward transform: `(B², H/B, W/B)` coefficients, channel-major.
pub fn forward_real(pixels: &[f64], width: usize, height: usize, b: usize) -> Result<Vec<f64>> {
    check_blocks(width, height, b)?;
    if pixels.len() != width * height {
        return Err(Error::DimensionMismatch("pixel count".into()));
    }
    let basis = dct_basis(b);
    let order = zigzag(b);
    let (bh, bw) = (height / b, width / b);
    let mut out = vec![0.0; b * b * bh * bw];
    let mut tmp = vec![0.0; b * b];
    for by in 0..bh {
        for bx in 0..bw {
            // rows then columns
            for u in 0..b {
                for x in 0..b {
                    tmp[u * b + x] = (0..b)
                        .map(|y| basis[u][y] * pixels[(by * b + y) * width + bx * b + x])
                        .sum();
                }
            }
            for (c, &(u, v)) in order.iter().enumerate() {
                let coef: f64 = (0..b).map(|x| basis[v][x] * tmp[u * b + x]).sum();
                out[(c * bh + by) * bw + bx] = coef;
            }
        }
    }
    Ok(out)
}

/// Inverse of [`forward_real`].
pub fn inverse_real(coefs: &[f64], width: usize, height: usize, b: usize) -> Result<Vec<f64>> {
    check_blocks(width, height, b)?;
    if coefs.len() != width * height {
        return Err(Error::DimensionMismatch("coefficient count".into()));
    }
    let basis = dct_basis(b);
    let order = zigzag(b);
    let (bh, bw) = (height / b, width / b);
    let mut out = vec![0.0; width * height];
    let mut block = vec![0.0; b * b];
    let mut tmp = vec![0.0; b * b];
    for by in 0..bh {
        for bx in 0..bw {
            for (c, &(u, v)) in order.iter().enumerate() {
                block[u * b + v] = coefs[(c * bh + by) * bw + bx];
            }
            for u in 0..b {
                for x in 0..b {
                    tmp[u * b + x] = (0..b).map(|v| basis[v][x] * block[u * b + v]).sum();
                }
            }
            for y in 0..b {
                for x in 0..b {
                    out[(by * b + y) * width + bx * b + x] =
                        (0..b).map(|u| basis[u][y] * tmp[u * b + x]).sum();
                }
            }
        }
    }
    Ok(out)
}

/// Block DCT, per-channel quantization, half-away rounding.
pub fn analysis(image: &Image, cfg: &TransformConfig) -> Result<LatentTensor> {
    cfg.validate()?;
    let b = cfg.block_size;
    let pixels: Vec<f64> = image.pixels.iter().map(|&p| p as f64).collect();
    let coefs = forward_real(&pixels, image.width, image.height, b)?;
    let plane = (image.width / b) * (image.height / b);
    let values = coefs
        .iter()
        .enumerate()
        .map(|(i, &v)| round_half_away(v / cfg.quant_steps[i / plane]) as i32)
        .collect();
    LatentTensor::new(cfg.channels(), image.height / b, image.width / b, values)
}

/// Dequantization, inverse block DCT, rounding and clamping to `[0, 255]`.
pub fn synthesis(latent: &LatentTensor, cfg: &TransformConfig) -> Result<Image> {
    cfg.validate()?;
    let (c, h, w) = latent.dims();
    if c != cfg.channels() {
        return Err(Error::DimensionMismatch(format!(
            "latent has {c} channels, transform expects {}",
            cfg.channels()
        )));
    }
    let b = cfg.block_size;
    let plane = h * w;
    let coefs: Vec<f64> = latent
        .values()
        .iter()
        .enumerate()
        .map(|(i, &q)| q as f64 * cfg.quant_steps[i / plane])
        .collect();
    let pixels = inverse_real(&coefs, w * b, h * b, b)?;
    Image::new(
        w * b,
        h * b,
        pixels
            .iter()
            .map(|&p| round_half_away(p).clamp(0.0, 255.0) as u8)
            .collect(),
    )
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.pixels.len() as f64)
}

/// `10·log10(255² / mse)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / m).log10())
}

fn patch_stats(img: &Image, px: usize, py: usize) -> (f64, f64) {
    let n = (STUB_PATCH * STUB_PATCH) as f64;
    let vals = (0..STUB_PATCH).flat_map(|y| {
        (0..STUB_PATCH).map(move |x| img.get(px * STUB_PATCH + x, py * STUB_PATCH + y) as f64)
    });
    let (sum, sum_sq) = vals.fold((0.0, 0.0), |(s, q), v| (s + v, q + v * v));
    let mean = sum / n;
    (mean, (sum_sq / n - mean * mean).max(0.0).sqrt())
}

/// Perception stand-in: mean over 8×8 patches of
/// `(mean_a − mean_b)² + (std_a − std_b)²`. Blind to anything that keeps
/// patch statistics, such as pixel shuffles inside a patch.
pub fn perceptual_stub(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    check_blocks(a.width, a.height, STUB_PATCH)?;
    let (pw, ph) = (a.width / STUB_PATCH, a.height / STUB_PATCH);
    let mut acc = 0.0;
    for py in 0..ph {
        for px in 0..pw {
            let (ma, sa) = patch_stats(a, px, py);
            let (mb, sb) = patch_stats(b, px, py);
            acc += (ma - mb).powi(2) + (sa - sb).powi(2);
        }
    }
    Ok(acc / (pw * ph) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zigzag_prefix() {
        let z = zigzag(8);
        assert_eq!(&z[..6], &[(0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (0, 2)]);
        assert_eq!(z[63], (7, 7));
        let mut sorted = z.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 64);
    }

    #[test]
    fn default_config_fits_symbol_range() {
        let cfg = TransformConfig::default();
        cfg.check_symbol_range(DEFAULT_SYMBOL_MIN, DEFAULT_SYMBOL_MAX).unwrap();
        assert!(TransformConfig::unit(8)
            .check_symbol_range(DEFAULT_SYMBOL_MIN, DEFAULT_SYMBOL_MAX)
            .is_err());
        let white = Image::filled(16, 16, 255);
        let y = analysis(&white, &cfg).unwrap();
        assert!(y.values().iter().all(|v| v.abs() <= 127));
    }

    #[test]
    fn constant_image_is_dc_only() {
        let cfg = TransformConfig::default();
        let y = analysis(&Image::filled(16, 8, 200), &cfg).unwrap();
        assert_eq!(y.dims(), (64, 1, 2));
        let dc = round_half_away(200.0 * 8.0 / cfg.quant_steps[0]) as i32;
        assert_eq!(y.get(0, 0, 0), dc);
        assert_eq!(y.get(0, 0, 1), dc);
        assert!(y.values()[2..].iter().all(|&v| v == 0));
        let zero = analysis(&Image::filled(8, 8, 0), &cfg).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0));
    }

    #[test]
    fn synthesis_examples() {
        let cfg = TransformConfig::default();
        let img = synthesis(&LatentTensor::zeros(64, 2, 2), &cfg).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 0));

        let mut y = LatentTensor::zeros(64, 1, 2);
        y.set(0, 0, 1, 40);
        let img = synthesis(&y, &cfg).unwrap();
        let level = round_half_away(40.0 * cfg.quant_steps[0] / 8.0) as u8;
        for yy in 0..8 {
            for x in 0..8 {
                assert_eq!(img.get(x, yy), 0);
                assert_eq!(img.get(8 + x, yy), level);
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let cfg = TransformConfig::default();
        assert!(analysis(&Image::filled(12, 8, 0), &cfg).is_err());
        assert!(synthesis(&LatentTensor::zeros(16, 1, 1), &cfg).is_err());
        assert!(mse(&Image::filled(8, 8, 0), &Image::filled(16, 8, 0)).is_err());
    }

    #[test]
    fn metric_examples() {
        let a = Image::filled(16, 16, 100);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::filled(16, 16, 101);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), 48.1308, epsilon = 1e-4);

        let check = Image::from_fn(16, 16, |x, y| if (x + y) % 2 == 0 { 0 } else { 255 });
        let inv = Image::from_fn(16, 16, |x, y| if (x + y) % 2 == 0 { 255 } else { 0 });
        assert_eq!(mse(&check, &inv).unwrap(), 65025.0);
        assert_eq!(psnr(&check, &inv).unwrap(), 0.0);
    }

    #[test]
    fn stub_examples() {
        let a = Image::from_fn(16, 16, |x, y| (x * 7 + y * 3) as u8);
        assert_eq!(perceptual_stub(&a, &a).unwrap(), 0.0);
        let shifted = Image::from_fn(16, 16, |x, y| (x * 7 + y * 3 + 10) as u8);
        assert_abs_diff_eq!(perceptual_stub(&a, &shifted).unwrap(), 100.0, epsilon = 1e-9);
        // mirror each patch: same statistics, different layout
        let mirrored = Image::from_fn(16, 16, |x, y| {
            let mx = (x / 8) * 8 + (7 - x % 8);
            (mx * 7 + y * 3) as u8
        });
        assert_ne!(a, mirrored);
        assert_abs_diff_eq!(perceptual_stub(&a, &mirrored).unwrap(), 0.0, epsilon = 1e-9);
        assert_eq!(
            perceptual_stub(&a, &shifted).unwrap(),
            perceptual_stub(&shifted, &a).unwrap()
        );
    }
}
