//! Deterministic synthetic test images and the end-to-end level sweep.

use serde::Serialize;

use crate::codec::{decode_progressive, encode_progressive, ContextModel, LatentTensor};
use crate::error::Result;
use crate::transform::{analysis, perceptual_stub, psnr, synthesis, Image, TransformConfig};

pub const CORPUS_SIZE: usize = 64;
pub const CORPUS_IMAGES: usize = 8;
/// Level count of the default model: four channels per level.
pub const DEFAULT_LEVELS: usize = 16;

fn hash_noise(seed: u64, x: usize, y: usize) -> u8 {
    let mut z = seed ^ ((x as u64) << 32 | y as u64);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ((z ^ (z >> 31)) >> 56) as u8
}

fn blob(x: usize, y: usize, cx: f64, cy: f64, r: f64) -> f64 {
    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
    (-d2 / (2.0 * r * r)).exp()
}

/// Eight 64×64 images: two ramps, two checkerboards, two blob scenes, a
/// smoothed noise field and a noisy ramp.
pub fn synthetic_corpus() -> Vec<(String, Image)> {
    let n = CORPUS_SIZE;
    let scale = 255.0 / (n - 1) as f64;
    let named = |name: &str, f: &dyn Fn(usize, usize) -> f64| {
        (
            name.to_string(),
            Image::from_fn(n, n, |x, y| f(x, y).round().clamp(0.0, 255.0) as u8),
        )
    };
    vec![
        named("ramp_h", &|x, _| x as f64 * scale),
        named("ramp_diag", &|x, y| (x + y) as f64 * scale / 2.0),
        named("checker_8", &|x, y| if (x / 8 + y / 8) % 2 == 0 { 48.0 } else { 208.0 }),
        named("checker_4", &|x, y| if (x / 4 + y / 4) % 2 == 0 { 90.0 } else { 170.0 }),
        named("blob", &|x, y| 30.0 + 200.0 * blob(x, y, 32.0, 28.0, 10.0)),
        named("blobs", &|x, y| {
            20.0 + 150.0 * blob(x, y, 18.0, 20.0, 7.0) + 120.0 * blob(x, y, 44.0, 42.0, 12.0)
        }),
        named("noise_smooth", &|x, y| {
            let mut acc = 0.0;
            for dy in 0..3 {
                for dx in 0..3 {
                    acc += hash_noise(11, (x + dx) / 2, (y + dy) / 2) as f64;
                }
            }
            acc / 9.0
        }),
        named("ramp_noisy", &|x, y| {
            0.8 * y as f64 * scale + 0.2 * hash_noise(5, x, y) as f64
        }),
    ]
}

/// Static model fitted to the corpus latents under `cfg`.
pub fn corpus_model(cfg: &TransformConfig, levels: usize) -> Result<ContextModel> {
    let latents = synthetic_corpus()
        .iter()
        .map(|(_, img)| analysis(img, cfg))
        .collect::<Result<Vec<LatentTensor>>>()?;
    ContextModel::fit_static(&latents, levels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub level: usize,
    pub payload_bits: usize,
    pub bits_per_pixel: f64,
    pub psnr_db: f64,
    pub stub: f64,
}

/// Encodes every level once and, for each prefix `l = 1..=L`, reconstructs
/// detail sample `j = 1`.
pub fn level_sweep(
    image: &Image,
    cfg: &TransformConfig,
    model: &ContextModel,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let latent = analysis(image, cfg)?;
    let full = encode_progressive(&latent, model.levels, model, seed)?;
    let pixels = (image.width() * image.height()) as f64;
    (1..=model.levels)
        .map(|l| {
            let stream = full.truncated(l)?;
            let out = decode_progressive(&stream, model, 1)?;
            let recon = synthesis(&out.samples[0], cfg)?;
            let bits = stream.payload_bits();
            Ok(SweepRow {
                level: l,
                payload_bits: bits,
                bits_per_pixel: bits as f64 / pixels,
                psnr_db: psnr(image, &recon)?,
                stub: perceptual_stub(image, &recon)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_fixed() {
        let a = synthetic_corpus();
        assert_eq!(a.len(), CORPUS_IMAGES);
        assert_eq!(a, synthetic_corpus());
        assert!(a.iter().all(|(_, i)| i.width() == 64 && i.height() == 64));
        let mut names: Vec<_> = a.iter().map(|(n, _)| n.clone()).collect();
        names.dedup();
        assert_eq!(names.len(), CORPUS_IMAGES);
    }

    #[test]
    fn sweep_rows_cover_all_levels() {
        let cfg = TransformConfig::default();
        let model = corpus_model(&cfg, DEFAULT_LEVELS).unwrap();
        let (_, img) = &synthetic_corpus()[4];
        let rows = level_sweep(img, &cfg, &model, 0).unwrap();
        assert_eq!(rows.len(), DEFAULT_LEVELS);
        assert!(rows.windows(2).all(|w| w[1].payload_bits > w[0].payload_bits));
    }
}
