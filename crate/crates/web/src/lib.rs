//! Browser bindings: semantic measures of a typed distribution, a
//! rate-distortion-perception curve for a small source, and progressive
//! decoding of the synthetic corpus.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use sic_core::codec::{decode_progressive, encode_progressive, ContextModel, SicBitstream};
use sic_core::corpus::{corpus_model, synthetic_corpus, DEFAULT_LEVELS};
use sic_core::io::parse_partition;
use sic_core::rdp::{blahut_arimoto, synonymous_rdp, DistortionMatrix, SolverConfig};
use sic_core::semsrc::{
    semantic_entropy, shannon_entropy, DiscreteDistribution, SemanticVariable, SynonymousPartition,
};
use sic_core::transform::{perceptual_stub, psnr, synthesis, Image, TransformConfig};

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Measures {
    pub shannon_entropy: f64,
    pub semantic_entropy: f64,
    pub synsets: usize,
}

/// `probs` is a JSON array, `partition` a JSON list of groups or empty for
/// singletons.
pub fn measures_of(probs: &str, partition: &str) -> Result<Measures, String> {
    let values: Vec<f64> = serde_json::from_str(probs).map_err(|e| e.to_string())?;
    let dist = DiscreteDistribution::new(values).map_err(|e| e.to_string())?;
    let part = if partition.trim().is_empty() {
        SynonymousPartition::singletons(dist.len())
    } else {
        parse_partition(partition, dist.len()).map_err(|e| e.to_string())?
    };
    let synsets = part.num_groups();
    Ok(Measures {
        shannon_entropy: shannon_entropy(&dist),
        semantic_entropy: semantic_entropy(
            &SemanticVariable::new(dist, part).map_err(|e| e.to_string())?,
        ),
        synsets,
    })
}

#[wasm_bindgen]
pub fn measures(probs: &str, partition: &str) -> Result<String, JsValue> {
    let m = measures_of(probs, partition).map_err(js_err)?;
    serde_json::to_string(&m).map_err(js_err)
}

#[derive(Debug, Serialize, PartialEq)]
pub struct CurvePoint {
    pub lambda_d: f64,
    pub rate: f64,
    pub distortion: f64,
    pub perception: f64,
}

/// Curve of a source with `|i − j|` distortion over `steps` distortion
/// multipliers spaced geometrically in `[0.25, 16]`. With `lambda_p = 0` the
/// classical solver is used; otherwise the perception-aware descent.
pub fn curve_of(probs: &str, lambda_p: f64, steps: usize) -> Result<Vec<CurvePoint>, String> {
    let values: Vec<f64> = serde_json::from_str(probs).map_err(|e| e.to_string())?;
    let dist = DiscreteDistribution::new(values).map_err(|e| e.to_string())?;
    if dist.len() > 6 {
        return Err("at most 6 symbols in the browser".into());
    }
    let d = DistortionMatrix::absolute(dist.len());
    let singles = SynonymousPartition::singletons(dist.len());
    let cfg = SolverConfig {
        max_iterations: 20_000,
        random_restarts: 2,
        ..SolverConfig::default()
    };
    let steps = steps.clamp(2, 40);
    (0..steps)
        .map(|i| {
            let lambda_d = 0.25 * 64f64.powf(i as f64 / (steps - 1) as f64);
            let pt = if lambda_p == 0.0 {
                blahut_arimoto(&dist, &d, lambda_d, &cfg)
            } else {
                synonymous_rdp(&dist, &d, &singles, lambda_d, lambda_p, &cfg)
            };
            let pt = match pt {
                Ok(p) => p,
                Err(sic_core::Error::NotConverged { best, .. }) => *best,
                Err(e) => return Err(e.to_string()),
            };
            Ok(CurvePoint {
                lambda_d,
                rate: pt.rate,
                distortion: pt.distortion,
                perception: pt.perception,
            })
        })
        .collect()
}

#[wasm_bindgen]
pub fn rdp_curve(probs: &str, lambda_p: f64, steps: usize) -> Result<String, JsValue> {
    let c = curve_of(probs, lambda_p, steps).map_err(js_err)?;
    serde_json::to_string(&c).map_err(js_err)
}

#[wasm_bindgen]
pub fn corpus_names() -> String {
    let names: Vec<String> = synthetic_corpus().into_iter().map(|(n, _)| n).collect();
    serde_json::to_string(&names).expect("strings serialize")
}

/// One corpus image encoded at every level; any prefix can be decoded.
#[wasm_bindgen]
pub struct ProgressiveDemo {
    original: Image,
    stream: SicBitstream,
    model: ContextModel,
    cfg: TransformConfig,
    last: Option<Stats>,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Stats {
    pub level: usize,
    pub sample: usize,
    pub payload_bits: usize,
    pub bits_per_pixel: f64,
    pub psnr_db: f64,
    pub stub: f64,
}

impl ProgressiveDemo {
    pub fn build(image: usize, seed: u64) -> Result<Self, String> {
        let corpus = synthetic_corpus();
        let (_, original) = corpus
            .get(image)
            .ok_or_else(|| format!("no corpus image {image}"))?
            .clone();
        let cfg = TransformConfig::default();
        let model = corpus_model(&cfg, DEFAULT_LEVELS).map_err(|e| e.to_string())?;
        let latent = sic_core::transform::analysis(&original, &cfg).map_err(|e| e.to_string())?;
        let stream =
            encode_progressive(&latent, model.levels, &model, seed).map_err(|e| e.to_string())?;
        Ok(Self {
            original,
            stream,
            model,
            cfg,
            last: None,
        })
    }

    /// Grayscale reconstruction from the first `level` segments, detail draw `sample`.
    pub fn reconstruct(&mut self, level: usize, sample: usize) -> Result<Image, String> {
        if sample == 0 {
            return Err("samples are numbered from 1".into());
        }
        let stream = self.stream.truncated(level).map_err(|e| e.to_string())?;
        let out = decode_progressive(&stream, &self.model, sample).map_err(|e| e.to_string())?;
        let img = synthesis(&out.samples[sample - 1], &self.cfg).map_err(|e| e.to_string())?;
        let bits = stream.payload_bits();
        self.last = Some(Stats {
            level,
            sample,
            payload_bits: bits,
            bits_per_pixel: bits as f64 / (img.width() * img.height()) as f64,
            psnr_db: psnr(&self.original, &img).map_err(|e| e.to_string())?,
            stub: perceptual_stub(&self.original, &img).map_err(|e| e.to_string())?,
        });
        Ok(img)
    }

    pub fn last_stats(&self) -> Option<Stats> {
        self.last
    }
}

fn rgba(img: &Image) -> Vec<u8> {
    img.pixels().iter().flat_map(|&v| [v, v, v, 255]).collect()
}

#[wasm_bindgen]
impl ProgressiveDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(image: usize, seed: u32) -> Result<ProgressiveDemo, JsValue> {
        Self::build(image, seed as u64).map_err(js_err)
    }

    pub fn levels(&self) -> usize {
        self.model.levels
    }

    pub fn width(&self) -> usize {
        self.original.width()
    }

    pub fn height(&self) -> usize {
        self.original.height()
    }

    pub fn original_rgba(&self) -> Vec<u8> {
        rgba(&self.original)
    }

    /// RGBA pixels of the reconstruction; statistics via [`Self::stats`].
    pub fn decode(&mut self, level: usize, sample: usize) -> Result<Vec<u8>, JsValue> {
        self.reconstruct(level, sample).map(|i| rgba(&i)).map_err(js_err)
    }

    /// JSON statistics of the most recent decode; `null` before the first.
    pub fn stats(&self) -> String {
        let v = self.last.map(|s| {
            serde_json::json!({
                "level": s.level,
                "sample": s.sample,
                "payload_bits": s.payload_bits,
                "bits_per_pixel": s.bits_per_pixel,
                "psnr_db": if s.psnr_db.is_finite() { serde_json::json!(s.psnr_db) } else { serde_json::json!("inf") },
                "stub": s.stub,
            })
        });
        serde_json::to_string(&v).expect("plain values serialize")
    }
}
