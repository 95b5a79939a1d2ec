//! Progressive codec over a level-partitioned integer latent.
//!
//! The channel axis is cut into `L` equal groups. The first `l` groups are
//! range coded one segment per group, each symbol modeled by a quantized
//! Gaussian whose parameters come from a masked spatial-channel context. The
//! remaining groups are never transmitted: the decoder fills them by sampling
//! around a per-channel detail mean, once per requested sample.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::entropy::{
    FrequencyTable, QuantizedGaussian, RangeDecoder, RangeEncoder, DEFAULT_SYMBOL_MAX,
    DEFAULT_SYMBOL_MIN, SIGMA_FLOOR,
};
use crate::error::{Error, Result};
use crate::transform::round_half_away;

pub const MAGIC: &[u8; 4] = b"SIC1";
pub const FORMAT_VERSION: u8 = 1;
/// Identifies [`detail_uniform`] in the header.
pub const RNG_SPLITMIX64_CHAIN: u8 = 1;
pub const HEADER_BYTES: usize = 22;
pub const MODEL_VERSION: u32 = 1;

/// Edge of the spatial context window.
pub const WINDOW: usize = 5;
pub const WINDOW_AREA: usize = WINDOW * WINDOW;
/// Window positions strictly before the centre in raster order.
pub const CAUSAL_POSITIONS: usize = WINDOW_AREA / 2;
/// Half-width of the detail sampling interval.
pub const DETAIL_HALF_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentTensor {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<i32>,
}

impl LatentTensor {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<i32>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {channels}x{height}x{width} latent",
                values.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0; channels * height * width],
        }
    }

    /// `(C, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Channel-major values, index `(c·H + h)·W + w`.
    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn index(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.height + h) * self.width + w
    }

    pub fn get(&self, c: usize, h: usize, w: usize) -> i32 {
        self.values[self.index(c, h, w)]
    }

    pub fn set(&mut self, c: usize, h: usize, w: usize, v: i32) {
        let i = self.index(c, h, w);
        self.values[i] = v;
    }

    pub fn channel_values(&self, channels: Range<usize>) -> &[i32] {
        let plane = self.height * self.width;
        &self.values[channels.start * plane..channels.end * plane]
    }

    pub fn check_range(&self, min: i32, max: i32) -> Result<()> {
        match self.values.iter().position(|v| !(min..=max).contains(v)) {
            None => Ok(()),
            Some(position) => Err(Error::SymbolOutOfRange {
                position,
                symbol: self.values[position],
                min,
                max,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelPartition {
    channels: usize,
    levels: usize,
}

pub fn partition_levels(channels: usize, levels: usize) -> Result<LevelPartition> {
    if levels == 0 || channels < levels || channels % levels != 0 {
        return Err(Error::InvalidConfig(format!(
            "{channels} channels cannot be split into {levels} equal levels"
        )));
    }
    Ok(LevelPartition { channels, levels })
}

impl LevelPartition {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn group_size(&self) -> usize {
        self.channels / self.levels
    }

    /// Channels of group `k` (0-based).
    pub fn group(&self, k: usize) -> Range<usize> {
        k * self.group_size()..(k + 1) * self.group_size()
    }

    pub fn group_of(&self, c: usize) -> usize {
        c / self.group_size()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma: f64,
}

/// Per-group entropy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum GroupModel {
    /// One `(μ, σ)` per channel of the group.
    Static { mu: Vec<f64>, sigma: Vec<f64> },
    /// For each channel of the group, weights over channels `0..group_end`
    /// times the 25 window positions, index `c′·25 + (dy+2)·5 + (dx+2)`.
    Linear {
        bias_mu: Vec<f64>,
        bias_log_sigma: Vec<f64>,
        weights_mu: Vec<Vec<f64>>,
        weights_log_sigma: Vec<Vec<f64>>,
    },
}

/// Mean of the sampled detail values: a per-channel table plus an optional
/// linear term over coded channels at the same position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailModel {
    pub mu: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextModel {
    pub version: u32,
    pub channels: usize,
    pub levels: usize,
    pub symbol_min: i32,
    pub symbol_max: i32,
    pub groups: Vec<GroupModel>,
    pub detail: DetailModel,
}

/// Whether window position `k` of channel `src` may feed channel `dst`.
pub fn mask_visible(part: &LevelPartition, dst: usize, src: usize, k: usize) -> bool {
    let g = part.group_of(dst);
    if src < part.group(g).start {
        k < WINDOW_AREA
    } else {
        src <= dst && k < CAUSAL_POSITIONS
    }
}

fn window_offset(k: usize) -> (isize, isize) {
    let half = (WINDOW / 2) as isize;
    ((k / WINDOW) as isize - half, (k % WINDOW) as isize - half)
}

impl ContextModel {
    /// Every group static with the given per-channel tables; detail means
    /// default to the synonymous means.
    pub fn new_static(levels: usize, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let part = partition_levels(mu.len(), levels)?;
        if sigma.len() != mu.len() {
            return Err(Error::InvalidConfig("mu and sigma tables differ in length".into()));
        }
        let groups = (0..levels)
            .map(|k| GroupModel::Static {
                mu: mu[part.group(k)].to_vec(),
                sigma: sigma[part.group(k)].to_vec(),
            })
            .collect();
        let model = Self {
            version: MODEL_VERSION,
            channels: mu.len(),
            levels,
            symbol_min: DEFAULT_SYMBOL_MIN,
            symbol_max: DEFAULT_SYMBOL_MAX,
            groups,
            detail: DetailModel { mu, weights: None },
        };
        model.validate()?;
        Ok(model)
    }

    /// Per-channel mean and population standard deviation over `latents`.
    pub fn fit_static(latents: &[LatentTensor], levels: usize) -> Result<Self> {
        let first = latents
            .first()
            .ok_or_else(|| Error::InvalidConfig("no latents to fit".into()))?;
        let c = first.channels;
        let mut sum = vec![0.0; c];
        let mut sum_sq = vec![0.0; c];
        let mut count = vec![0usize; c];
        for y in latents {
            if y.channels != c {
                return Err(Error::DimensionMismatch("latents differ in channel count".into()));
            }
            let plane = y.height * y.width;
            for (i, &v) in y.values.iter().enumerate() {
                let ch = i / plane;
                sum[ch] += v as f64;
                sum_sq[ch] += (v as f64) * (v as f64);
                count[ch] += 1;
            }
        }
        let mu: Vec<f64> = (0..c).map(|i| sum[i] / count[i].max(1) as f64).collect();
        let sigma = (0..c)
            .map(|i| {
                let var = sum_sq[i] / count[i].max(1) as f64 - mu[i] * mu[i];
                var.max(0.0).sqrt().max(SIGMA_FLOOR)
            })
            .collect();
        Self::new_static(levels, mu, sigma)
    }

    pub fn partition(&self) -> Result<LevelPartition> {
        partition_levels(self.channels, self.levels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported context model version {}",
                self.version
            )));
        }
        let part = self.partition()?;
        QuantizedGaussian::new(0.0, 1.0, self.symbol_min, self.symbol_max)?;
        if self.groups.len() != self.levels {
            return Err(Error::InvalidConfig(format!(
                "{} group models for {} levels",
                self.groups.len(),
                self.levels
            )));
        }
        let gs = part.group_size();
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        for (g, model) in self.groups.iter().enumerate() {
            let bad = |what: &str| Err(Error::InvalidConfig(format!("group {g}: {what}")));
            match model {
                GroupModel::Static { mu, sigma } => {
                    if mu.len() != gs || sigma.len() != gs {
                        return bad("static tables must have one entry per channel");
                    }
                    if !finite(mu) || !sigma.iter().all(|s| s.is_finite() && *s > 0.0) {
                        return bad("static tables must be finite with positive sigma");
                    }
                }
                GroupModel::Linear {
                    bias_mu,
                    bias_log_sigma,
                    weights_mu,
                    weights_log_sigma,
                } => {
                    let span = part.group(g).end * WINDOW_AREA;
                    if bias_mu.len() != gs
                        || bias_log_sigma.len() != gs
                        || weights_mu.len() != gs
                        || weights_log_sigma.len() != gs
                    {
                        return bad("linear tables must have one entry per channel");
                    }
                    if !finite(bias_mu) || !finite(bias_log_sigma) {
                        return bad("non-finite bias");
                    }
                    for (local, (wm, ws)) in weights_mu.iter().zip(weights_log_sigma).enumerate() {
                        if wm.len() != span || ws.len() != span || !finite(wm) || !finite(ws) {
                            return bad("weight vectors must cover channels 0..group_end x 25");
                        }
                        let dst = part.group(g).start + local;
                        for (i, (a, b)) in wm.iter().zip(ws).enumerate() {
                            let (src, k) = (i / WINDOW_AREA, i % WINDOW_AREA);
                            if (*a != 0.0 || *b != 0.0) && !mask_visible(&part, dst, src, k) {
                                return bad(&format!(
                                    "channel {dst} has weight on masked position (channel {src}, window {k})"
                                ));
                            }
                        }
                    }
                }
            }
        }
        if self.detail.mu.len() != self.channels || !finite(&self.detail.mu) {
            return Err(Error::InvalidConfig("detail table must have one entry per channel".into()));
        }
        if let Some(w) = &self.detail.weights {
            if w.len() != self.channels {
                return Err(Error::InvalidConfig("detail weights need one row per channel".into()));
            }
            for (c, row) in w.iter().enumerate() {
                let start = part.group(part.group_of(c)).start;
                if row.len() != self.channels || !finite(row) {
                    return Err(Error::InvalidConfig("detail weight rows must have C entries".into()));
                }
                if row[start..].iter().any(|&v| v != 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "detail channel {c} may only depend on earlier groups"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn check_latent(&self, latent: &LatentTensor) -> Result<()> {
        if latent.channels != self.channels {
            return Err(Error::DimensionMismatch(format!(
                "latent has {} channels, model expects {}",
                latent.channels, self.channels
            )));
        }
        Ok(())
    }

    fn gaussian(&self, p: GaussianParams) -> Result<QuantizedGaussian> {
        QuantizedGaussian::new(p.mu, p.sigma, self.symbol_min, self.symbol_max)
    }
}

/// Read access to a partially known latent.
trait Context {
    fn dims(&self) -> (usize, usize, usize);
    fn read(&self, c: usize, h: usize, w: usize) -> Result<i32>;
}

impl Context for LatentTensor {
    fn dims(&self) -> (usize, usize, usize) {
        LatentTensor::dims(self)
    }

    fn read(&self, c: usize, h: usize, w: usize) -> Result<i32> {
        Ok(self.get(c, h, w))
    }
}

/// Latent under decoding; reading a position before it is decoded faults.
#[derive(Debug, Clone)]
pub struct Tripwire {
    latent: LatentTensor,
    decoded: Vec<bool>,
}

impl Tripwire {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            latent: LatentTensor::zeros(channels, height, width),
            decoded: vec![false; channels * height * width],
        }
    }

    pub fn write(&mut self, c: usize, h: usize, w: usize, v: i32) {
        let i = self.latent.index(c, h, w);
        self.latent.values[i] = v;
        self.decoded[i] = true;
    }

    pub fn into_latent(self) -> LatentTensor {
        self.latent
    }
}

impl Context for Tripwire {
    fn dims(&self) -> (usize, usize, usize) {
        self.latent.dims()
    }

    fn read(&self, c: usize, h: usize, w: usize) -> Result<i32> {
        let i = self.latent.index(c, h, w);
        if !self.decoded[i] {
            return Err(Error::ContextViolation { c, h, w });
        }
        Ok(self.latent.values[i])
    }
}

fn linear_term<X: Context>(src: &X, weights: &[f64], h: usize, w: usize) -> Result<f64> {
    let (_, height, width) = src.dims();
    let mut acc = 0.0;
    for (i, &wt) in weights.iter().enumerate() {
        if wt == 0.0 {
            continue;
        }
        let (dy, dx) = window_offset(i % WINDOW_AREA);
        let (y, x) = (h as isize + dy, w as isize + dx);
        // outside the latent reads as zero
        if y < 0 || x < 0 || y >= height as isize || x >= width as isize {
            continue;
        }
        acc += wt * src.read(i / WINDOW_AREA, y as usize, x as usize)? as f64;
    }
    Ok(acc)
}

fn predict<X: Context>(
    src: &X,
    part: &LevelPartition,
    model: &ContextModel,
    (c, h, w): (usize, usize, usize),
) -> Result<GaussianParams> {
    let g = part.group_of(c);
    let local = c - part.group(g).start;
    match &model.groups[g] {
        GroupModel::Static { mu, sigma } => Ok(GaussianParams {
            mu: mu[local],
            sigma: sigma[local].max(SIGMA_FLOOR),
        }),
        GroupModel::Linear {
            bias_mu,
            bias_log_sigma,
            weights_mu,
            weights_log_sigma,
        } => {
            let mu = bias_mu[local] + linear_term(src, &weights_mu[local], h, w)?;
            let log_sigma = bias_log_sigma[local] + linear_term(src, &weights_log_sigma[local], h, w)?;
            Ok(GaussianParams {
                mu,
                sigma: log_sigma.exp().max(SIGMA_FLOOR),
            })
        }
    }
}

/// Entropy-model parameters for `position = (c, h, w)`, reading only
/// mask-visible values of `latent`.
pub fn context_predict(
    latent: &LatentTensor,
    position: (usize, usize, usize),
    model: &ContextModel,
) -> Result<GaussianParams> {
    model.check_latent(latent)?;
    let (c, h, w) = position;
    let (cc, hh, ww) = latent.dims();
    if c >= cc || h >= hh || w >= ww {
        return Err(Error::IndexOutOfRange {
            index: latent.index(c.min(cc), h.min(hh), w.min(ww)),
            len: latent.values.len(),
        });
    }
    predict(latent, &model.partition()?, model, position)
}

/// Frequency tables keyed on exact `(μ, σ)` bits.
struct TableCache<'a> {
    model: &'a ContextModel,
    tables: HashMap<(u64, u64), FrequencyTable>,
}

impl<'a> TableCache<'a> {
    fn new(model: &'a ContextModel) -> Self {
        Self {
            model,
            tables: HashMap::new(),
        }
    }

    fn get(&mut self, p: GaussianParams) -> Result<&FrequencyTable> {
        let key = (p.mu.to_bits(), p.sigma.to_bits());
        if !self.tables.contains_key(&key) {
            let table = self.model.gaussian(p)?.table();
            self.tables.insert(key, table);
        }
        Ok(&self.tables[&key])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SicHeader {
    pub version: u8,
    pub rng_id: u8,
    pub channels: u16,
    pub height: u16,
    pub width: u16,
    pub levels: u8,
    pub coded_levels: u8,
    pub seed: u64,
}

impl SicHeader {
    pub fn partition(&self) -> Result<LevelPartition> {
        partition_levels(self.channels as usize, self.levels as usize)
    }

    pub fn group_size(&self) -> Result<usize> {
        Ok(self.partition()?.group_size())
    }

    pub fn to_bytes(&self) -> [u8; HEADER_BYTES] {
        let mut out = [0u8; HEADER_BYTES];
        out[..4].copy_from_slice(MAGIC);
        out[4] = self.version;
        out[5] = self.rng_id;
        out[6..8].copy_from_slice(&self.channels.to_le_bytes());
        out[8..10].copy_from_slice(&self.height.to_le_bytes());
        out[10..12].copy_from_slice(&self.width.to_le_bytes());
        out[12] = self.levels;
        out[13] = self.coded_levels;
        out[14..22].copy_from_slice(&self.seed.to_le_bytes());
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated);
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER_BYTES {
            return Err(Error::Truncated);
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let header = Self {
            version: bytes[4],
            rng_id: bytes[5],
            channels: u16_at(6),
            height: u16_at(8),
            width: u16_at(10),
            levels: bytes[12],
            coded_levels: bytes[13],
            seed: u64::from_le_bytes(bytes[14..22].try_into().expect("8 bytes")),
        };
        if header.version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(header.version));
        }
        if header.rng_id != RNG_SPLITMIX64_CHAIN {
            return Err(Error::UnsupportedRng(header.rng_id));
        }
        header
            .partition()
            .map_err(|e| Error::Corrupt(format!("header: {e}")))?;
        if header.coded_levels == 0 || header.coded_levels > header.levels {
            return Err(Error::Corrupt(format!(
                "{} coded levels out of {}",
                header.coded_levels, header.levels
            )));
        }
        Ok(header)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SicBitstream {
    pub header: SicHeader,
    /// One range-coded payload per coded level.
    pub segments: Vec<Vec<u8>>,
}

impl SicBitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.to_bytes().to_vec();
        for seg in &self.segments {
            out.extend_from_slice(&(seg.len() as u32).to_le_bytes());
            out.extend_from_slice(seg);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = SicHeader::parse(bytes)?;
        if bytes.len() < HEADER_BYTES + 4 {
            return Err(Error::Truncated);
        }
        let body_end = bytes.len() - 4;
        let mut at = HEADER_BYTES;
        let mut segments = Vec::with_capacity(header.coded_levels as usize);
        for _ in 0..header.coded_levels {
            if at + 4 > body_end {
                return Err(Error::Truncated);
            }
            let len = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
            at += 4;
            if len > body_end - at {
                return Err(Error::Truncated);
            }
            segments.push(bytes[at..at + len].to_vec());
            at += len;
        }
        if at != body_end {
            return Err(Error::Corrupt(format!(
                "{} unexpected bytes after the last segment",
                body_end - at
            )));
        }
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::CrcMismatch { stored, computed });
        }
        Ok(Self { header, segments })
    }

    /// The stream a direct `levels`-level encode would produce.
    pub fn truncated(&self, levels: usize) -> Result<Self> {
        if levels == 0 || levels > self.segments.len() {
            return Err(Error::IndexOutOfRange {
                index: levels,
                len: self.segments.len(),
            });
        }
        Ok(Self {
            header: SicHeader {
                coded_levels: levels as u8,
                ..self.header
            },
            segments: self.segments[..levels].to_vec(),
        })
    }

    /// Bits in the segment payloads, excluding framing.
    pub fn payload_bits(&self) -> usize {
        self.segments.iter().map(|s| s.len() * 8).sum()
    }
}

fn check_levels(levels: usize, part: &LevelPartition) -> Result<()> {
    if levels == 0 || levels > part.levels() {
        return Err(Error::InvalidConfig(format!(
            "coded levels must lie in 1..={}, got {levels}",
            part.levels()
        )));
    }
    Ok(())
}

fn positions(part: &LevelPartition, g: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    part.group(g)
        .flat_map(move |c| (0..h).flat_map(move |y| (0..w).map(move |x| (c, y, x))))
}

fn prepare(latent: &LatentTensor, levels: usize, model: &ContextModel) -> Result<LevelPartition> {
    model.validate()?;
    model.check_latent(latent)?;
    let part = model.partition()?;
    check_levels(levels, &part)?;
    Ok(part)
}

fn out_of_range(latent: &LatentTensor, c: usize, h: usize, w: usize, model: &ContextModel) -> Error {
    Error::SymbolOutOfRange {
        position: latent.index(c, h, w),
        symbol: latent.get(c, h, w),
        min: model.symbol_min,
        max: model.symbol_max,
    }
}

/// Codes groups `1..=levels` of `latent`, one independently flushed segment
/// each, channels in order and raster order within a channel.
pub fn encode_progressive(
    latent: &LatentTensor,
    levels: usize,
    model: &ContextModel,
    seed: u64,
) -> Result<SicBitstream> {
    let part = prepare(latent, levels, model)?;
    let (c, h, w) = latent.dims();
    let dims = [c, h, w].map(|v| u16::try_from(v).ok());
    let [Some(c16), Some(h16), Some(w16)] = dims else {
        return Err(Error::DimensionMismatch("latent dimensions must fit in 16 bits".into()));
    };
    let (Ok(l8), Ok(coded8)) = (u8::try_from(part.levels()), u8::try_from(levels)) else {
        return Err(Error::InvalidConfig("at most 255 levels".into()));
    };
    let mut cache = TableCache::new(model);
    let mut segments = Vec::with_capacity(levels);
    for g in 0..levels {
        let mut enc = RangeEncoder::new();
        for pos @ (cc, y, x) in positions(&part, g, h, w) {
            let params = predict(latent, &part, model, pos)?;
            let table = cache.get(params)?;
            enc.encode_symbol(table, latent.get(cc, y, x))
                .ok_or_else(|| out_of_range(latent, cc, y, x, model))?;
        }
        segments.push(enc.finish());
    }
    Ok(SicBitstream {
        header: SicHeader {
            version: FORMAT_VERSION,
            rng_id: RNG_SPLITMIX64_CHAIN,
            channels: c16,
            height: h16,
            width: w16,
            levels: l8,
            coded_levels: coded8,
            seed,
        },
        segments,
    })
}

/// `Σ −log2 P(symbol)` over the coded groups under the coder's quantized
/// frequencies.
pub fn estimate_rate(latent: &LatentTensor, levels: usize, model: &ContextModel) -> Result<f64> {
    let part = prepare(latent, levels, model)?;
    let (_, h, w) = latent.dims();
    let mut cache = TableCache::new(model);
    let mut bits = 0.0;
    for g in 0..levels {
        for pos @ (c, y, x) in positions(&part, g, h, w) {
            let params = predict(latent, &part, model, pos)?;
            bits += cache
                .get(params)?
                .codelength(latent.get(c, y, x))
                .ok_or_else(|| out_of_range(latent, c, y, x, model))?;
        }
    }
    Ok(bits)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutput {
    /// Sample `j` (1-based) is at index `j − 1`.
    pub samples: Vec<LatentTensor>,
    pub coded_levels: usize,
}

/// Decodes the coded groups once, then fills the remaining groups for each
/// of `samples` draws `j = 1..=samples`.
pub fn decode_progressive(
    stream: &SicBitstream,
    model: &ContextModel,
    samples: usize,
) -> Result<DecodeOutput> {
    let coded = decode_coded(stream, model)?;
    if samples == 0 {
        return Err(Error::InvalidConfig("at least one sample is required".into()));
    }
    let levels = stream.header.coded_levels as usize;
    let samples = (1..=samples as u64)
        .map(|j| fill_details(&coded, levels, model, stream.header.seed, j))
        .collect::<Result<Vec<_>>>()?;
    Ok(DecodeOutput {
        samples,
        coded_levels: levels,
    })
}

/// Decodes the synonymous groups; uncoded groups are left at zero.
pub fn decode_coded(stream: &SicBitstream, model: &ContextModel) -> Result<LatentTensor> {
    model.validate()?;
    let head = &stream.header;
    if head.channels as usize != model.channels || head.levels as usize != model.levels {
        return Err(Error::DimensionMismatch(format!(
            "stream has {} channels in {} levels, model has {} in {}",
            head.channels, head.levels, model.channels, model.levels
        )));
    }
    if stream.segments.len() != head.coded_levels as usize {
        return Err(Error::Corrupt("segment count disagrees with the header".into()));
    }
    let part = model.partition()?;
    let (c, h, w) = (head.channels as usize, head.height as usize, head.width as usize);
    let mut latent = Tripwire::new(c, h, w);
    let mut cache = TableCache::new(model);
    for (g, seg) in stream.segments.iter().enumerate() {
        let mut dec = RangeDecoder::new(seg)?;
        for pos @ (cc, y, x) in positions(&part, g, h, w) {
            let params = predict(&latent, &part, model, pos)?;
            let v = dec.decode_symbol(cache.get(params)?)?;
            latent.write(cc, y, x, v);
        }
        dec.finish()?;
    }
    Ok(latent.into_latent())
}

/// Detail mean of every position in groups past `coded_levels`.
pub fn detail_means(latent: &LatentTensor, coded_levels: usize, model: &ContextModel) -> Result<Vec<f64>> {
    model.check_latent(latent)?;
    let part = model.partition()?;
    let (c, h, w) = latent.dims();
    if coded_levels > part.levels() {
        return Err(Error::IndexOutOfRange {
            index: coded_levels,
            len: part.levels(),
        });
    }
    let coded_end = coded_levels * part.group_size();
    let mut out = Vec::with_capacity((c - coded_end) * h * w);
    for ch in coded_end..c {
        for y in 0..h {
            for x in 0..w {
                let mut mu = model.detail.mu[ch];
                if let Some(rows) = &model.detail.weights {
                    mu += rows[ch][..coded_end]
                        .iter()
                        .enumerate()
                        .filter(|(_, wt)| **wt != 0.0)
                        .map(|(src, wt)| wt * latent.get(src, y, x) as f64)
                        .sum::<f64>();
                }
                out.push(mu);
            }
        }
    }
    Ok(out)
}

fn fill_details(
    coded: &LatentTensor,
    coded_levels: usize,
    model: &ContextModel,
    seed: u64,
    j: u64,
) -> Result<LatentTensor> {
    let part = model.partition()?;
    let (c, h, w) = coded.dims();
    let means = detail_means(coded, coded_levels, model)?;
    let mut out = coded.clone();
    let start = coded_levels * part.group_size();
    let mut it = means.into_iter();
    for ch in start..c {
        let level = part.group_of(ch) as u64 + 1;
        for y in 0..h {
            for x in 0..w {
                let mu = it.next().expect("one mean per detail position");
                let v = sample_detail(mu, seed, level, (ch, y, x), j);
                out.set(ch, y, x, v.clamp(model.symbol_min, model.symbol_max));
            }
        }
    }
    Ok(out)
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit hash of `(seed, level, c, h, w, j)` by chained SplitMix64 rounds.
pub fn detail_hash(seed: u64, level: u64, (c, h, w): (usize, usize, usize), j: u64) -> u64 {
    [level, c as u64, h as u64, w as u64, j]
        .iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ k))
}

/// Uniform draw on `[−2, 2)` from the top 53 bits of [`detail_hash`].
pub fn detail_uniform(seed: u64, level: u64, position: (usize, usize, usize), j: u64) -> f64 {
    let unit = (detail_hash(seed, level, position, j) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    DETAIL_HALF_WIDTH * (2.0 * unit - 1.0)
}

/// `round_half_away(μ_ε + u)` with `u` from [`detail_uniform`]; `level` is
/// 1-based.
pub fn sample_detail(mu: f64, seed: u64, level: u64, position: (usize, usize, usize), j: u64) -> i32 {
    round_half_away(mu + detail_uniform(seed, level, position, j)) as i32
}

/// [`sample_detail`] over a field of means laid out like a latent slice
/// starting at channel `first_channel`.
pub fn sample_details(
    mu: &[f64],
    dims: (usize, usize, usize),
    first_channel: usize,
    seed: u64,
    level: u64,
    j: u64,
) -> Result<Vec<i32>> {
    let (c, h, w) = dims;
    if mu.len() != c * h * w {
        return Err(Error::DimensionMismatch("mean field size".into()));
    }
    Ok(mu
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let pos = (first_channel + i / (h * w), (i / w) % h, i % w);
            sample_detail(m, seed, level, pos, j)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_model(c: usize, l: usize) -> ContextModel {
        ContextModel::new_static(l, vec![0.0; c], vec![2.0; c]).unwrap()
    }

    fn lcg_latent(c: usize, h: usize, w: usize, seed: u64) -> LatentTensor {
        let mut s = seed;
        let values = (0..c * h * w)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) % 9) as i32 - 4
            })
            .collect();
        LatentTensor::new(c, h, w, values).unwrap()
    }

    /// Linear model whose every visible weight is non-zero.
    fn dense_linear(c: usize, l: usize, scale: f64) -> ContextModel {
        let part = partition_levels(c, l).unwrap();
        let groups = (0..l)
            .map(|g| {
                let span = part.group(g).end * WINDOW_AREA;
                let rows = |s: f64| {
                    part.group(g)
                        .map(|dst| {
                            (0..span)
                                .map(|i| {
                                    if mask_visible(&part, dst, i / WINDOW_AREA, i % WINDOW_AREA) {
                                        s * (1.0 + (i % 7) as f64) / 7.0
                                    } else {
                                        0.0
                                    }
                                })
                                .collect()
                        })
                        .collect()
                };
                GroupModel::Linear {
                    bias_mu: vec![0.25; part.group_size()],
                    bias_log_sigma: vec![0.5; part.group_size()],
                    weights_mu: rows(scale),
                    weights_log_sigma: rows(scale / 10.0),
                }
            })
            .collect();
        let m = ContextModel {
            version: MODEL_VERSION,
            channels: c,
            levels: l,
            symbol_min: DEFAULT_SYMBOL_MIN,
            symbol_max: DEFAULT_SYMBOL_MAX,
            groups,
            detail: DetailModel {
                mu: vec![0.0; c],
                weights: None,
            },
        };
        m.validate().unwrap();
        m
    }

    #[test]
    fn partition_examples() {
        let p = partition_levels(512, 16).unwrap();
        assert_eq!((p.levels(), p.group_size()), (16, 32));
        assert_eq!(p.group(1), 32..64);
        assert_eq!(partition_levels(4, 4).unwrap().group_size(), 1);
        assert!(partition_levels(10, 3).is_err());
        assert!(partition_levels(2, 4).is_err());
        assert!(partition_levels(4, 0).is_err());
    }

    #[test]
    fn mask_layout() {
        let p = partition_levels(4, 2).unwrap();
        // earlier group: whole window
        assert!(mask_visible(&p, 2, 1, 24));
        // own group: causal half only, earlier-or-same channel
        assert!(mask_visible(&p, 3, 2, 11));
        assert!(!mask_visible(&p, 3, 2, 12));
        assert!(!mask_visible(&p, 2, 3, 0));
        assert_eq!(window_offset(0), (-2, -2));
        assert_eq!(window_offset(12), (0, 0));
    }

    #[test]
    fn static_prediction_ignores_neighbours() {
        let m = ContextModel::new_static(2, vec![1.0, -1.0], vec![3.0, 0.01]).unwrap();
        let y = lcg_latent(2, 4, 4, 1);
        let p = context_predict(&y, (1, 2, 2), &m).unwrap();
        assert_eq!((p.mu, p.sigma), (-1.0, SIGMA_FLOOR));
        assert!(context_predict(&y, (2, 0, 0), &m).is_err());
    }

    #[test]
    fn linear_bias_only_on_zero_neighbourhood() {
        let m = dense_linear(4, 2, 1.0);
        let p = context_predict(&LatentTensor::zeros(4, 5, 5), (3, 2, 2), &m).unwrap();
        assert_eq!(p.mu, 0.25);
        assert_eq!(p.sigma, 0.5f64.exp());
    }

    #[test]
    fn validation_rejects_masked_weight() {
        let mut m = dense_linear(4, 2, 1.0);
        if let GroupModel::Linear { weights_mu, .. } = &mut m.groups[1] {
            weights_mu[0][2 * WINDOW_AREA + 12] = 1.0;
        }
        assert!(m.validate().is_err());
    }

    #[test]
    fn tripwire_catches_unmasked_read() {
        let mut m = dense_linear(2, 1, 1.0);
        // bypass validation: the centre itself is never decoded in time
        if let GroupModel::Linear { weights_mu, .. } = &mut m.groups[0] {
            weights_mu[0][12] = 1.0;
        }
        let part = m.partition().unwrap();
        let mut t = Tripwire::new(2, 3, 3);
        for (y, x) in [(0, 0), (0, 1), (0, 2), (1, 0)] {
            t.write(0, y, x, 1);
        }
        assert!(matches!(
            predict(&t, &part, &m, (0, 1, 1)),
            Err(Error::ContextViolation { c: 0, h: 1, w: 1 })
        ));
    }

    #[test]
    fn zero_latent_roundtrip() {
        let m = static_model(4, 4);
        let y = LatentTensor::zeros(4, 3, 5);
        let s = encode_progressive(&y, 1, &m, 0).unwrap();
        assert_eq!(s.segments.len(), 1);
        let back = decode_coded(&SicBitstream::from_bytes(&s.to_bytes()).unwrap(), &m).unwrap();
        assert_eq!(back.channel_values(0..1), y.channel_values(0..1));
    }

    #[test]
    fn linear_roundtrip_and_prefix() {
        let m = dense_linear(4, 2, 0.05);
        let y = lcg_latent(4, 6, 7, 9);
        let full = encode_progressive(&y, 2, &m, 3).unwrap();
        let out = decode_progressive(&full, &m, 1).unwrap();
        assert_eq!(out.samples[0], y);
        let one = encode_progressive(&y, 1, &m, 3).unwrap();
        assert_eq!(full.truncated(1).unwrap().to_bytes(), one.to_bytes());
    }

    #[test]
    fn header_roundtrip_and_errors() {
        let m = static_model(4, 2);
        let y = lcg_latent(4, 2, 2, 5);
        let bytes = encode_progressive(&y, 2, &m, 42).unwrap().to_bytes();
        let s = SicBitstream::from_bytes(&bytes).unwrap();
        assert_eq!(s.header.seed, 42);
        assert_eq!(s.header.coded_levels, 2);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(SicBitstream::from_bytes(&bad), Err(Error::BadMagic)));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(SicBitstream::from_bytes(&bad), Err(Error::UnsupportedVersion(9))));
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 6] ^= 1;
        assert!(matches!(SicBitstream::from_bytes(&bad), Err(Error::CrcMismatch { .. })));
        assert!(matches!(
            SicBitstream::from_bytes(&bytes[..bytes.len() - 8]),
            Err(Error::Truncated)
        ));
    }

    #[test]
    fn large_header_group_size() {
        let h = SicHeader {
            version: 1,
            rng_id: 1,
            channels: 512,
            height: 16,
            width: 16,
            levels: 16,
            coded_levels: 1,
            seed: 0,
        };
        let parsed = SicHeader::parse(&h.to_bytes()).unwrap();
        assert_eq!(parsed.group_size().unwrap(), 32);
    }

    #[test]
    fn rejects_bad_level_counts_and_symbols() {
        let m = static_model(4, 2);
        let mut y = LatentTensor::zeros(4, 2, 2);
        assert!(encode_progressive(&y, 0, &m, 0).is_err());
        assert!(encode_progressive(&y, 3, &m, 0).is_err());
        assert!(estimate_rate(&y, 0, &m).is_err());
        y.set(1, 1, 0, 500);
        assert!(matches!(
            encode_progressive(&y, 1, &m, 0),
            Err(Error::SymbolOutOfRange { symbol: 500, .. })
        ));
        // only coded groups must be in range
        assert!(encode_progressive(&LatentTensor::zeros(2, 2, 2), 1, &static_model(2, 1), 0).is_ok());
        assert!(encode_progressive(&LatentTensor::zeros(3, 2, 2), 1, &m, 0).is_err());
    }

    #[test]
    fn half_probability_symbols_cost_one_bit() {
        let mut m = ContextModel::new_static(1, vec![0.5], vec![0.5]).unwrap();
        m.symbol_min = 0;
        m.symbol_max = 1;
        let y = LatentTensor::new(1, 1, 10, vec![0, 1, 1, 0, 1, 0, 0, 0, 1, 1]).unwrap();
        assert_eq!(estimate_rate(&y, 1, &m).unwrap(), 10.0);
    }

    #[test]
    fn detail_draws() {
        assert_eq!(sample_detail(0.0, 1, 2, (3, 4, 5), 1), sample_detail(0.0, 1, 2, (3, 4, 5), 1));
        for j in 1..200 {
            let u = detail_uniform(7, 1, (0, 0, 0), j);
            assert!((-2.0..2.0).contains(&u));
            let v = sample_detail(0.3, 7, 1, (0, 0, 0), j);
            assert!((-2..=2).contains(&v));
        }
        assert_ne!(detail_hash(0, 1, (0, 0, 0), 1), detail_hash(0, 1, (0, 0, 0), 2));
        let field = sample_details(&[0.0; 8], (2, 2, 2), 4, 0, 3, 1).unwrap();
        assert_eq!(field[5], sample_detail(0.0, 0, 3, (5, 0, 1), 1));
    }

    #[test]
    fn detail_weights_use_coded_channels() {
        let mut m = static_model(4, 2);
        m.detail.weights = Some(vec![
            vec![0.0; 4],
            vec![0.0; 4],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0, 0.0],
        ]);
        m.validate().unwrap();
        let mut y = LatentTensor::zeros(4, 1, 1);
        y.set(0, 0, 0, 3);
        y.set(1, 0, 0, -1);
        assert_eq!(detail_means(&y, 1, &m).unwrap(), vec![3.0, -2.0]);
        m.detail.weights.as_mut().unwrap()[2][2] = 1.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn model_json_roundtrip() {
        let m = dense_linear(4, 2, 0.1);
        let back = ContextModel::from_json(&m.to_json().unwrap()).unwrap();
        assert!(back == m);
        let s = static_model(2, 1).to_json().unwrap();
        assert!(s.contains("\"mode\": \"static\""));
    }
}
