//! Quantized-Gaussian symbol models and a byte-oriented range coder.
//!
//! The coder keeps a 33-bit `low` and 32-bit `range`, emits bytes with
//! carry propagation through a one-byte cache, and works with 16-bit
//! frequency tables. The exact state machine is frozen in `docs/format.md`;
//! any change here changes the bitstream.

use crate::error::{Error, Result};

/// Smallest admissible scale of a [`QuantizedGaussian`].
pub const SIGMA_FLOOR: f64 = 0.11;
pub const FREQ_BITS: u32 = 16;
pub const FREQ_TOTAL: u32 = 1 << FREQ_BITS;
/// Every symbol in range gets at least this probability (one frequency unit).
pub const PROB_FLOOR: f64 = 1.0 / FREQ_TOTAL as f64;
pub const DEFAULT_SYMBOL_MIN: i32 = -127;
pub const DEFAULT_SYMBOL_MAX: i32 = 127;
/// Bytes a stream holds before any symbol is coded.
pub const FLUSH_BYTES: usize = 4;

const TOP: u32 = 1 << 24;

/// Standard normal CDF through the fdlibm `erfc` rational approximation
/// (`libm` crate, bit-identical on every platform).
pub fn normal_cdf(x: f64) -> f64 {
    upper_tail(-x)
}

fn upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Integer-binned Gaussian on `[symbol_min, symbol_max]`, renormalized to the
/// range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizedGaussian {
    mu: f64,
    sigma: f64,
    symbol_min: i32,
    symbol_max: i32,
}

impl QuantizedGaussian {
    /// `sigma` below [`SIGMA_FLOOR`] is raised to the floor.
    pub fn new(mu: f64, sigma: f64, symbol_min: i32, symbol_max: i32) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "non-finite model parameters mu={mu}, sigma={sigma}"
            )));
        }
        if symbol_min >= symbol_max {
            return Err(Error::InvalidConfig(format!(
                "empty symbol range [{symbol_min}, {symbol_max}]"
            )));
        }
        let span = (symbol_max as i64 - symbol_min as i64 + 1) as u64;
        if span > (FREQ_TOTAL / 2) as u64 {
            return Err(Error::InvalidConfig(format!(
                "symbol range of {span} values does not fit the frequency precision"
            )));
        }
        Ok(Self {
            mu,
            sigma: sigma.max(SIGMA_FLOOR),
            symbol_min,
            symbol_max,
        })
    }

    pub fn with_default_range(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(mu, sigma, DEFAULT_SYMBOL_MIN, DEFAULT_SYMBOL_MAX)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn symbol_min(&self) -> i32 {
        self.symbol_min
    }

    pub fn symbol_max(&self) -> i32 {
        self.symbol_max
    }

    fn num_symbols(&self) -> usize {
        (self.symbol_max - self.symbol_min + 1) as usize
    }

    fn check(&self, n: i32) -> Result<usize> {
        if n < self.symbol_min || n > self.symbol_max {
            return Err(Error::SymbolOutOfRange {
                position: 0,
                symbol: n,
                min: self.symbol_min,
                max: self.symbol_max,
            });
        }
        Ok((n - self.symbol_min) as usize)
    }

    /// Bin masses before flooring, summing to one up to rounding.
    ///
    /// Each bin is evaluated on the side of zero it lies on, through the upper
    /// tail `Q(z) = P(Z > z)`, so mirrored bins of a zero-mean model get
    /// bit-identical masses. If every bin underflows (a mean far outside the
    /// range), the tails are folded into the boundary symbols instead.
    pub fn raw_pmf_table(&self) -> Vec<f64> {
        let interior = self.bin_masses(false);
        let total: f64 = interior.iter().sum();
        if total > 0.0 {
            return interior.into_iter().map(|m| m / total).collect();
        }
        self.bin_masses(true)
    }

    fn bin_masses(&self, fold_tails: bool) -> Vec<f64> {
        let n = self.num_symbols();
        let z = |i: usize| (self.symbol_min as f64 + i as f64 - 0.5 - self.mu) / self.sigma;
        (0..n)
            .map(|i| {
                let a = if fold_tails && i == 0 { f64::NEG_INFINITY } else { z(i) };
                let b = if fold_tails && i == n - 1 { f64::INFINITY } else { z(i + 1) };
                if a >= 0.0 {
                    upper_tail(a) - upper_tail(b)
                } else if b <= 0.0 {
                    upper_tail(-b) - upper_tail(-a)
                } else {
                    1.0 - upper_tail(-a) - upper_tail(b)
                }
            })
            .collect()
    }

    /// `P(n)` before flooring: `Φ((n+½−μ)/σ) − Φ((n−½−μ)/σ)` over the range total.
    pub fn raw_pmf(&self, n: i32) -> Result<f64> {
        let i = self.check(n)?;
        Ok(self.raw_pmf_table()[i])
    }

    pub fn table(&self) -> FrequencyTable {
        FrequencyTable::from_masses(self.symbol_min, &self.raw_pmf_table())
    }

    /// Coded probability of `n`: the quantized frequency over [`FREQ_TOTAL`].
    pub fn pmf(&self, n: i32) -> Result<f64> {
        let i = self.check(n)?;
        Ok(self.table().freqs[i] as f64 / FREQ_TOTAL as f64)
    }
}

/// Integer frequencies summing to [`FREQ_TOTAL`], each at least one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    symbol_min: i32,
    freqs: Vec<u32>,
    cum: Vec<u32>,
}

impl FrequencyTable {
    /// Each symbol gets `1 + floor(mass · (TOTAL − N))`; what is left over goes
    /// to the most frequent symbol (lowest index on ties).
    pub fn from_masses(symbol_min: i32, masses: &[f64]) -> Self {
        let n = masses.len() as u32;
        let avail = (FREQ_TOTAL - n) as f64;
        let mut freqs: Vec<u32> = masses
            .iter()
            .map(|&m| 1 + (m.clamp(0.0, 1.0) * avail).floor() as u32)
            .collect();
        let used: i64 = freqs.iter().map(|&f| f as i64).sum();
        let mode = freqs
            .iter()
            .enumerate()
            .fold(0, |best, (i, &f)| if f > freqs[best] { i } else { best });
        let fixed = freqs[mode] as i64 + FREQ_TOTAL as i64 - used;
        freqs[mode] = fixed.max(1) as u32;
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0;
        cum.push(0);
        for &f in &freqs {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, FREQ_TOTAL);
        Self {
            symbol_min,
            freqs,
            cum,
        }
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn symbol_min(&self) -> i32 {
        self.symbol_min
    }

    pub fn symbol_max(&self) -> i32 {
        self.symbol_min + self.freqs.len() as i32 - 1
    }

    fn index(&self, symbol: i32) -> Option<usize> {
        let i = symbol as i64 - self.symbol_min as i64;
        (0..self.freqs.len() as i64).contains(&i).then_some(i as usize)
    }

    /// `−log2 P(symbol)` under the quantized frequencies.
    pub fn codelength(&self, symbol: i32) -> Option<f64> {
        self.index(symbol)
            .map(|i| FREQ_BITS as f64 - (self.freqs[i] as f64).log2())
    }

    fn lookup(&self, target: u32) -> usize {
        self.cum.partition_point(|&c| c <= target) - 1
    }
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
    // the first byte out of the cache is always zero and is not stored
    skip_first: bool,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
            skip_first: true,
        }
    }

    fn emit(&mut self, byte: u8) {
        if self.skip_first {
            self.skip_first = false;
        } else {
            self.out.push(byte);
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || self.low >> 32 != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.emit(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn encode(&mut self, cum: u32, freq: u32) {
        let r = self.range >> FREQ_BITS;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode_symbol(&mut self, table: &FrequencyTable, symbol: i32) -> Option<()> {
        let i = table.index(symbol)?;
        self.encode(table.cum[i], table.freqs[i]);
        Some(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        if data.len() < FLUSH_BYTES {
            return Err(Error::Truncated);
        }
        let code = u32::from_be_bytes([data[0], data[1], data[2], data[3]]);
        Ok(Self {
            data,
            pos: FLUSH_BYTES,
            code,
            range: u32::MAX,
        })
    }

    pub fn decode_symbol(&mut self, table: &FrequencyTable) -> Result<i32> {
        let r = self.range >> FREQ_BITS;
        let target = self.code / r;
        if target >= FREQ_TOTAL {
            return Err(Error::Corrupt("code value outside the coding interval".into()));
        }
        let i = table.lookup(target);
        self.code -= r * table.cum[i];
        self.range = r * table.freqs[i];
        while self.range < TOP {
            let byte = *self.data.get(self.pos).ok_or(Error::Truncated)?;
            self.pos += 1;
            self.code = (self.code << 8) | byte as u32;
            self.range <<= 8;
        }
        Ok(table.symbol_min + i as i32)
    }

    /// A well-formed stream is consumed exactly and leaves a zero residual.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Corrupt(format!(
                "{} unread bytes after the last symbol",
                self.data.len() - self.pos
            )));
        }
        if self.code != 0 {
            return Err(Error::Corrupt("non-zero residual after the last symbol".into()));
        }
        Ok(())
    }
}

/// Bytes of one independently flushed range-coder stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeCoderStream {
    bytes: Vec<u8>,
}

impl RangeCoderStream {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len_bits(&self) -> usize {
        self.bytes.len() * 8
    }
}

pub fn encode_symbols(symbols: &[i32], models: &[QuantizedGaussian]) -> Result<RangeCoderStream> {
    if symbols.len() != models.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} symbols for {} models",
            symbols.len(),
            models.len()
        )));
    }
    let mut enc = RangeEncoder::new();
    for (position, (&s, model)) in symbols.iter().zip(models).enumerate() {
        enc.encode_symbol(&model.table(), s)
            .ok_or(Error::SymbolOutOfRange {
                position,
                symbol: s,
                min: model.symbol_min,
                max: model.symbol_max,
            })?;
    }
    Ok(RangeCoderStream::from_bytes(enc.finish()))
}

pub fn decode_symbols(stream: &RangeCoderStream, models: &[QuantizedGaussian]) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(stream.as_bytes())?;
    let out = models
        .iter()
        .map(|m| dec.decode_symbol(&m.table()))
        .collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}

/// `Σ −log2 P(symbol)` under the coded frequencies.
pub fn ideal_codelength(symbols: &[i32], models: &[QuantizedGaussian]) -> Result<f64> {
    symbols
        .iter()
        .zip(models)
        .enumerate()
        .map(|(position, (&s, m))| {
            m.table().codelength(s).ok_or(Error::SymbolOutOfRange {
                position,
                symbol: s,
                min: m.symbol_min,
                max: m.symbol_max,
            })
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn standard_normal_bin() {
        let g = QuantizedGaussian::with_default_range(0.0, 1.0).unwrap();
        // Φ(0.5) − Φ(−0.5) = erf(0.5/√2)
        assert_abs_diff_eq!(g.raw_pmf(0).unwrap(), 0.382_924_922_548_026, epsilon = 1e-9);
        assert_abs_diff_eq!(g.pmf(0).unwrap(), 0.382925, epsilon = 1e-2);
        assert!(g.raw_pmf(200).is_err());
    }

    #[test]
    fn cdf_reference_values() {
        // Φ from tabulated values
        for (x, phi) in [
            (0.0, 0.5),
            (1.0, 0.841_344_746_068_543),
            (-1.96, 0.024_997_895_148_220_4),
            (3.0, 0.998_650_101_968_370),
        ] {
            assert_abs_diff_eq!(normal_cdf(x), phi, epsilon = 1e-12);
        }
        assert_eq!(normal_cdf(0.0), 0.5);
    }

    #[test]
    fn table_is_normalized_and_floored() {
        for (mu, sigma) in [(0.0, 0.01), (3.3, 2.0), (-126.8, 40.0), (500.0, 1.0)] {
            let t = QuantizedGaussian::with_default_range(mu, sigma).unwrap().table();
            assert_eq!(t.freqs().iter().sum::<u32>(), FREQ_TOTAL);
            assert!(t.freqs().iter().all(|&f| f >= 1));
        }
        let g = QuantizedGaussian::with_default_range(0.0, 0.0).unwrap();
        assert_eq!(g.sigma(), SIGMA_FLOOR);
    }

    #[test]
    fn symmetric_around_zero_mean() {
        let t = QuantizedGaussian::with_default_range(0.0, 3.7).unwrap().table();
        let f = t.freqs();
        // remainder lands on the mode only
        for n in 1..=127usize {
            assert_eq!(f[127 + n], f[127 - n]);
        }
    }

    #[test]
    fn empty_stream_is_flush_only() {
        let s = encode_symbols(&[], &[]).unwrap();
        assert_eq!(s.as_bytes().len(), FLUSH_BYTES);
        assert_eq!(decode_symbols(&s, &[]).unwrap(), Vec::<i32>::new());
    }

    #[test]
    fn one_bit_symbol() {
        // range [0, 1] with μ = ½ splits the mass exactly in half
        let m = QuantizedGaussian::new(0.5, 3.0, 0, 1).unwrap();
        assert_eq!(m.pmf(0).unwrap(), 0.5);
        assert_eq!(ideal_codelength(&[1], &[m]).unwrap(), 1.0);
        let a = encode_symbols(&[0], &[m]).unwrap();
        let b = encode_symbols(&[1], &[m]).unwrap();
        assert_ne!(a, b);
        assert_eq!(decode_symbols(&a, &[m]).unwrap(), vec![0]);
        assert_eq!(decode_symbols(&b, &[m]).unwrap(), vec![1]);
    }

    #[test]
    fn out_of_range_symbol_names_position() {
        let m = QuantizedGaussian::with_default_range(0.0, 1.0).unwrap();
        let err = encode_symbols(&[0, 1, 128], &[m; 3]).unwrap_err();
        assert!(matches!(err, Error::SymbolOutOfRange { position: 2, symbol: 128, .. }));
    }

    #[test]
    fn model_count_mismatch_is_detected() {
        let m = QuantizedGaussian::with_default_range(0.0, 2.0).unwrap();
        let syms = [0, 1, -1, 2, 0, 0, 3];
        let s = encode_symbols(&syms, &[m; 7]).unwrap();
        assert!(decode_symbols(&s, &[m; 6]).is_err());
        assert!(decode_symbols(&s, &[m; 8]).is_err());
        assert!(encode_symbols(&syms, &[m; 6]).is_err());
    }

    #[test]
    fn carry_propagation_roundtrip() {
        // long runs of the most probable symbol push low towards 0xFF.. runs
        let hi = QuantizedGaussian::new(126.9, 0.11, -127, 127).unwrap();
        let lo = QuantizedGaussian::new(-126.9, 0.11, -127, 127).unwrap();
        let mut syms = Vec::new();
        let mut models = Vec::new();
        for i in 0..5000 {
            if i % 97 == 0 {
                syms.push(-127);
                models.push(lo);
            } else {
                syms.push(127);
                models.push(hi);
            }
        }
        let s = encode_symbols(&syms, &models).unwrap();
        assert_eq!(decode_symbols(&s, &models).unwrap(), syms);
    }
}
