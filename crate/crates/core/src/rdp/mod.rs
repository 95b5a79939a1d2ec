//! Rate-distortion(-perception) solvers on small discrete sources.
//!
//! Every solver works with a source alphabet that doubles as the
//! reconstruction alphabet, so that the perception term
//! `D_KL(p_x || p_x̂)` is defined. Rates are in bits per symbol.
//!
//! * [`blahut_arimoto`]: classical `R(D)` points by alternating minimization.
//! * [`rdp_grid`]: exhaustive search of the constrained `R(D, P)` problem.
//! * [`rdp_lagrangian`] / [`synonymous_rdp`]: exponentiated-gradient descent
//!   on `I + λ_d·E[d] + λ_p·KL`, where the synonymous variant codes only a
//!   synset index and samples the reconstruction uniformly inside the synset.
//! * [`brute_force_codec_search`]: an independent search used as an oracle.

mod blahut;
mod descent;
mod grid;
mod oracle;

pub use blahut::{blahut_arimoto, blahut_arimoto_traced};
pub use descent::{rdp_lagrangian, synonymous_rdp, synonymous_rdp_traced};
pub use grid::rdp_grid;
pub use oracle::brute_force_codec_search;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossBreakdown;
use crate::semsrc::{entropy_of, DiscreteDistribution, SynonymousPartition};

/// Row sums of stochastic matrices must be within this of one.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Non-negative distortion `d(x, x̂)`, rows indexed by the source symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionMatrix {
    d: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl DistortionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if n_rows == 0 || n_cols == 0 || rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::DimensionMismatch(
                "distortion matrix must be a non-empty rectangle".into(),
            ));
        }
        let d: Vec<f64> = rows.into_iter().flatten().collect();
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(
                "distortion entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            d,
            rows: n_rows,
            cols: n_cols,
        })
    }

    pub fn hamming(n: usize) -> Self {
        let d = (0..n * n)
            .map(|i| if i / n == i % n { 0.0 } else { 1.0 })
            .collect();
        Self { d, rows: n, cols: n }
    }

    /// `|i − j|` between symbol indices.
    pub fn absolute(n: usize) -> Self {
        let d = (0..n * n)
            .map(|i| (i / n).abs_diff(i % n) as f64)
            .collect();
        Self { d, rows: n, cols: n }
    }

    pub fn get(&self, x: usize, b: usize) -> f64 {
        self.d[x * self.cols + b]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.d[x * self.cols..(x + 1) * self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.d.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }
}

impl<'de> Deserialize<'de> for DistortionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Self::new(rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub convergence_tol: f64,
    /// Step of the exhaustive channel grid, in `(0, 0.5]`.
    pub grid_resolution: f64,
    pub random_restarts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50_000,
            convergence_tol: 1e-10,
            grid_resolution: 1e-3,
            random_restarts: 8,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidConfig("convergence_tol must be > 0".into()));
        }
        if !(self.grid_resolution > 0.0 && self.grid_resolution <= 0.5) {
            return Err(Error::InvalidConfig(
                "grid_resolution must lie in (0, 0.5]".into(),
            ));
        }
        if self.max_iterations == 0 || self.random_restarts == 0 {
            return Err(Error::InvalidConfig(
                "max_iterations and random_restarts must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One point of a rate-distortion(-perception) curve.
///
/// `encoder[x][k]` is the probability of emitting reconstruction synset `k`
/// for source symbol `x`; for the classical solvers the synsets are
/// singletons and this is the test channel `p(x̂ | x)`. `perception` is
/// `+∞` when the reconstruction marginal misses part of the source support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePoint {
    pub rate: f64,
    pub distortion: f64,
    pub perception: f64,
    pub encoder: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl RatePoint {
    /// The codec this point was computed for, with the uniform sampler.
    pub fn codec(&self, recon_partition: &SynonymousPartition) -> Result<SynonymousCodec> {
        SynonymousCodec::uniform(self.encoder.clone(), recon_partition.clone())
    }
}

/// A stochastic map to reconstruction synsets followed by within-synset sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SynonymousCodec {
    encoder: Vec<Vec<f64>>,
    sampler: Vec<Vec<f64>>,
    recon_partition: SynonymousPartition,
}

fn check_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::InvalidDistribution(format!("{what} sums to {s}")));
    }
    Ok(())
}

impl SynonymousCodec {
    pub fn new(
        encoder: Vec<Vec<f64>>,
        sampler: Vec<Vec<f64>>,
        recon_partition: SynonymousPartition,
    ) -> Result<Self> {
        let k = recon_partition.num_groups();
        for (x, row) in encoder.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "encoder row {x} has {} entries for {k} synsets",
                    row.len()
                )));
            }
            check_row(row, &format!("encoder row {x}"))?;
        }
        if sampler.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} sampler rows for {k} synsets",
                sampler.len()
            )));
        }
        let labels = recon_partition.labels();
        for (s, row) in sampler.iter().enumerate() {
            if row.len() != recon_partition.alphabet_len() {
                return Err(Error::DimensionMismatch(format!(
                    "sampler row {s} does not cover the reconstruction alphabet"
                )));
            }
            check_row(row, &format!("sampler row {s}"))?;
            if let Some(b) = (0..row.len()).find(|&b| row[b] > 0.0 && labels[b] != s) {
                return Err(Error::InvalidDistribution(format!(
                    "sampler row {s} puts mass on symbol {b} outside its synset"
                )));
            }
        }
        Ok(Self {
            encoder,
            sampler,
            recon_partition,
        })
    }

    /// Equal-probability sampling inside each synset.
    pub fn uniform(encoder: Vec<Vec<f64>>, recon_partition: SynonymousPartition) -> Result<Self> {
        let sampler = uniform_sampler(&recon_partition);
        Self::new(encoder, sampler, recon_partition)
    }

    pub fn encoder(&self) -> &[Vec<f64>] {
        &self.encoder
    }

    pub fn sampler(&self) -> &[Vec<f64>] {
        &self.sampler
    }

    pub fn recon_partition(&self) -> &SynonymousPartition {
        &self.recon_partition
    }
}

pub(crate) fn uniform_sampler(partition: &SynonymousPartition) -> Vec<Vec<f64>> {
    partition
        .groups()
        .iter()
        .map(|g| {
            let mut row = vec![0.0; partition.alphabet_len()];
            for &b in g {
                row[b] = 1.0 / g.len() as f64;
            }
            row
        })
        .collect()
}

/// Source, effective distortion `d̄(x, k) = Σ_b s_k(b) d(x, b)` and sampler,
/// everything the objective needs about a problem instance.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub source: Vec<f64>,
    pub dbar: Vec<Vec<f64>>,
    pub sampler: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Terms {
    pub rate: f64,
    pub distortion: f64,
    pub perception: f64,
}

impl Terms {
    /// Weighted sum; a disabled term never contributes, even when infinite.
    pub fn total(&self, lambda_r: f64, lambda_d: f64, lambda_p: f64) -> f64 {
        let mut t = lambda_r * self.rate + lambda_d * self.distortion;
        if lambda_p != 0.0 {
            t += lambda_p * self.perception;
        }
        t
    }
}

impl Problem {
    pub fn new(
        source: &DiscreteDistribution,
        d: &DistortionMatrix,
        sampler: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_square(source, d)?;
        let dbar = (0..d.rows())
            .map(|x| {
                sampler
                    .iter()
                    .map(|s| s.iter().zip(d.row(x)).map(|(p, v)| p * v).sum())
                    .collect()
            })
            .collect();
        Ok(Self {
            source: source.probs().to_vec(),
            dbar,
            sampler,
        })
    }

    pub fn num_synsets(&self) -> usize {
        self.sampler.len()
    }

    pub fn synset_marginal(&self, encoder: &[Vec<f64>]) -> Vec<f64> {
        let mut m = vec![0.0; self.num_synsets()];
        for (px, row) in self.source.iter().zip(encoder) {
            for (acc, e) in m.iter_mut().zip(row) {
                *acc += px * e;
            }
        }
        m
    }

    pub fn recon_marginal(&self, synset_marginal: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.source.len()];
        for (mk, s) in synset_marginal.iter().zip(&self.sampler) {
            for (acc, sb) in r.iter_mut().zip(s) {
                *acc += mk * sb;
            }
        }
        r
    }

    pub fn evaluate(&self, encoder: &[Vec<f64>]) -> Terms {
        let m = self.synset_marginal(encoder);
        // I(X;K) = H(K) − H(K|X)
        let h_k = entropy_of(&m);
        let h_k_given_x: f64 = self
            .source
            .iter()
            .zip(encoder)
            .map(|(px, row)| px * entropy_of(row))
            .sum();
        let distortion = self
            .source
            .iter()
            .zip(encoder)
            .zip(&self.dbar)
            .map(|((px, row), db)| px * row.iter().zip(db).map(|(e, v)| e * v).sum::<f64>())
            .sum();
        let r = self.recon_marginal(&m);
        let mut perception = 0.0;
        for (&p, &q) in self.source.iter().zip(&r) {
            if p > 0.0 {
                if q <= 0.0 {
                    perception = f64::INFINITY;
                    break;
                }
                perception += p * (p / q).log2();
            }
        }
        Terms {
            rate: h_k - h_k_given_x,
            distortion,
            perception: perception.max(0.0),
        }
    }

    pub fn rate_point(&self, encoder: Vec<Vec<f64>>, iterations: usize, converged: bool) -> RatePoint {
        let t = self.evaluate(&encoder);
        RatePoint {
            rate: t.rate.max(0.0),
            distortion: t.distortion,
            perception: t.perception,
            encoder,
            iterations,
            converged,
        }
    }
}

fn check_square(source: &DiscreteDistribution, d: &DistortionMatrix) -> Result<()> {
    if d.rows() != source.len() || d.cols() != source.len() {
        return Err(Error::DimensionMismatch(format!(
            "distortion matrix is {}x{}, source alphabet has {} symbols \
             (reconstruction alphabet must equal the source alphabet)",
            d.rows(),
            d.cols(),
            source.len()
        )));
    }
    Ok(())
}

fn check_multipliers(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !(v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "{name} must be finite and >= 0, got {v}"
            )));
        }
    }
    Ok(())
}

/// Evaluates rate `I(X;K)`, expected distortion and `D_KL(p_x || p_x̂)` of a
/// synonymous codec and combines them as
/// `λ_r·rate + λ_d·distortion + λ_p·perception`.
pub fn synonymous_lagrangian_objective(
    source: &DiscreteDistribution,
    d: &DistortionMatrix,
    codec: &SynonymousCodec,
    lambda_r: f64,
    lambda_d: f64,
    lambda_p: f64,
) -> Result<LossBreakdown> {
    if codec.recon_partition.alphabet_len() != d.cols() || codec.encoder.len() != d.rows() {
        return Err(Error::DimensionMismatch(
            "codec does not match the distortion matrix".into(),
        ));
    }
    let problem = Problem::new(source, d, codec.sampler.clone())?;
    let t = problem.evaluate(&codec.encoder);
    if t.perception.is_infinite() {
        let r = problem.recon_marginal(&problem.synset_marginal(&codec.encoder));
        let index = (0..r.len())
            .find(|&b| source.probs()[b] > 0.0 && r[b] <= 0.0)
            .unwrap_or(0);
        return Err(Error::SupportViolation { index });
    }
    Ok(LossBreakdown {
        rate_bits: t.rate,
        distortion: t.distortion,
        perception: t.perception,
        constraint: 0.0,
        total: t.total(lambda_r, lambda_d, lambda_p),
    })
}
