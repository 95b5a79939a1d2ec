//! Discrete sources, synonymous partitions and semantic information measures.
//!
//! A [`SynonymousPartition`] groups the alphabet of a [`DiscreteDistribution`]
//! into synsets. Semantic measures replace symbol probabilities by synset
//! probabilities in the places where the classical measure takes a logarithm.
//! All quantities are in bits, and `0 · log 0` is taken as `0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Construction tolerance on the total probability mass.
pub const PROB_SUM_TOL: f64 = 1e-12;

pub(crate) fn xlog2x(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("empty alphabet".into()));
    }
    if let Some((i, p)) = probs
        .iter()
        .enumerate()
        .find(|(_, p)| !p.is_finite() || **p < 0.0)
    {
        return Err(Error::InvalidDistribution(format!(
            "entry {i} is {p}, expected a finite non-negative value"
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidDistribution(format!(
            "entries sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// A probability mass function over `0..len`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    /// Rejects negative entries and totals further than [`PROB_SUM_TOL`] from one.
    /// Inputs are never renormalized.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_probs(&probs)?;
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDistribution("empty alphabet".into()));
        }
        Self::new(vec![1.0 / n as f64; n])
    }

    /// Point mass on `index`.
    pub fn point(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::IndexOutOfRange { index, len: n });
        }
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Self::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

impl<'de> Deserialize<'de> for DiscreteDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(d)?;
        Self::new(probs).map_err(serde::de::Error::custom)
    }
}

/// Disjoint, covering, non-empty groups of alphabet indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynonymousPartition {
    groups: Vec<Vec<usize>>,
    alphabet_len: usize,
}

impl SynonymousPartition {
    pub fn new(groups: Vec<Vec<usize>>, alphabet_len: usize) -> Result<Self> {
        let mut seen = vec![false; alphabet_len];
        for (k, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::InvalidPartition(format!("group {k} is empty")));
            }
            for &i in group {
                if i >= alphabet_len {
                    return Err(Error::InvalidPartition(format!(
                        "group {k} references index {i} outside alphabet of size {alphabet_len}"
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} appears in more than one group"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!("index {i} is not covered")));
        }
        Ok(Self {
            groups,
            alphabet_len,
        })
    }

    /// Every symbol is its own synset.
    pub fn singletons(n: usize) -> Self {
        Self {
            groups: (0..n).map(|i| vec![i]).collect(),
            alphabet_len: n,
        }
    }

    /// One synset holding the whole alphabet.
    pub fn single(n: usize) -> Self {
        Self {
            groups: vec![(0..n).collect()],
            alphabet_len: n,
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, k: usize) -> Result<&[usize]> {
        self.groups
            .get(k)
            .map(Vec::as_slice)
            .ok_or(Error::IndexOutOfRange {
                index: k,
                len: self.groups.len(),
            })
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn alphabet_len(&self) -> usize {
        self.alphabet_len
    }

    pub fn is_singleton(&self) -> bool {
        self.groups.iter().all(|g| g.len() == 1)
    }

    /// Synset index of every alphabet symbol.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.alphabet_len];
        for (k, group) in self.groups.iter().enumerate() {
            for &i in group {
                labels[i] = k;
            }
        }
        labels
    }

    /// Merges groups `a` and `b` into the lower of the two indices.
    pub fn merge(&self, a: usize, b: usize) -> Result<Self> {
        let n = self.groups.len();
        for idx in [a, b] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        if a == b {
            return Ok(self.clone());
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let mut groups = self.groups.clone();
        let moved = groups.remove(hi);
        groups[lo].extend(moved);
        groups[lo].sort_unstable();
        Ok(Self {
            groups,
            alphabet_len: self.alphabet_len,
        })
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.alphabet_len != n {
            return Err(Error::DimensionMismatch(format!(
                "partition covers {} symbols, distribution has {n}",
                self.alphabet_len
            )));
        }
        Ok(())
    }

    /// Per-synset probability masses of `probs`.
    pub(crate) fn masses(&self, probs: &[f64]) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| g.iter().map(|&i| probs[i]).sum())
            .collect()
    }
}

/// A syntactic distribution together with its synonymous mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVariable {
    dist: DiscreteDistribution,
    partition: SynonymousPartition,
}

impl SemanticVariable {
    pub fn new(dist: DiscreteDistribution, partition: SynonymousPartition) -> Result<Self> {
        partition.check_len(dist.len())?;
        Ok(Self { dist, partition })
    }

    pub fn dist(&self) -> &DiscreteDistribution {
        &self.dist
    }

    pub fn partition(&self) -> &SynonymousPartition {
        &self.partition
    }
}

/// Joint pmf of `(U, V)` stored row-major, rows indexed by `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    probs: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl JointDistribution {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidDistribution("empty joint".into()));
        }
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::InvalidDistribution("ragged joint matrix".into()));
        }
        let probs: Vec<f64> = rows.into_iter().flatten().collect();
        check_probs(&probs)?;
        Ok(Self {
            probs,
            rows: n_rows,
            cols: n_cols,
        })
    }

    /// Product of two marginals.
    pub fn independent(u: &DiscreteDistribution, v: &DiscreteDistribution) -> Self {
        let probs = u
            .probs()
            .iter()
            .flat_map(|a| v.probs().iter().map(move |b| a * b))
            .collect();
        Self {
            probs,
            rows: u.len(),
            cols: v.len(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.cols + j]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn marginal_u(&self) -> Vec<f64> {
        self.probs.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn marginal_v(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for row in self.probs.chunks(self.cols) {
            for (acc, p) in m.iter_mut().zip(row) {
                *acc += p;
            }
        }
        m
    }

    /// Joint entropy `H(U, V)` in bits.
    pub fn joint_entropy(&self) -> f64 {
        entropy_of(&self.probs)
    }
}

impl<'de> Deserialize<'de> for JointDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Self::new(rows).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn entropy_of(probs: &[f64]) -> f64 {
    // -0.0 for point masses otherwise
    (-probs.iter().map(|&p| xlog2x(p)).sum::<f64>()).max(0.0)
}

pub fn shannon_entropy(dist: &DiscreteDistribution) -> f64 {
    entropy_of(dist.probs())
}

pub fn synset_probability(
    dist: &DiscreteDistribution,
    partition: &SynonymousPartition,
    k: usize,
) -> Result<f64> {
    partition.check_len(dist.len())?;
    Ok(partition.group(k)?.iter().map(|&i| dist.probs()[i]).sum())
}

/// Entropy of the synset probabilities.
pub fn semantic_entropy(sem: &SemanticVariable) -> f64 {
    entropy_of(&sem.partition.masses(sem.dist.probs()))
}

/// `D_KL(q || p)` in bits. Errors when `q` has mass where `p` has none.
pub fn kl_divergence(q: &DiscreteDistribution, p: &DiscreteDistribution) -> Result<f64> {
    kl_bits(q.probs(), p.probs())
}

pub(crate) fn kl_bits(q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "alphabets of size {} and {}",
            q.len(),
            p.len()
        )));
    }
    let mut acc = 0.0;
    for (i, (&qi, &pi)) in q.iter().zip(p).enumerate() {
        if qi > 0.0 {
            if pi <= 0.0 {
                return Err(Error::SupportViolation { index: i });
            }
            acc += qi * (qi / pi).log2();
        }
    }
    Ok(acc.max(0.0))
}

/// Divergence between the syntactic `q` and the synset-level distribution
/// induced by `p`: `Σ_k Σ_{i∈k} q_i log2(q_i / p(k))`.
///
/// Can be negative. The support check is per synset: a synset of zero `p`-mass
/// that carries `q`-mass is an error, reported with the synset index.
pub fn partial_semantic_kl(
    q: &DiscreteDistribution,
    p: &DiscreteDistribution,
    partition: &SynonymousPartition,
) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "alphabets of size {} and {}",
            q.len(),
            p.len()
        )));
    }
    partition.check_len(q.len())?;
    let synset_p = partition.masses(p.probs());
    let mut acc = 0.0;
    for (k, group) in partition.groups().iter().enumerate() {
        for &i in group {
            let qi = q.probs()[i];
            if qi > 0.0 {
                if synset_p[k] <= 0.0 {
                    return Err(Error::SupportViolation { index: k });
                }
                acc += qi * (qi / synset_p[k]).log2();
            }
        }
    }
    Ok(acc)
}

pub fn mutual_information(joint: &JointDistribution) -> f64 {
    let hu = entropy_of(&joint.marginal_u());
    let hv = entropy_of(&joint.marginal_v());
    (hu + hv - joint.joint_entropy()).max(0.0)
}

/// `H_s(Ů) + H_s(V̊) − H(U, V)`; may be negative.
pub fn down_semantic_mutual_information(
    joint: &JointDistribution,
    part_u: &SynonymousPartition,
    part_v: &SynonymousPartition,
) -> Result<f64> {
    part_u.check_len(joint.rows())?;
    part_v.check_len(joint.cols())?;
    let hs_u = entropy_of(&part_u.masses(&joint.marginal_u()));
    let hs_v = entropy_of(&part_v.masses(&joint.marginal_v()));
    Ok(hs_u + hs_v - joint.joint_entropy())
}
