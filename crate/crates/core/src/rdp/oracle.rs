//! Exhaustive search used to validate the descent solver. It shares nothing
//! with the descent path except the objective definition.

use super::{check_multipliers, uniform_sampler, DistortionMatrix, Problem, RatePoint};
use crate::error::{Error, Result};
use crate::semsrc::{DiscreteDistribution, SynonymousPartition};

pub const MAX_ORACLE_ALPHABET: usize = 4;
pub const MAX_ORACLE_SYNSETS: usize = 3;

const MIN_STEP: f64 = 1e-10;

/// Global minimum of `λ_r·I(X;K) + λ_d·E[d] + λ_p·KL` over: every
/// deterministic encoder, a coarse grid of stochastic encoders, and a pattern
/// search refined from the best of those down to step `1e-10`.
///
/// Deterministic ties go to the lowest synset index (first in enumeration order).
pub fn brute_force_codec_search(
    source: &DiscreteDistribution,
    d: &DistortionMatrix,
    recon_partition: &SynonymousPartition,
    lambda_r: f64,
    lambda_d: f64,
    lambda_p: f64,
) -> Result<RatePoint> {
    check_multipliers(&[("lambda_r", lambda_r), ("lambda_d", lambda_d), ("lambda_p", lambda_p)])?;
    let n = source.len();
    let k = recon_partition.num_groups();
    if n > MAX_ORACLE_ALPHABET || k > MAX_ORACLE_SYNSETS {
        return Err(Error::InstanceTooLarge(format!(
            "oracle supports up to {MAX_ORACLE_ALPHABET} symbols and {MAX_ORACLE_SYNSETS} synsets, \
             got {n} and {k}"
        )));
    }
    if recon_partition.alphabet_len() != d.cols() {
        return Err(Error::DimensionMismatch(
            "reconstruction partition does not cover the distortion columns".into(),
        ));
    }
    let problem = Problem::new(source, d, uniform_sampler(recon_partition))?;
    let score = |enc: &[Vec<f64>]| {
        let t = problem.evaluate(enc).total(lambda_r, lambda_d, lambda_p);
        if t.is_nan() {
            f64::INFINITY
        } else {
            t
        }
    };
    let mut evaluations = 0usize;
    let mut best_enc: Vec<Vec<f64>> = vec![one_hot(k, 0); n];
    let mut best = f64::INFINITY;

    // deterministic encoders, lowest synset index first
    let mut labels = vec![0usize; n];
    loop {
        let enc: Vec<Vec<f64>> = labels.iter().map(|&l| one_hot(k, l)).collect();
        let s = score(&enc);
        evaluations += 1;
        if s < best {
            best = s;
            best_enc = enc;
        }
        if !odometer(&mut labels, k) {
            break;
        }
    }

    if k > 1 {
        let steps = if k == 2 { 10 } else { 5 };
        let rows = simplex_grid(steps, k);
        let mut idx = vec![0usize; n];
        loop {
            let enc: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
            let s = score(&enc);
            evaluations += 1;
            if s < best {
                best = s;
                best_enc = enc;
            }
            if !odometer(&mut idx, rows.len()) {
                break;
            }
        }

        // pattern search over the free coordinates (all but the last of each row)
        let dims = n * (k - 1);
        let mut free: Vec<f64> = best_enc.iter().flat_map(|r| r[..k - 1].to_vec()).collect();
        let mut step = 1.0 / steps as f64;
        let mut dirs = vec![0usize; dims];
        while step >= MIN_STEP {
            let mut best_move: Option<(f64, Vec<f64>)> = None;
            dirs.iter_mut().for_each(|v| *v = 0);
            loop {
                if dirs.iter().any(|&v| v != 1) {
                    let cand: Vec<f64> = free
                        .iter()
                        .zip(&dirs)
                        .map(|(v, &dir)| v + (dir as f64 - 1.0) * step)
                        .collect();
                    if let Some(enc) = to_encoder(&cand, n, k) {
                        let s = score(&enc);
                        evaluations += 1;
                        if s < best && best_move.as_ref().is_none_or(|(b, _)| s < *b) {
                            best_move = Some((s, cand));
                        }
                    }
                }
                if !odometer(&mut dirs, 3) {
                    break;
                }
            }
            match best_move {
                Some((s, cand)) => {
                    best = s;
                    free = cand;
                }
                None => step *= 0.5,
            }
        }
        if let Some(enc) = to_encoder(&free, n, k) {
            best_enc = enc;
        }
    }

    Ok(problem.rate_point(best_enc, evaluations, true))
}

fn one_hot(k: usize, at: usize) -> Vec<f64> {
    (0..k).map(|i| if i == at { 1.0 } else { 0.0 }).collect()
}

fn odometer(digits: &mut [usize], radix: usize) -> bool {
    for digit in digits.iter_mut().rev() {
        *digit += 1;
        if *digit < radix {
            return true;
        }
        *digit = 0;
    }
    false
}

fn simplex_grid(steps: usize, parts: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut counts = vec![0usize; parts - 1];
    loop {
        let used: usize = counts.iter().sum();
        if used <= steps {
            let mut row: Vec<f64> = counts.iter().map(|&c| c as f64 / steps as f64).collect();
            row.push((steps - used) as f64 / steps as f64);
            out.push(row);
        }
        if !odometer(&mut counts, steps + 1) {
            break;
        }
    }
    out
}

fn to_encoder(free: &[f64], n: usize, k: usize) -> Option<Vec<Vec<f64>>> {
    let mut enc = Vec::with_capacity(n);
    for x in 0..n {
        let head = &free[x * (k - 1)..(x + 1) * (k - 1)];
        if head.iter().any(|&v| v < 0.0) {
            return None;
        }
        let last = 1.0 - head.iter().sum::<f64>();
        if last < -1e-15 {
            return None;
        }
        let mut row = head.to_vec();
        row.push(last.max(0.0));
        enc.push(row);
    }
    Some(enc)
}
