use super::{check_square, DistortionMatrix, RatePoint, SolverConfig};
use crate::error::{Error, Result};
use crate::semsrc::{entropy_of, xlog2x, DiscreteDistribution};

/// Largest alphabet the exhaustive grid accepts.
pub const MAX_GRID_ALPHABET: usize = 3;
/// Upper bound on the number of channels visited.
pub const MAX_GRID_CELLS: u64 = 50_000_000;

/// Integer compositions of `n` into `parts` non-negative parts, in
/// lexicographic order.
fn compositions(n: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in 0..=n {
        for mut rest in compositions(n - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Odometer increment; false once every combination has been visited.
fn advance(idx: &mut [usize], radix: usize) -> bool {
    for digit in idx.iter_mut().rev() {
        *digit += 1;
        if *digit < radix {
            return true;
        }
        *digit = 0;
    }
    false
}

/// Minimum of `I(X; X̂)` over every test channel whose rows lie on the
/// simplex grid of step `cfg.grid_resolution`, subject to `E[d] <= max_distortion`
/// and `D_KL(p_x || p_x̂) <= max_perception` (pass `f64::INFINITY` to drop a
/// constraint).
///
/// Ties on the rate are broken by lower perception, then lower distortion,
/// then enumeration order.
pub fn rdp_grid(
    source: &DiscreteDistribution,
    d: &DistortionMatrix,
    max_distortion: f64,
    max_perception: f64,
    cfg: &SolverConfig,
) -> Result<RatePoint> {
    cfg.validate()?;
    check_square(source, d)?;
    for (name, v) in [("D", max_distortion), ("P", max_perception)] {
        if v.is_nan() || v < 0.0 {
            return Err(Error::InvalidConfig(format!("{name} must be >= 0")));
        }
    }
    let n = source.len();
    if n > MAX_GRID_ALPHABET {
        return Err(Error::InstanceTooLarge(format!(
            "exhaustive grid supports alphabets up to {MAX_GRID_ALPHABET}, got {n}; \
             use rdp_lagrangian"
        )));
    }
    let steps = (1.0 / cfg.grid_resolution).round() as usize;
    let rows = compositions(steps, n);
    let cells = (rows.len() as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if cells > MAX_GRID_CELLS {
        return Err(Error::InstanceTooLarge(format!(
            "{cells} grid cells exceed the limit of {MAX_GRID_CELLS}; coarsen grid_resolution"
        )));
    }

    let points: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().map(|&c| c as f64 / steps as f64).collect())
        .collect();
    let neg_entropy: Vec<f64> = points.iter().map(|q| q.iter().map(|&v| xlog2x(v)).sum()).collect();
    let row_distortion: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            points
                .iter()
                .map(|q| q.iter().zip(d.row(x)).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    let p = source.probs();

    // (rate, perception, distortion, row indices)
    let mut best: Option<(f64, f64, f64, Vec<usize>)> = None;
    let mut idx = vec![0usize; n];
    let mut marginal = vec![0.0; n];
    loop {
        let distortion: f64 = (0..n).map(|x| p[x] * row_distortion[x][idx[x]]).sum();
        if distortion <= max_distortion {
            marginal.iter_mut().for_each(|v| *v = 0.0);
            for x in 0..n {
                for (acc, q) in marginal.iter_mut().zip(&points[idx[x]]) {
                    *acc += p[x] * q;
                }
            }
            let mut perception = 0.0;
            for (&px, &r) in p.iter().zip(&marginal) {
                if px > 0.0 {
                    perception += if r > 0.0 { px * (px / r).log2() } else { f64::INFINITY };
                }
            }
            let perception = perception.max(0.0);
            if perception <= max_perception {
                let cond: f64 = (0..n).map(|x| p[x] * neg_entropy[idx[x]]).sum();
                let rate = (entropy_of(&marginal) + cond).max(0.0);
                let better = match &best {
                    None => true,
                    Some((br, bp, bd, _)) => {
                        if (rate - br).abs() > 1e-12 {
                            rate < *br
                        } else if perception != *bp {
                            perception < *bp
                        } else {
                            distortion < *bd
                        }
                    }
                };
                if better {
                    best = Some((rate, perception, distortion, idx.clone()));
                }
            }
        }
        if !advance(&mut idx, points.len()) {
            break;
        }
    }

    let (rate, perception, distortion, rows) = best.ok_or(Error::Infeasible {
        distortion: max_distortion,
        perception: max_perception,
    })?;
    Ok(RatePoint {
        rate,
        distortion,
        perception,
        encoder: rows.iter().map(|&i| points[i].clone()).collect(),
        iterations: cells as usize,
        converged: true,
    })
}
