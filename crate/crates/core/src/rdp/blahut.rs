use super::{check_multipliers, check_square, uniform_sampler, DistortionMatrix, Problem, RatePoint, SolverConfig};
use crate::error::{Error, Result};
use crate::semsrc::{DiscreteDistribution, SynonymousPartition};

/// A point on the classical `R(D)` curve for distortion multiplier `slope`,
/// i.e. the minimizer of `I(X; X̂) + slope · E[d]`.
///
/// `slope = 0` returns the zero-rate limit: the constant reconstruction with
/// the smallest expected distortion (lowest index on ties). Large slopes move
/// towards the lossless end of the curve.
pub fn blahut_arimoto(
    source: &DiscreteDistribution,
    d: &DistortionMatrix,
    slope: f64,
    cfg: &SolverConfig,
) -> Result<RatePoint> {
    blahut_arimoto_traced(source, d, slope, cfg).map(|(p, _)| p)
}

/// Same as [`blahut_arimoto`], also returning the objective after every iteration.
pub fn blahut_arimoto_traced(
    source: &DiscreteDistribution,
    d: &DistortionMatrix,
    slope: f64,
    cfg: &SolverConfig,
) -> Result<(RatePoint, Vec<f64>)> {
    cfg.validate()?;
    check_square(source, d)?;
    check_multipliers(&[("slope", slope)])?;
    let n = source.len();
    let p = source.probs();
    let problem = Problem::new(source, d, uniform_sampler(&SynonymousPartition::singletons(n)))?;

    if slope == 0.0 {
        let best = (0..n)
            .map(|b| (b, (0..n).map(|x| p[x] * d.get(x, b)).sum::<f64>()))
            .fold((0, f64::INFINITY), |acc, (b, v)| if v < acc.1 { (b, v) } else { acc })
            .0;
        let encoder = vec![
            (0..n).map(|b| if b == best { 1.0 } else { 0.0 }).collect::<Vec<_>>();
            n
        ];
        let point = problem.rate_point(encoder, 0, true);
        let obj = point.rate;
        return Ok((point, vec![obj]));
    }

    // Row-wise 2^{-slope (d - min d)}; the shift keeps large slopes finite.
    let kernel: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            let row = d.row(x);
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            row.iter().map(|v| (-slope * (v - lo)).exp2()).collect()
        })
        .collect();

    let objective = |q: &[Vec<f64>]| {
        let t = problem.evaluate(q);
        t.rate + slope * t.distortion
    };

    let mut marginal = vec![1.0 / n as f64; n];
    let mut channel = vec![vec![0.0; n]; n];
    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    for it in 1..=cfg.max_iterations {
        for (x, row) in channel.iter_mut().enumerate() {
            let mut z = 0.0;
            for b in 0..n {
                row[b] = marginal[b] * kernel[x][b];
                z += row[b];
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        marginal = problem.synset_marginal(&channel);
        let obj = objective(&channel);
        trace.push(obj);
        if (prev - obj).abs() < cfg.convergence_tol {
            return Ok((problem.rate_point(channel, it, true), trace));
        }
        prev = obj;
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iterations,
        best: Box::new(problem.rate_point(channel, cfg.max_iterations, false)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn h2(p: f64) -> f64 {
        -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
    }

    #[test]
    fn binary_hamming_matches_closed_form() {
        let src = DiscreteDistribution::uniform(2).unwrap();
        let d = DistortionMatrix::hamming(2);
        // D = 1 / (1 + 2^s) on this source
        let target = 0.1f64;
        let slope = ((1.0 - target) / target).log2();
        let pt = blahut_arimoto(&src, &d, slope, &SolverConfig::default()).unwrap();
        assert_abs_diff_eq!(pt.distortion, target, epsilon = 1e-9);
        assert_abs_diff_eq!(pt.rate, 1.0 - h2(target), epsilon = 1e-9);
        assert_abs_diff_eq!(pt.rate, 0.5310, epsilon = 1e-3);
    }

    #[test]
    fn endpoints() {
        let src = DiscreteDistribution::new(vec![0.3, 0.7]).unwrap();
        let d = DistortionMatrix::hamming(2);
        let cfg = SolverConfig::default();
        let zero = blahut_arimoto(&src, &d, 0.0, &cfg).unwrap();
        assert_eq!(zero.rate, 0.0);
        assert_abs_diff_eq!(zero.distortion, 0.3, epsilon = 1e-15);

        let uniform = DiscreteDistribution::uniform(2).unwrap();
        let steep = blahut_arimoto(&uniform, &d, 60.0, &cfg).unwrap();
        assert_abs_diff_eq!(steep.rate, 1.0, epsilon = 1e-12);
        assert!(steep.distortion < 1e-15);
    }

    #[test]
    fn objective_never_increases() {
        let src = DiscreteDistribution::new(vec![0.5, 0.2, 0.2, 0.1]).unwrap();
        let d = DistortionMatrix::absolute(4);
        for slope in [0.3, 1.0, 2.5, 7.0] {
            let (_, trace) = blahut_arimoto_traced(&src, &d, slope, &SolverConfig::default()).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-14, "slope {slope}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn reports_non_convergence() {
        let src = DiscreteDistribution::new(vec![0.5, 0.2, 0.2, 0.1]).unwrap();
        let d = DistortionMatrix::absolute(4);
        let cfg = SolverConfig {
            max_iterations: 2,
            ..SolverConfig::default()
        };
        match blahut_arimoto(&src, &d, 1.0, &cfg) {
            Err(Error::NotConverged { iterations, best }) => {
                assert_eq!(iterations, 2);
                assert!(!best.converged);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
