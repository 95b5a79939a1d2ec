use std::cmp::Ordering;
use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_multipliers, uniform_sampler, DistortionMatrix, Problem, RatePoint, SolverConfig};
use crate::error::{Error, Result};
use crate::semsrc::{DiscreteDistribution, SynonymousPartition};

/// Local minimizer of `I(X;X̂) + λ_d·E[d] + λ_p·D_KL(p_x || p_x̂)` over test
/// channels, by multiplicative updates with random restarts.
///
/// The objective is convex in the channel, so restarts agree up to the
/// stopping tolerance; they remain as a guard against slow runs.
pub fn rdp_lagrangian(
    source: &DiscreteDistribution,
    d: &DistortionMatrix,
    lambda_d: f64,
    lambda_p: f64,
    cfg: &SolverConfig,
) -> Result<RatePoint> {
    let singletons = SynonymousPartition::singletons(source.len());
    synonymous_rdp(source, d, &singletons, lambda_d, lambda_p, cfg)
}

/// Minimizes `I(X;K) + λ_d·E[d] + λ_p·D_KL(p_x || p_x̂)` over encoders
/// `e(k | x)` onto the synsets of `recon_partition`, with the reconstruction
/// drawn uniformly inside the chosen synset.
pub fn synonymous_rdp(
    source: &DiscreteDistribution,
    d: &DistortionMatrix,
    recon_partition: &SynonymousPartition,
    lambda_d: f64,
    lambda_p: f64,
    cfg: &SolverConfig,
) -> Result<RatePoint> {
    synonymous_rdp_traced(source, d, recon_partition, lambda_d, lambda_p, cfg).map(|(p, _)| p)
}

/// [`synonymous_rdp`] plus the per-iteration objective of the winning restart.
pub fn synonymous_rdp_traced(
    source: &DiscreteDistribution,
    d: &DistortionMatrix,
    recon_partition: &SynonymousPartition,
    lambda_d: f64,
    lambda_p: f64,
    cfg: &SolverConfig,
) -> Result<(RatePoint, Vec<f64>)> {
    cfg.validate()?;
    check_multipliers(&[("lambda_d", lambda_d), ("lambda_p", lambda_p)])?;
    if recon_partition.alphabet_len() != d.cols() {
        return Err(Error::DimensionMismatch(
            "reconstruction partition does not cover the distortion columns".into(),
        ));
    }
    let problem = Problem::new(source, d, uniform_sampler(recon_partition))?;
    let descent = Descent {
        problem: &problem,
        lambda_d,
        lambda_p,
        cfg,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<Run> = None;
    for _ in 0..cfg.random_restarts {
        let init = dirichlet_rows(&mut rng, source.len(), problem.num_synsets());
        let run = descent.run(init);
        best = Some(match best {
            None => run,
            Some(b) => {
                if run.better_than(&b) {
                    run
                } else {
                    b
                }
            }
        });
    }
    let best = best.expect("at least one restart");
    let point = problem.rate_point(best.encoder, best.iterations, best.converged);
    if !point.converged {
        return Err(Error::NotConverged {
            iterations: point.iterations,
            best: Box::new(point),
        });
    }
    Ok((point, best.trace))
}

/// Rows drawn from the flat Dirichlet via normalized exponentials.
fn dirichlet_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let mut row: Vec<f64> = (0..cols)
                .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect()
}

struct Run {
    encoder: Vec<Vec<f64>>,
    objective: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

impl Run {
    /// Lower objective wins; exact ties go to the lexicographically smaller encoder.
    fn better_than(&self, other: &Run) -> bool {
        match self.objective.total_cmp(&other.objective) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => {
                let a = self.encoder.iter().flatten();
                let b = other.encoder.iter().flatten();
                a.zip(b)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| *o != Ordering::Equal)
                    == Some(Ordering::Less)
            }
        }
    }
}

struct Descent<'a> {
    problem: &'a Problem,
    lambda_d: f64,
    lambda_p: f64,
    cfg: &'a SolverConfig,
}

impl Descent<'_> {
    fn objective(&self, encoder: &[Vec<f64>]) -> f64 {
        self.problem
            .evaluate(encoder)
            .total(1.0, self.lambda_d, self.lambda_p)
    }

    /// Per-row gradient, divided by `p(x)`.
    fn gradient(&self, encoder: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let pb = self.problem;
        let m = pb.synset_marginal(encoder);
        let r = pb.recon_marginal(&m);
        let kl_grad: Vec<f64> = pb
            .sampler
            .iter()
            .map(|s| {
                if self.lambda_p == 0.0 {
                    return 0.0;
                }
                -self.lambda_p / LN_2
                    * s.iter()
                        .zip(&pb.source)
                        .zip(&r)
                        .filter(|((sb, _), _)| **sb > 0.0)
                        .map(|((sb, px), rb)| px * sb / rb)
                        .sum::<f64>()
            })
            .collect();
        encoder
            .iter()
            .zip(&pb.dbar)
            .map(|(row, db)| {
                row.iter()
                    .enumerate()
                    .map(|(k, &e)| {
                        let info = if e > 0.0 { (e / m[k]).log2() } else { f64::NEG_INFINITY };
                        info + self.lambda_d * db[k] + kl_grad[k]
                    })
                    .collect()
            })
            .collect()
    }

    /// Frank–Wolfe gap: an upper bound on the distance to the optimum for this
    /// convex objective.
    fn gap(&self, encoder: &[Vec<f64>], grad: &[Vec<f64>]) -> f64 {
        encoder
            .iter()
            .zip(grad)
            .zip(&self.problem.source)
            .map(|((row, g), px)| {
                // entries that underflowed to zero are frozen by the update
                let lo = row
                    .iter()
                    .zip(g)
                    .filter(|(e, _)| **e > 0.0)
                    .map(|(_, gk)| *gk)
                    .fold(f64::INFINITY, f64::min);
                px * row
                    .iter()
                    .zip(g)
                    .filter(|(e, _)| **e > 0.0)
                    .map(|(e, gk)| e * (gk - lo))
                    .sum::<f64>()
            })
            .sum()
    }

    fn step(encoder: &[Vec<f64>], grad: &[Vec<f64>], eta: f64) -> Vec<Vec<f64>> {
        encoder
            .iter()
            .zip(grad)
            .map(|(row, g)| {
                let lo = row
                    .iter()
                    .zip(g)
                    .filter(|(e, _)| **e > 0.0)
                    .map(|(_, gk)| *gk)
                    .fold(f64::INFINITY, f64::min);
                let mut next: Vec<f64> = row
                    .iter()
                    .zip(g)
                    .map(|(&e, &gk)| if e > 0.0 { e * (-eta * (gk - lo)).exp() } else { 0.0 })
                    .collect();
                let s: f64 = next.iter().sum();
                next.iter_mut().for_each(|v| *v /= s);
                next
            })
            .collect()
    }

    fn run(&self, mut encoder: Vec<Vec<f64>>) -> Run {
        // With eta = ln 2 and no perception term a step is exactly one
        // Blahut–Arimoto update; longer steps speed up boundary optima.
        const FULL_STEP: f64 = LN_2;
        const MAX_STEP: f64 = 1024.0 * LN_2;
        const STALL_WINDOW: usize = 1000;
        let mut objective = self.objective(&encoder);
        let mut trace = vec![objective];
        let mut eta = FULL_STEP;
        for it in 1..=self.cfg.max_iterations {
            let grad = self.gradient(&encoder);
            // the gap shrinks only sublinearly when the optimum sits on a face
            // of the simplex with zero slack, so a stalled objective also stops
            let stalled = trace.len() > STALL_WINDOW
                && trace[trace.len() - 1 - STALL_WINDOW] - objective < self.cfg.convergence_tol;
            if stalled || self.gap(&encoder, &grad) < self.cfg.convergence_tol {
                return Run {
                    encoder,
                    objective,
                    iterations: it - 1,
                    converged: true,
                    trace,
                };
            }
            let mut accepted = None;
            for _ in 0..64 {
                let candidate = Self::step(&encoder, &grad, eta);
                let value = self.objective(&candidate);
                if value < objective {
                    accepted = Some((candidate, value));
                    break;
                }
                eta *= 0.5;
            }
            match accepted {
                Some((candidate, value)) => {
                    encoder = candidate;
                    objective = value;
                    trace.push(objective);
                    eta = (eta * 2.0).min(MAX_STEP);
                }
                // no descent left at floating-point resolution
                None => {
                    return Run {
                        encoder,
                        objective,
                        iterations: it,
                        converged: true,
                        trace,
                    }
                }
            }
        }
        Run {
            encoder,
            objective,
            iterations: self.cfg.max_iterations,
            converged: false,
            trace,
        }
    }
}
