//! Progressive training objective and its constraint terms, evaluated for
//! given rates and reconstructions.

use serde::{Deserialize, Serialize};

use crate::codec::LatentTensor;
use crate::error::{Error, Result};
use crate::transform::{mse, perceptual_stub, Image};

/// Weight of the current level against the top level in [`alternating_loss`].
pub const DEFAULT_ALPHA: f64 = 0.5;
/// Warm-up multipliers on the level rate and the rate dispersion.
pub const DEFAULT_WARMING_A: f64 = 4.0;
pub const DEFAULT_WARMING_B: f64 = 64.0;
pub const TABLE1_LEVELS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rate_bits: f64,
    pub distortion: f64,
    pub perception: f64,
    pub constraint: f64,
    pub total: f64,
}

/// Per-level multipliers, indexed by `level - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda_r: Vec<f64>,
    pub lambda_d: Vec<f64>,
    pub lambda_p: Vec<f64>,
    pub warming_a: f64,
    pub warming_b: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        table1_weights()
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let l = self.lambda_r.len();
        if l == 0 || self.lambda_d.len() != l || self.lambda_p.len() != l {
            return Err(Error::InvalidConfig(
                "lambda_r, lambda_d and lambda_p must have the same non-zero length".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig("alpha must lie in [0, 1]".into()));
        }
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive(&self.lambda_r) || !positive(&self.lambda_d) || !positive(&self.lambda_p) {
            return Err(Error::InvalidConfig("level multipliers must be positive".into()));
        }
        if !(self.warming_a >= 0.0 && self.warming_b >= 0.0) {
            return Err(Error::InvalidConfig("warming a, b must be non-negative".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.lambda_r.len()
    }

    fn level_index(&self, l: usize) -> Result<usize> {
        if l == 0 || l > self.levels() {
            return Err(Error::IndexOutOfRange {
                index: l,
                len: self.levels(),
            });
        }
        Ok(l - 1)
    }
}

/// The 16-level configuration: `λ_r = 128·l`, `λ_d = 2^((40−l)/8)`,
/// `λ_p = 2^((48−3l)/8)`, `α = 0.5`, warm-up `a = 4`, `b = 64`.
pub fn table1_weights() -> LossWeights {
    let levels = 1..=TABLE1_LEVELS;
    LossWeights {
        alpha: DEFAULT_ALPHA,
        lambda_r: levels.clone().map(|l| 128.0 * l as f64).collect(),
        lambda_d: levels
            .clone()
            .map(|l| ((40.0 - l as f64) / 8.0).exp2())
            .collect(),
        lambda_p: levels.map(|l| ((48.0 - 3.0 * l as f64) / 8.0).exp2()).collect(),
        warming_a: DEFAULT_WARMING_A,
        warming_b: DEFAULT_WARMING_B,
    }
}

pub type ImageDistance = dyn Fn(&Image, &Image) -> Result<f64>;

/// Level objective with the default perception stand-in.
pub fn level_loss(
    l: usize,
    rate_bits: f64,
    original: &Image,
    recons: &[Image],
    w: &LossWeights,
) -> Result<LossBreakdown> {
    level_loss_with(l, rate_bits, original, recons, w, &perceptual_stub)
}

/// `λ_r·rate + (1/M)·Σ_i [λ_d·mse(x, x̂_i) + λ_p·perception(x, x̂_i)]`, with any
/// image distance in the perception slot.
pub fn level_loss_with(
    l: usize,
    rate_bits: f64,
    original: &Image,
    recons: &[Image],
    w: &LossWeights,
    perception: &ImageDistance,
) -> Result<LossBreakdown> {
    let i = w.level_index(l)?;
    if recons.is_empty() {
        return Err(Error::InvalidConfig(
            "at least one reconstruction is required".into(),
        ));
    }
    let m = recons.len() as f64;
    let mut distortion = 0.0;
    let mut percept = 0.0;
    for r in recons {
        distortion += mse(original, r)?;
        percept += perception(original, r)?;
    }
    distortion /= m;
    percept /= m;
    Ok(LossBreakdown {
        rate_bits,
        distortion,
        perception: percept,
        constraint: 0.0,
        total: w.lambda_r[i] * rate_bits + w.lambda_d[i] * distortion + w.lambda_p[i] * percept,
    })
}

/// `α·L^(l) + (1−α)·L^(L) + constraints`, where `level_losses[i]` holds the
/// level `i + 1` objective if it was evaluated.
pub fn alternating_loss(
    l: usize,
    level_losses: &[Option<LossBreakdown>],
    constraints: f64,
    w: &LossWeights,
) -> Result<f64> {
    let i = w.level_index(l)?;
    let top = w.levels();
    let current = level_losses
        .get(i)
        .copied()
        .flatten()
        .ok_or(Error::MissingLevel(l))?;
    let last = level_losses
        .get(top - 1)
        .copied()
        .flatten()
        .ok_or(Error::MissingLevel(top))?;
    if l == top {
        return Ok(last.total + constraints);
    }
    Ok(w.alpha * current.total + (1.0 - w.alpha) * last.total + constraints)
}

fn sum_sq_diff(a: &LatentTensor, b: &LatentTensor) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!(
            "latent shapes {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| {
            let d = (*x as f64) - (*y as f64);
            d * d
        })
        .sum())
}

/// Squared-norm penalties `(‖ŷ′_s − ŷ_s‖², ‖ŷ′_ε − ŷ_ε‖²)` (sums, not means).
pub fn idempotence_constraints(
    y_s: &LatentTensor,
    y_s_recoded: &LatentTensor,
    y_eps: &LatentTensor,
    y_eps_recoded: &LatentTensor,
) -> Result<(f64, f64)> {
    Ok((
        sum_sq_diff(y_s_recoded, y_s)?,
        sum_sq_diff(y_eps_recoded, y_eps)?,
    ))
}

/// Warm-up term `a·log2 p(ỹ_l) + b·std(rates)` with `log2 p(ỹ_l) = −rate_l`
/// and the population standard deviation over all levels.
pub fn warming_constraint(level_rates_bits: &[f64], l: usize, a: f64, b: f64) -> Result<f64> {
    if l == 0 || l > level_rates_bits.len() {
        return Err(Error::IndexOutOfRange {
            index: l,
            len: level_rates_bits.len(),
        });
    }
    if level_rates_bits.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::InvalidConfig("level rates must be non-negative".into()));
    }
    let n = level_rates_bits.len() as f64;
    let mean = level_rates_bits.iter().sum::<f64>() / n;
    let var = level_rates_bits
        .iter()
        .map(|r| (r - mean) * (r - mean))
        .sum::<f64>()
        / n;
    Ok(-a * level_rates_bits[l - 1] + b * var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flat(v: u8) -> Image {
        Image::new(8, 8, vec![v; 64]).unwrap()
    }

    #[test]
    fn table_entries() {
        let w = table1_weights();
        assert_eq!(w.levels(), 16);
        assert_eq!(w.alpha, 0.5);
        assert_eq!((w.lambda_r[7], w.lambda_d[7], w.lambda_p[7]), (1024.0, 16.0, 8.0));
        assert_eq!((w.lambda_r[15], w.lambda_d[15], w.lambda_p[15]), (2048.0, 8.0, 1.0));
        assert_eq!(w.lambda_r[0], 128.0);
        assert_eq!(w.lambda_d[0], (39.0f64 / 8.0).exp2());
        assert_eq!(w.lambda_p[0], (45.0f64 / 8.0).exp2());
        assert!(w.validate().is_ok());
    }

    #[test]
    fn perfect_recons_cost_only_rate() {
        let w = table1_weights();
        let x = flat(100);
        let l = level_loss(1, 3.0, &x, &[x.clone(), x.clone()], &w).unwrap();
        assert_eq!(l.total, 128.0 * 3.0);
    }

    #[test]
    fn distortion_is_averaged_over_samples() {
        let w = table1_weights();
        let x = flat(100);
        let mut px = vec![100u8; 64];
        for (i, p) in px.iter_mut().enumerate() {
            if i % 2 == 0 {
                *p = 102;
            }
        }
        let noisy = Image::new(8, 8, px).unwrap();
        assert_eq!(mse(&x, &noisy).unwrap(), 2.0);
        // zero perception metric isolates the distortion term
        let zero = |_: &Image, _: &Image| Ok(0.0);
        let l = level_loss_with(1, 0.0, &x, &[x.clone(), noisy], &w, &zero).unwrap();
        assert_eq!(l.distortion, 1.0);
        assert_eq!(l.total, w.lambda_d[0] * 1.0);
    }

    #[test]
    fn alternating_endpoints() {
        let mut w = table1_weights();
        let mk = |t| Some(LossBreakdown { total: t, ..Default::default() });
        let mut losses = vec![None; 16];
        losses[2] = mk(10.0);
        losses[15] = mk(30.0);
        assert_eq!(alternating_loss(3, &losses, 1.0, &w).unwrap(), 0.5 * 10.0 + 0.5 * 30.0 + 1.0);
        assert_eq!(alternating_loss(16, &losses, 1.0, &w).unwrap(), 31.0);
        w.alpha = 1.0;
        assert_eq!(alternating_loss(3, &losses, 1.0, &w).unwrap(), 11.0);
        losses[15] = None;
        assert!(matches!(
            alternating_loss(3, &losses, 1.0, &w),
            Err(Error::MissingLevel(16))
        ));
    }

    #[test]
    fn warming_examples() {
        assert_eq!(warming_constraint(&[2.0, 2.0, 2.0], 2, 0.0, 64.0).unwrap(), 0.0);
        let v = warming_constraint(&[1.0, 2.0, 3.0], 2, 4.0, 64.0).unwrap();
        assert_abs_diff_eq!(v, -8.0 + 64.0 * (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 44.2558, epsilon = 1e-4);
        assert!(warming_constraint(&[1.0], 2, 4.0, 64.0).is_err());
    }

    #[test]
    fn idempotence_examples() {
        let z = LatentTensor::zeros(1, 2, 2);
        let mut one = z.clone();
        one.set(0, 0, 1, 1);
        assert_eq!(idempotence_constraints(&z, &z, &z, &z).unwrap(), (0.0, 0.0));
        assert_eq!(idempotence_constraints(&z, &one, &z, &z).unwrap(), (1.0, 0.0));
        let mut three = z.clone();
        three.set(0, 0, 0, 2);
        three.set(0, 0, 1, -2);
        three.set(0, 1, 1, 2);
        assert_eq!(idempotence_constraints(&z, &three, &z, &z).unwrap().0, 12.0);
        let other = LatentTensor::zeros(2, 2, 2);
        assert!(idempotence_constraints(&z, &other, &z, &z).is_err());
    }
}
