//! Seeded random sources and the conditional samplers used by the Gibbs fits.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

/// Seeded generator. Identical seeds give identical streams on every platform.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent source for sub-stream `stream`, derived from this
    /// source's seed only (not from its current position).
    pub fn fork(&self, stream: u64) -> RandomSource {
        RandomSource::new(splitmix64(self.seed ^ splitmix64(stream.wrapping_add(1))))
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Draws index `i` with probability `weights[i] / sum(weights)`.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::AllZeroWeights);
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return Ok(i);
            }
            u -= w;
            last = i;
        }
    }
    Ok(last)
}

/// Categorical draw from unnormalised log-weights. Overwrites `log_weights`.
pub fn sample_log_categorical<R: Rng + ?Sized>(
    log_weights: &mut [f64],
    rng: &mut R,
) -> Result<usize> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::AllZeroWeights);
    }
    for w in log_weights.iter_mut() {
        *w = (*w - max).exp();
    }
    sample_categorical(log_weights, rng)
}

/// Log of a Gamma(shape, 1) variate. Shapes below one use the
/// `Gamma(a + 1) * U^(1/a)` identity in log space so tiny shapes cannot
/// underflow to zero.
fn log_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(Error::NonPositiveCount(shape));
    }
    let boost = shape < 1.0;
    let g = Gamma::new(if boost { shape + 1.0 } else { shape }, 1.0)
        .map_err(|e| Error::SamplerFailure(e.to_string()))?;
    let x: f64 = g.sample(rng);
    let mut lx = x.ln();
    if boost {
        // open interval (0, 1]
        let u = 1.0 - rng.random::<f64>();
        lx += u.ln() / shape;
    }
    Ok(lx)
}

/// Fills `out` with a Dirichlet(`counts`) draw.
///
/// Entries are clamped below at `f64::MIN_POSITIVE` so that their logarithms
/// stay finite.
pub fn sample_dirichlet_into<R: Rng + ?Sized>(
    counts: &[f64],
    out: &mut [f64],
    rng: &mut R,
) -> Result<()> {
    debug_assert_eq!(counts.len(), out.len());
    for (o, &a) in out.iter_mut().zip(counts) {
        *o = log_gamma_variate(a, rng)?;
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o = (*o / total).max(f64::MIN_POSITIVE);
    }
    Ok(())
}

pub fn sample_dirichlet<R: Rng + ?Sized>(counts: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let mut out = vec![0.0; counts.len()];
    sample_dirichlet_into(counts, &mut out, rng)?;
    Ok(out)
}

/// Beta(a, b) via the ratio of two Gamma variates.
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let la = log_gamma_variate(a, rng)?;
    let lb = log_gamma_variate(b, rng)?;
    // a / (a + b) = 1 / (1 + exp(lb - la))
    let x = 1.0 / (1.0 + (lb - la).exp());
    Ok(x.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Standardised lower bound beyond which the tail rejection samplers take over.
const TAIL_SWITCH: f64 = 4.0;
const MAX_REJECTIONS: usize = 100_000;

/// Standard normal restricted to `[a, b]`, `a > 0`.
fn right_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    // Narrow intervals: uniform proposal, acceptance >= exp(-1 - 1/(2a^2)).
    if b - a < 1.0 / a {
        for _ in 0..MAX_REJECTIONS {
            let z = a + (b - a) * rng.random::<f64>();
            let u: f64 = rng.random();
            if u.ln() <= 0.5 * (a * a - z * z) {
                return Ok(z);
            }
        }
    } else {
        // Translated exponential proposal with the optimal rate.
        let rate = 0.5 * (a + (a * a + 4.0).sqrt());
        for _ in 0..MAX_REJECTIONS {
            let e = -(1.0 - rng.random::<f64>()).ln() / rate;
            let z = a + e;
            if z > b {
                continue;
            }
            let u: f64 = rng.random();
            if u.ln() <= -0.5 * (z - rate) * (z - rate) {
                return Ok(z);
            }
        }
    }
    Err(Error::SamplerFailure(format!(
        "truncated normal rejection did not terminate on [{a}, {b}]"
    )))
}

/// Standard normal restricted to `[a, b]` with `a <= TAIL_SWITCH`, by
/// inversion. Works on the side of the mean where the CDF is small.
fn by_inversion<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    if a > 0.0 {
        return by_inversion(-b, -a, rng).map(|z| -z);
    }
    let pa = std_normal_cdf(a);
    let pb = std_normal_cdf(b);
    if !(pb > pa) {
        // The interval is too narrow for the CDF to resolve; the density is
        // flat across it, so a uniform proposal is exact and accepts fast.
        for _ in 0..MAX_REJECTIONS {
            let z = a + (b - a) * rng.random::<f64>();
            let peak = if b < 0.0 { b } else if a > 0.0 { a } else { 0.0 };
            if rng.random::<f64>().ln() <= 0.5 * (peak * peak - z * z) {
                return Ok(z);
            }
        }
        return Err(Error::SamplerFailure(format!(
            "interval [{a}, {b}] has no resolvable mass"
        )));
    }
    let u = pa + (pb - pa) * rng.random::<f64>();
    let z = std_normal_quantile(u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON));
    Ok(z.clamp(a, b))
}

/// Gaussian with the given mean and precision, conditioned on
/// `lower <= x <= upper`. Either bound may be infinite.
///
/// Mild truncations are sampled by inverse CDF; once the interval starts
/// more than four standard deviations into a tail an exponential (or
/// uniform, for narrow intervals) rejection sampler is used instead.
pub fn sample_truncated_gaussian<R: Rng + ?Sized>(
    mean: f64,
    precision: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(precision > 0.0) || !precision.is_finite() || !mean.is_finite() {
        return Err(Error::SamplerFailure(format!(
            "invalid gaussian parameters mean={mean} precision={precision}"
        )));
    }
    if lower.is_nan() || upper.is_nan() || lower >= upper {
        return Err(Error::EmptyInterval { lower, upper });
    }
    let sd = precision.sqrt().recip();
    if lower == f64::NEG_INFINITY && upper == f64::INFINITY {
        let z: f64 = StandardNormal.sample(rng);
        return Ok(mean + sd * z);
    }
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    let z = if a > TAIL_SWITCH {
        right_tail(a, b, rng)?
    } else if b < -TAIL_SWITCH {
        -right_tail(-b, -a, rng)?
    } else {
        by_inversion(a, b, rng)?
    };
    Ok((mean + sd * z).clamp(lower, upper))
}
