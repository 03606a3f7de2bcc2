use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Task duration law, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DurationDist<T> {
    Constant { seconds: T },
    /// Normal law truncated at zero (negative draws are redrawn).
    Normal { mean: T, sd: T },
    /// Log-normal law; `mu` and `sigma` parameterize the underlying normal.
    LogNormal { mu: T, sigma: T },
    /// Recorded durations replayed in order, cycling when more tasks are requested.
    Empirical { samples: Vec<T> },
    /// Each task is the sum of `count` independent draws of `inner`.
    Batched { inner: Box<DurationDist<T>>, count: u32 },
}

impl<T: Scalar> DurationDist<T> {
    pub fn constant(seconds: T) -> Self {
        DurationDist::Constant { seconds }
    }

    /// Log-normal law with the given mean and standard deviation.
    pub fn lognormal_from_moments(mean: T, sd: T) -> Result<Self> {
        if !(mean > T::zero()) || sd < T::zero() {
            return Err(invalid("log-normal moments need mean > 0 and sd >= 0"));
        }
        let ratio = sd / mean;
        let sigma2 = (T::one() + ratio * ratio).ln();
        Ok(DurationDist::LogNormal {
            mu: mean.ln() - sigma2 / T::lit(2.0),
            sigma: sigma2.sqrt(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: T| v.is_finite() && v >= T::zero();
        match self {
            DurationDist::Constant { seconds } if finite_nonneg(*seconds) => Ok(()),
            DurationDist::Normal { mean, sd } if mean.is_finite() && finite_nonneg(*sd) => Ok(()),
            DurationDist::LogNormal { mu, sigma } if mu.is_finite() && finite_nonneg(*sigma) => {
                Ok(())
            }
            DurationDist::Empirical { samples }
                if !samples.is_empty() && samples.iter().all(|s| finite_nonneg(*s)) =>
            {
                Ok(())
            }
            DurationDist::Batched { inner, count } if *count >= 1 => inner.validate(),
            other => Err(invalid(format!("invalid duration distribution {other:?}"))),
        }
    }

    /// Expected duration. The normal law's truncation at zero is ignored.
    pub fn mean(&self) -> T {
        match self {
            DurationDist::Constant { seconds } => *seconds,
            DurationDist::Normal { mean, .. } => mean.max(T::zero()),
            DurationDist::LogNormal { mu, sigma } => (*mu + *sigma * *sigma / T::lit(2.0)).exp(),
            DurationDist::Empirical { samples } => {
                samples.iter().fold(T::zero(), |a, &s| a + s) / T::count(samples.len())
            }
            DurationDist::Batched { inner, count } => inner.mean() * T::lit(f64::from(*count)),
        }
    }

    /// True when draws can differ from one another.
    pub fn has_variance(&self) -> bool {
        match self {
            DurationDist::Constant { .. } => false,
            DurationDist::Normal { sd, .. } => *sd > T::zero(),
            DurationDist::LogNormal { sigma, .. } => *sigma > T::zero(),
            DurationDist::Empirical { samples } => samples.windows(2).any(|w| w[0] != w[1]),
            DurationDist::Batched { inner, .. } => inner.has_variance(),
        }
    }

    /// Draws `n` durations in task order.
    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<T>> {
        self.validate()?;
        let mut out = Vec::with_capacity(n);
        match self {
            DurationDist::Empirical { samples } => {
                out.extend(samples.iter().cycle().take(n).copied());
            }
            _ => {
                let mut sampler = Sampler::new(self)?;
                for _ in 0..n {
                    out.push(T::lit(sampler.draw(rng)));
                }
            }
        }
        Ok(out)
    }
}

enum Sampler {
    Constant(f64),
    Normal(Normal<f64>),
    LogNormal(LogNormal<f64>),
    Batched(Box<Sampler>, u32),
}

impl Sampler {
    fn new<T: Scalar>(dist: &DurationDist<T>) -> Result<Self> {
        Ok(match dist {
            DurationDist::Constant { seconds } => Sampler::Constant(seconds.as_f64()),
            DurationDist::Normal { mean, sd } => Sampler::Normal(
                Normal::new(mean.as_f64(), sd.as_f64()).map_err(|e| invalid(e.to_string()))?,
            ),
            DurationDist::LogNormal { mu, sigma } => Sampler::LogNormal(
                LogNormal::new(mu.as_f64(), sigma.as_f64()).map_err(|e| invalid(e.to_string()))?,
            ),
            DurationDist::Batched { inner, count } => {
                Sampler::Batched(Box::new(Sampler::new(inner)?), *count)
            }
            DurationDist::Empirical { .. } => {
                return Err(invalid("empirical durations are replayed, not sampled"))
            }
        })
    }

    fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        match self {
            Sampler::Constant(v) => *v,
            Sampler::Normal(n) => {
                if n.mean() <= 0.0 && n.std_dev() == 0.0 {
                    return 0.0;
                }
                loop {
                    let v = n.sample(rng);
                    if v >= 0.0 {
                        return v;
                    }
                }
            }
            Sampler::LogNormal(l) => l.sample(rng),
            Sampler::Batched(inner, count) => (0..*count).map(|_| inner.draw(rng)).sum(),
        }
    }
}
