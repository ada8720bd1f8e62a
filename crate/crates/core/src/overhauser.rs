//! Gaussian Overhauser-field sampling and deterministic Monte-Carlo
//! averaging over nuclear-spin configurations.
//!
//! Per-sample seeds come from a splittable-counter construction: the
//! SplitMix64 finalizer applied to `master_seed` and the sample index. The
//! field is static within one pulse sequence and resampled per Monte-Carlo
//! sample. Reductions run in sample-index order so results are bitwise
//! reproducible regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SplitMix64 step: advances the state and returns the next output.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Minimal deterministic RNG over the SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct SplitMix {
    state: u64,
}

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Stream keyed by a (seed, counter) pair; used for per-sample and
    /// per-period substreams.
    pub fn keyed(master_seed: u64, counter: u64) -> Self {
        let mut s = master_seed;
        let a = splitmix64(&mut s);
        Self { state: a ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15) }
    }

    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in (0, 1).
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / 9007199254740992.0
    }

    /// Standard normal via Box–Muller.
    pub fn next_gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let phi = std::f64::consts::TAU * u2;
        (r * phi.cos(), r * phi.sin())
    }
}

/// One static nuclear-field configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverhauserSample {
    /// Field vector, mT.
    pub b_o_mt: [f64; 3],
    pub sample_index: u64,
    pub seed: u64,
}

/// Monte-Carlo run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    /// Production runs use at least 1000 samples.
    #[serde(default = "default_n_samples")]
    pub n_samples: u64,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
}

fn default_n_samples() -> u64 {
    1000
}

fn default_master_seed() -> u64 {
    20_220_831
}

impl MonteCarloConfig {
    pub fn new(n_samples: u64, master_seed: u64) -> Self {
        Self { n_samples, master_seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidParams {
                field: "n_samples".into(),
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Draw the field for one sample index; deterministic in (master_seed, index).
///
/// Components are i.i.d. N(0, sigma_o²) per Cartesian axis.
pub fn sample_field(master_seed: u64, index: u64, sigma_o_mt: f64) -> OverhauserSample {
    let mut rng = SplitMix::keyed(master_seed, index);
    let seed = rng.state;
    let (g0, g1) = rng.next_gaussian_pair();
    let (g2, _) = rng.next_gaussian_pair();
    OverhauserSample {
        b_o_mt: [g0 * sigma_o_mt, g1 * sigma_o_mt, g2 * sigma_o_mt],
        sample_index: index,
        seed,
    }
}

/// Per-sample result vectors in index order, evaluated in parallel.
pub fn monte_carlo_vectors<F>(
    config: &MonteCarloConfig,
    sigma_o_mt: f64,
    simulation: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&OverhauserSample) -> Result<Vec<f64>> + Sync,
{
    config.validate()?;
    (0..config.n_samples)
        .into_par_iter()
        .map(|i| {
            let sample = sample_field(config.master_seed, i, sigma_o_mt);
            simulation(&sample).map_err(|e| Error::SampleFailed {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Mean and standard error of a per-sample simulation, fixed reduction order.
///
/// Averaging unnormalized conditional probabilities commutes with averaging
/// the conditional density matrices themselves; callers form ratios after
/// this reduction.
pub fn average<F>(
    config: &MonteCarloConfig,
    sigma_o_mt: f64,
    simulation: F,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&OverhauserSample) -> Result<Vec<f64>> + Sync,
{
    let rows = monte_carlo_vectors(config, sigma_o_mt, simulation)?;
    Ok(reduce_mean_stderr(&rows))
}

/// Index-ordered mean and standard error of the mean.
pub fn reduce_mean_stderr(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; width];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut stderr = vec![0.0; width];
    if n > 1 {
        for row in rows {
            for ((s, v), m) in stderr.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut stderr {
            *s = (*s / ((n - 1) as f64 * n as f64)).sqrt();
        }
    }
    (mean, stderr)
}
