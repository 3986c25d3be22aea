//! Vector AWGN channel and SNR bookkeeping.
//!
//! Constellations are normalized to `Es = 1`, so the noise level is fully
//! described by `N0`; each real dimension sees Gaussian noise of variance
//! `N0 / 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    n0: f64,
    dims: usize,
}

impl ChannelSpec {
    pub fn new(n0: f64, dims: usize) -> Result<Self> {
        if n0.is_nan() || n0 <= 0.0 || n0.is_infinite() {
            return Err(Error::invalid(format!(
                "N0 must be positive and finite, got {n0}"
            )));
        }
        Ok(ChannelSpec { n0, dims })
    }

    /// Channel at the given `Es/N0` in dB for a unit-energy constellation.
    pub fn from_es_n0_db(es_n0_db: f64, dims: usize) -> Result<Self> {
        Self::new(es_n0_to_n0(es_n0_db), dims)
    }

    pub fn n0(&self) -> f64 {
        self.n0
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Noise standard deviation per real dimension, `sqrt(N0/2)`.
    pub fn sigma(&self) -> f64 {
        (self.n0 / 2.0).sqrt()
    }

    /// Adds noise to `y` in place.
    pub fn add_noise_in_place<R: Rng + ?Sized>(&self, y: &mut [f64], rng: &mut R) -> Result<()> {
        if !y.len().is_multiple_of(self.dims) {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                got: y.len(),
            });
        }
        let sigma = self.sigma();
        for v in y.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
        Ok(())
    }
}

/// `y = x + z` with `z` i.i.d. zero-mean Gaussian of variance `N0/2`.
pub fn add_noise<R: Rng + ?Sized>(x: &[f64], ch: &ChannelSpec, rng: &mut R) -> Result<Vec<f64>> {
    if x.len() != ch.dims {
        return Err(Error::DimensionMismatch {
            expected: ch.dims,
            got: x.len(),
        });
    }
    let mut y = x.to_vec();
    ch.add_noise_in_place(&mut y, rng)?;
    Ok(y)
}

/// `N0 = 10^(-Es/N0 [dB] / 10)` for `Es = 1`.
pub fn es_n0_to_n0(es_n0_db: f64) -> f64 {
    10f64.powf(-es_n0_db / 10.0)
}

/// `Eb/N0 = Es/N0 - 10 log10(R)` in dB.
pub fn eb_n0_db(es_n0_db: f64, rate: f64) -> Result<f64> {
    if rate.is_nan() || rate <= 0.0 {
        return Err(Error::invalid(format!("rate must be positive, got {rate}")));
    }
    Ok(es_n0_db - 10.0 * rate.log10())
}

/// An operating point: SNR in both conventions plus the transmission rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub es_n0_db: f64,
    pub eb_n0_db: f64,
    pub rate: f64,
}

impl RatePoint {
    pub fn new(es_n0_db: f64, rate: f64) -> Result<Self> {
        Ok(RatePoint {
            es_n0_db,
            eb_n0_db: eb_n0_db(es_n0_db, rate)?,
            rate,
        })
    }
}

/// Independent random substream `stream` of the master seed.
///
/// Work units (simulated blocks, Monte Carlo batches, labeling restarts) each
/// own one substream, so results do not depend on how work is scheduled.
pub fn substream(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}
