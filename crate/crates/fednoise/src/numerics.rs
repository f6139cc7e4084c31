//! Vector arithmetic, labeled RNG streams and Gaussian sampling.
//!
//! Every random draw in the simulator goes through an [`RngStream`], which is
//! derived from a master seed plus a `(purpose, client, round)` label. Streams
//! with different labels are independent and reproducible regardless of the
//! order in which workers touch them.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// An h-dimensional parameter / update / noise vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn from_vec(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|x| x.is_finite()));
        ModelVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ModelVector(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &ModelVector) -> Result<ModelVector> {
        self.check_len(other)?;
        Ok(ModelVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn add_in_place(&mut self, other: &ModelVector) -> Result<()> {
        self.check_len(other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &ModelVector) -> Result<ModelVector> {
        self.check_len(other)?;
        Ok(ModelVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, factor: f64) -> ModelVector {
        ModelVector(self.0.iter().map(|x| x * factor).collect())
    }

    pub fn negate(&self) -> ModelVector {
        self.scale(-1.0)
    }

    fn check_len(&self, other: &ModelVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }
}

/// What a derived RNG stream is used for. Part of the stream label, so two
/// different purposes never share randomness even for the same client/round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    ModelInit,
    DataGen,
    Participants,
    Training,
    DpNoise,
    NoiseShares,
    Neighbors,
    Distortion,
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::ModelInit => 1,
            StreamPurpose::DataGen => 2,
            StreamPurpose::Participants => 3,
            StreamPurpose::Training => 4,
            StreamPurpose::DpNoise => 5,
            StreamPurpose::NoiseShares => 6,
            StreamPurpose::Neighbors => 7,
            StreamPurpose::Distortion => 8,
        }
    }
}

/// A labeled, reproducible random stream. Same `(master_seed, label)` always
/// yields the same sample sequence.
pub struct RngStream {
    rng: ChaCha20Rng,
}

// splitmix64 finalizer; a bijection on u64, used to absorb label fields and
// squeeze the 256-bit child seed.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

impl RngStream {
    pub fn derive(master_seed: u64, purpose: StreamPurpose, client: u64, round: u64) -> Self {
        // Absorb each label field in order so that (a, b) and (b, a) land on
        // different streams.
        let mut state = mix(master_seed ^ 0x6a09_e667_f3bc_c909);
        for field in [purpose.tag(), client, round] {
            state = mix(state.rotate_left(17) ^ field.wrapping_mul(GOLDEN_GAMMA));
        }
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            state = state.wrapping_add(GOLDEN_GAMMA);
            chunk.copy_from_slice(&mix(state).to_le_bytes());
        }
        RngStream {
            rng: ChaCha20Rng::from_seed(seed),
        }
    }

    /// Shuffle a slice in place using this stream.
    pub fn shuffle<T>(&mut self, values: &mut [T]) {
        values.shuffle(&mut self.rng);
    }

    /// A uniform integer in `[0, bound)`.
    pub fn index(&mut self, bound: usize) -> usize {
        self.rng.random_range(0..bound)
    }

    /// `count` distinct indices drawn uniformly from `[0, bound)`.
    pub fn sample_indices(&mut self, bound: usize, count: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.rng, bound, count).into_vec()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// Draw `dim` i.i.d. samples from N(mean, variance).
pub fn sample_gaussian(
    dim: usize,
    mean: f64,
    variance: f64,
    rng: &mut RngStream,
) -> Result<ModelVector> {
    if dim == 0 {
        return Err(Error::Parameter("dimension must be positive".into()));
    }
    if !variance.is_finite() || variance < 0.0 {
        return Err(Error::Parameter(format!(
            "variance must be nonnegative, got {variance}"
        )));
    }
    if variance == 0.0 {
        return Ok(ModelVector(vec![mean; dim]));
    }
    let normal = Normal::new(mean, variance.sqrt())
        .map_err(|e| Error::Parameter(format!("invalid normal parameters: {e}")))?;
    Ok(ModelVector(
        (0..dim).map(|_| normal.sample(rng)).collect(),
    ))
}

/// Draw a single sample from N(mean, variance).
pub fn sample_gaussian_scalar(mean: f64, variance: f64, rng: &mut RngStream) -> Result<f64> {
    Ok(sample_gaussian(1, mean, variance, rng)?.0[0])
}

/// L2-norm clipping: rescale `v` so its norm never exceeds `threshold`.
pub fn clip_l2(v: &ModelVector, threshold: f64) -> Result<ModelVector> {
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(Error::Parameter(format!(
            "clip threshold must be positive, got {threshold}"
        )));
    }
    let norm = v.l2_norm();
    if norm <= threshold {
        Ok(v.clone())
    } else {
        Ok(v.scale(threshold / norm))
    }
}
