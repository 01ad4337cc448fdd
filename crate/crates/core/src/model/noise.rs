use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Source of per-element perturbations injected into a level's output.
pub trait NoiseSource: Send {
    fn sample(&mut self) -> f64;
}

/// i.i.d. zero-mean normal samples (standard deviation 1 unless set).
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    rng: ChaCha8Rng,
    std_dev: f64,
}

impl GaussianNoise {
    pub fn new(seed: u64) -> Self {
        Self::with_std(seed, 1.0)
    }

    pub fn with_std(seed: u64, std_dev: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            std_dev,
        }
    }
}

impl NoiseSource for GaussianNoise {
    fn sample(&mut self) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.std_dev * z
    }
}

/// Always zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn sample(&mut self) -> f64 {
        0.0
    }
}
