use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::Dof;

/// Counter-based random stream keyed by `(seed, stream_id)`.
///
/// ChaCha is a block cipher in counter mode, so the `i`-th output of a stream
/// is a pure function of `(seed, stream_id, i)`. Replicate `b` of every Monte
/// Carlo loop uses `stream_id = b`, which makes results independent of how
/// replicates are scheduled across workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// `n` i.i.d. standard normal draws from the start of `stream`.
pub fn sample_std_normal_vector(n: usize, stream: RngStream) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// One draw of `N` with `r N^2 ~ chi2_r`; exactly 1 when `r = inf`.
pub fn sample_chi_with<R: Rng + ?Sized>(r: Dof, rng: &mut R) -> f64 {
    match r {
        Dof::Infinite => 1.0,
        Dof::Finite(r) => {
            let rf = r as f64;
            let chi2 = ChiSquared::new(rf).expect("positive dof");
            (chi2.sample(rng) / rf).sqrt()
        }
    }
}

/// First draw of `N` on `stream`.
pub fn sample_chi(r: Dof, stream: RngStream) -> f64 {
    sample_chi_with(r, &mut stream.rng())
}
