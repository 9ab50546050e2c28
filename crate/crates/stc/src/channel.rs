//! Source and query model: items are i.i.d. Gaussian feature vectors, a query
//! is an enrolled item plus i.i.d. Gaussian noise. All sampling is reproducible
//! from a 64-bit seed.
//!
//! RNG identity: ChaCha12 streams, one per logical unit of work (a database
//! row, a query, a matrix). Substream seeds are derived from the master seed
//! with a splitmix64 mix, so parallel generation is deterministic regardless
//! of scheduling. Reproducibility is bit-level within this implementation and
//! statistical across implementations.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, StcError};

/// Upper tail of the standard normal, Q(u) = P(Z > u).
///
/// Implemented through the complementary error function; relative accuracy is
/// that of `libm::erfc`, well under 1e-12. Every sparsity and threshold
/// formula in the crate feeds from this.
pub fn q_function(u: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(StcError::Domain(format!("q_function: non-finite input {u}")));
    }
    Ok(0.5 * libm::erfc(u / std::f64::consts::SQRT_2))
}

/// The scalar channel: source F ~ N(0, sigma_f^2), query Q = F + P with
/// P ~ N(0, sigma_p^2) independent of F.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChannelSpec {
    pub sigma_f: f64,
    pub sigma_p: f64,
}

impl ChannelSpec {
    pub fn new(sigma_f: f64, sigma_p: f64) -> Result<Self> {
        if !(sigma_f.is_finite() && sigma_f > 0.0) {
            return Err(StcError::Domain(format!("sigma_f must be positive, got {sigma_f}")));
        }
        if !(sigma_p.is_finite() && sigma_p >= 0.0) {
            return Err(StcError::Domain(format!("sigma_p must be non-negative, got {sigma_p}")));
        }
        Ok(Self { sigma_f, sigma_p })
    }

    /// sigma_f = 1, sigma_p set so that 10 log10(sigma_f^2/sigma_p^2) = snr_db.
    pub fn from_snr_db(snr_db: f64) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(StcError::Domain(format!("snr_db must be finite, got {snr_db}")));
        }
        Self::new(1.0, 10f64.powf(-snr_db / 20.0))
    }

    /// Standard deviation of the query marginal, sqrt(sigma_f^2 + sigma_p^2).
    pub fn sigma_q(&self) -> f64 {
        self.sigma_f.hypot(self.sigma_p)
    }

    /// Correlation between a source coordinate and its queried value,
    /// rho = sigma_f / sqrt(sigma_f^2 + sigma_p^2). Lies in (0, 1].
    pub fn rho(&self) -> f64 {
        self.sigma_f / self.sigma_q()
    }

    /// 10 log10(sigma_f^2 / sigma_p^2); +inf iff sigma_p = 0.
    pub fn snr_db(&self) -> f64 {
        if self.sigma_p == 0.0 {
            f64::INFINITY
        } else {
            20.0 * (self.sigma_f / self.sigma_p).log10()
        }
    }
}

/// Row-major M x n matrix of enrolled feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// splitmix64 finalizer; full-period mix of a 64-bit word.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of substream `index` within stream class `tag`.
/// Distinct (tag, index) pairs give independent ChaCha12 streams.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ tag.wrapping_mul(0xA076_1D64_78BD_642F)).wrapping_add(index))
}

pub(crate) const STREAM_DATABASE: u64 = 1;
pub(crate) const STREAM_QUERY: u64 = 2;
pub(crate) const STREAM_PROJECTION: u64 = 3;

/// Samples M rows of n i.i.d. N(0, sigma_f^2) values. Row i uses its own
/// derived stream, so the matrix is reproducible under any parallel split.
pub fn sample_database(spec: &ChannelSpec, n: usize, m: usize, seed: u64) -> Result<FeatureMatrix> {
    if n == 0 || m == 0 {
        return Err(StcError::Domain("sample_database: n and M must be at least 1".into()));
    }
    let total = m
        .checked_mul(n)
        .filter(|t| t.checked_mul(8).is_some())
        .ok_or_else(|| StcError::Capacity(format!("feature matrix {m} x {n} exceeds addressable size")))?;
    let normal = Normal::new(0.0, spec.sigma_f).expect("validated sigma_f");
    let mut values = vec![0.0f64; total];
    for (i, row) in values.chunks_mut(n).enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, STREAM_DATABASE, i as u64));
        for v in row.iter_mut() {
            *v = normal.sample(&mut rng);
        }
    }
    Ok(FeatureMatrix { rows: m, dim: n, values, seed })
}

/// Returns item + i.i.d. N(0, sigma_p^2) noise. With sigma_p = 0 the output
/// equals the input exactly.
pub fn sample_query(item: &[f64], spec: &ChannelSpec, seed: u64) -> Vec<f64> {
    if spec.sigma_p == 0.0 {
        return item.to_vec();
    }
    let normal = Normal::new(0.0, spec.sigma_p).expect("validated sigma_p");
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, STREAM_QUERY, 0));
    item.iter().map(|&x| x + normal.sample(&mut rng)).collect()
}
