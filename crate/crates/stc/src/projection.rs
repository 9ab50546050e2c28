//! Random projections from feature space (dim n) to code space (dim l).
//!
//! Dense: i.i.d. N(0, 1/n) entries, unit column norm in expectation.
//! Sparse: entries are +/- sqrt(s/(2n)) with probability 1/s per sign and 0
//! otherwise, so the per-entry variance is 1/n exactly and a projection costs
//! an expected 2nl/s multiply-adds instead of nl. Only the total nonzero
//! probability 2/s matters for the variance analysis; the per-sign split is
//! symmetric here because the projected marginals must stay zero-mean.
//!
//! No exact column re-normalization by default; `normalize_columns` exists
//! for experiments but normalized matrices are no longer regenerable from
//! their seed and are refused by the header-only file format.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::channel::{derive_seed, sample_query, ChannelSpec, STREAM_PROJECTION};
use crate::error::{Result, StcError};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ProjectionKind {
    DenseGaussian,
    SparseSigned { s: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    pub n: usize,
    pub l: usize,
    pub kind: ProjectionKind,
    pub seed: u64,
    pub normalized: bool,
    /// n x l row-major (row = input coordinate), dense kind only
    dense: Vec<f64>,
    /// (input row, output col, signed magnitude), sparse kind only
    sparse: Vec<(u32, u32, f64)>,
}

impl ProjectionMatrix {
    /// i.i.d. N(0, 1/n) entries, deterministic in `seed`.
    pub fn dense(n: usize, l: usize, seed: u64) -> Result<Self> {
        check_dims(n, l)?;
        let normal = Normal::new(0.0, (1.0 / n as f64).sqrt()).expect("positive std");
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, STREAM_PROJECTION, 0));
        let dense = (0..n * l).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            n,
            l,
            kind: ProjectionKind::DenseGaussian,
            seed,
            normalized: false,
            dense,
            sparse: Vec::new(),
        })
    }

    /// Signed sparse entries with sparsity parameter s >= 2.
    pub fn sparse(n: usize, l: usize, s: f64, seed: u64) -> Result<Self> {
        check_dims(n, l)?;
        if !(s.is_finite() && s >= 2.0) {
            return Err(StcError::Domain(format!("sparsity parameter s must be >= 2, got {s}")));
        }
        let magnitude = (s / (2.0 * n as f64)).sqrt();
        let p = 1.0 / s;
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, STREAM_PROJECTION, 0));
        let mut sparse = Vec::with_capacity((2.0 * n as f64 * l as f64 / s) as usize);
        for row in 0..n {
            for col in 0..l {
                let u: f64 = rng.random();
                if u < p {
                    sparse.push((row as u32, col as u32, magnitude));
                } else if u < 2.0 * p {
                    sparse.push((row as u32, col as u32, -magnitude));
                }
            }
        }
        Ok(Self {
            n,
            l,
            kind: ProjectionKind::SparseSigned { s },
            seed,
            normalized: false,
            dense: Vec::new(),
            sparse,
        })
    }

    pub fn generate(n: usize, l: usize, kind: ProjectionKind, seed: u64) -> Result<Self> {
        match kind {
            ProjectionKind::DenseGaussian => Self::dense(n, l, seed),
            ProjectionKind::SparseSigned { s } => Self::sparse(n, l, s, seed),
        }
    }

    pub fn nonzero_count(&self) -> usize {
        match self.kind {
            ProjectionKind::DenseGaussian => self.n * self.l,
            ProjectionKind::SparseSigned { .. } => self.sparse.len(),
        }
    }

    /// Multiply-adds per projected vector; the projection stage cost used for
    /// budget matching across schemes.
    pub fn cost_per_vector(&self) -> usize {
        self.nonzero_count()
    }

    /// v^T W; exact accumulation in f64.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(StcError::Shape { expected: self.n, got: v.len() });
        }
        let mut out = vec![0.0f64; self.l];
        match self.kind {
            ProjectionKind::DenseGaussian => {
                for (i, &vi) in v.iter().enumerate() {
                    if vi != 0.0 {
                        let row = &self.dense[i * self.l..(i + 1) * self.l];
                        for (o, &w) in out.iter_mut().zip(row) {
                            *o += vi * w;
                        }
                    }
                }
            }
            ProjectionKind::SparseSigned { .. } => {
                for &(row, col, w) in &self.sparse {
                    out[col as usize] += v[row as usize] * w;
                }
            }
        }
        Ok(out)
    }

    /// Rescales every column to unit Euclidean norm. The result can no longer
    /// be regenerated from (kind, seed), so it cannot be persisted.
    pub fn normalize_columns(&mut self) {
        let mut norms = vec![0.0f64; self.l];
        match self.kind {
            ProjectionKind::DenseGaussian => {
                for i in 0..self.n {
                    for j in 0..self.l {
                        let w = self.dense[i * self.l + j];
                        norms[j] += w * w;
                    }
                }
                for i in 0..self.n {
                    for j in 0..self.l {
                        if norms[j] > 0.0 {
                            self.dense[i * self.l + j] /= norms[j].sqrt();
                        }
                    }
                }
            }
            ProjectionKind::SparseSigned { .. } => {
                for &(_, col, w) in &self.sparse {
                    norms[col as usize] += w * w;
                }
                for entry in &mut self.sparse {
                    let nrm = norms[entry.1 as usize];
                    if nrm > 0.0 {
                        entry.2 /= nrm.sqrt();
                    }
                }
            }
        }
        self.normalized = true;
    }
}

fn check_dims(n: usize, l: usize) -> Result<()> {
    if n == 0 || l == 0 {
        return Err(StcError::Domain("projection dims must be at least 1".into()));
    }
    n.checked_mul(l)
        .filter(|t| t.checked_mul(8).is_some())
        .ok_or_else(|| StcError::Capacity(format!("projection {n} x {l} exceeds addressable size")))?;
    Ok(())
}

/// Empirical correlation between projected item coordinates and projected
/// query coordinates, pooled over `trials` fresh item/query pairs and all l
/// output coordinates. Converges to rho(spec) as trials grow; test utility.
pub fn projected_channel_check(
    w: &ProjectionMatrix,
    spec: &ChannelSpec,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials < 1 {
        return Err(StcError::Domain("trials must be at least 1".into()));
    }
    let normal = Normal::new(0.0, spec.sigma_f).expect("validated sigma_f");
    let (mut sxx, mut syy, mut sxy) = (0.0f64, 0.0f64, 0.0f64);
    for t in 0..trials {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, STREAM_PROJECTION, 1 + t as u64));
        let f: Vec<f64> = (0..w.n).map(|_| normal.sample(&mut rng)).collect();
        let q = sample_query(&f, spec, derive_seed(seed, STREAM_PROJECTION, 1 + t as u64));
        let pf = w.project(&f)?;
        let pq = w.project(&q)?;
        for (a, b) in pf.iter().zip(&pq) {
            sxx += a * a;
            syy += b * b;
            sxy += a * b;
        }
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_database;

    #[test]
    fn dense_entry_statistics() {
        let n = 500;
        let l = 256;
        let w = ProjectionMatrix::dense(n, l, 1).unwrap();
        let total = (n * l) as f64;
        let mean = w.dense.iter().sum::<f64>() / total;
        let var = w.dense.iter().map(|x| x * x).sum::<f64>() / total - mean * mean;
        assert!(mean.abs() < 3.0 / (total * n as f64).sqrt() * n as f64, "mean {mean}");
        assert!((var - 1.0 / n as f64).abs() < 0.03 / n as f64, "entry variance {var}");
    }

    #[test]
    fn dense_is_deterministic() {
        let a = ProjectionMatrix::dense(64, 32, 9).unwrap();
        let b = ProjectionMatrix::dense(64, 32, 9).unwrap();
        assert_eq!(a, b);
        let c = ProjectionMatrix::dense(64, 32, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dense_column_norms() {
        let n = 500;
        let l = 128;
        let w = ProjectionMatrix::dense(n, l, 2).unwrap();
        let mut mean_sq = 0.0;
        for j in 0..l {
            let mut s = 0.0;
            for i in 0..n {
                let x = w.dense[i * l + j];
                s += x * x;
            }
            mean_sq += s;
        }
        mean_sq /= l as f64;
        assert!((mean_sq - 1.0).abs() < 0.05, "mean squared column norm {mean_sq}");
    }

    #[test]
    fn sparse_statistics() {
        let n = 500;
        let l = 1024;
        let s = 50.0;
        let w = ProjectionMatrix::sparse(n, l, s, 3).unwrap();
        let expected = 2.0 * (n * l) as f64 / s;
        let sd = ((n * l) as f64 * (2.0 / s) * (1.0 - 2.0 / s)).sqrt();
        let got = w.nonzero_count() as f64;
        assert!((got - expected).abs() < 3.0 * sd, "nonzero count {got}, want {expected}");
        // per-entry variance 1/n in expectation
        let var = w.sparse.iter().map(|e| e.2 * e.2).sum::<f64>() / (n * l) as f64;
        assert!((var - 1.0 / n as f64).abs() < 0.03 / n as f64, "entry variance {var}");
    }

    #[test]
    fn sparse_s2_has_no_zeros_and_unit_magnitudes() {
        let n = 100;
        let l = 64;
        let w = ProjectionMatrix::sparse(n, l, 2.0, 4).unwrap();
        assert_eq!(w.nonzero_count(), n * l);
        let m = (1.0 / n as f64).sqrt();
        assert!(w.sparse.iter().all(|e| (e.2.abs() - m).abs() < 1e-15));
    }

    #[test]
    fn sparse_rejects_small_s() {
        assert!(ProjectionMatrix::sparse(10, 10, 1.5, 0).is_err());
    }

    #[test]
    fn projection_norm_preservation() {
        // E ||W v||^2 = (l/n) ||v||^2, averaged over fresh matrices
        let n = 64;
        let l = 32;
        let spec = ChannelSpec::new(1.0, 0.0).unwrap();
        let fm = sample_database(&spec, n, 1, 8).unwrap();
        let v = fm.row(0);
        let vn = v.iter().map(|x| x * x).sum::<f64>();
        let mut acc = 0.0;
        let reps = 1000;
        for seed in 0..reps {
            let w = ProjectionMatrix::dense(n, l, seed).unwrap();
            let p = w.project(v).unwrap();
            acc += p.iter().map(|x| x * x).sum::<f64>();
        }
        let ratio = acc / reps as f64 / ((l as f64 / n as f64) * vn);
        assert!((ratio - 1.0).abs() < 0.05, "energy ratio {ratio}");
    }

    #[test]
    fn sparse_and_dense_share_second_order_statistics() {
        let n = 256;
        let l = 64;
        let spec = ChannelSpec::new(1.0, 0.0).unwrap();
        let fm = sample_database(&spec, n, 200, 12).unwrap();
        let wd = ProjectionMatrix::dense(n, l, 7).unwrap();
        let ws = ProjectionMatrix::sparse(n, l, 25.0, 7).unwrap();
        let mut vd = 0.0;
        let mut vs = 0.0;
        for i in 0..fm.rows {
            let pd = wd.project(fm.row(i)).unwrap();
            let ps = ws.project(fm.row(i)).unwrap();
            vd += pd.iter().map(|x| x * x).sum::<f64>();
            vs += ps.iter().map(|x| x * x).sum::<f64>();
        }
        let ratio = vd / vs;
        assert!((ratio - 1.0).abs() < 0.15, "dense/sparse output variance ratio {ratio}");
    }

    #[test]
    fn johnson_lindenstrauss_sanity() {
        let n = 500;
        let l = 1024;
        let spec = ChannelSpec::new(1.0, 0.0).unwrap();
        let w = ProjectionMatrix::dense(n, l, 13).unwrap();
        let fm = sample_database(&spec, n, 200, 14).unwrap();
        let mut ok = 0;
        for pair in 0..100 {
            let u = fm.row(2 * pair);
            let v = fm.row(2 * pair + 1);
            let d: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
            let dn = d.iter().map(|x| x * x).sum::<f64>();
            let p = w.project(&d).unwrap();
            let pn = p.iter().map(|x| x * x).sum::<f64>();
            let ratio = pn * (n as f64 / l as f64) / dn;
            if (0.7..=1.3).contains(&ratio) {
                ok += 1;
            }
        }
        assert!(ok >= 95, "only {ok}/100 pairs within [0.7, 1.3]");
    }

    #[test]
    fn channel_correlation_through_projection() {
        let w = ProjectionMatrix::dense(256, 8, 21).unwrap();
        // noiseless: rho = 1 exactly since q = f
        let spec = ChannelSpec::new(1.0, 0.0).unwrap();
        let r = projected_channel_check(&w, &spec, 100, 0).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
        // SNR 0 dB
        let spec = ChannelSpec::new(1.0, 1.0).unwrap();
        let r = projected_channel_check(&w, &spec, 20_000, 1).unwrap();
        assert!((r - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.01, "rho hat {r}");
        // near-zero SNR proxy
        let spec = ChannelSpec::new(1.0, 1000.0).unwrap();
        let r = projected_channel_check(&w, &spec, 20_000, 2).unwrap();
        assert!(r.abs() < 0.011, "rho hat {r}");
    }

    #[test]
    fn normalize_columns_gives_unit_norms() {
        let mut w = ProjectionMatrix::dense(128, 16, 30).unwrap();
        w.normalize_columns();
        assert!(w.normalized);
        for j in 0..w.l {
            let mut s = 0.0;
            for i in 0..w.n {
                let x = w.dense[i * w.l + j];
                s += x * x;
            }
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// project is linear: project(a v) = a project(v).
            #[test]
            fn projection_scaling(a in -4.0f64..4.0, seed in 0u64..50) {
                let n = 32;
                let w = ProjectionMatrix::dense(n, 16, seed).unwrap();
                let spec = ChannelSpec::new(1.0, 0.0).unwrap();
                let fm = sample_database(&spec, n, 1, seed + 1000).unwrap();
                let v = fm.row(0);
                let scaled: Vec<f64> = v.iter().map(|x| a * x).collect();
                let p1 = w.project(&scaled).unwrap();
                let p2 = w.project(v).unwrap();
                for (x, y) in p1.iter().zip(&p2) {
                    let want = a * y;
                    prop_assert!((x - want).abs() <= 1e-12 * want.abs().max(1.0));
                }
            }

            /// zero in, zero out; and dimension mismatches are rejected.
            #[test]
            fn zero_vector_and_shape(seed in 0u64..20) {
                let w = ProjectionMatrix::sparse(24, 12, 6.0, seed).unwrap();
                let z = vec![0.0; 24];
                prop_assert!(w.project(&z).unwrap().iter().all(|&x| x == 0.0));
                prop_assert!(w.project(&z[..23]).is_err());
            }
        }
    }
}
