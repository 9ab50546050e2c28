//! Information-theoretic analysis of the quantized query channel.
//!
//! The projected item coordinate and the projected query coordinate form a
//! bivariate normal pair with correlation rho = sigma_f / sigma_q. Quantizing
//! both sides gives a discrete memoryless channel; everything here (transition
//! matrix, mutual information, coding gain, decoder constants) is an exact
//! function of (lambda_x, lambda_y, channel), computed from bivariate normal
//! rectangle masses rather than simulation.

use rayon::prelude::*;

use crate::bvn::rect_prob;
use crate::channel::{q_function, ChannelSpec};
use crate::encode::{ternary_entropy, xlog2, ThresholdPair};
use crate::error::{Result, StcError};

/// Symbol order used for all 3x3 tables: +1, 0, -1.
pub const SYMBOLS: [i8; 3] = [1, 0, -1];

/// Row/column index of a ternary symbol in transition tables.
pub fn symbol_index(sym: i8) -> Option<usize> {
    match sym {
        1 => Some(0),
        0 => Some(1),
        -1 => Some(2),
        _ => None,
    }
}

/// Floor applied inside logarithms of channel probabilities, so that
/// structurally impossible transitions become large finite penalties instead
/// of infinities.
pub const LOG_CLAMP: f64 = 1e-12;

/// An x-marginal below this is treated as zero: the conditional row is left
/// unnormalized (all zeros) and flagged undefined.
const MARGINAL_EPS: f64 = 1e-15;

/// Conditional law p(y | x) of the quantized channel. Rows follow `SYMBOLS`
/// order for x, columns for y. `defined[i]` is false when the x-marginal of
/// row i is (numerically) zero; such rows hold 0.0 placeholders, not NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    pub p: [[f64; 3]; 3],
    pub defined: [bool; 3],
}

impl TransitionMatrix {
    /// p(y | x) by symbol value.
    pub fn prob(&self, x: i8, y: i8) -> Option<f64> {
        let i = symbol_index(x)?;
        let j = symbol_index(y)?;
        self.defined[i].then(|| self.p[i][j])
    }

    /// Natural-log table ln p(y | x) with entries floored at `LOG_CLAMP`,
    /// including entries of undefined rows (those read as ln LOG_CLAMP).
    pub fn ln_table(&self) -> [[f64; 3]; 3] {
        let mut t = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                t[i][j] = self.p[i][j].max(LOG_CLAMP).ln();
            }
        }
        t
    }
}

/// Transition matrix of the ternary-in ternary-out channel at thresholds
/// (lambda_x for items, lambda_y for queries).
///
/// Five entries are independent; the rest follow from the sign symmetry of
/// the zero-mean bivariate normal: the x = -1 row is the x = +1 row with
/// columns reversed, and p(-1 | 0) = p(+1 | 0).
pub fn transition_matrix(thr: &ThresholdPair, spec: &ChannelSpec) -> Result<TransitionMatrix> {
    let thr = ThresholdPair::new(thr.lambda_x, thr.lambda_y)?;
    let a = thr.lambda_x / spec.sigma_f;
    let b = thr.lambda_y / spec.sigma_q();
    let rho = spec.rho();
    let alpha = q_function(a)?;
    let pz = 1.0 - 2.0 * alpha;
    let inf = f64::INFINITY;
    // joint cell masses for the x = +1 and x = 0 rows, standardized scale
    let jpp = rect_prob(a, inf, b, inf, rho)?;
    let jp0 = rect_prob(a, inf, -b, b, rho)?;
    let jpn = rect_prob(a, inf, -inf, -b, rho)?;
    let j0p = rect_prob(-a, a, b, inf, rho)?;
    let j00 = rect_prob(-a, a, -b, b, rho)?;
    let mut p = [[0.0f64; 3]; 3];
    let mut defined = [false; 3];
    if alpha >= MARGINAL_EPS {
        p[0] = [jpp / alpha, jp0 / alpha, jpn / alpha];
        p[2] = [p[0][2], p[0][1], p[0][0]];
        defined[0] = true;
        defined[2] = true;
    }
    if pz >= MARGINAL_EPS {
        p[1] = [j0p / pz, j00 / pz, j0p / pz];
        defined[1] = true;
    }
    Ok(TransitionMatrix { p, defined })
}

/// Output-side per-sign sparsity recovered by marginalizing the transition
/// matrix against the input law (alpha, 1 - 2 alpha, alpha). Equals
/// Q(lambda_y / sigma_q) up to quadrature error; exists as a cross-check.
pub fn gamma_marginalized(p: &TransitionMatrix, alpha: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&alpha) || alpha.is_nan() {
        return Err(StcError::Domain(format!("alpha must lie in [0, 0.5], got {alpha}")));
    }
    // P(y = +1) = alpha p(+1|+1) + alpha p(+1|-1) + (1 - 2 alpha) p(+1|0),
    // and p(+1|-1) = p(-1|+1) by symmetry.
    Ok(alpha * (p.p[0][0] + p.p[0][2]) + (1.0 - 2.0 * alpha) * p.p[1][0])
}

/// Sign-flip probability of the binary (sign-quantized) channel,
/// arccos(rho) / pi.
pub fn binary_flip_prob(spec: &ChannelSpec) -> f64 {
    spec.rho().acos() / std::f64::consts::PI
}

/// Per-coordinate mutual information of the binary channel in bits:
/// 1 - H2(flip probability).
pub fn binary_mi(spec: &ChannelSpec) -> f64 {
    let pb = binary_flip_prob(spec);
    1.0 - crate::encode::binary_entropy_h2(pb).expect("flip prob lies in [0, 1/2]")
}

/// Everything the threshold designer needs about one (lambda_x, lambda_y)
/// operating point. Entropies and mutual information are per coordinate, in
/// bits; `gain` is mi / h_x, the information extracted per stored bit of
/// code entropy (zero when h_x is zero).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CodingGainReport {
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub h_x: f64,
    pub h_y: f64,
    pub h_xy: f64,
    pub mi: f64,
    pub gain: f64,
}

/// Mutual information of the ternary-ternary channel, exact via rectangle
/// masses. The joint entropy expands over the five independent cells with
/// symmetry multiplicities:
/// H(X,Y) = -[2 xlog(a p11) + 2 xlog(a p10) + 2 xlog(a p1n)
///            + 2 xlog(z p01) + xlog(z p00)],  a = alpha, z = 1 - 2 alpha.
pub fn ternary_mi(thr: &ThresholdPair, spec: &ChannelSpec) -> Result<CodingGainReport> {
    let p = transition_matrix(thr, spec)?;
    let alpha = crate::encode::alpha_of(thr.lambda_x, spec)?;
    let gamma = crate::encode::gamma_of(thr.lambda_y, spec)?;
    let pz = 1.0 - 2.0 * alpha;
    let h_x = ternary_entropy(alpha)?;
    let h_y = ternary_entropy(gamma)?;
    let h_xy = -(2.0 * xlog2(alpha * p.p[0][0])
        + 2.0 * xlog2(alpha * p.p[0][1])
        + 2.0 * xlog2(alpha * p.p[0][2])
        + 2.0 * xlog2(pz * p.p[1][0])
        + xlog2(pz * p.p[1][1]));
    let mi = (h_x + h_y - h_xy).max(0.0);
    let gain = if h_x > 0.0 { mi / h_x } else { 0.0 };
    Ok(CodingGainReport {
        lambda_x: thr.lambda_x,
        lambda_y: thr.lambda_y,
        alpha,
        gamma,
        h_x,
        h_y,
        h_xy,
        mi,
        gain,
    })
}

/// Uniform grid lo..=hi with `steps` points (both endpoints included).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, steps: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(StcError::Grid(format!("grid needs 0 <= lo < hi, got [{lo}, {hi}]")));
        }
        if steps < 2 {
            return Err(StcError::Grid(format!("grid needs at least 2 steps, got {steps}")));
        }
        Ok(Self { lo, hi, steps })
    }

    pub fn point(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (self.steps - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.steps).map(|i| self.point(i)).collect()
    }
}

/// Item-threshold sweep range: [0, 3 sigma_f], 61 points (steps of
/// 0.05 sigma_f).
pub fn default_lambda_x_grid(spec: &ChannelSpec) -> GridSpec {
    GridSpec::new(0.0, 3.0 * spec.sigma_f, 61).expect("static bounds")
}

/// Query-threshold search range: [0, 3 sigma_q], 301 points (steps of
/// 0.01 sigma_q).
pub fn default_lambda_y_grid(spec: &ChannelSpec) -> GridSpec {
    GridSpec::new(0.0, 3.0 * spec.sigma_q(), 301).expect("static bounds")
}

/// Grid argmax of mutual information over lambda_y at fixed lambda_x.
/// Exact ties go to the smallest lambda_y; the grid evaluation is
/// parallelized but the selection is a deterministic serial pass.
pub fn optimize_lambda_y(
    lambda_x: f64,
    spec: &ChannelSpec,
    grid: &GridSpec,
) -> Result<(f64, CodingGainReport)> {
    let grid = GridSpec::new(grid.lo, grid.hi, grid.steps)?;
    let reports: Vec<CodingGainReport> = (0..grid.steps)
        .into_par_iter()
        .map(|i| ternary_mi(&ThresholdPair::new(lambda_x, grid.point(i))?, spec))
        .collect::<Result<_>>()?;
    let best = reports
        .iter()
        .max_by(|a, b| {
            a.mi.partial_cmp(&b.mi)
                .expect("mi is never NaN")
                // reversed lambda_y order so max_by keeps the smaller threshold on ties
                .then(b.lambda_y.partial_cmp(&a.lambda_y).expect("grid points are finite"))
        })
        .expect("grid has at least 2 points");
    Ok((best.lambda_y, *best))
}

/// Code length with the same stored entropy budget as a binary code of
/// length `l_b`: round(l_b / h) where h is the per-coordinate entropy in
/// bits. Errors when h is not positive or the result rounds to zero.
pub fn matched_lengths(l_b: u64, h: f64) -> Result<u64> {
    if !(h.is_finite() && h > 0.0) {
        return Err(StcError::Domain(format!("entropy must be positive and finite, got {h}")));
    }
    let l = (l_b as f64 / h).round();
    if l < 1.0 {
        return Err(StcError::Domain(format!("matched length rounds to zero (l_b = {l_b}, h = {h})")));
    }
    Ok(l as u64)
}

/// Additive scores for the sublinear voting decoder, natural log scale.
/// Per observed nonzero query symbol, an agreeing stored nonzero adds `nu`,
/// a disagreeing one adds `nu_prime`, and untouched items sit at the implied
/// all-zero score 0. `nu_zero` is the shared offset that recenters the zero
/// transitions; `clamped` reports whether any log argument hit `LOG_CLAMP`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VotingConstants {
    pub nu: f64,
    pub nu_prime: f64,
    pub nu_zero: f64,
    pub clamped: bool,
}

/// Decoder constants from the transition matrix and the input sparsity.
///
/// nu0 = -[2 a p10 ln p10 + (1 - 2a)(2 p01 ln p01 + p00 ln p00)]
/// nu  = nu0 + ln p11,   nu' = nu0 + ln p1n.
///
/// Every probability is floored at `LOG_CLAMP` before it enters the
/// expressions (in both the multiplier and the log). On degenerate channels
/// this keeps nu0, and with it the agreement bonus nu, strictly positive,
/// which is what lets the voting decoder separate a perfect match from
/// partial-overlap items when sigma_p = 0.
///
/// The x = +1 row must be defined. The x = 0 row may be undefined only when
/// its weight 1 - 2 alpha is itself zero; otherwise that is an error because
/// the constants reference its entries.
pub fn voting_constants(p: &TransitionMatrix, alpha: f64) -> Result<VotingConstants> {
    if !(0.0..=0.5).contains(&alpha) || alpha.is_nan() {
        return Err(StcError::Domain(format!("alpha must lie in [0, 0.5], got {alpha}")));
    }
    if !p.defined[0] {
        return Err(StcError::Domain(
            "voting constants need the +1 transition row, but its marginal is zero".into(),
        ));
    }
    let pz = 1.0 - 2.0 * alpha;
    let mut clamped = false;
    let mut floor = |q: f64| {
        if q < LOG_CLAMP {
            clamped = true;
            LOG_CLAMP
        } else {
            q
        }
    };
    let zero_row = if p.defined[1] {
        let p01 = floor(p.p[1][0]);
        let p00 = floor(p.p[1][1]);
        2.0 * p01 * p01.ln() + p00 * p00.ln()
    } else if pz < MARGINAL_EPS {
        0.0
    } else {
        return Err(StcError::Domain(
            "voting constants need the 0 transition row, but its marginal is zero".into(),
        ));
    };
    let p10 = floor(p.p[0][1]);
    let nu_zero = -(2.0 * alpha * p10 * p10.ln() + pz * zero_row);
    let nu = nu_zero + floor(p.p[0][0]).ln();
    let nu_prime = nu_zero + floor(p.p[0][2]).ln();
    Ok(VotingConstants { nu, nu_prime, nu_zero, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{alpha_of, gamma_of};

    const SNR0: f64 = 0.0;

    fn spec_db(snr: f64) -> ChannelSpec {
        ChannelSpec::from_snr_db(snr).unwrap()
    }

    fn thr(x: f64, y: f64) -> ThresholdPair {
        ThresholdPair::new(x, y).unwrap()
    }

    // Reference operating point: lambda_x = lambda_y = 1, SNR 0 dB.
    // All constants below are high-precision external evaluations of the
    // closed-form expressions (Gaussian rectangle masses and their logs).
    const P11: f64 = 0.681147772828117719;
    const P10: f64 = 0.309778643649039746;
    const P1N: f64 = 0.00907358352284253512;
    const P01: f64 = 0.190778996941917653;
    const P00: f64 = 0.618442006116164694;

    #[test]
    fn transition_matrix_reference_point() {
        let t = transition_matrix(&thr(1.0, 1.0), &spec_db(SNR0)).unwrap();
        assert!(t.defined.iter().all(|&d| d));
        let tol = 1e-12;
        assert!((t.p[0][0] - P11).abs() < tol, "p11 {}", t.p[0][0]);
        assert!((t.p[0][1] - P10).abs() < tol, "p10 {}", t.p[0][1]);
        assert!((t.p[0][2] - P1N).abs() < tol, "p1n {}", t.p[0][2]);
        assert!((t.p[1][0] - P01).abs() < tol, "p01 {}", t.p[1][0]);
        assert!((t.p[1][1] - P00).abs() < tol, "p00 {}", t.p[1][1]);
        // replicated cells
        assert_eq!(t.p[2][0], t.p[0][2]);
        assert_eq!(t.p[2][1], t.p[0][1]);
        assert_eq!(t.p[2][2], t.p[0][0]);
        assert_eq!(t.p[1][2], t.p[1][0]);
    }

    #[test]
    fn transition_rows_sum_to_one() {
        for snr in [-5.0, 0.0, 5.0] {
            let spec = spec_db(snr);
            for lx in [0.0, 0.3, 1.0, 2.2] {
                for ly in [0.0, 0.5, 1.4, 2.8] {
                    let t = transition_matrix(&thr(lx, ly), &spec).unwrap();
                    for i in 0..3 {
                        if t.defined[i] {
                            let s: f64 = t.p[i].iter().sum();
                            assert!((s - 1.0).abs() < 1e-12, "row {i} sums to {s} at ({lx},{ly},{snr})");
                        }
                    }
                }
            }
        }
    }

    /// The replicated entries must equal their own direct rectangle-mass
    /// evaluations, not just be copies by construction.
    #[test]
    fn symmetry_replication_matches_direct_evaluation() {
        let spec = spec_db(SNR0);
        let (lx, ly) = (0.8, 1.3);
        let t = transition_matrix(&thr(lx, ly), &spec).unwrap();
        let a = lx / spec.sigma_f;
        let b = ly / spec.sigma_q();
        let rho = spec.rho();
        let alpha = q_function(a).unwrap();
        let pz = 1.0 - 2.0 * alpha;
        let inf = f64::INFINITY;
        let direct = [
            (2usize, 0usize, rect_prob(-inf, -a, b, inf, rho).unwrap() / alpha),
            (2, 1, rect_prob(-inf, -a, -b, b, rho).unwrap() / alpha),
            (2, 2, rect_prob(-inf, -a, -inf, -b, rho).unwrap() / alpha),
            (1, 2, rect_prob(-a, a, -inf, -b, rho).unwrap() / pz),
        ];
        for (i, j, want) in direct {
            assert!((t.p[i][j] - want).abs() < 1e-12, "cell ({i},{j}): {} vs {want}", t.p[i][j]);
        }
    }

    /// lambda_x = lambda_y = 0 collapses the channel to the binary one:
    /// no zero symbols, and the flip probability equals arccos(rho)/pi.
    #[test]
    fn zero_thresholds_collapse_to_binary_channel() {
        let spec = spec_db(SNR0);
        let t = transition_matrix(&thr(0.0, 0.0), &spec).unwrap();
        assert!(t.defined[0] && t.defined[2]);
        assert!(!t.defined[1], "zero-probability x = 0 row must be undefined");
        assert_eq!(t.p[1], [0.0; 3]);
        let pb = binary_flip_prob(&spec);
        assert!((pb - 0.25).abs() < 1e-15);
        assert!((t.p[0][0] - (1.0 - pb)).abs() < 1e-12);
        assert!(t.p[0][1].abs() < 1e-12);
        assert!((t.p[0][2] - pb).abs() < 1e-12);
    }

    #[test]
    fn noiseless_channel_is_identity_at_equal_thresholds() {
        let spec = ChannelSpec::new(1.0, 0.0).unwrap();
        let t = transition_matrix(&thr(1.0, 1.0), &spec).unwrap();
        for i in 0..3 {
            assert!(t.defined[i]);
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((t.p[i][j] - want).abs() < 1e-12, "cell ({i},{j}) = {}", t.p[i][j]);
            }
        }
    }

    #[test]
    fn gamma_identity_against_closed_form() {
        for snr in [-5.0, 0.0, 5.0] {
            let spec = spec_db(snr);
            for lx in [0.05, 0.5, 1.0, 1.8, 2.6] {
                for ly in [0.0, 0.4, 1.1, 2.3] {
                    let t = transition_matrix(&thr(lx, ly), &spec).unwrap();
                    let alpha = alpha_of(lx, &spec).unwrap();
                    let lhs = gamma_marginalized(&t, alpha).unwrap();
                    let rhs = gamma_of(ly, &spec).unwrap();
                    assert!((lhs - rhs).abs() < 1e-9, "gamma {lhs} vs {rhs} at ({lx},{ly},{snr})");
                }
            }
        }
    }

    #[test]
    fn binary_channel_anchors() {
        assert!((binary_flip_prob(&spec_db(SNR0)) - 0.25).abs() < 1e-15);
        assert!(binary_flip_prob(&ChannelSpec::new(1.0, 0.0).unwrap()).abs() < 1e-15);
        // overwhelming noise approaches an unbiased coin
        assert!((binary_flip_prob(&ChannelSpec::new(1.0, 1e6).unwrap()) - 0.5).abs() < 1e-5);
        assert!((binary_mi(&spec_db(SNR0)) - 0.188721875540867136).abs() < 1e-12);
    }

    #[test]
    fn mi_reference_point() {
        let r = ternary_mi(&thr(1.0, 1.0), &spec_db(SNR0)).unwrap();
        let tol = 1e-12;
        assert!((r.alpha - 0.158655253931457051).abs() < tol);
        assert!((r.gamma - 0.239750061093476731).abs() < tol);
        assert!((r.h_x - 1.21874322831712206).abs() < tol);
        assert!((r.h_y - 1.47828721151340271).abs() < tol);
        assert!((r.h_xy - 2.43947118014396346).abs() < tol);
        assert!((r.mi - 0.257559259686561303).abs() < tol);
        assert!((r.gain - 0.211331848827752676).abs() < tol);
    }

    #[test]
    fn mi_spot_checks() {
        // (lambda_x, lambda_y, snr_db) -> (alpha, gamma, h_x, mi),
        // externally evaluated, rounded to 9 decimals
        let cases = [
            (1.0, 1.0, 0.0, 0.158655254, 0.239750061, 1.218743228, 0.257559260),
            (1.5, 1.1597, 0.0, 0.066807201, 0.206099008, 0.700882427, 0.158427064),
            (0.5, 0.8, 5.0, 0.308537539, 0.242805124, 1.577156713, 0.542578103),
            (2.0, 1.5, -5.0, 0.022750132, 0.231098419, 0.312466027, 0.034879794),
            (1.0, 0.5, 5.0, 0.158655254, 0.331484640, 1.218743228, 0.424459936),
            (0.75, 1.25, 0.0, 0.226627352, 0.188379559, 1.446940557, 0.272717758),
        ];
        for (lx, ly, snr, alpha, gamma, hx, mi) in cases {
            let r = ternary_mi(&thr(lx, ly), &spec_db(snr)).unwrap();
            let tol = 1e-9;
            assert!((r.alpha - alpha).abs() < tol, "alpha {} at ({lx},{ly},{snr})", r.alpha);
            assert!((r.gamma - gamma).abs() < tol, "gamma {} at ({lx},{ly},{snr})", r.gamma);
            assert!((r.h_x - hx).abs() < tol, "h_x {} at ({lx},{ly},{snr})", r.h_x);
            assert!((r.mi - mi).abs() < tol, "mi {} at ({lx},{ly},{snr})", r.mi);
        }
    }

    #[test]
    fn mi_respects_entropy_bounds() {
        for snr in [-5.0, 0.0, 5.0] {
            let spec = spec_db(snr);
            for lx in [0.0, 0.4, 1.0, 1.9, 2.9] {
                for ly in [0.0, 0.6, 1.2, 2.5] {
                    let r = ternary_mi(&thr(lx, ly), &spec).unwrap();
                    assert!(r.mi >= 0.0);
                    assert!(r.mi <= r.h_x.min(r.h_y) + 1e-12, "mi {} exceeds min entropy", r.mi);
                }
            }
        }
    }

    #[test]
    fn mi_non_increasing_in_noise() {
        let mut last = f64::INFINITY;
        for sigma_p in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0] {
            let spec = ChannelSpec::new(1.0, sigma_p).unwrap();
            let r = ternary_mi(&thr(1.0, 1.0), &spec).unwrap();
            assert!(r.mi <= last + 1e-12, "mi rose to {} at sigma_p {}", r.mi, sigma_p);
            last = r.mi;
        }
    }

    #[test]
    fn degenerate_thresholds() {
        // enormous lambda_x: the code is all zeros, H(X) = 0, gain defined as 0
        let r = ternary_mi(&thr(40.0, 1.0), &spec_db(SNR0)).unwrap();
        assert_eq!(r.alpha, 0.0);
        assert_eq!(r.h_x, 0.0);
        assert!(r.mi.abs() < 1e-12, "mi {}", r.mi);
        assert_eq!(r.gain, 0.0);
        // lambda_x = 0: binary input inside the ternary machinery
        let r = ternary_mi(&thr(0.0, 0.0), &spec_db(SNR0)).unwrap();
        assert!((r.h_x - 1.0).abs() < 1e-15);
        assert!((r.mi - 0.188721875540867136).abs() < 1e-12);
    }

    #[test]
    fn optimizer_matches_serial_scan_and_prefers_small_ties() {
        let spec = spec_db(SNR0);
        let grid = GridSpec::new(0.0, 3.0 * spec.sigma_q(), 61).unwrap();
        let (ly_star, report) = optimize_lambda_y(1.0, &spec, &grid).unwrap();
        for p in grid.points() {
            let r = ternary_mi(&thr(1.0, p), &spec).unwrap();
            assert!(
                report.mi >= r.mi,
                "grid point {p} beats reported optimum: {} > {}",
                r.mi,
                report.mi
            );
            if r.mi == report.mi {
                assert!(ly_star <= p, "tie at {p} must resolve to the smaller threshold");
            }
        }
        assert_eq!(report.lambda_y, ly_star);
    }

    /// Optimal query thresholds on the default grid at lambda_x = 1.5:
    /// externally evaluated argmax per SNR. In absolute units the optimum is
    /// V-shaped in SNR (0 dB sits below both +5 and -5 dB); standardized by
    /// sigma_q it increases monotonically with SNR.
    #[test]
    fn optimizer_reference_points() {
        let lx = 1.5;
        let mut abs = Vec::new();
        let mut std = Vec::new();
        for snr in [-5.0, 0.0, 5.0] {
            let spec = spec_db(snr);
            let grid = default_lambda_y_grid(&spec);
            let (ly, _) = optimize_lambda_y(lx, &spec, &grid).unwrap();
            abs.push(ly);
            std.push(ly / spec.sigma_q());
        }
        assert!((abs[0] - 1.366911278).abs() < 1e-8, "-5 dB optimum {}", abs[0]);
        assert!((abs[1] - 1.159655121).abs() < 1e-8, "0 dB optimum {}", abs[1]);
        assert!((abs[2] - 1.239051277).abs() < 1e-8, "+5 dB optimum {}", abs[2]);
        assert!(abs[1] < abs[2] && abs[2] < abs[0], "absolute optima not V-shaped: {abs:?}");
        assert!(std[0] < std[1] && std[1] < std[2], "standardized optima not increasing: {std:?}");
    }

    #[test]
    fn optimizer_noiseless_prefers_matching_threshold() {
        let spec = ChannelSpec::new(1.0, 0.0).unwrap();
        let grid = default_lambda_y_grid(&spec);
        let (ly, report) = optimize_lambda_y(1.5, &spec, &grid).unwrap();
        assert!((ly - 1.5).abs() < 1e-12, "noiseless optimum {ly}");
        assert!((report.mi - report.h_x).abs() < 1e-12, "noiseless mi must reach h_x");
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(0.0, 3.0, 2).is_ok());
        assert!(matches!(GridSpec::new(0.0, 3.0, 1), Err(StcError::Grid(_))));
        assert!(matches!(GridSpec::new(-0.1, 3.0, 10), Err(StcError::Grid(_))));
        assert!(matches!(GridSpec::new(2.0, 2.0, 10), Err(StcError::Grid(_))));
        assert!(matches!(GridSpec::new(0.0, f64::NAN, 10), Err(StcError::Grid(_))));
        let g = GridSpec::new(0.0, 3.0, 61).unwrap();
        assert_eq!(g.points().len(), 61);
        assert_eq!(g.point(0), 0.0);
        assert_eq!(g.point(60), 3.0);
        assert!((g.point(1) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn matched_length_examples() {
        assert_eq!(matched_lengths(256, 1.0).unwrap(), 256);
        assert_eq!(matched_lengths(256, 0.5).unwrap(), 512);
        assert_eq!(matched_lengths(256, 0.469).unwrap(), 546);
        assert_eq!(matched_lengths(256, 0.700882427).unwrap(), 365);
        assert!(matched_lengths(256, 0.0).is_err());
        assert!(matched_lengths(256, -1.0).is_err());
        assert!(matched_lengths(1, 1e9).is_err());
    }

    #[test]
    fn voting_constants_reference_point() {
        let spec = spec_db(SNR0);
        let t = transition_matrix(&thr(1.0, 1.0), &spec).unwrap();
        let alpha = alpha_of(1.0, &spec).unwrap();
        let v = voting_constants(&t, alpha).unwrap();
        let tol = 1e-12;
        assert!((v.nu_zero - 0.749614502644169328).abs() < tol, "nu0 {}", v.nu_zero);
        assert!((v.nu - 0.365638500145667238).abs() < tol, "nu {}", v.nu);
        assert!((v.nu_prime - -3.95277349400687023).abs() < tol, "nu' {}", v.nu_prime);
        assert!(!v.clamped);
        // nu - nu' telescopes to the log-likelihood ratio of agree vs disagree
        let want = (t.p[0][0] / t.p[0][2]).ln();
        assert!((v.nu - v.nu_prime - want).abs() < 1e-12);
    }

    #[test]
    fn voting_constants_noiseless_clamps_impossible_transition() {
        let spec = ChannelSpec::new(1.0, 0.0).unwrap();
        let t = transition_matrix(&thr(1.0, 1.0), &spec).unwrap();
        let v = voting_constants(&t, alpha_of(1.0, &spec).unwrap()).unwrap();
        assert!(v.clamped);
        // p11 = 1 and p00 = 1 contribute nothing; the floored zeros
        // (p10, p1n, p01) leave a strictly positive residual bias, so a
        // perfect agreement still outscores a partial overlap
        assert!((v.nu - v.nu_zero).abs() < 1e-12, "matched noiseless channel has nu = nu0");
        assert!(v.nu > 0.0, "agreement bonus must stay strictly positive, got {}", v.nu);
        assert!(v.nu_zero > 0.0 && v.nu_zero < 1e-9, "nu0 {}", v.nu_zero);
        assert!((v.nu_prime - (v.nu_zero + LOG_CLAMP.ln())).abs() < 1e-12);
        assert!(v.nu_prime < -27.0);
    }

    #[test]
    fn voting_constants_row_requirements() {
        let spec = spec_db(SNR0);
        // all-zero input code: the +1 row does not exist, no constants
        let t = transition_matrix(&thr(40.0, 1.0), &spec).unwrap();
        assert!(!t.defined[0]);
        assert!(voting_constants(&t, 0.0).is_err());
        // binary input (lambda_x = 0): the 0 row is undefined but carries no
        // weight, so constants still exist
        let t = transition_matrix(&thr(0.0, 1.0), &spec).unwrap();
        assert!(!t.defined[1]);
        let v = voting_constants(&t, 0.5).unwrap();
        assert!(v.nu.is_finite() && v.nu_prime.is_finite());
        // inconsistent call: undefined 0 row with real zero-symbol weight
        assert!(voting_constants(&t, 0.3).is_err());
    }

    #[test]
    fn ln_table_floors_zeros() {
        let spec = ChannelSpec::new(1.0, 0.0).unwrap();
        let t = transition_matrix(&thr(1.0, 1.0), &spec).unwrap();
        let lt = t.ln_table();
        assert_eq!(lt[0][0], 0.0);
        assert!((lt[0][2] - LOG_CLAMP.ln()).abs() < 1e-12);
    }

    #[test]
    fn symbol_indexing() {
        assert_eq!(symbol_index(1), Some(0));
        assert_eq!(symbol_index(0), Some(1));
        assert_eq!(symbol_index(-1), Some(2));
        assert_eq!(symbol_index(2), None);
        let t = transition_matrix(&thr(1.0, 1.0), &spec_db(SNR0)).unwrap();
        assert_eq!(t.prob(1, -1), Some(t.p[0][2]));
        assert_eq!(t.prob(3, 0), None);
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            /// Defined rows are probability vectors for arbitrary operating
            /// points.
            #[test]
            fn rows_are_distributions(
                lx in 0.0f64..3.0,
                ly in 0.0f64..3.0,
                sigma_p in 0.0f64..4.0,
            ) {
                let spec = ChannelSpec::new(1.0, sigma_p).unwrap();
                let t = transition_matrix(&thr(lx, ly), &spec).unwrap();
                for i in 0..3 {
                    if t.defined[i] {
                        let s: f64 = t.p[i].iter().sum();
                        prop_assert!((s - 1.0).abs() < 1e-10);
                        prop_assert!(t.p[i].iter().all(|&q| (-1e-15..=1.0 + 1e-12).contains(&q)));
                    }
                }
            }

            /// Mutual information is within entropy bounds everywhere.
            #[test]
            fn mi_bounds(
                lx in 0.0f64..3.0,
                ly in 0.0f64..3.0,
                sigma_p in 0.0f64..4.0,
            ) {
                let spec = ChannelSpec::new(1.0, sigma_p).unwrap();
                let r = ternary_mi(&thr(lx, ly), &spec).unwrap();
                prop_assert!(r.mi >= 0.0);
                prop_assert!(r.mi <= r.h_x.min(r.h_y) + 1e-9);
            }
        }
    }
}
