//! Code construction: sign binarization and ternary thresholding of projected
//! vectors, plus the closed-form sparsity and entropy quantities they induce.
//!
//! Sparsity convention: `alpha_of` and `gamma_of` return PER-SIGN
//! probabilities, alpha = Q(lambda_x / sigma_f) = P(X = +1) = P(X = -1).
//! The total nonzero fraction is 2 alpha. Stored per-sign, the elementwise
//! entropy, the output-marginal identity, and the 4*alpha*gamma posting-list
//! cost are all simultaneously consistent.

use crate::channel::{q_function, ChannelSpec};
use crate::error::{Result, StcError};

pub(crate) fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

/// Packed sign code; bit j set means symbol +1, clear means -1.
/// Bits at positions >= len are kept zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCode {
    pub len: usize,
    pub words: Vec<u64>,
}

impl BinaryCode {
    pub fn bit(&self, j: usize) -> bool {
        debug_assert!(j < self.len);
        self.words[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Packed ternary code as two disjoint bit planes over the same positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TernaryCode {
    pub len: usize,
    /// positions holding +1
    pub pos: Vec<u64>,
    /// positions holding -1
    pub neg: Vec<u64>,
}

impl TernaryCode {
    /// Symbol at position j as -1, 0 or +1.
    pub fn symbol(&self, j: usize) -> i8 {
        debug_assert!(j < self.len);
        let w = j / 64;
        let b = j % 64;
        if self.pos[w] >> b & 1 == 1 {
            1
        } else if self.neg[w] >> b & 1 == 1 {
            -1
        } else {
            0
        }
    }

    pub fn count_nonzero(&self) -> usize {
        self.pos.iter().chain(self.neg.iter()).map(|w| w.count_ones() as usize).sum()
    }

    /// pos and neg planes never overlap; construction guarantees it, file
    /// loading re-checks it.
    pub fn planes_disjoint(&self) -> bool {
        self.pos.iter().zip(&self.neg).all(|(p, n)| p & n == 0)
    }
}

/// Input and output ternarization thresholds, in projected-amplitude units.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ThresholdPair {
    pub lambda_x: f64,
    pub lambda_y: f64,
}

impl ThresholdPair {
    pub fn new(lambda_x: f64, lambda_y: f64) -> Result<Self> {
        for (name, v) in [("lambda_x", lambda_x), ("lambda_y", lambda_y)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(StcError::Domain(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self { lambda_x, lambda_y })
    }
}

/// Sign quantizer; v >= 0 maps to +1 (the zero tie goes up, fixed for
/// determinism).
pub fn binarize(v: &[f64]) -> BinaryCode {
    let mut words = vec![0u64; words_for(v.len())];
    for (j, &x) in v.iter().enumerate() {
        if x >= 0.0 {
            words[j / 64] |= 1 << (j % 64);
        }
    }
    BinaryCode { len: v.len(), words }
}

/// Ternary quantizer with closed boundaries: v >= lambda maps to +1,
/// v <= -lambda to -1, the open band between to 0. With lambda = 0 there are
/// no zeros and the result matches `binarize` including the sign-at-zero rule.
pub fn ternarize(v: &[f64], lambda: f64) -> Result<TernaryCode> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(StcError::Domain(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let nw = words_for(v.len());
    let mut pos = vec![0u64; nw];
    let mut neg = vec![0u64; nw];
    for (j, &x) in v.iter().enumerate() {
        if x >= lambda {
            pos[j / 64] |= 1 << (j % 64);
        } else if x <= -lambda {
            // lambda = 0 sends exact zeros to +1 via the first arm
            neg[j / 64] |= 1 << (j % 64);
        }
    }
    Ok(TernaryCode { len: v.len(), pos, neg })
}

/// Per-sign input sparsity alpha = Q(lambda_x / sigma_f).
pub fn alpha_of(lambda_x: f64, spec: &ChannelSpec) -> Result<f64> {
    if !(lambda_x.is_finite() && lambda_x >= 0.0) {
        return Err(StcError::Domain(format!("lambda_x must be finite and >= 0, got {lambda_x}")));
    }
    q_function(lambda_x / spec.sigma_f)
}

/// Per-sign output sparsity gamma = Q(lambda_y / sqrt(sigma_f^2 + sigma_p^2)).
pub fn gamma_of(lambda_y: f64, spec: &ChannelSpec) -> Result<f64> {
    if !(lambda_y.is_finite() && lambda_y >= 0.0) {
        return Err(StcError::Domain(format!("lambda_y must be finite and >= 0, got {lambda_y}")));
    }
    q_function(lambda_y / spec.sigma_q())
}

pub(crate) fn xlog2(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Elementwise entropy of a ternary symbol with per-sign probability alpha:
/// H = -2 alpha log2(alpha) - (1 - 2 alpha) log2(1 - 2 alpha), in bits,
/// with 0 log 0 = 0.
pub fn ternary_entropy(alpha: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&alpha) || alpha.is_nan() {
        return Err(StcError::Domain(format!("alpha must lie in [0, 0.5], got {alpha}")));
    }
    Ok(-2.0 * xlog2(alpha) - xlog2(1.0 - 2.0 * alpha))
}

/// Binary entropy H2(p) in bits, endpoints 0.
pub fn binary_entropy_h2(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(StcError::Domain(format!("p must lie in [0, 1], got {p}")));
    }
    Ok(-xlog2(p) - xlog2(1.0 - p))
}
