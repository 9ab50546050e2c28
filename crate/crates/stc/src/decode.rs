//! Query decoders over encoded databases: binary Hamming scan, ternary
//! maximum-likelihood scan, and the sub-linear inverted-index voting decoder,
//! plus exact l2 reference search over raw features.
//!
//! All decoders break score ties toward the smallest item id, and all
//! accumulation runs in fixed index order, so results are bit-reproducible
//! regardless of thread count elsewhere in the pipeline.

use rayon::prelude::*;

use crate::channel::{ChannelSpec, FeatureMatrix};
use crate::encode::{binarize, ternarize, words_for, BinaryCode, TernaryCode};
use crate::error::{Result, StcError};
use crate::info::{TransitionMatrix, VotingConstants};
use crate::projection::ProjectionMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeKind {
    Binary,
    Ternary,
}

impl CodeKind {
    pub fn name(self) -> &'static str {
        match self {
            CodeKind::Binary => "binary",
            CodeKind::Ternary => "ternary",
        }
    }
}

/// M packed codes of a single kind and length, plus the encode-time context.
/// Binary codes live in the `pos` plane alone. The channel snapshot is
/// advisory: code files do not persist it, so databases read back from disk
/// carry `None` and the caller re-supplies the channel when needed.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDatabase {
    kind: CodeKind,
    m: usize,
    l: usize,
    lambda_x: f64,
    spec: Option<ChannelSpec>,
    pos: Vec<u64>,
    neg: Vec<u64>,
}

impl EncodedDatabase {
    pub fn kind(&self) -> CodeKind {
        self.kind
    }

    pub fn items(&self) -> usize {
        self.m
    }

    pub fn code_len(&self) -> usize {
        self.l
    }

    pub fn lambda_x(&self) -> f64 {
        self.lambda_x
    }

    pub fn spec(&self) -> Option<ChannelSpec> {
        self.spec
    }

    pub fn words_per_item(&self) -> usize {
        words_for(self.l)
    }

    pub fn pos_plane(&self) -> &[u64] {
        &self.pos
    }

    pub fn neg_plane(&self) -> &[u64] {
        &self.neg
    }

    fn item_words<'a>(plane: &'a [u64], i: usize, w: usize) -> &'a [u64] {
        &plane[i * w..(i + 1) * w]
    }

    pub fn binary_code(&self, i: usize) -> Result<BinaryCode> {
        if self.kind != CodeKind::Binary {
            return Err(StcError::Kind { expected: "binary", got: self.kind.name() });
        }
        let w = self.words_per_item();
        Ok(BinaryCode { len: self.l, words: Self::item_words(&self.pos, i, w).to_vec() })
    }

    pub fn ternary_code(&self, i: usize) -> Result<TernaryCode> {
        if self.kind != CodeKind::Ternary {
            return Err(StcError::Kind { expected: "ternary", got: self.kind.name() });
        }
        let w = self.words_per_item();
        Ok(TernaryCode {
            len: self.l,
            pos: Self::item_words(&self.pos, i, w).to_vec(),
            neg: Self::item_words(&self.neg, i, w).to_vec(),
        })
    }

    pub fn from_binary_codes(codes: &[BinaryCode]) -> Result<Self> {
        let l = check_uniform(codes.len(), codes.iter().map(|c| c.len))?;
        let mut pos = Vec::with_capacity(codes.len() * words_for(l));
        for c in codes {
            pos.extend_from_slice(&c.words);
        }
        Ok(Self {
            kind: CodeKind::Binary,
            m: codes.len(),
            l,
            lambda_x: 0.0,
            spec: None,
            pos,
            neg: Vec::new(),
        })
    }

    pub fn from_ternary_codes(codes: &[TernaryCode], lambda_x: f64) -> Result<Self> {
        if !(lambda_x.is_finite() && lambda_x >= 0.0) {
            return Err(StcError::Domain(format!("lambda_x must be finite and >= 0, got {lambda_x}")));
        }
        let l = check_uniform(codes.len(), codes.iter().map(|c| c.len))?;
        let w = words_for(l);
        let mut pos = Vec::with_capacity(codes.len() * w);
        let mut neg = Vec::with_capacity(codes.len() * w);
        for c in codes {
            pos.extend_from_slice(&c.pos);
            neg.extend_from_slice(&c.neg);
        }
        Ok(Self { kind: CodeKind::Ternary, m: codes.len(), l, lambda_x, spec: None, pos, neg })
    }

    /// Project and sign-quantize every feature row.
    pub fn enroll_binary(
        fm: &FeatureMatrix,
        w: &ProjectionMatrix,
        spec: &ChannelSpec,
    ) -> Result<Self> {
        if fm.dim != w.n {
            return Err(StcError::Shape { expected: w.n, got: fm.dim });
        }
        let codes: Vec<BinaryCode> = (0..fm.rows)
            .into_par_iter()
            .map(|i| Ok(binarize(&w.project(fm.row(i))?)))
            .collect::<Result<_>>()?;
        let mut db = Self::from_binary_codes(&codes)?;
        db.spec = Some(*spec);
        Ok(db)
    }

    /// Project and ternary-threshold every feature row.
    pub fn enroll_ternary(
        fm: &FeatureMatrix,
        w: &ProjectionMatrix,
        lambda_x: f64,
        spec: &ChannelSpec,
    ) -> Result<Self> {
        if fm.dim != w.n {
            return Err(StcError::Shape { expected: w.n, got: fm.dim });
        }
        let codes: Vec<TernaryCode> = (0..fm.rows)
            .into_par_iter()
            .map(|i| ternarize(&w.project(fm.row(i))?, lambda_x))
            .collect::<Result<_>>()?;
        let mut db = Self::from_ternary_codes(&codes, lambda_x)?;
        db.spec = Some(*spec);
        Ok(db)
    }

    /// Reassemble from raw planes (the file-load path); every structural
    /// violation is a format error because the bytes came from outside.
    pub(crate) fn from_planes(
        kind: CodeKind,
        m: usize,
        l: usize,
        lambda_x: f64,
        pos: Vec<u64>,
        neg: Vec<u64>,
    ) -> Result<Self> {
        if m == 0 {
            return Err(StcError::Empty("code database"));
        }
        if l == 0 {
            return Err(StcError::Format("code length must be at least 1".into()));
        }
        if !(lambda_x.is_finite() && lambda_x >= 0.0) {
            return Err(StcError::Format(format!("stored lambda_x is invalid: {lambda_x}")));
        }
        let w = words_for(l);
        let want = m.checked_mul(w).ok_or_else(|| {
            StcError::Capacity(format!("code database {m} x {l} exceeds addressable size"))
        })?;
        if pos.len() != want {
            return Err(StcError::Format(format!(
                "plane holds {} words, header implies {want}",
                pos.len()
            )));
        }
        let tail_mask = if l % 64 == 0 { !0u64 } else { (1u64 << (l % 64)) - 1 };
        match kind {
            CodeKind::Binary => {
                if !neg.is_empty() {
                    return Err(StcError::Format("binary database carries a negative plane".into()));
                }
                for i in 0..m {
                    if pos[i * w + w - 1] & !tail_mask != 0 {
                        return Err(StcError::Format(format!("item {i} has bits past position {l}")));
                    }
                }
            }
            CodeKind::Ternary => {
                if neg.len() != want {
                    return Err(StcError::Format(format!(
                        "negative plane holds {} words, header implies {want}",
                        neg.len()
                    )));
                }
                for i in 0..m {
                    let last = i * w + w - 1;
                    if pos[last] & !tail_mask != 0 || neg[last] & !tail_mask != 0 {
                        return Err(StcError::Format(format!("item {i} has bits past position {l}")));
                    }
                    for t in 0..w {
                        if pos[i * w + t] & neg[i * w + t] != 0 {
                            return Err(StcError::Format(format!(
                                "item {i} holds +1 and -1 at the same position"
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self { kind, m, l, lambda_x, spec: None, pos, neg })
    }
}

fn check_uniform(m: usize, lens: impl Iterator<Item = usize>) -> Result<usize> {
    if m == 0 {
        return Err(StcError::Empty("code database"));
    }
    let mut out = None;
    for len in lens {
        match out {
            None => {
                if len == 0 {
                    return Err(StcError::Domain("code length must be at least 1".into()));
                }
                out = Some(len);
            }
            Some(l) if l != len => return Err(StcError::Shape { expected: l, got: len }),
            _ => {}
        }
    }
    Ok(out.expect("m >= 1 checked"))
}

/// Search outcome. `top_k` is sorted by descending score with ascending-id
/// tie-breaks, and `best_id`/`score` mirror its head. `scanned_postings`
/// counts item-score touches: postings traversed by the sub-linear decoder,
/// M*l for the exhaustive scans.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub best_id: usize,
    pub score: f64,
    pub top_k: Vec<(usize, f64)>,
    pub scanned_postings: usize,
}

/// Best-first order: higher score wins, equal scores go to the smaller id.
fn rank_cmp(a: (usize, f64), b: (usize, f64)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1).expect("scores are never NaN").then(a.0.cmp(&b.0))
}

fn check_k(k: usize, m: usize) -> Result<usize> {
    if k == 0 {
        return Err(StcError::Domain("k must be at least 1".into()));
    }
    // oversized k is clamped to the database size (callers may warn)
    Ok(k.min(m))
}

fn assemble_dense(scores: Vec<f64>, k: usize, scanned: usize) -> DecodeResult {
    let mut order: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    order.sort_unstable_by(|a, b| rank_cmp(*a, *b));
    order.truncate(k);
    DecodeResult { best_id: order[0].0, score: order[0].1, top_k: order, scanned_postings: scanned }
}

/// Minimum normalized Hamming distance scan, word-wise XOR + popcount.
/// Scores are the negated normalized distance, so ranking stays
/// larger-is-better like the other decoders.
pub fn hamming_decode(y: &BinaryCode, db: &EncodedDatabase, k: usize) -> Result<DecodeResult> {
    if db.kind != CodeKind::Binary {
        return Err(StcError::Kind { expected: "binary", got: db.kind.name() });
    }
    if y.len != db.l {
        return Err(StcError::Shape { expected: db.l, got: y.len });
    }
    let k = check_k(k, db.m)?;
    let w = db.words_per_item();
    let scores = (0..db.m)
        .map(|i| {
            let xw = EncodedDatabase::item_words(&db.pos, i, w);
            let dist: u32 = xw.iter().zip(&y.words).map(|(a, b)| (a ^ b).count_ones()).sum();
            // 0.0 - keeps the exact-match score at +0.0, not -0.0
            0.0 - dist as f64 / db.l as f64
        })
        .collect();
    Ok(assemble_dense(scores, k, db.m * db.l))
}

/// Exhaustive log-likelihood scan: score_i = sum_j ln p(y_j | x_j(i)) over
/// all l positions and all nine transitions. The nine position counts come
/// from four word-wise AND popcounts plus inclusion-exclusion, never a
/// per-symbol loop.
pub fn ml_decode(
    y: &TernaryCode,
    db: &EncodedDatabase,
    p: &TransitionMatrix,
    k: usize,
) -> Result<DecodeResult> {
    if db.kind != CodeKind::Ternary {
        return Err(StcError::Kind { expected: "ternary", got: db.kind.name() });
    }
    if y.len != db.l {
        return Err(StcError::Shape { expected: db.l, got: y.len });
    }
    if !p.defined.iter().all(|&d| d) {
        return Err(StcError::Config(
            "maximum-likelihood scoring references all nine transition entries, but the \
             matrix has undefined rows"
                .into(),
        ));
    }
    let k = check_k(k, db.m)?;
    let t = p.ln_table();
    let w = db.words_per_item();
    let yp_tot: usize = y.pos.iter().map(|x| x.count_ones() as usize).sum();
    let yn_tot: usize = y.neg.iter().map(|x| x.count_ones() as usize).sum();
    let scores = (0..db.m)
        .map(|i| {
            let xp = EncodedDatabase::item_words(&db.pos, i, w);
            let xn = EncodedDatabase::item_words(&db.neg, i, w);
            let (mut n_pp, mut n_pn, mut n_np, mut n_nn) = (0usize, 0usize, 0usize, 0usize);
            let (mut xp_tot, mut xn_tot) = (0usize, 0usize);
            for j in 0..w {
                n_pp += (xp[j] & y.pos[j]).count_ones() as usize;
                n_pn += (xp[j] & y.neg[j]).count_ones() as usize;
                n_np += (xn[j] & y.pos[j]).count_ones() as usize;
                n_nn += (xn[j] & y.neg[j]).count_ones() as usize;
                xp_tot += xp[j].count_ones() as usize;
                xn_tot += xn[j].count_ones() as usize;
            }
            let n_p0 = xp_tot - n_pp - n_pn;
            let n_n0 = xn_tot - n_np - n_nn;
            let n_0p = yp_tot - n_pp - n_np;
            let n_0n = yn_tot - n_pn - n_nn;
            // additions first: the running value stays >= n_00 >= 0
            let n_00 = db.l + n_pp + n_pn + n_np + n_nn - xp_tot - xn_tot - yp_tot - yn_tot;
            n_pp as f64 * t[0][0]
                + n_p0 as f64 * t[0][1]
                + n_pn as f64 * t[0][2]
                + n_0p as f64 * t[1][0]
                + n_00 as f64 * t[1][1]
                + n_0n as f64 * t[1][2]
                + n_np as f64 * t[2][0]
                + n_n0 as f64 * t[2][1]
                + n_nn as f64 * t[2][2]
        })
        .collect();
    Ok(assemble_dense(scores, k, db.m * db.l))
}

/// Two posting lists per code position: the ids whose code holds +1 there,
/// and the ids holding -1. Lists are ascending by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvertedIndex {
    m: usize,
    l: usize,
    pos: Vec<Vec<u32>>,
    neg: Vec<Vec<u32>>,
}

impl InvertedIndex {
    pub fn items(&self) -> usize {
        self.m
    }

    pub fn code_len(&self) -> usize {
        self.l
    }

    pub fn postings(&self, j: usize, sign: i8) -> &[u32] {
        match sign {
            1 => &self.pos[j],
            -1 => &self.neg[j],
            _ => &[],
        }
    }

    pub fn total_postings(&self) -> usize {
        self.pos.iter().chain(self.neg.iter()).map(|v| v.len()).sum()
    }

    /// Validated assembly from raw posting lists (the file-load path).
    pub fn from_parts(m: usize, l: usize, pos: Vec<Vec<u32>>, neg: Vec<Vec<u32>>) -> Result<Self> {
        if m == 0 {
            return Err(StcError::Empty("index"));
        }
        if l == 0 || pos.len() != l || neg.len() != l {
            return Err(StcError::Format(format!(
                "index claims {l} positions but holds {} and {}",
                pos.len(),
                neg.len()
            )));
        }
        for (j, list) in pos.iter().chain(neg.iter()).enumerate() {
            let mut last = None;
            for &id in list {
                if id as usize >= m {
                    return Err(StcError::Format(format!(
                        "posting {id} at position {} exceeds item count {m}",
                        j % l
                    )));
                }
                if last.is_some_and(|prev| prev >= id) {
                    return Err(StcError::Format(format!(
                        "postings at position {} are not strictly ascending",
                        j % l
                    )));
                }
                last = Some(id);
            }
        }
        for j in 0..l {
            let (mut a, mut b) = (pos[j].iter().peekable(), neg[j].iter().peekable());
            while let (Some(&&x), Some(&&y)) = (a.peek(), b.peek()) {
                match x.cmp(&y) {
                    std::cmp::Ordering::Less => {
                        a.next();
                    }
                    std::cmp::Ordering::Greater => {
                        b.next();
                    }
                    std::cmp::Ordering::Equal => {
                        return Err(StcError::Format(format!(
                            "item {x} posted as both +1 and -1 at position {j}"
                        )));
                    }
                }
            }
        }
        Ok(Self { m, l, pos, neg })
    }

    /// Reconstructs the packed code database the index was built from.
    pub fn to_database(&self, lambda_x: f64) -> Result<EncodedDatabase> {
        let w = words_for(self.l);
        let mut pos = vec![0u64; self.m * w];
        let mut neg = vec![0u64; self.m * w];
        for (plane, lists) in [(&mut pos, &self.pos), (&mut neg, &self.neg)] {
            for (j, list) in lists.iter().enumerate() {
                for &id in list {
                    plane[id as usize * w + j / 64] |= 1 << (j % 64);
                }
            }
        }
        EncodedDatabase::from_planes(CodeKind::Ternary, self.m, self.l, lambda_x, pos, neg)
    }
}

/// Builds the inverted index of a ternary database in one O(postings) pass.
pub fn build_index(db: &EncodedDatabase) -> Result<InvertedIndex> {
    if db.kind != CodeKind::Ternary {
        return Err(StcError::Kind { expected: "ternary", got: db.kind.name() });
    }
    if db.m > u32::MAX as usize {
        return Err(StcError::Capacity(format!("{} items exceed 32-bit posting ids", db.m)));
    }
    let w = db.words_per_item();
    let mut pos = vec![Vec::new(); db.l];
    let mut neg = vec![Vec::new(); db.l];
    for i in 0..db.m {
        for (plane, lists) in [(&db.pos, &mut pos), (&db.neg, &mut neg)] {
            for t in 0..w {
                let mut bits = plane[i * w + t];
                while bits != 0 {
                    let j = t * 64 + bits.trailing_zeros() as usize;
                    lists[j].push(i as u32);
                    bits &= bits - 1;
                }
            }
        }
    }
    Ok(InvertedIndex { m: db.m, l: db.l, pos, neg })
}

/// Dense per-item score array reused across queries. Entries are
/// invalidated by bumping an epoch counter instead of clearing memory, so a
/// query touching few items pays only for what it touches.
#[derive(Debug, Clone)]
pub struct ScoreAccumulator {
    scores: Vec<f64>,
    epoch: Vec<u32>,
    current: u32,
    touched: Vec<u32>,
}

impl ScoreAccumulator {
    pub fn new(m: usize) -> Self {
        Self { scores: vec![0.0; m], epoch: vec![0; m], current: 0, touched: Vec::new() }
    }

    fn begin(&mut self, m: usize) {
        if self.scores.len() != m {
            self.scores = vec![0.0; m];
            self.epoch = vec![0; m];
            self.current = 0;
        }
        self.current = self.current.wrapping_add(1);
        if self.current == 0 {
            // epoch counter wrapped: stale marks are now ambiguous, wipe them
            self.epoch.fill(0);
            self.current = 1;
        }
        self.touched.clear();
    }

    #[inline]
    fn add(&mut self, id: u32, v: f64) {
        let i = id as usize;
        if self.epoch[i] == self.current {
            self.scores[i] += v;
        } else {
            self.epoch[i] = self.current;
            self.scores[i] = v;
            self.touched.push(id);
        }
    }

    fn is_touched(&self, id: usize) -> bool {
        self.epoch[id] == self.current
    }
}

/// Inverted-index voting decoder. For each nonzero query position, items in
/// the same-sign posting list gain `nu`, items in the opposite list gain
/// `nu_prime`; zero query positions are skipped entirely, and items never
/// touched keep the implied all-skip score of exactly 0. Expected postings
/// traversed: 4 alpha gamma l M.
///
/// `k` beyond the item count is clamped. The accumulator may be reused
/// across queries and databases; it resizes itself as needed.
pub fn sublinear_decode(
    y: &TernaryCode,
    index: &InvertedIndex,
    v: &VotingConstants,
    k: usize,
    acc: &mut ScoreAccumulator,
) -> Result<DecodeResult> {
    if y.len != index.l {
        return Err(StcError::Shape { expected: index.l, got: y.len });
    }
    let k = check_k(k, index.m)?;
    acc.begin(index.m);
    let mut scanned = 0usize;
    for j in 0..index.l {
        let (same, opposite) = match y.symbol(j) {
            1 => (&index.pos[j], &index.neg[j]),
            -1 => (&index.neg[j], &index.pos[j]),
            _ => continue,
        };
        for &id in same {
            acc.add(id, v.nu);
        }
        for &id in opposite {
            acc.add(id, v.nu_prime);
        }
        scanned += same.len() + opposite.len();
    }
    Ok(assemble_sparse(acc, index.m, k, scanned))
}

fn assemble_sparse(acc: &ScoreAccumulator, m: usize, k: usize, scanned: usize) -> DecodeResult {
    let mut ranked: Vec<(usize, f64)> =
        acc.touched.iter().map(|&id| (id as usize, acc.scores[id as usize])).collect();
    ranked.sort_unstable_by(|a, b| rank_cmp(*a, *b));
    // merge with the untouched items, which all sit at exactly 0.0 and are
    // id-ascending, i.e. already sorted under the same order
    let mut top = Vec::with_capacity(k);
    let mut ti = 0usize;
    let mut u = 0usize;
    while top.len() < k {
        while u < m && acc.is_touched(u) {
            u += 1;
        }
        let take_touched = match (ti < ranked.len(), u < m) {
            (true, true) => rank_cmp(ranked[ti], (u, 0.0)) == std::cmp::Ordering::Less,
            (true, false) => true,
            (false, true) => false,
            (false, false) => unreachable!("k is clamped to the item count"),
        };
        if take_touched {
            top.push(ranked[ti]);
            ti += 1;
        } else {
            top.push((u, 0.0));
            u += 1;
        }
    }
    DecodeResult { best_id: top[0].0, score: top[0].1, top_k: top, scanned_postings: scanned }
}

/// Exact linear-scan l2 argmin over raw features; ties go to the smaller id.
pub fn exact_nn(q: &[f64], features: &FeatureMatrix) -> Result<usize> {
    if q.len() != features.dim {
        return Err(StcError::Shape { expected: features.dim, got: q.len() });
    }
    if features.rows == 0 {
        return Err(StcError::Empty("feature database"));
    }
    let mut best = (0usize, f64::INFINITY);
    for i in 0..features.rows {
        let d = sq_dist(q, features.row(i));
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best.0)
}

/// All ids whose squared l2 distance to the query is at most epsilon * n,
/// ascending. The distance measure is squared, matching the scale on which
/// the threshold is stated per dimension.
pub fn nn_list(q: &[f64], features: &FeatureMatrix, epsilon: f64) -> Result<Vec<usize>> {
    if q.len() != features.dim {
        return Err(StcError::Shape { expected: features.dim, got: q.len() });
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(StcError::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let bound = epsilon * features.dim as f64;
    Ok((0..features.rows).filter(|&i| sq_dist(q, features.row(i)) <= bound).collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
