//! Sparse ternary codes for similarity search.
//!
//! The pipeline: real feature vectors pass through a seeded random
//! projection, get thresholded into sparse ternary codes in {+1, 0, -1}
//! (or dense binary sign codes as the baseline), and queries are resolved
//! either by exhaustive scanning or through an inverted index whose expected
//! work is a small fraction of the database. The `info` module carries the
//! analysis side: the equivalent ternary channel of the Gaussian query
//! model, mutual-information sweeps, threshold optimization, and the
//! length-matching rule that makes binary and ternary codes comparable at
//! equal stored entropy. `experiment` wires both into reproducible
//! benchmarks, and `io` fixes the on-disk formats.
//!
//! Everything randomized is seeded and deterministic: same inputs, same
//! bytes out, independent of thread count.

pub mod bvn;
pub mod channel;
pub mod decode;
pub mod encode;
pub mod error;
pub mod experiment;
pub mod info;
pub mod io;
pub mod projection;

pub use channel::{derive_seed, q_function, sample_database, sample_query, ChannelSpec, FeatureMatrix};
pub use decode::{
    build_index, exact_nn, hamming_decode, ml_decode, nn_list, sublinear_decode, CodeKind,
    DecodeResult, EncodedDatabase, InvertedIndex, ScoreAccumulator,
};
pub use encode::{
    alpha_of, binarize, binary_entropy_h2, gamma_of, ternarize, ternary_entropy, BinaryCode,
    TernaryCode, ThresholdPair,
};
pub use error::{Result, StcError};
pub use experiment::{
    complexity_ratio, estimate_resources, memory_bits, run_gain_at, run_gain_sweep,
    run_identification, ExperimentConfig, GainRow, TradeoffPoint,
};
pub use info::{
    binary_flip_prob, binary_mi, matched_lengths, optimize_lambda_y, ternary_mi,
    transition_matrix, voting_constants, CodingGainReport, GridSpec, TransitionMatrix,
    VotingConstants,
};
pub use projection::{ProjectionKind, ProjectionMatrix};
