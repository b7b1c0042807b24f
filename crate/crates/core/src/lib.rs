//! Perfect sampling by coupling from the past and its relatives, each paired
//! with an exact oracle on small targets.
//!
//! Every sampler reads its randomness from [`noise`], which derives atoms
//! from `(seed, time, replicate)` keys, so runs replay bit-for-bit and
//! replicates parallelize freely.

pub mod cftp;
pub mod chain;
pub mod cli;
pub mod couplers;
pub mod doubly_intractable;
pub mod error;
pub mod fill;
pub mod models;
pub mod noise;
pub mod oracle;
pub mod readonce;
pub mod stats;
pub mod umcmc;

pub use chain::{
    backward_compose, forward_compose, DiscreteNoise, FiniteSpace, Monotone, Recursion,
};
pub use error::{Error, Result};
pub use noise::{noise_at, KeyedNoise, NoiseAtom, NoiseShape, NoiseSource, ScriptedNoise};
pub use oracle::{exact_stationary, exact_tv_at, FiniteChainSpec, StationaryOracle};
