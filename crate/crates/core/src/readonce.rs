//! Read-once CFTP: exact draws collected while moving forward in time, one
//! fixed-size block of atoms at a time.
//!
//! Block `b` (from 0) consumes forward atoms at times `b·K + 1 ..= b·K + K`.
//! A block is coalescent when every tracked start maps to one value through
//! it. Each sample is the path value just before a coalescent block.

use serde::Serialize;

use crate::chain::{FiniteSpace, Monotone, Recursion};
use crate::error::{Error, Result};
use crate::noise::{KeyedNoise, NoiseAtom, PILOT_BIT};

pub const DEFAULT_BLOCK_CAP: u64 = 1 << 16;
pub const DEFAULT_MAX_BLOCK_LEN: usize = 1 << 16;

/// Starts whose joint coalescence certifies coalescence of every path.
pub fn all_starts<M: FiniteSpace>(model: &M) -> Vec<M::State> {
    model.states()
}

pub fn extremal_starts<M: Monotone>(model: &M) -> Vec<M::State> {
    vec![model.bottom(), model.top()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockSpec {
    pub k: usize,
    pub p_hat: f64,
    pub pilot_blocks: u64,
}

/// Composes the block and reports whether all `starts` merged.
pub fn block_coalesces<M: Recursion>(
    model: &M,
    starts: &[M::State],
    atoms: &[NoiseAtom],
) -> (bool, Option<M::State>) {
    let mut cur = starts.to_vec();
    for atom in atoms {
        cur = cur.iter().map(|x| model.step(x, atom)).collect();
    }
    if cur.windows(2).all(|w| w[0] == w[1]) {
        (true, cur.pop())
    } else {
        (false, None)
    }
}

fn block_atoms(noise: &KeyedNoise, k: usize, b: u64) -> Vec<NoiseAtom> {
    let base = b as i64 * k as i64;
    (1..=k as i64).map(|j| noise.at(base + j)).collect()
}

/// Fraction of `n` pilot blocks of length `k` that coalesce. Pilot noise
/// lives on reserved replicate ids.
pub fn pilot_coalescence_rate<M>(model: &M, starts: &[M::State], k: usize, n: u64, seed: u64) -> f64
where
    M: Recursion + Sync,
    M::State: Send + Sync,
{
    use rayon::prelude::*;
    let noise = KeyedNoise::new(seed, PILOT_BIT | k as u64, model.noise_shape());
    let hits: u64 = (0..n)
        .into_par_iter()
        .map(|b| block_coalesces(model, starts, &block_atoms(&noise, k, b)).0 as u64)
        .sum();
    hits as f64 / n as f64
}

/// Smallest `K` in `1, 2, 4, ...` whose pilot coalescence rate reaches `target`.
pub fn choose_block_size<M>(
    model: &M,
    starts: &[M::State],
    target: f64,
    pilot_n: u64,
    seed: u64,
    max_k: usize,
) -> Result<BlockSpec>
where
    M: Recursion + Sync,
    M::State: Send + Sync,
{
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target {target} outside (0,1)"
        )));
    }
    if pilot_n == 0 {
        return Err(Error::InvalidParameter(
            "pilot size must be positive".into(),
        ));
    }
    let mut k = 1usize;
    while k <= max_k {
        let p_hat = pilot_coalescence_rate(model, starts, k, pilot_n, seed);
        if p_hat >= target {
            return Ok(BlockSpec {
                k,
                p_hat,
                pilot_blocks: pilot_n,
            });
        }
        k *= 2;
    }
    Err(Error::IterationCap {
        what: "block-size scan",
        cap: max_k as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoStream<S> {
    pub draws: Vec<S>,
    /// Blocks consumed per sample, the closing coalescent block included.
    pub blocks: Vec<u64>,
    /// Blocks spent before the first coalescent block.
    pub warmup_blocks: u64,
}

/// `n` i.i.d. draws from one forward stream on replicate `replicate`.
/// Only the coalescence path is carried between blocks.
pub fn ro_cftp_stream<M: Recursion>(
    model: &M,
    starts: &[M::State],
    spec: &BlockSpec,
    seed: u64,
    replicate: u64,
    n: usize,
    block_cap: u64,
) -> Result<RoStream<M::State>> {
    if replicate & PILOT_BIT != 0 {
        return Err(Error::InvalidParameter(
            "replicate id collides with the pilot stream".into(),
        ));
    }
    let noise = KeyedNoise::new(seed, replicate, model.noise_shape());
    let k = spec.k;
    let mut b = 0u64;
    let mut path = loop {
        if b >= block_cap {
            return Err(Error::IterationCap {
                what: "blocks before first coalescence",
                cap: block_cap,
            });
        }
        let (hit, value) = block_coalesces(model, starts, &block_atoms(&noise, k, b));
        b += 1;
        if hit {
            break value.expect("coalescent block has a value");
        }
    };
    let warmup_blocks = b;
    let mut draws = Vec::with_capacity(n);
    let mut blocks = Vec::with_capacity(n);
    while draws.len() < n {
        let mut j = 0u64;
        loop {
            if j >= block_cap {
                return Err(Error::IterationCap {
                    what: "blocks per read-once sample",
                    cap: block_cap,
                });
            }
            let atoms = block_atoms(&noise, k, b);
            b += 1;
            j += 1;
            let (hit, value) = block_coalesces(model, starts, &atoms);
            if hit {
                draws.push(path);
                blocks.push(j);
                path = value.expect("coalescent block has a value");
                break;
            }
            for atom in &atoms {
                path = model.step(&path, atom);
            }
        }
    }
    Ok(RoStream {
        draws,
        blocks,
        warmup_blocks,
    })
}
