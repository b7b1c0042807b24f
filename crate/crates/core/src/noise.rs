//! Keyed, replayable noise.
//!
//! Every atom is a pure function of `(seed, t, replicate)` and the requested
//! [`NoiseShape`]. Nothing is stored: revisiting a past time index re-derives
//! the identical atom, which is what coupling from the past needs when it
//! extends a failed run further back. Each slot kind draws from its own
//! ChaCha8 stream keyed by the full index, so derivation is constant-time in
//! `t` and adding slots of one kind never perturbs another kind.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Replicate ids with this bit set are reserved for pilot runs.
pub const PILOT_BIT: u64 = 1 << 63;

const KIND_UNIFORM: u64 = 1;
const KIND_NORMAL: u64 = 2;
const KIND_EXPONENTIAL: u64 = 3;
const KIND_BERNOULLI: u64 = 4;
const KIND_AUX: u64 = 1 << 32;

/// Maps a production replicate id onto its reserved pilot twin.
pub fn pilot_replicate(replicate: u64) -> u64 {
    replicate | PILOT_BIT
}

/// SplitMix64 finalizer. Used to derive sub-seeds for nested samplers.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for a named sub-stream of `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Uniform on the open interval (0, 1) with 53 random bits.
pub fn open_uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// How many deviates of each kind one application of a step map consumes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseShape {
    pub uniforms: usize,
    pub normals: usize,
    pub exponentials: usize,
    /// Success probability of each Bernoulli slot.
    pub bernoulli: Vec<f64>,
    /// Whether the step needs an unbounded auxiliary stream.
    pub aux_stream: bool,
}

impl NoiseShape {
    pub fn uniforms(n: usize) -> Self {
        Self {
            uniforms: n,
            ..Self::default()
        }
    }

    pub fn bernoulli(p: f64) -> Self {
        Self {
            bernoulli: vec![p],
            ..Self::default()
        }
    }

    pub fn with_aux_stream(mut self) -> Self {
        self.aux_stream = true;
        self
    }
}

impl fmt::Display for NoiseShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}U {}N {}E {}B{}]",
            self.uniforms,
            self.normals,
            self.exponentials,
            self.bernoulli.len(),
            if self.aux_stream { " +aux" } else { "" }
        )
    }
}

/// Full key of one atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub t: i64,
    pub replicate: u64,
}

impl NoiseKey {
    fn rng(&self, kind: u64) -> ChaCha8Rng {
        let mut bytes = [0u8; 32];
        bytes[0..8].copy_from_slice(&self.seed.to_le_bytes());
        bytes[8..16].copy_from_slice(&self.t.to_le_bytes());
        bytes[16..24].copy_from_slice(&self.replicate.to_le_bytes());
        bytes[24..32].copy_from_slice(&kind.to_le_bytes());
        ChaCha8Rng::from_seed(bytes)
    }
}

/// The deviates consumed by one application of a step map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseAtom {
    pub uniforms: Vec<f64>,
    pub normals: Vec<f64>,
    pub exponentials: Vec<f64>,
    pub bits: Vec<bool>,
    key: Option<NoiseKey>,
}

impl NoiseAtom {
    /// An atom made of explicit Bernoulli outcomes, for scripted traces.
    pub fn from_bits(bits: &[bool]) -> Self {
        Self {
            bits: bits.to_vec(),
            ..Self::default()
        }
    }

    pub fn from_uniforms(uniforms: &[f64]) -> Self {
        Self {
            uniforms: uniforms.to_vec(),
            ..Self::default()
        }
    }

    /// Builds an atom from explicit slot contents.
    pub fn explicit(
        uniforms: Vec<f64>,
        normals: Vec<f64>,
        exponentials: Vec<f64>,
        bits: Vec<bool>,
    ) -> Self {
        Self {
            uniforms,
            normals,
            exponentials,
            bits,
            key: None,
        }
    }

    pub fn key(&self) -> Option<NoiseKey> {
        self.key
    }

    /// Unbounded auxiliary stream attached to a keyed atom. Distinct tags give
    /// independent streams; scripted atoms have none.
    pub fn aux_rng(&self, tag: u32) -> Option<ChaCha8Rng> {
        self.key.map(|k| k.rng(KIND_AUX | tag as u64))
    }

    pub fn conforms(&self, shape: &NoiseShape) -> bool {
        self.uniforms.len() == shape.uniforms
            && self.normals.len() == shape.normals
            && self.exponentials.len() == shape.exponentials
            && self.bits.len() == shape.bernoulli.len()
            && (!shape.aux_stream || self.key.is_some())
    }

    pub fn shape_summary(&self) -> String {
        format!(
            "[{}U {}N {}E {}B{}]",
            self.uniforms.len(),
            self.normals.len(),
            self.exponentials.len(),
            self.bits.len(),
            if self.key.is_some() { " +aux" } else { "" }
        )
    }
}

impl fmt::Display for NoiseAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if !self.bits.is_empty() {
            let b: Vec<&str> = self
                .bits
                .iter()
                .map(|&b| if b { "1" } else { "0" })
                .collect();
            parts.push(format!("bits={}", b.join("")));
        }
        if !self.uniforms.is_empty() {
            parts.push(format!("u={:?}", self.uniforms));
        }
        if !self.normals.is_empty() {
            parts.push(format!("n={:?}", self.normals));
        }
        if !self.exponentials.is_empty() {
            parts.push(format!("e={:?}", self.exponentials));
        }
        if let Some(k) = self.key {
            parts.push(format!("key=({}, {}, {})", k.seed, k.t, k.replicate));
        }
        write!(f, "{{{}}}", parts.join(" "))
    }
}

/// Derives the atom at `(seed, t, replicate)` with the requested shape.
pub fn noise_at(seed: u64, t: i64, replicate: u64, shape: &NoiseShape) -> NoiseAtom {
    let key = NoiseKey { seed, t, replicate };
    let mut atom = NoiseAtom {
        key: Some(key),
        ..NoiseAtom::default()
    };
    if shape.uniforms > 0 {
        let mut rng = key.rng(KIND_UNIFORM);
        atom.uniforms = (0..shape.uniforms)
            .map(|_| open_uniform(&mut rng))
            .collect();
    }
    if shape.normals > 0 {
        let mut rng = key.rng(KIND_NORMAL);
        atom.normals = (0..shape.normals)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
    }
    if shape.exponentials > 0 {
        let mut rng = key.rng(KIND_EXPONENTIAL);
        atom.exponentials = (0..shape.exponentials)
            .map(|_| -open_uniform(&mut rng).ln())
            .collect();
    }
    if !shape.bernoulli.is_empty() {
        // one dedicated uniform per bit
        let mut rng = key.rng(KIND_BERNOULLI);
        atom.bits = shape
            .bernoulli
            .iter()
            .map(|&p| open_uniform(&mut rng) < p)
            .collect();
    }
    atom
}

/// Anything that can hand out the atom for time index `t`.
pub trait NoiseSource {
    fn atom(&self, t: i64) -> Option<NoiseAtom>;
}

/// Counter-based noise for one `(seed, replicate)` stream.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyedNoise {
    pub seed: u64,
    pub replicate: u64,
    pub shape: NoiseShape,
}

impl KeyedNoise {
    pub fn new(seed: u64, replicate: u64, shape: NoiseShape) -> Self {
        Self {
            seed,
            replicate,
            shape,
        }
    }

    pub fn at(&self, t: i64) -> NoiseAtom {
        noise_at(self.seed, t, self.replicate, &self.shape)
    }
}

impl NoiseSource for KeyedNoise {
    fn atom(&self, t: i64) -> Option<NoiseAtom> {
        Some(self.at(t))
    }
}

/// Explicit atoms at explicit time indices.
#[derive(Debug, Clone, Default)]
pub struct ScriptedNoise {
    atoms: HashMap<i64, NoiseAtom>,
}

impl ScriptedNoise {
    /// Atoms for `t = -m, ..., -1`, listed oldest first.
    pub fn past(oldest_first: Vec<NoiseAtom>) -> Self {
        let m = oldest_first.len() as i64;
        let atoms = oldest_first
            .into_iter()
            .enumerate()
            .map(|(i, a)| (i as i64 - m, a))
            .collect();
        Self { atoms }
    }

    /// Atoms for `t = 1, 2, ...`.
    pub fn future(atoms: Vec<NoiseAtom>) -> Self {
        let atoms = atoms
            .into_iter()
            .enumerate()
            .map(|(i, a)| (i as i64 + 1, a))
            .collect();
        Self { atoms }
    }

    /// Bernoulli script for `t = -m..=-1`, oldest first.
    pub fn past_bits(oldest_first: &[bool]) -> Self {
        Self::past(
            oldest_first
                .iter()
                .map(|&b| NoiseAtom::from_bits(&[b]))
                .collect(),
        )
    }
}

impl NoiseSource for ScriptedNoise {
    fn atom(&self, t: i64) -> Option<NoiseAtom> {
        self.atoms.get(&t).cloned()
    }
}
