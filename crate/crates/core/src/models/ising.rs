//! Ferromagnetic Ising model on an `L × L` grid with free boundaries.

use std::collections::BTreeMap;

use crate::chain::{Monotone, Recursion};
use crate::error::{Error, Result};
use crate::noise::{NoiseAtom, NoiseShape};

/// Largest side length the exhaustive oracle accepts (2^16 configurations).
pub const MAX_ENUMERATION_SIDE: usize = 4;

pub type Spins = Vec<i8>;

/// Heat-bath Gibbs sampler for `P(s) ∝ exp(beta · Σ_<ij> s_i s_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ising {
    side: usize,
    beta: f64,
}

impl Ising {
    pub fn new(side: usize, beta: f64) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidParameter(
                "Ising side must be positive".into(),
            ));
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "Ising beta={beta} must be finite and non-negative"
            )));
        }
        Ok(Self { side, beta })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sites(&self) -> usize {
        self.side * self.side
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.side, beta)
    }

    fn neighbor_sum(&self, s: &[i8], i: usize) -> i32 {
        let l = self.side;
        let (r, c) = (i / l, i % l);
        let mut sum = 0i32;
        if r > 0 {
            sum += s[i - l] as i32;
        }
        if r + 1 < l {
            sum += s[i + l] as i32;
        }
        if c > 0 {
            sum += s[i - 1] as i32;
        }
        if c + 1 < l {
            sum += s[i + 1] as i32;
        }
        sum
    }

    /// One raster-scan heat-bath sweep. Site `i` becomes +1 iff
    /// `u_i ≤ 1 / (1 + exp(-2·beta·neighbor_sum))`.
    pub fn sweep(&self, config: &[i8], uniforms: &[f64]) -> Spins {
        let mut s = config.to_vec();
        for (i, &u) in uniforms.iter().enumerate().take(self.sites()) {
            let h = self.neighbor_sum(&s, i) as f64;
            let p_plus = 1.0 / (1.0 + (-2.0 * self.beta * h).exp());
            s[i] = if u <= p_plus { 1 } else { -1 };
        }
        s
    }

    pub fn all_plus(&self) -> Spins {
        vec![1; self.sites()]
    }

    pub fn all_minus(&self) -> Spins {
        vec![-1; self.sites()]
    }
}

/// `Σ_<ij> s_i s_j` over horizontal and vertical neighbour pairs.
pub fn pair_sum(side: usize, s: &[i8]) -> i32 {
    let mut total = 0i32;
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            if c + 1 < side {
                total += (s[i] * s[i + 1]) as i32;
            }
            if r + 1 < side {
                total += (s[i] * s[i + side]) as i32;
            }
        }
    }
    total
}

pub fn magnetization(s: &[i8]) -> i32 {
    s.iter().map(|&x| x as i32).sum()
}

impl Recursion for Ising {
    type State = Spins;

    fn noise_shape(&self) -> NoiseShape {
        NoiseShape::uniforms(self.sites())
    }

    fn step(&self, x: &Spins, atom: &NoiseAtom) -> Spins {
        self.sweep(x, &atom.uniforms)
    }

    /// Absolute magnetization per site.
    fn value(&self, x: &Spins) -> f64 {
        magnetization(x).unsigned_abs() as f64 / self.sites() as f64
    }
}

impl Monotone for Ising {
    fn precedes(&self, a: &Spins, b: &Spins) -> bool {
        a.iter().zip(b).all(|(x, y)| x <= y)
    }

    fn bottom(&self) -> Spins {
        self.all_minus()
    }

    fn top(&self) -> Spins {
        self.all_plus()
    }
}

/// Exhaustive enumeration of every configuration of a small grid, grouped by
/// (pair sum, magnetization). Reusable across any number of `beta` values.
#[derive(Debug, Clone)]
pub struct IsingEnumeration {
    side: usize,
    /// (pair sum, magnetization) → number of configurations.
    counts: BTreeMap<(i32, i32), u64>,
}

pub fn config_from_bits(bits: u32, sites: usize) -> Spins {
    (0..sites)
        .map(|i| if bits >> i & 1 == 1 { 1 } else { -1 })
        .collect()
}

impl IsingEnumeration {
    pub fn new(side: usize) -> Result<Self> {
        if side == 0 || side > MAX_ENUMERATION_SIDE {
            return Err(Error::InvalidParameter(format!(
                "exhaustive Ising enumeration supports sides 1..={MAX_ENUMERATION_SIDE}, got {side}"
            )));
        }
        let sites = side * side;
        let mut counts = BTreeMap::new();
        for bits in 0..(1u32 << sites) {
            let s = config_from_bits(bits, sites);
            *counts
                .entry((pair_sum(side, &s), magnetization(&s)))
                .or_insert(0) += 1;
        }
        Ok(Self { side, counts })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// `log Z(beta)` by log-sum-exp over pair-sum classes.
    pub fn log_z(&self, beta: f64) -> f64 {
        let terms: Vec<f64> = self
            .counts
            .iter()
            .map(|(&(e, _), &c)| (c as f64).ln() + beta * e as f64)
            .collect();
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }

    pub fn z(&self, beta: f64) -> f64 {
        self.log_z(beta).exp()
    }

    /// Exact law of `|magnetization| / L²` as (value, probability) pairs.
    pub fn abs_magnetization_law(&self, beta: f64) -> Vec<(f64, f64)> {
        let lz = self.log_z(beta);
        let sites = (self.side * self.side) as f64;
        let mut law: BTreeMap<u32, f64> = BTreeMap::new();
        for (&(e, m), &c) in &self.counts {
            *law.entry(m.unsigned_abs()).or_insert(0.0) +=
                (c as f64).ln().exp() * (beta * e as f64 - lz).exp();
        }
        law.into_iter()
            .map(|(m, p)| (m as f64 / sites, p))
            .collect()
    }

    pub fn mean_abs_magnetization(&self, beta: f64) -> f64 {
        self.abs_magnetization_law(beta)
            .iter()
            .map(|(v, p)| v * p)
            .sum()
    }

    /// Second moment of `|m|`, for Monte Carlo standard errors.
    pub fn abs_magnetization_second_moment(&self, beta: f64) -> f64 {
        self.abs_magnetization_law(beta)
            .iter()
            .map(|(v, p)| v * v * p)
            .sum()
    }
}

/// Exact moments of the Ising law from full enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingMoments {
    pub z: f64,
    pub mean_abs_magnetization: f64,
    /// `E[s_i s_j]` for every site pair, row-major `sites × sites`.
    pub pair_expectations: Vec<f64>,
}

pub fn ising_exact_moments(side: usize, beta: f64) -> Result<IsingMoments> {
    let en = IsingEnumeration::new(side)?;
    let sites = side * side;
    let lz = en.log_z(beta);
    let mut pair = vec![0.0; sites * sites];
    for bits in 0..(1u32 << sites) {
        let s = config_from_bits(bits, sites);
        let w = (beta * pair_sum(side, &s) as f64 - lz).exp();
        for i in 0..sites {
            for j in 0..sites {
                pair[i * sites + j] += w * (s[i] * s[j]) as f64;
            }
        }
    }
    Ok(IsingMoments {
        z: lz.exp(),
        mean_abs_magnetization: en.mean_abs_magnetization(beta),
        pair_expectations: pair,
    })
}
