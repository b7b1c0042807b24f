//! Exact finite-chain oracles: transition matrices, stationary laws and
//! k-step total-variation distances. Every sampler in the crate is checked
//! against these.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;
const POWER_RESIDUAL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 1_000_000;
const AGREEMENT_TOL: f64 = 1e-10;

/// Row-stochastic transition matrix over labelled states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteChainSpec {
    labels: Vec<f64>,
    matrix: Vec<Vec<f64>>,
}

impl FiniteChainSpec {
    pub fn new(labels: Vec<f64>, matrix: Vec<Vec<f64>>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidDistribution("empty state space".into()));
        }
        if matrix.len() != n {
            return Err(Error::InvalidDistribution(format!(
                "{} labels but {} matrix rows",
                n,
                matrix.len()
            )));
        }
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidDistribution(format!(
                    "row {i} has {} entries",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::InvalidDistribution(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidDistribution(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self { labels, matrix })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.matrix[from][to]
    }

    /// One step of the distribution recursion `mu ← mu · P`.
    pub fn push_forward(&self, mu: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for (i, &m) in mu.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(&self.matrix[i]) {
                *o += m * p;
            }
        }
        out
    }

    fn check_irreducible(&self) -> Result<()> {
        let n = self.len();
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(u) = stack.pop() {
                for v in 0..n {
                    let p = if forward {
                        self.matrix[u][v]
                    } else {
                        self.matrix[v][u]
                    };
                    if p > 0.0 && !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen
        };
        if let Some(to) = reach(true).iter().position(|&s| !s) {
            return Err(Error::Reducible { from: 0, to });
        }
        if let Some(from) = reach(false).iter().position(|&s| !s) {
            return Err(Error::Reducible { from, to: 0 });
        }
        Ok(())
    }

    fn period(&self) -> usize {
        let n = self.len();
        let mut level = vec![usize::MAX; n];
        level[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        let mut g: usize = 0;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if self.matrix[u][v] > 0.0 {
                    if level[v] == usize::MAX {
                        level[v] = level[u] + 1;
                        queue.push_back(v);
                    } else {
                        let d = (level[u] + 1).abs_diff(level[v]);
                        g = gcd(g, d);
                    }
                }
            }
        }
        g
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// The exact stationary law of a finite chain.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryOracle {
    pub pi: Vec<f64>,
    spec: FiniteChainSpec,
}

impl StationaryOracle {
    pub fn spec(&self) -> &FiniteChainSpec {
        &self.spec
    }

    /// Law of `X_k` when `X_0 ~ init`.
    pub fn k_step_marginal(&self, init: &[f64], k: usize) -> Result<Vec<f64>> {
        check_distribution(init, self.spec.len())?;
        let mut mu = init.to_vec();
        for _ in 0..k {
            mu = self.spec.push_forward(&mu);
        }
        Ok(mu)
    }

    /// `E_pi[h]` for `h` given as one value per state.
    pub fn expectation(&self, h: &[f64]) -> f64 {
        self.pi.iter().zip(h).map(|(p, v)| p * v).sum()
    }

    pub fn residual(&self) -> f64 {
        l1(&self.spec.push_forward(&self.pi), &self.pi)
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Half the L1 distance between two probability vectors.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * l1(p, q)
}

pub(crate) fn check_distribution(mu: &[f64], n: usize) -> Result<()> {
    if mu.len() != n {
        return Err(Error::InvalidDistribution(format!(
            "expected {n} entries, got {}",
            mu.len()
        )));
    }
    if mu.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidDistribution(
            "negative or non-finite mass".into(),
        ));
    }
    let s: f64 = mu.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("total mass {s}")));
    }
    Ok(())
}

fn power_iteration(spec: &FiniteChainSpec) -> Option<Vec<f64>> {
    let n = spec.len();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..POWER_MAX_ITERS {
        let mut next = spec.push_forward(&pi);
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|p| *p /= s);
        let r = l1(&next, &pi);
        pi = next;
        if r < POWER_RESIDUAL {
            return Some(pi);
        }
    }
    None
}

fn dense_solve(spec: &FiniteChainSpec) -> Option<Vec<f64>> {
    let n = spec.len();
    // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(j, i)] = spec.prob(i, j);
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b)?;
    Some(x.iter().map(|&p| p.max(0.0)).collect())
}

/// Solves `pi P = pi` by power iteration and by a dense linear solve, and
/// requires the two to agree.
pub fn exact_stationary(spec: &FiniteChainSpec) -> Result<StationaryOracle> {
    spec.check_irreducible()?;
    let period = spec.period();
    if period > 1 {
        return Err(Error::Periodic { period });
    }
    let dense = dense_solve(spec).ok_or(Error::SolverDisagreement {
        deviation: f64::INFINITY,
    })?;
    let pi = match power_iteration(spec) {
        Some(power) => {
            let dev = power
                .iter()
                .zip(&dense)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if dev > AGREEMENT_TOL {
                return Err(Error::SolverDisagreement { deviation: dev });
            }
            power
        }
        None => {
            let r = l1(&spec.push_forward(&dense), &dense);
            if r > AGREEMENT_TOL {
                return Err(Error::SolverDisagreement { deviation: r });
            }
            dense
        }
    };
    Ok(StationaryOracle {
        pi,
        spec: spec.clone(),
    })
}

/// `d_TV(init · P^k, pi)`.
pub fn exact_tv_at(spec: &FiniteChainSpec, init: &[f64], k: usize) -> Result<f64> {
    let oracle = exact_stationary(spec)?;
    let mu = oracle.k_step_marginal(init, k)?;
    Ok(tv_distance(&mu, &oracle.pi))
}

/// Point mass on state `i` of an `n`-state space.
pub fn point_mass(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}
