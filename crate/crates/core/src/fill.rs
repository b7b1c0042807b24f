//! Fill's interruptible perfect sampler for finite monotone chains, and the
//! reversed-Gibbs noise recovery for a bimodal continuous target.

use serde::Serialize;

use crate::chain::{DiscreteNoise, FiniteSpace, Monotone};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, noise_at, NoiseAtom, NoiseShape};
use crate::oracle::{exact_stationary, FiniteChainSpec};

/// Time-reversed kernel `k̃(x|z) = k(z|x)·π(x)/π(z)`, stored as rows indexed by `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReversedKernel {
    pub matrix: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
}

impl ReversedKernel {
    pub fn row(&self, z: usize) -> &[f64] {
        &self.matrix[z]
    }

    /// Largest entrywise violation of `k̃(x|z)π(z) = k(z|x)π(x)`.
    pub fn balance_residual(&self, spec: &FiniteChainSpec) -> f64 {
        let n = self.pi.len();
        let mut worst = 0.0f64;
        for z in 0..n {
            for x in 0..n {
                let d = (self.matrix[z][x] * self.pi[z] - spec.prob(x, z) * self.pi[x]).abs();
                worst = worst.max(d);
            }
        }
        worst
    }
}

pub fn reverse_kernel(spec: &FiniteChainSpec) -> Result<ReversedKernel> {
    let pi = exact_stationary(spec)?.pi;
    if let Some(i) = pi.iter().position(|&p| p <= 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "stationary mass at state {i} is zero"
        )));
    }
    let n = pi.len();
    let matrix = (0..n)
        .map(|z| (0..n).map(|x| spec.prob(x, z) * pi[x] / pi[z]).collect())
        .collect();
    Ok(ReversedKernel { matrix, pi })
}

/// Law of the atom given that it carries `from` to `to`, renormalized.
pub fn conditioned_noise_law<M>(model: &M, from: &M::State, to: &M::State) -> Vec<(NoiseAtom, f64)>
where
    M: DiscreteNoise,
{
    let hits: Vec<(NoiseAtom, f64)> = model
        .atom_law()
        .into_iter()
        .filter(|(a, w)| *w > 0.0 && model.step(from, a) == *to)
        .collect();
    let total: f64 = hits.iter().map(|(_, w)| w).sum();
    hits.into_iter().map(|(a, w)| (a, w / total)).collect()
}

fn pick(weights: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
        }
        acc += w;
        if u < acc {
            return i;
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FillAttempt<S> {
    pub accepted: bool,
    /// Time-0 end of the reversed path.
    pub draw: S,
    /// Time-`T` start of the reversed path.
    pub start: S,
    pub t: u64,
}

/// A model ready for Fill's algorithm: finite, monotone, with a finite atom law.
pub trait FillModel: FiniteSpace + Monotone + DiscreteNoise {}
impl<M: FiniteSpace + Monotone + DiscreteNoise> FillModel for M {}

/// One attempt with horizon `t`. `Z` is uniform over the states; the reversed
/// kernel carries it back to `X_0`; conditioned atoms then drive the bottom
/// and top paths forward, and `X_0` is accepted iff they meet by time `t`.
pub fn fill_sample<M: FillModel>(
    model: &M,
    rev: &ReversedKernel,
    t: u64,
    seed: u64,
    replicate: u64,
) -> Result<FillAttempt<M::State>> {
    if t == 0 {
        return Err(Error::InvalidParameter(
            "Fill horizon must be at least 1".into(),
        ));
    }
    let states = model.states();
    let n = states.len();
    let shape = NoiseShape::uniforms(2);
    let u0 = noise_at(seed, 0, replicate, &shape);
    let z = pick(std::iter::repeat_n(1.0 / n as f64, n), u0.uniforms[0]);
    // path[s] = index of X_s
    let mut path = vec![0usize; t as usize + 1];
    path[t as usize] = z;
    for s in (0..t as usize).rev() {
        let u = noise_at(seed, s as i64 + 1, replicate, &shape).uniforms[0];
        path[s] = pick(rev.row(path[s + 1]).iter().copied(), u);
    }
    let (mut lo, mut hi) = (model.bottom(), model.top());
    for s in 1..=t as usize {
        let u = noise_at(seed, s as i64, replicate, &shape).uniforms[1];
        let law = conditioned_noise_law(model, &states[path[s - 1]], &states[path[s]]);
        let atom = &law[pick(law.iter().map(|(_, w)| *w), u)].0;
        lo = model.step(&lo, atom);
        hi = model.step(&hi, atom);
    }
    Ok(FillAttempt {
        accepted: lo == hi,
        draw: states[path[0]].clone(),
        start: states[z].clone(),
        t,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FillRun<S> {
    pub draw: S,
    pub rejections: u32,
    pub t: u64,
}

/// Repeats independent attempts, doubling the horizon after each rejection.
pub fn fill_run<M: FillModel>(
    model: &M,
    rev: &ReversedKernel,
    t0: u64,
    seed: u64,
    replicate: u64,
    max_attempts: u32,
) -> Result<FillRun<M::State>> {
    let mut t = t0.max(1);
    for attempt in 0..max_attempts {
        let a = fill_sample(model, rev, t, derive_seed(seed, attempt as u64), replicate)?;
        if a.accepted {
            return Ok(FillRun {
                draw: a.draw,
                rejections: attempt,
                t,
            });
        }
        t = t.saturating_mul(2);
    }
    Err(Error::IterationCap {
        what: "Fill attempts",
        cap: max_attempts as u64,
    })
}

/// Conditional mean `(2y + 4)/(8y² + 1)` of either coordinate given the other.
pub fn gibbs_mean(y: f64) -> f64 {
    (2.0 * y + 4.0) / (8.0 * y * y + 1.0)
}

/// Conditional standard deviation `(8y² + 1)^{-1/2}`.
pub fn gibbs_sd(y: f64) -> f64 {
    (8.0 * y * y + 1.0).sqrt().recip()
}

/// Forward systematic-scan step: `x` given `y`, then `y` given the new `x`.
pub fn gibbs_forward_step(_x: f64, y: f64, u: f64, w: f64) -> (f64, f64) {
    let x1 = gibbs_mean(y) + u * gibbs_sd(y);
    let y1 = gibbs_mean(x1) + w * gibbs_sd(x1);
    (x1, y1)
}

/// Reversed scan: `y` given `x_{t+1}` with deviate `z`, then `x` given that
/// `y` with deviate `v`.
pub fn gibbs_reverse_step(x1: f64, _y1: f64, v: f64, z: f64) -> (f64, f64) {
    let y0 = gibbs_mean(x1) + z * gibbs_sd(x1);
    let x0 = gibbs_mean(y0) + v * gibbs_sd(y0);
    (x0, y0)
}

/// Deviates `(u_t, w_t)` carrying each forward transition of `path`.
pub fn recover_gibbs_noise(path: &[(f64, f64)]) -> Vec<(f64, f64)> {
    path.windows(2)
        .map(|p| {
            let ((_, y0), (x1, y1)) = (p[0], p[1]);
            let u = (x1 - gibbs_mean(y0)) / gibbs_sd(y0);
            let w = (y1 - gibbs_mean(x1)) / gibbs_sd(x1);
            (u, w)
        })
        .collect()
}

/// Deviates `(v, z)` for which the reversed step maps `next` onto `prev`.
pub fn recover_reverse_noise(prev: (f64, f64), next: (f64, f64)) -> (f64, f64) {
    let ((x0, y0), (x1, _)) = (prev, next);
    let z = (y0 - gibbs_mean(x1)) / gibbs_sd(x1);
    let v = (x0 - gibbs_mean(y0)) / gibbs_sd(y0);
    (v, z)
}

/// Forward path from `start` under the given deviates.
pub fn gibbs_forward_path(start: (f64, f64), noise: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut path = Vec::with_capacity(noise.len() + 1);
    path.push(start);
    let mut cur = start;
    for &(u, w) in noise {
        cur = gibbs_forward_step(cur.0, cur.1, u, w);
        path.push(cur);
    }
    path
}

/// Un-normalized bimodal target density.
pub fn gibbs_target_density(x: f64, y: f64) -> f64 {
    (-(8.0 * x * x * y * y + x * x + y * y - 4.0 * x * y - 8.0 * x - 8.0 * y) / 2.0).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LadderWalk, NonMonotoneWalk};
    use crate::noise::KeyedNoise;

    #[test]
    fn reversible_ladder_reverses_to_itself() {
        let spec = LadderWalk::new(0.3).unwrap().chain_spec();
        let rev = reverse_kernel(&spec).unwrap();
        for z in 0..4 {
            for x in 0..4 {
                assert!((rev.row(z)[x] - spec.prob(z, x)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn symmetric_matrix_reverses_to_itself() {
        let m = vec![
            vec![0.5, 0.3, 0.2],
            vec![0.3, 0.4, 0.3],
            vec![0.2, 0.3, 0.5],
        ];
        let spec = FiniteChainSpec::new(vec![0.0, 1.0, 2.0], m.clone()).unwrap();
        let rev = reverse_kernel(&spec).unwrap();
        for (r, row) in m.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((rev.matrix[r][c] - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn nonreversible_walk_satisfies_balance() {
        let spec = NonMonotoneWalk::new(0.1).unwrap().chain_spec();
        let rev = reverse_kernel(&spec).unwrap();
        assert!(rev.balance_residual(&spec) < 1e-10);
        assert!((rev.matrix[0][1] - spec.prob(0, 1)).abs() > 0.1);
        for row in &rev.matrix {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conditioned_law_recovers_kernel_row() {
        let m = LadderWalk::new(0.35).unwrap();
        let spec = m.chain_spec();
        for x in m.states() {
            for z in m.states() {
                let law = conditioned_noise_law(&m, &x, &z);
                if spec.prob(x, z) == 0.0 {
                    assert!(law.is_empty());
                    continue;
                }
                assert!((law.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-12);
                // reweighting by the unconditional probability of hitting z recovers k(x, z)
                let raw: f64 = m
                    .atom_law()
                    .iter()
                    .filter(|(a, _)| law.iter().any(|(b, _)| a == b))
                    .map(|(_, w)| w)
                    .sum();
                assert!((raw - spec.prob(x, z)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn long_horizon_almost_always_accepts() {
        let m = LadderWalk::new(0.5).unwrap();
        let rev = reverse_kernel(&m.chain_spec()).unwrap();
        let n = 2000;
        let acc = (0..n)
            .filter(|&r| fill_sample(&m, &rev, 128, 9, r).unwrap().accepted)
            .count();
        assert!(acc as f64 / n as f64 >= 0.99);
    }

    #[test]
    fn zero_noise_reverse_gives_means() {
        let (x0, y0) = gibbs_reverse_step(1.3, -0.2, 0.0, 0.0);
        assert_eq!(y0, gibbs_mean(1.3));
        assert_eq!(x0, gibbs_mean(y0));
    }

    #[test]
    fn recovery_round_trip() {
        let noise = KeyedNoise::new(
            4,
            0,
            NoiseShape {
                normals: 2,
                ..NoiseShape::default()
            },
        );
        let dev: Vec<(f64, f64)> = (1..=50)
            .map(|t| {
                let a = noise.at(t);
                (a.normals[0], a.normals[1])
            })
            .collect();
        let path = gibbs_forward_path((0.5, 0.5), &dev);
        let rec = recover_gibbs_noise(&path);
        for (a, b) in dev.iter().zip(&rec) {
            assert!((a.0 - b.0).abs() <= 1e-12 * a.0.abs().max(1.0));
            assert!((a.1 - b.1).abs() <= 1e-12 * a.1.abs().max(1.0));
        }
        assert_eq!(recover_gibbs_noise(&path[..1]), vec![]);
        assert!(recover_gibbs_noise(&[]).is_empty());
    }

    #[test]
    fn zero_noise_recovers_zero() {
        let path = gibbs_forward_path((0.1, 1.0), &[(0.0, 0.0)]);
        let rec = recover_gibbs_noise(&path);
        assert!(rec[0].0.abs() < 1e-15 && rec[0].1.abs() < 1e-15);
    }

    #[test]
    fn reverse_round_trip_reproduces_state() {
        let noise = KeyedNoise::new(
            6,
            0,
            NoiseShape {
                normals: 2,
                ..NoiseShape::default()
            },
        );
        for t in 1..200 {
            let a = noise.at(t);
            let prev = (a.normals[0], a.normals[1]);
            let next = gibbs_forward_step(prev.0, prev.1, 0.3, -1.1);
            let (v, z) = recover_reverse_noise(prev, next);
            let back = gibbs_reverse_step(next.0, next.1, v, z);
            assert!((back.0 - prev.0).abs() <= 1e-12 * prev.0.abs().max(1.0));
            assert!((back.1 - prev.1).abs() <= 1e-12 * prev.1.abs().max(1.0));
            // the reversed deviates differ from the forward ones
            let (u, w) = recover_gibbs_noise(&[prev, next])[0];
            assert!((u - v).abs() + (w - z).abs() > 0.0);
        }
    }
}
