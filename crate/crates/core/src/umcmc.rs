//! L-lag coupled chains on finite state spaces: unbiased estimators,
//! total-variation bounds and a control-variate refinement.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::{noise_at, pilot_replicate, NoiseShape};
use crate::oracle::{check_distribution, FiniteChainSpec};

pub const DEFAULT_MEETING_CAP: usize = 1 << 20;

fn shape() -> NoiseShape {
    NoiseShape::uniforms(3)
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Maximal coupling of `p` and `q` driven by three uniforms: `i ~ p`,
/// `j ~ q` and `P(i = j) = 1 - d_TV(p, q)`.
pub fn maximal_coupling_rows(p: &[f64], q: &[f64], u: [f64; 3]) -> (usize, usize) {
    let overlap: Vec<f64> = p.iter().zip(q).map(|(a, b)| a.min(*b)).collect();
    let omega: f64 = overlap.iter().sum();
    if u[0] < omega {
        let i = pick(&overlap, u[1] * omega);
        return (i, i);
    }
    let rp: Vec<f64> = p.iter().zip(&overlap).map(|(a, m)| a - m).collect();
    let rq: Vec<f64> = q.iter().zip(&overlap).map(|(b, m)| b - m).collect();
    let (sp, sq) = (rp.iter().sum::<f64>(), rq.iter().sum::<f64>());
    (pick(&rp, u[1] * sp), pick(&rq, u[2] * sq))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LagConfig {
    pub lag: usize,
    pub k: usize,
    /// Record `X` at least through this index.
    pub record_through: usize,
    pub cap: usize,
}

impl LagConfig {
    pub fn new(lag: usize, k: usize) -> Result<Self> {
        if lag == 0 {
            return Err(Error::InvalidParameter("lag must be at least 1".into()));
        }
        Ok(Self {
            lag,
            k,
            record_through: k,
            cap: DEFAULT_MEETING_CAP,
        })
    }
}

/// Two chains with `X` running `lag` steps ahead of `Y`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledPair {
    /// `X_0, X_1, ...` through `max(tau, record_through)`.
    pub x: Vec<usize>,
    /// `Y_0, ..., Y_{tau - lag}`.
    pub y: Vec<usize>,
    pub tau: usize,
    pub lag: usize,
    pub k: usize,
}

impl CoupledPair {
    /// `Y_s`, read from `X_{s + lag}` once the chains have met.
    pub fn y_at(&self, s: usize) -> Result<usize> {
        if s < self.y.len() {
            Ok(self.y[s])
        } else {
            self.x_at(s + self.lag)
        }
    }

    pub fn x_at(&self, t: usize) -> Result<usize> {
        self.x.get(t).copied().ok_or(Error::InsufficientTrajectory {
            need: t,
            have: self.x.len(),
        })
    }

    /// `J = max(0, ceil((tau - L - k)/L))`.
    pub fn j(&self) -> usize {
        j_from_tau(self.tau, self.lag, self.k)
    }

    /// `X_t = Y_{t-L}` for every recorded `t ≥ tau`.
    pub fn is_faithful(&self) -> bool {
        (self.tau..self.x.len()).all(|t| self.y_stored_or_mirror(t - self.lag) == Some(self.x[t]))
            && self.x.get(self.tau).copied() == self.y.last().copied()
    }

    fn y_stored_or_mirror(&self, s: usize) -> Option<usize> {
        if s < self.y.len() {
            Some(self.y[s])
        } else {
            self.x.get(s + self.lag).copied()
        }
    }
}

pub fn j_from_tau(tau: usize, lag: usize, k: usize) -> usize {
    let num = tau as i64 - lag as i64 - k as i64;
    if num <= 0 {
        0
    } else {
        (num as usize).div_ceil(lag)
    }
}

/// Runs the lagged pair from `init`. `X` moves alone for `lag` steps, then
/// `(X_t, Y_{t-L})` move jointly through a maximal coupling of their rows.
/// After meeting, `Y` copies `X`.
pub fn run_lagged_pair(
    spec: &FiniteChainSpec,
    init: &[f64],
    cfg: &LagConfig,
    seed: u64,
    replicate: u64,
) -> Result<CoupledPair> {
    check_distribution(init, spec.len())?;
    let sh = shape();
    let a0 = noise_at(seed, 0, replicate, &sh);
    let mut x = vec![pick(init, a0.uniforms[0])];
    let mut y = vec![pick(init, a0.uniforms[1])];
    for t in 1..=cfg.lag {
        let u = noise_at(seed, t as i64, replicate, &sh).uniforms[0];
        x.push(pick(spec.row(x[t - 1]), u));
    }
    let mut t = cfg.lag;
    while x[t] != y[t - cfg.lag] {
        if t >= cfg.cap {
            return Err(Error::IterationCap {
                what: "lagged meeting time",
                cap: cfg.cap as u64,
            });
        }
        let a = noise_at(seed, t as i64 + 1, replicate, &sh);
        let u = [a.uniforms[0], a.uniforms[1], a.uniforms[2]];
        let (i, j) = maximal_coupling_rows(spec.row(x[t]), spec.row(y[t - cfg.lag]), u);
        x.push(i);
        y.push(j);
        t += 1;
    }
    let tau = t;
    let through = cfg.record_through.max(tau);
    while x.len() <= through {
        let s = x.len();
        let u = noise_at(seed, s as i64, replicate, &sh).uniforms[0];
        x.push(pick(spec.row(x[s - 1]), u));
    }
    Ok(CoupledPair {
        x,
        y,
        tau,
        lag: cfg.lag,
        k: cfg.k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnbiasedEstimate {
    /// Forward form `h(X_k) + Σ_{j=1..J} [h(X_{k+jL}) - h(Y_{k+(j-1)L})]`.
    pub value: f64,
    /// Backward form `h(X_{k+JL}) + Σ_{j=0..J-1} [h(X_{k+jL}) - h(Y_{k+jL})]`.
    pub backward_value: f64,
    pub j: usize,
    pub k: usize,
    pub lag: usize,
}

pub fn h_estimate<H: Fn(usize) -> f64>(pair: &CoupledPair, h: H) -> Result<UnbiasedEstimate> {
    let (k, lag) = (pair.k, pair.lag);
    let j = pair.j();
    let mut fwd = h(pair.x_at(k)?);
    for i in 1..=j {
        fwd += h(pair.x_at(k + i * lag)?) - h(pair.y_at(k + (i - 1) * lag)?);
    }
    let mut bwd = h(pair.x_at(k + j * lag)?);
    for i in 0..j {
        bwd += h(pair.x_at(k + i * lag)?) - h(pair.y_at(k + i * lag)?);
    }
    Ok(UnbiasedEstimate {
        value: fwd,
        backward_value: bwd,
        j,
        k,
        lag,
    })
}

/// Monte Carlo `E[J_{k,L}]` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TvBound {
    pub estimate: f64,
    pub se: f64,
    pub reps: usize,
}

pub fn tv_bound(
    spec: &FiniteChainSpec,
    init: &[f64],
    lag: usize,
    k: usize,
    n_reps: usize,
    seed: u64,
) -> Result<TvBound> {
    if n_reps < 1000 {
        return Err(Error::InvalidParameter(format!(
            "tv_bound needs at least 1000 replicates, got {n_reps}"
        )));
    }
    let cfg = LagConfig::new(lag, k)?;
    let js: Vec<f64> = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| run_lagged_pair(spec, init, &cfg, seed, r).map(|p| p.j() as f64))
        .collect::<Result<_>>()?;
    let (estimate, se) = crate::stats::mean_se(&js);
    Ok(TvBound {
        estimate,
        se,
        reps: n_reps,
    })
}

/// Coefficients `η_j = 1{S_j > 0.5}` with `S_j = P(J > j) + 0.5·P(J = j)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlVariatePlan {
    pub k: usize,
    pub lag: usize,
    pub s: Vec<f64>,
    pub eta: Vec<f64>,
}

impl ControlVariatePlan {
    pub fn from_j_sample(js: &[usize], k: usize, lag: usize) -> Result<Self> {
        if js.is_empty() {
            return Err(Error::InvalidParameter("empty pilot sample".into()));
        }
        let n = js.len() as f64;
        let jmax = *js.iter().max().unwrap_or(&0);
        let s: Vec<f64> = (0..=jmax)
            .map(|j| {
                let gt = js.iter().filter(|&&x| x > j).count() as f64;
                let eq = js.iter().filter(|&&x| x == j).count() as f64;
                (gt + 0.5 * eq) / n
            })
            .collect();
        let eta = s.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
        Ok(Self { k, lag, s, eta })
    }

    /// Plan with every coefficient zero.
    pub fn zero(k: usize, lag: usize) -> Self {
        Self {
            k,
            lag,
            s: Vec::new(),
            eta: Vec::new(),
        }
    }

    /// Largest `j` with a non-zero coefficient, plus one.
    pub fn support(&self) -> usize {
        self.eta
            .iter()
            .rposition(|&e| e != 0.0)
            .map_or(0, |i| i + 1)
    }

    /// Index through which `X` must be recorded to apply this plan.
    pub fn record_through(&self) -> usize {
        self.k + (self.support() + 1) * self.lag
    }
}

/// Builds a plan from `n` pilot pairs on the reserved pilot stream.
pub fn pilot_plan(
    spec: &FiniteChainSpec,
    init: &[f64],
    lag: usize,
    k: usize,
    n: usize,
    seed: u64,
) -> Result<ControlVariatePlan> {
    let cfg = LagConfig::new(lag, k)?;
    let js: Vec<usize> = (0..n as u64)
        .into_par_iter()
        .map(|r| run_lagged_pair(spec, init, &cfg, seed, pilot_replicate(r)).map(|p| p.j()))
        .collect::<Result<_>>()?;
    ControlVariatePlan::from_j_sample(&js, k, lag)
}

/// `H - Σ_j η_j Δ_{k,j}` with `Δ_{k,j} = h(X_{k+jL}) - h(Y_{k+jL})`.
pub fn cv_estimate<H: Fn(usize) -> f64>(
    pair: &CoupledPair,
    h: H,
    plan: &ControlVariatePlan,
) -> Result<f64> {
    if plan.k != pair.k || plan.lag != pair.lag {
        return Err(Error::PlanMismatch {
            plan_k: plan.k,
            plan_lag: plan.lag,
            k: pair.k,
            lag: pair.lag,
        });
    }
    let base = h_estimate(pair, &h)?.value;
    let mut corr = 0.0;
    for (j, &eta) in plan.eta.iter().enumerate().take(plan.support()) {
        if eta != 0.0 {
            let s = pair.k + j * pair.lag;
            corr += eta * (h(pair.x_at(s)?) - h(pair.y_at(s)?));
        }
    }
    Ok(base - corr)
}
