//! Auxiliary-variable Metropolis-Hastings for posteriors whose likelihood
//! carries an unknown, parameter-dependent normalizing constant.
//!
//! The production path ([`moller_step`], [`run_moller`]) only ever sees an
//! [`ExactAuxSampler`]. Normalizing constants live behind the separate
//! [`NormalizingOracle`] trait, used by the naive reference chain and the
//! grid posterior.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

use crate::cftp::{cftp_monotone, BackoffSchedule};
use crate::chain::Recursion;
use crate::error::{Error, Result};
use crate::models::{pair_sum, Ising, IsingEnumeration, Spins, MAX_ENUMERATION_SIDE};
use crate::noise::{derive_seed, noise_at, KeyedNoise, NoiseAtom, NoiseShape};

pub const DEFAULT_PROPOSAL_SCALE: f64 = 0.05;
pub const MAX_SAMPLER_ATTEMPTS: u32 = 5;

const AUX_STREAM_TAG: u64 = 0xA0C5;
const INIT_TAG: u64 = 0x1A17;

/// Prior, un-normalized likelihood and observed data.
pub trait DoublyIntractableTarget {
    type Data: Clone;
    /// Open interval carrying the prior.
    fn support(&self) -> (f64, f64);
    fn log_prior(&self, theta: f64) -> f64;
    /// `log q(x | theta)`.
    fn log_q(&self, x: &Self::Data, theta: f64) -> f64;
    fn observed(&self) -> &Self::Data;
}

/// Exact draws from `q(· | theta) / C_theta`, keyed by `seed`.
pub trait ExactAuxSampler<D> {
    fn draw(&self, theta: f64, seed: u64) -> Result<D>;
}

/// Exact `log C_theta`. Only available for tiny systems.
pub trait NormalizingOracle {
    fn log_c(&self, theta: f64) -> Result<f64>;
}

/// Ising data with a uniform prior on `beta`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsingPosterior {
    side: usize,
    data: Spins,
    lo: f64,
    hi: f64,
}

impl IsingPosterior {
    pub fn new(side: usize, data: Spins, lo: f64, hi: f64) -> Result<Self> {
        if data.len() != side * side || data.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidState(format!(
                "data is not a {side}x{side} spin configuration"
            )));
        }
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "prior support ({lo}, {hi})"
            )));
        }
        Ok(Self { side, data, lo, hi })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data_statistic(&self) -> i32 {
        pair_sum(self.side, &self.data)
    }
}

impl DoublyIntractableTarget for IsingPosterior {
    type Data = Spins;

    fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn log_prior(&self, theta: f64) -> f64 {
        if theta > self.lo && theta < self.hi {
            -(self.hi - self.lo).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn log_q(&self, x: &Spins, theta: f64) -> f64 {
        theta * pair_sum(self.side, x) as f64
    }

    fn observed(&self) -> &Spins {
        &self.data
    }
}

/// Monotone CFTP for the Ising model at the requested `beta`.
#[derive(Debug, Clone)]
pub struct IsingPerfectSampler {
    pub side: usize,
    pub schedule: BackoffSchedule,
}

impl IsingPerfectSampler {
    pub fn new(side: usize) -> Self {
        Self {
            side,
            schedule: BackoffSchedule::default(),
        }
    }
}

impl ExactAuxSampler<Spins> for IsingPerfectSampler {
    fn draw(&self, theta: f64, seed: u64) -> Result<Spins> {
        let model = Ising::new(self.side, theta)?;
        let noise = KeyedNoise::new(seed, 0, model.noise_shape());
        Ok(cftp_monotone(&model, &noise, &self.schedule)?.draw)
    }
}

/// Exhaustive partition function with a call counter.
#[derive(Debug)]
pub struct EnumerationOracle {
    en: IsingEnumeration,
    calls: AtomicU64,
}

impl EnumerationOracle {
    pub fn new(side: usize) -> Result<Self> {
        if side > MAX_ENUMERATION_SIDE {
            return Err(Error::OracleUnavailable(format!(
                "exact Ising partition function needs side <= {MAX_ENUMERATION_SIDE}, got {side}"
            )));
        }
        Ok(Self {
            en: IsingEnumeration::new(side)?,
            calls: AtomicU64::new(0),
        })
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl NormalizingOracle for EnumerationOracle {
    fn log_c(&self, theta: f64) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.en.log_z(theta))
    }
}

/// Gaussian random walk reflected into `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReflectedWalk {
    pub scale: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ReflectedWalk {
    pub fn new(scale: f64, (lo, hi): (f64, f64)) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("proposal scale {scale}")));
        }
        Ok(Self { scale, lo, hi })
    }

    pub fn propose(&self, theta: f64, z: f64) -> f64 {
        reflect(theta + self.scale * z, self.lo, self.hi)
    }
}

pub fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let y = (v - lo).rem_euclid(2.0 * w);
    lo + if y > w { 2.0 * w - y } else { y }
}

pub fn step_shape() -> NoiseShape {
    NoiseShape {
        uniforms: 1,
        normals: 1,
        ..NoiseShape::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MollerState<D> {
    pub theta: f64,
    pub x: D,
}

/// `log` of the acceptance ratio for moving `(theta, x)` to `(theta', x')`.
pub fn moller_log_ratio<T: DoublyIntractableTarget>(
    target: &T,
    from: &MollerState<T::Data>,
    to: &MollerState<T::Data>,
) -> f64 {
    let y = target.observed();
    let (a, b) = (from.theta, to.theta);
    let num = target.log_prior(b) + target.log_q(y, b) + target.log_q(&from.x, a);
    let den = target.log_prior(a) + target.log_q(y, a) + target.log_q(&to.x, b);
    if num == den {
        0.0
    } else {
        num - den
    }
}

fn draw_with_retries<D, S: ExactAuxSampler<D> + ?Sized>(
    sampler: &S,
    theta: f64,
    aux_seed: u64,
) -> Result<D> {
    let mut last = None;
    for attempt in 0..MAX_SAMPLER_ATTEMPTS {
        match sampler.draw(theta, derive_seed(aux_seed, attempt as u64)) {
            Ok(x) => return Ok(x),
            Err(e) if e.is_cap_breach() => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::SamplerExhausted {
        attempts: MAX_SAMPLER_ATTEMPTS,
        last: Box::new(last.expect("at least one attempt")),
    })
}

/// One auxiliary-variable MH step. `atom.normals[0]` drives the proposal,
/// `atom.uniforms[0]` the accept decision and `aux_seed` the perfect sampler.
pub fn moller_step<T, S>(
    target: &T,
    proposal: &ReflectedWalk,
    sampler: &S,
    state: &MollerState<T::Data>,
    atom: &NoiseAtom,
    aux_seed: u64,
) -> Result<(MollerState<T::Data>, bool)>
where
    T: DoublyIntractableTarget,
    S: ExactAuxSampler<T::Data> + ?Sized,
{
    let theta = proposal.propose(state.theta, atom.normals[0]);
    let x = draw_with_retries(sampler, theta, aux_seed)?;
    let cand = MollerState { theta, x };
    let lr = moller_log_ratio(target, state, &cand);
    if atom.uniforms[0].ln() < lr {
        Ok((cand, true))
    } else {
        Ok((state.clone(), false))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainRun {
    /// Retained `theta` values after thinning.
    pub thetas: Vec<f64>,
    pub steps: usize,
    pub accepted: usize,
}

impl ChainRun {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.steps.max(1) as f64
    }
}

fn check_run(theta0: f64, (lo, hi): (f64, f64), thin: usize) -> Result<()> {
    if !(theta0 > lo && theta0 < hi) {
        return Err(Error::InvalidParameter(format!(
            "initial theta {theta0} outside ({lo}, {hi})"
        )));
    }
    if thin == 0 {
        return Err(Error::InvalidParameter(
            "thinning interval must be positive".into(),
        ));
    }
    Ok(())
}

/// Runs `steps` auxiliary-variable steps from `theta0`, keeping every `thin`-th value.
#[allow(clippy::too_many_arguments)]
pub fn run_moller<T, S>(
    target: &T,
    proposal: &ReflectedWalk,
    sampler: &S,
    theta0: f64,
    steps: usize,
    thin: usize,
    seed: u64,
    replicate: u64,
) -> Result<ChainRun>
where
    T: DoublyIntractableTarget,
    S: ExactAuxSampler<T::Data> + ?Sized,
{
    check_run(theta0, target.support(), thin)?;
    let aux_root = derive_seed(derive_seed(seed, AUX_STREAM_TAG), replicate);
    let x0 = draw_with_retries(sampler, theta0, derive_seed(aux_root, INIT_TAG))?;
    let mut state = MollerState {
        theta: theta0,
        x: x0,
    };
    let shape = step_shape();
    let mut run = ChainRun {
        thetas: Vec::with_capacity(steps / thin),
        steps,
        accepted: 0,
    };
    for t in 1..=steps {
        let atom = noise_at(seed, t as i64, replicate, &shape);
        let (next, acc) = moller_step(
            target,
            proposal,
            sampler,
            &state,
            &atom,
            derive_seed(aux_root, t as u64),
        )?;
        state = next;
        run.accepted += acc as usize;
        if t % thin == 0 {
            run.thetas.push(state.theta);
        }
    }
    Ok(run)
}

/// Classical MH ratio with exact normalizing constants, before the `min`.
pub fn naive_ratio<T, O>(target: &T, theta: f64, theta_new: f64, oracle: &O) -> Result<f64>
where
    T: DoublyIntractableTarget,
    O: NormalizingOracle + ?Sized,
{
    if theta == theta_new {
        return Ok(1.0);
    }
    let y = target.observed();
    let lr = target.log_prior(theta_new) + target.log_q(y, theta_new)
        - target.log_prior(theta)
        - target.log_q(y, theta)
        + oracle.log_c(theta)?
        - oracle.log_c(theta_new)?;
    Ok(lr.exp())
}

/// Reference MH chain on `theta` alone using exact normalizing constants.
#[allow(clippy::too_many_arguments)]
pub fn run_naive_mh<T, O>(
    target: &T,
    proposal: &ReflectedWalk,
    oracle: &O,
    theta0: f64,
    steps: usize,
    thin: usize,
    seed: u64,
    replicate: u64,
) -> Result<ChainRun>
where
    T: DoublyIntractableTarget,
    O: NormalizingOracle + ?Sized,
{
    check_run(theta0, target.support(), thin)?;
    let shape = step_shape();
    let mut theta = theta0;
    let mut run = ChainRun {
        thetas: Vec::with_capacity(steps / thin),
        steps,
        accepted: 0,
    };
    for t in 1..=steps {
        let atom = noise_at(seed, t as i64, replicate, &shape);
        let cand = proposal.propose(theta, atom.normals[0]);
        if atom.uniforms[0] < naive_ratio(target, theta, cand, oracle)? {
            theta = cand;
            run.accepted += 1;
        }
        if t % thin == 0 {
            run.thetas.push(theta);
        }
    }
    Ok(run)
}

/// Posterior mass of `bins` equal-width bins over the prior support, by the
/// midpoint rule with `points_per_bin` nodes per bin.
pub fn binned_posterior<T, O>(
    target: &T,
    oracle: &O,
    bins: usize,
    points_per_bin: usize,
) -> Result<Vec<f64>>
where
    T: DoublyIntractableTarget,
    O: NormalizingOracle + ?Sized,
{
    if bins == 0 || points_per_bin == 0 {
        return Err(Error::InvalidParameter(
            "grid needs at least one bin and one node".into(),
        ));
    }
    let (lo, hi) = target.support();
    let n = bins * points_per_bin;
    let h = (hi - lo) / n as f64;
    let y = target.observed();
    let logs: Vec<f64> = (0..n)
        .map(|i| {
            let th = lo + (i as f64 + 0.5) * h;
            Ok(target.log_prior(th) + target.log_q(y, th) - oracle.log_c(th)?)
        })
        .collect::<Result<_>>()?;
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.chunks(points_per_bin)
        .map(|c| c.iter().sum::<f64>() / total)
        .collect())
}

/// Counts of `values` in `bins` equal-width bins over `(lo, hi)`.
pub fn bin_counts(values: &[f64], (lo, hi): (f64, f64), bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for &v in values {
        let b = (((v - lo) / (hi - lo)) * bins as f64).floor();
        counts[(b.max(0.0) as usize).min(bins - 1)] += 1;
    }
    counts
}
