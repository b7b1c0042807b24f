//! Two-component mixture with unknown weight, sampled through the discrete
//! count of observations attributed to the second component.

use std::f64::consts::PI;

use crate::cftp::{atom_at, cftp_monotone, BackoffSchedule, CoalescenceCertificate};
use crate::chain::{Monotone, Recursion};
use crate::error::{Error, Result};
use crate::noise::{NoiseAtom, NoiseShape, NoiseSource};

/// Bundled dataset: ten draws from `0.7·N(0,1) + 0.3·N(3,1)`.
pub const DEFAULT_FIXTURE: &str = include_str!("../../fixtures/mixture_n10.txt");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian {
    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        (-0.5 * z * z).exp() / (self.sd * (2.0 * PI).sqrt())
    }
}

/// Posterior of the weight `alpha` in `alpha·f0 + (1-alpha)·f1` under a
/// uniform prior, augmented by the count `l` of points assigned to `f1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    data: Vec<f64>,
    f0: Gaussian,
    f1: Gaussian,
    /// `f0(d_i) / f1(d_i)` per observation.
    ratios: Vec<f64>,
}

impl MixtureModel {
    pub fn new(data: Vec<f64>, f0: Gaussian, f1: Gaussian) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidParameter(
                "mixture needs at least one observation".into(),
            ));
        }
        if data.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidParameter("non-finite observation".into()));
        }
        let ratios: Vec<f64> = data.iter().map(|&d| f0.pdf(d) / f1.pdf(d)).collect();
        if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::InvalidParameter(
                "component density ratio under/overflows".into(),
            ));
        }
        Ok(Self {
            data,
            f0,
            f1,
            ratios,
        })
    }

    /// The bundled dataset with `f0 = N(0,1)` and `f1 = N(3,1)`.
    pub fn default_fixture() -> Self {
        let data = parse_fixture(DEFAULT_FIXTURE).expect("bundled fixture parses");
        Self::new(
            data,
            Gaussian { mean: 0.0, sd: 1.0 },
            Gaussian { mean: 3.0, sd: 1.0 },
        )
        .expect("bundled fixture is valid")
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Un-normalized posterior density of `alpha` under the uniform prior.
    pub fn posterior_unnormalized(&self, alpha: f64) -> f64 {
        self.data
            .iter()
            .map(|&d| alpha * self.f0.pdf(d) + (1.0 - alpha) * self.f1.pdf(d))
            .product()
    }

    /// Posterior CDF of `alpha` from trapezoid integration on `grid` equal cells.
    pub fn grid_posterior_cdf(&self, grid: usize) -> GridCdf {
        let h = 1.0 / grid as f64;
        let xs: Vec<f64> = (0..=grid).map(|i| i as f64 * h).collect();
        let dens: Vec<f64> = xs.iter().map(|&a| self.posterior_unnormalized(a)).collect();
        let mut cum = vec![0.0; grid + 1];
        for i in 1..=grid {
            cum[i] = cum[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
        }
        let total = cum[grid];
        cum.iter_mut().for_each(|c| *c /= total);
        GridCdf { xs, cum }
    }

    /// The count chain's update given `n` uniforms and `n + 2` exponentials.
    pub fn l_step(&self, l: usize, uniforms: &[f64], exps: &[f64]) -> usize {
        let alpha = mixture_alpha_draw(self.n(), l, exps);
        let odds = alpha / (1.0 - alpha);
        uniforms
            .iter()
            .zip(&self.ratios)
            .filter(|(&u, &r)| u <= 1.0 / (1.0 + odds * r))
            .count()
    }
}

/// `alpha = (w_1 + … + w_{n+1-l}) / (w_1 + … + w_{n+2})`, a Beta(n+1-l, l+1) draw
/// when the `w` are i.i.d. Exponential(1).
pub fn mixture_alpha_draw(n: usize, l: usize, exps: &[f64]) -> f64 {
    debug_assert!(l <= n && exps.len() == n + 2);
    let num: f64 = exps[..n + 1 - l].iter().sum();
    let den: f64 = num + exps[n + 1 - l..].iter().sum::<f64>();
    num / den
}

/// Exact posterior draw of `alpha`: monotone CFTP on the count chain, then a
/// fresh `alpha | l` draw from the exponentials of the atom at time 0.
pub fn perfect_alpha_draw<N: NoiseSource + ?Sized>(
    model: &MixtureModel,
    noise: &N,
    schedule: &BackoffSchedule,
) -> Result<(f64, CoalescenceCertificate<usize>)> {
    let cert = cftp_monotone(model, noise, schedule)?;
    let atom = atom_at(noise, 0)?;
    Ok((
        mixture_alpha_draw(model.n(), cert.draw, &atom.exponentials),
        cert,
    ))
}

/// Piecewise-linear CDF on a grid.
#[derive(Debug, Clone)]
pub struct GridCdf {
    xs: Vec<f64>,
    cum: Vec<f64>,
}

impl GridCdf {
    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        let last = self.xs.len() - 1;
        if x >= self.xs[last] {
            return 1.0;
        }
        let i = self.xs.partition_point(|&g| g <= x) - 1;
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.cum[i] + t * (self.cum[i + 1] - self.cum[i])
    }
}

pub fn parse_fixture(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>()
                .map_err(|e| Error::InvalidParameter(format!("fixture line {l:?}: {e}")))
        })
        .collect()
}

impl Recursion for MixtureModel {
    type State = usize;

    fn noise_shape(&self) -> NoiseShape {
        NoiseShape {
            uniforms: self.n(),
            exponentials: self.n() + 2,
            ..NoiseShape::default()
        }
    }

    fn step(&self, l: &usize, atom: &NoiseAtom) -> usize {
        self.l_step(*l, &atom.uniforms, &atom.exponentials)
    }

    fn value(&self, l: &usize) -> f64 {
        *l as f64
    }
}

impl Monotone for MixtureModel {
    fn precedes(&self, a: &usize, b: &usize) -> bool {
        a <= b
    }

    fn bottom(&self) -> usize {
        0
    }

    fn top(&self) -> usize {
        self.n()
    }
}
