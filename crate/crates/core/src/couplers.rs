//! Couplers for continuous state spaces: splitting with a multigamma lower
//! envelope, a common auxiliary proposal for random-walk Metropolis, and the
//! perfect slice sampler for decreasing densities.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::cftp::{cftp_monotone, BackoffSchedule, CoalescenceCertificate};
use crate::chain::{Monotone, Recursion};
use crate::error::{Error, Result};
use crate::models::DecreasingDensity;
use crate::noise::{noise_at, open_uniform, NoiseAtom, NoiseShape, NoiseSource};

pub const DEFAULT_Q_CAP: u64 = 1_000_000;
pub const SLICE_W_CAP: u64 = 1_000_000;

const TAG_R: u32 = 1;
const TAG_Q: u32 = 2;
const TAG_GEOMETRIC: u32 = 3;
const TAG_SLICE: u32 = 4;

fn aux(atom: &NoiseAtom, tag: u32) -> ChaCha8Rng {
    atom.aux_rng(tag).expect("coupler atoms must be keyed")
}

/// Gamma(a, b_x) kernel with `b_x = b0 + (b1 - b0)/(1 + x)` in `[b0, b1]`,
/// minorized by `r(y) = y^{a-1} b0^a e^{-y b1} / Γ(a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaMinorizer {
    a: f64,
    b0: f64,
    b1: f64,
}

/// `f(y|b)`: Gamma density with shape `a` and rate `b`.
pub fn gamma_density(a: f64, b: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    (a * b.ln() + (a - 1.0) * y.ln() - b * y - ln_gamma(a)).exp()
}

pub fn gamma_minorizer(a: f64, b0: f64, b1: f64) -> Result<GammaMinorizer> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "shape a={a} must be positive"
        )));
    }
    if !(b0 > 0.0 && b1.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "rates must be positive and finite, got b0={b0}, b1={b1}"
        )));
    }
    if b0 > b1 {
        return Err(Error::InvalidParameter(format!("b0={b0} exceeds b1={b1}")));
    }
    Ok(GammaMinorizer { a, b0, b1 })
}

impl GammaMinorizer {
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn b1(&self) -> f64 {
        self.b1
    }

    /// `ρ = ∫ r = (b0/b1)^a`.
    pub fn rho(&self) -> f64 {
        (self.b0 / self.b1).powf(self.a)
    }

    pub fn rate_at(&self, x: f64) -> f64 {
        self.b0 + (self.b1 - self.b0) / (1.0 + x)
    }

    pub fn f(&self, y: f64, x: f64) -> f64 {
        gamma_density(self.a, self.rate_at(x), y)
    }

    pub fn r(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        ((self.a - 1.0) * y.ln() + self.a * self.b0.ln() - y * self.b1 - ln_gamma(self.a)).exp()
    }

    /// Density of the residual law `(f(·|x) - r)/(1 - ρ)`.
    pub fn q_density(&self, y: f64, x: f64) -> f64 {
        let rho = self.rho();
        if rho >= 1.0 {
            return 0.0;
        }
        (self.f(y, x) - self.r(y)).max(0.0) / (1.0 - rho)
    }

    fn gamma(&self, rate: f64) -> Gamma<f64> {
        Gamma::new(self.a, 1.0 / rate).expect("validated gamma parameters")
    }

    /// Draw from `r/ρ`, the Gamma(a, b1) law.
    pub fn sample_r<R: Rng>(&self, rng: &mut R) -> f64 {
        self.gamma(self.b1).sample(rng)
    }

    /// Direct draw from the full kernel `f(·|x)`.
    pub fn sample_f<R: Rng>(&self, x: f64, rng: &mut R) -> f64 {
        self.gamma(self.rate_at(x)).sample(rng)
    }

    /// Residual draw by rejection: propose from `f(·|x)`, keep with
    /// probability `1 - r(y)/f(y|x)`.
    pub fn sample_q<R: Rng>(&self, x: f64, rng: &mut R, cap: u64) -> Result<f64> {
        let b = self.rate_at(x);
        let g = self.gamma(b);
        let scale = (self.b0 / b).powf(self.a);
        for _ in 0..cap {
            let y: f64 = g.sample(rng);
            let ratio = scale * (-(self.b1 - b) * y).exp();
            if open_uniform(rng) >= ratio {
                return Ok(y);
            }
        }
        Err(Error::IterationCap {
            what: "residual rejection sampler",
            cap,
        })
    }

    /// Uniform on one keyed coin plus keyed auxiliary streams.
    pub fn noise_shape(&self) -> NoiseShape {
        NoiseShape::uniforms(1).with_aux_stream()
    }

    /// One split update. With probability `ρ` the draw comes from `R` and
    /// ignores `x`, so every chain sharing the atom lands on it.
    pub fn split_step(&self, x: f64, atom: &NoiseAtom, cap: u64) -> Result<(f64, bool)> {
        if atom.uniforms[0] < self.rho() {
            Ok((self.sample_r(&mut aux(atom, TAG_R)), true))
        } else {
            Ok((self.sample_q(x, &mut aux(atom, TAG_Q), cap)?, false))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultigammaDraw {
    pub value: f64,
    /// Steps back to the last regeneration, `T ~ Geometric(ρ)` on `1, 2, ...`.
    pub t: u64,
}

/// Exact stationary draw: `T ~ Geometric(ρ)`, start from `R`, then `T - 1`
/// residual steps.
pub fn multigamma_exact_draw(
    spec: &GammaMinorizer,
    seed: u64,
    replicate: u64,
    cap: u64,
) -> Result<MultigammaDraw> {
    let atom = noise_at(seed, 0, replicate, &spec.noise_shape());
    let rho = spec.rho();
    let mut geo = aux(&atom, TAG_GEOMETRIC);
    let mut t = 1u64;
    while open_uniform(&mut geo) >= rho {
        t += 1;
        if t > cap {
            return Err(Error::IterationCap {
                what: "multigamma regeneration search",
                cap,
            });
        }
    }
    let mut x = spec.sample_r(&mut aux(&atom, TAG_R));
    let mut q = aux(&atom, TAG_Q);
    for _ in 1..t {
        x = spec.sample_q(x, &mut q, DEFAULT_Q_CAP)?;
    }
    Ok(MultigammaDraw { value: x, t })
}

/// Random-walk Metropolis for `N(0,1)` whose proposals are coupled through
/// a shared draw `Z̃ ~ g = N(0, g_sd²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommonProposal {
    pub g_sd: f64,
}

impl Default for CommonProposal {
    fn default() -> Self {
        Self { g_sd: 2.0 }
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl CommonProposal {
    pub fn new(g_sd: f64) -> Result<Self> {
        if !(g_sd > 0.0 && g_sd.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "auxiliary sd {g_sd} must be positive"
            )));
        }
        Ok(Self { g_sd })
    }

    fn g(&self, z: f64) -> f64 {
        std_normal_pdf(z / self.g_sd) / self.g_sd
    }

    /// Normals: `[Z̃ / g_sd, ε]`; uniforms: `[U, acceptance]`.
    pub fn noise_shape(&self) -> NoiseShape {
        NoiseShape {
            uniforms: 2,
            normals: 2,
            ..NoiseShape::default()
        }
    }

    /// Proposal of one chain: `Z̃` when its ratio beats the shared `U`, else
    /// its own `Ỹ = x + ε`.
    pub fn propose(&self, x: f64, atom: &NoiseAtom) -> f64 {
        let z = self.g_sd * atom.normals[0];
        let y = x + atom.normals[1];
        let ratio = std_normal_pdf(z - x) * self.g(y) / (std_normal_pdf(y - x) * self.g(z));
        if ratio > atom.uniforms[0] {
            z
        } else {
            y
        }
    }

    pub fn common_proposal_step(&self, chains: &[f64], atom: &NoiseAtom) -> Vec<f64> {
        chains.iter().map(|&x| self.propose(x, atom)).collect()
    }

    /// Metropolis accept/reject of the coupled proposal against `N(0,1)`.
    pub fn mh_step(&self, x: f64, atom: &NoiseAtom) -> f64 {
        let w = self.propose(x, atom);
        let log_ratio = 0.5 * (x * x - w * w);
        if atom.uniforms[1].ln() < log_ratio {
            w
        } else {
            x
        }
    }
}

impl Recursion for CommonProposal {
    type State = f64;

    fn noise_shape(&self) -> NoiseShape {
        CommonProposal::noise_shape(self)
    }

    fn step(&self, x: &f64, atom: &NoiseAtom) -> f64 {
        self.mh_step(*x, atom)
    }

    fn value(&self, x: &f64) -> f64 {
        *x
    }
}

/// Perfect slice sampler for a density decreasing on `(0, c)`.
///
/// One update shares `ε` and the sequence `W_1 ~ U(0, c)`,
/// `W_j = W_{j-1}·U_j` across chains; chain `x` moves to `W_τ(x)` with
/// `τ(x) = min{j : f(W_j) ≥ ε f(x)}`.
#[derive(Debug, Clone)]
pub struct SliceChain {
    density: DecreasingDensity,
}

impl SliceChain {
    pub fn new(density: DecreasingDensity) -> Self {
        Self { density }
    }

    pub fn density(&self) -> &DecreasingDensity {
        &self.density
    }

    /// Walks the shared `W` sequence from `rng` until `f(W_j) ≥ level`.
    /// Returns `(W_τ, τ)`.
    pub fn descend<R: Rng>(&self, level: f64, rng: &mut R, cap: u64) -> Result<(f64, u64)> {
        let mut w = self.density.support() * open_uniform(rng);
        for j in 1..=cap {
            if j > 1 {
                w *= open_uniform(rng);
            }
            if self.density.f(w) >= level {
                return Ok((w, j));
            }
        }
        Err(Error::IterationCap {
            what: "slice W-sequence",
            cap,
        })
    }

    /// Updates every chain with one shared atom.
    pub fn slice_update(&self, chains: &[f64], atom: &NoiseAtom) -> Result<Vec<f64>> {
        let eps = atom.uniforms[0];
        chains
            .iter()
            .map(|&x| {
                self.descend(
                    eps * self.density.f(x),
                    &mut aux(atom, TAG_SLICE),
                    SLICE_W_CAP,
                )
                .map(|(w, _)| w)
            })
            .collect()
    }

    /// `τ(x)` under the given atom.
    pub fn tau(&self, x: f64, atom: &NoiseAtom) -> Result<u64> {
        let eps = atom.uniforms[0];
        self.descend(
            eps * self.density.f(x),
            &mut aux(atom, TAG_SLICE),
            SLICE_W_CAP,
        )
        .map(|(_, j)| j)
    }
}

impl Recursion for SliceChain {
    type State = f64;

    fn noise_shape(&self) -> NoiseShape {
        NoiseShape::uniforms(1).with_aux_stream()
    }

    fn step(&self, x: &f64, atom: &NoiseAtom) -> f64 {
        // W_j shrinks geometrically, so the walk ends long before the cap
        self.slice_update(&[*x], atom)
            .expect("slice walk terminates")[0]
    }

    fn value(&self, x: &f64) -> f64 {
        *x
    }
}

/// Density order: `a ≼ b` iff `f(a) ≤ f(b)`. The support end `c` is the
/// bottom and 0 the top.
impl Monotone for SliceChain {
    fn precedes(&self, a: &f64, b: &f64) -> bool {
        self.density.f(*a) <= self.density.f(*b)
    }

    fn bottom(&self) -> f64 {
        self.density.support()
    }

    fn top(&self) -> f64 {
        0.0
    }
}

pub fn slice_cftp<N: NoiseSource + ?Sized>(
    model: &SliceChain,
    noise: &N,
    schedule: &BackoffSchedule,
) -> Result<CoalescenceCertificate<f64>> {
    cftp_monotone(model, noise, schedule)
}
