//! Markov chains written as stochastic recursions `x' = step(x, atom)`.

use std::fmt::Debug;

use crate::error::{Error, Result};
use crate::noise::{NoiseAtom, NoiseShape};
use crate::oracle::FiniteChainSpec;

/// A chain in stochastic-recursive form. `step` must be pure.
pub trait Recursion {
    type State: Clone + PartialEq + Debug;

    fn noise_shape(&self) -> NoiseShape;

    fn step(&self, x: &Self::State, atom: &NoiseAtom) -> Self::State;

    /// Numeric summary of a state, used for output and goodness-of-fit.
    fn value(&self, x: &Self::State) -> f64;
}

/// A recursion over an explicit finite enumeration of states.
pub trait FiniteSpace: Recursion {
    fn states(&self) -> Vec<Self::State>;

    fn index_of(&self, x: &Self::State) -> Option<usize>;

    /// Exact transition matrix implied by `step` and the atom law.
    fn chain_spec(&self) -> FiniteChainSpec;
}

/// A recursion that preserves a partial order with declared extremes.
pub trait Monotone: Recursion {
    fn precedes(&self, a: &Self::State, b: &Self::State) -> bool;
    fn bottom(&self) -> Self::State;
    fn top(&self) -> Self::State;
}

/// A recursion whose atom takes finitely many values with known probabilities.
pub trait DiscreteNoise: Recursion {
    fn atom_law(&self) -> Vec<(NoiseAtom, f64)>;
}

fn check_shape(expected: &NoiseShape, atom: &NoiseAtom) -> Result<()> {
    if atom.conforms(expected) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            expected: expected.to_string(),
            found: atom.shape_summary(),
        })
    }
}

/// Applies `atoms[0]`, then `atoms[1]`, ... starting from `x0`.
pub fn forward_compose<M: Recursion>(
    model: &M,
    x0: &M::State,
    atoms: &[NoiseAtom],
) -> Result<M::State> {
    let shape = model.noise_shape();
    let mut x = x0.clone();
    for atom in atoms {
        check_shape(&shape, atom)?;
        x = model.step(&x, atom);
    }
    Ok(x)
}

/// Applies the atoms in reverse: the last atom first, `atoms[0]` last.
pub fn backward_compose<M: Recursion>(
    model: &M,
    x0: &M::State,
    atoms: &[NoiseAtom],
) -> Result<M::State> {
    let shape = model.noise_shape();
    let mut x = x0.clone();
    for atom in atoms.iter().rev() {
        check_shape(&shape, atom)?;
        x = model.step(&x, atom);
    }
    Ok(x)
}

/// Checks `a ≼ b ⇒ step(a) ≼ step(b)` for every comparable pair of a finite
/// model under the supplied atoms. Returns the first violating triple.
pub fn audit_monotone<M>(model: &M, atoms: &[NoiseAtom]) -> Result<()>
where
    M: FiniteSpace + Monotone,
{
    let states = model.states();
    for atom in atoms {
        for a in &states {
            for b in &states {
                if model.precedes(a, b) {
                    let (fa, fb) = (model.step(a, atom), model.step(b, atom));
                    if !model.precedes(&fa, &fb) {
                        return Err(Error::OrderViolation {
                            lower: format!("{a:?}"),
                            upper: format!("{b:?}"),
                            atom: atom.to_string(),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}
