//! Concrete targets, each paired with an exact or closed-form oracle.

mod density;
mod ising;
mod ladder;
mod mixture;
mod walk3;

pub use density::{truncated_exponential_cdf, DecreasingDensity};
pub use ising::{
    config_from_bits, ising_exact_moments, magnetization, pair_sum, Ising, IsingEnumeration,
    IsingMoments, Spins, MAX_ENUMERATION_SIDE,
};
pub use ladder::{ladder_step, LadderWalk, LADDER_LEVELS};
pub use mixture::{
    mixture_alpha_draw, parse_fixture, perfect_alpha_draw, Gaussian, GridCdf, MixtureModel,
    DEFAULT_FIXTURE,
};
pub use walk3::{NonMonotoneWalk, WALK3_LEVELS};

use crate::chain::{DiscreteNoise, FiniteSpace};
use crate::oracle::FiniteChainSpec;

/// Transition matrix obtained by pushing every state through every atom of a
/// finite atom law.
pub fn spec_from_atom_law<M>(model: &M) -> FiniteChainSpec
where
    M: FiniteSpace + DiscreteNoise,
{
    let states = model.states();
    let n = states.len();
    let law = model.atom_law();
    let mut matrix = vec![vec![0.0; n]; n];
    for (i, x) in states.iter().enumerate() {
        for (atom, w) in &law {
            let j = model
                .index_of(&model.step(x, atom))
                .expect("step stays in the enumeration");
            matrix[i][j] += w;
        }
    }
    let labels = states.iter().map(|s| model.value(s)).collect();
    FiniteChainSpec::new(labels, matrix).expect("atom law sums to one")
}
