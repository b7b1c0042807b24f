use crate::cftp::{BoundingChain, BoundingSet};
use crate::chain::{DiscreteNoise, FiniteSpace, Recursion};
use crate::error::{Error, Result};
use crate::noise::{NoiseAtom, NoiseShape};
use crate::oracle::FiniteChainSpec;

pub const WALK3_LEVELS: [f64; 3] = [0.25, 0.5, 2.0];

/// Three-state walk that is neither monotone nor anti-monotone under the
/// real-line order. With `ξ = 1` (probability `p`): 0.25 and 0.5 hold, 2 drops
/// to 0.25. With `ξ = 0`: 0.25 → 0.5, 0.5 → 2, 2 holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonMonotoneWalk {
    p: f64,
}

impl NonMonotoneWalk {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("walk p={p} outside [0,1]")));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// The two sets every bounding run lives in after its first transition.
    pub fn lower_pair() -> BoundingSet<usize> {
        BoundingSet::new(vec![0, 1])
    }

    pub fn upper_pair() -> BoundingSet<usize> {
        BoundingSet::new(vec![1, 2])
    }
}

impl Recursion for NonMonotoneWalk {
    type State = usize;

    fn noise_shape(&self) -> NoiseShape {
        NoiseShape::bernoulli(self.p)
    }

    fn step(&self, x: &usize, atom: &NoiseAtom) -> usize {
        match (*x, atom.bits[0]) {
            (0, true) => 0,
            (1, true) => 1,
            (_, true) => 0,
            (0, false) => 1,
            (_, false) => 2,
        }
    }

    fn value(&self, x: &usize) -> f64 {
        WALK3_LEVELS[*x]
    }
}

impl FiniteSpace for NonMonotoneWalk {
    fn states(&self) -> Vec<usize> {
        (0..3).collect()
    }

    fn index_of(&self, x: &usize) -> Option<usize> {
        (*x < 3).then_some(*x)
    }

    fn chain_spec(&self) -> FiniteChainSpec {
        let p = self.p;
        let q = 1.0 - p;
        let matrix = vec![vec![p, q, 0.0], vec![0.0, p, q], vec![p, 0.0, q]];
        FiniteChainSpec::new(WALK3_LEVELS.to_vec(), matrix).expect("walk rows are stochastic")
    }
}

impl DiscreteNoise for NonMonotoneWalk {
    fn atom_law(&self) -> Vec<(NoiseAtom, f64)> {
        vec![
            (NoiseAtom::from_bits(&[true]), self.p),
            (NoiseAtom::from_bits(&[false]), 1.0 - self.p),
        ]
    }
}

impl BoundingChain for NonMonotoneWalk {
    fn bound(&self, set: &BoundingSet<usize>, atom: &NoiseAtom) -> BoundingSet<usize> {
        if let Some(x) = set.singleton() {
            return BoundingSet::new(vec![self.step(x, atom)]);
        }
        let up = atom.bits[0];
        let lower = Self::lower_pair();
        let upper = Self::upper_pair();
        if *set == lower {
            if up {
                lower
            } else {
                upper
            }
        } else if *set == upper {
            if up {
                lower
            } else {
                BoundingSet::new(vec![2])
            }
        } else if up {
            // any other set lies inside the full space, whose image is one of the pairs
            lower
        } else {
            upper
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::spec_from_atom_law;

    #[test]
    fn not_monotone_under_real_order() {
        let m = NonMonotoneWalk::new(0.1).unwrap();
        let one = NoiseAtom::from_bits(&[true]);
        assert_eq!(m.value(&m.step(&0, &one)), 0.25);
        assert_eq!(m.value(&m.step(&1, &one)), 0.5);
        assert_eq!(m.value(&m.step(&2, &one)), 0.25);
    }

    #[test]
    fn explicit_matrix_matches_step_map() {
        for &p in &[0.1, 0.5, 0.8] {
            let m = NonMonotoneWalk::new(p).unwrap();
            assert_eq!(m.chain_spec(), spec_from_atom_law(&m));
        }
    }
}
