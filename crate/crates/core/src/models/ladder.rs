use crate::chain::{DiscreteNoise, FiniteSpace, Monotone, Recursion};
use crate::error::{Error, Result};
use crate::noise::{NoiseAtom, NoiseShape};
use crate::oracle::FiniteChainSpec;

/// Levels of the four-state reflecting walk.
pub const LADDER_LEVELS: [f64; 4] = [0.25, 0.5, 2.0, 4.0];

/// Reflecting walk on {0.25, 0.5, 2, 4}: up with probability `p`, down
/// otherwise, holding at the floor and ceiling. States are level indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderWalk {
    p: f64,
}

impl LadderWalk {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "ladder p={p} outside [0,1]"
            )));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn level_index(x: f64) -> Result<usize> {
        LADDER_LEVELS
            .iter()
            .position(|&l| l == x)
            .ok_or_else(|| Error::InvalidState(format!("{x} is not a ladder level")))
    }
}

/// One move of the ladder on level values.
pub fn ladder_step(x: f64, up: bool) -> Result<f64> {
    let i = LadderWalk::level_index(x)?;
    Ok(LADDER_LEVELS[move_index(i, up)])
}

fn move_index(i: usize, up: bool) -> usize {
    if up {
        (i + 1).min(3)
    } else {
        i.saturating_sub(1)
    }
}

impl Recursion for LadderWalk {
    type State = usize;

    fn noise_shape(&self) -> NoiseShape {
        NoiseShape::bernoulli(self.p)
    }

    fn step(&self, x: &usize, atom: &NoiseAtom) -> usize {
        move_index(*x, atom.bits[0])
    }

    fn value(&self, x: &usize) -> f64 {
        LADDER_LEVELS[*x]
    }
}

impl FiniteSpace for LadderWalk {
    fn states(&self) -> Vec<usize> {
        (0..4).collect()
    }

    fn index_of(&self, x: &usize) -> Option<usize> {
        (*x < 4).then_some(*x)
    }

    fn chain_spec(&self) -> FiniteChainSpec {
        let p = self.p;
        let q = 1.0 - p;
        let matrix = vec![
            vec![q, p, 0.0, 0.0],
            vec![q, 0.0, p, 0.0],
            vec![0.0, q, 0.0, p],
            vec![0.0, 0.0, q, p],
        ];
        FiniteChainSpec::new(LADDER_LEVELS.to_vec(), matrix).expect("ladder rows are stochastic")
    }
}

impl Monotone for LadderWalk {
    fn precedes(&self, a: &usize, b: &usize) -> bool {
        a <= b
    }

    fn bottom(&self) -> usize {
        0
    }

    fn top(&self) -> usize {
        3
    }
}

impl DiscreteNoise for LadderWalk {
    fn atom_law(&self) -> Vec<(NoiseAtom, f64)> {
        vec![
            (NoiseAtom::from_bits(&[true]), self.p),
            (NoiseAtom::from_bits(&[false]), 1.0 - self.p),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::spec_from_atom_law;

    #[test]
    fn boundary_rules() {
        assert_eq!(ladder_step(4.0, true).unwrap(), 4.0);
        assert_eq!(ladder_step(4.0, false).unwrap(), 2.0);
        assert_eq!(ladder_step(0.25, false).unwrap(), 0.25);
        assert_eq!(ladder_step(0.5, true).unwrap(), 2.0);
        assert!(ladder_step(3.0, true).is_err());
    }

    #[test]
    fn explicit_matrix_matches_step_map() {
        for &p in &[0.0, 0.2, 0.5, 0.9] {
            let m = LadderWalk::new(p).unwrap();
            assert_eq!(m.chain_spec(), spec_from_atom_law(&m));
        }
    }

    #[test]
    fn rejects_bad_p() {
        assert!(LadderWalk::new(1.2).is_err());
        assert!(LadderWalk::new(f64::NAN).is_err());
    }
}
