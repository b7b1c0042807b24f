//! Coupling from the past with binary back-off: brute force over every
//! state, monotone over the two extremes, and set-valued bounding chains.
//!
//! Atom `ξ_t` moves the chain from time `t` to `t + 1`. A run of depth `T`
//! starts at time `-T`, applies `ξ_{-T}` first and `ξ_{-1}` last, and ends
//! at time 0. Deeper runs re-derive the same atoms for the indices
//! they share with shallower ones.

use std::fmt::Debug;

use serde::Serialize;

use crate::chain::{FiniteSpace, Monotone, Recursion};
use crate::error::{Error, Result};
use crate::noise::{NoiseAtom, NoiseSource};

pub const DEFAULT_DEPTH_CAP: u64 = 1 << 20;

/// Depths `1, 2, 4, ..., cap`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BackoffSchedule {
    cap: u64,
}

impl BackoffSchedule {
    pub fn new(cap: u64) -> Result<Self> {
        if cap == 0 || !cap.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "depth cap {cap} must be a power of two"
            )));
        }
        Ok(Self { cap })
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    pub fn depths(&self) -> impl Iterator<Item = u64> {
        let cap = self.cap;
        (0..=cap.trailing_zeros())
            .map(|k| 1u64 << k)
            .take_while(move |&d| d <= cap)
    }
}

impl Default for BackoffSchedule {
    fn default() -> Self {
        Self {
            cap: DEFAULT_DEPTH_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoalescenceCertificate<S> {
    /// Back-off depth at which coalescence was first detected.
    pub depth: u64,
    /// Coalesced value at time 0.
    pub draw: S,
    /// Step-map applications over all attempted depths.
    pub evals: u64,
    /// Earliest time index at which the tracked paths held one value.
    pub coalesced_within: i64,
}

/// Non-empty finite set of states. Equality ignores order.
#[derive(Debug, Clone)]
pub struct BoundingSet<S> {
    states: Vec<S>,
}

impl<S: Clone + PartialEq> BoundingSet<S> {
    pub fn new(states: Vec<S>) -> Self {
        let mut uniq: Vec<S> = Vec::with_capacity(states.len());
        for s in states {
            if !uniq.contains(&s) {
                uniq.push(s);
            }
        }
        assert!(!uniq.is_empty(), "bounding set must be non-empty");
        Self { states: uniq }
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn contains(&self, x: &S) -> bool {
        self.states.contains(x)
    }

    pub fn singleton(&self) -> Option<&S> {
        match self.states.as_slice() {
            [x] => Some(x),
            _ => None,
        }
    }
}

impl<S: Clone + PartialEq> PartialEq for BoundingSet<S> {
    fn eq(&self, other: &Self) -> bool {
        self.states.len() == other.states.len()
            && self.states.iter().all(|s| other.states.contains(s))
    }
}

/// A finite recursion with a set-valued update `Ψ` such that
/// `x ∈ Y ⇒ step(x, ξ) ∈ Ψ(Y, ξ)`.
pub trait BoundingChain: FiniteSpace {
    fn bound(&self, set: &BoundingSet<Self::State>, atom: &NoiseAtom) -> BoundingSet<Self::State>;

    fn full_set(&self) -> BoundingSet<Self::State> {
        BoundingSet::new(self.states())
    }
}

pub(crate) fn atom_at<N: NoiseSource + ?Sized>(noise: &N, t: i64) -> Result<NoiseAtom> {
    noise.atom(t).ok_or(Error::NoiseExhausted { t })
}

fn all_equal<S: PartialEq>(xs: &[S]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

/// Drives `attempt(depth)` over the schedule until it reports coalescence.
fn backoff<S, F>(schedule: &BackoffSchedule, mut attempt: F) -> Result<CoalescenceCertificate<S>>
where
    F: FnMut(u64) -> Result<(Option<(S, i64)>, u64)>,
{
    let mut evals = 0u64;
    for depth in schedule.depths() {
        let (outcome, used) = attempt(depth)?;
        evals += used;
        if let Some((draw, coalesced_within)) = outcome {
            return Ok(CoalescenceCertificate {
                depth,
                draw,
                evals,
                coalesced_within,
            });
        }
    }
    Err(Error::NoCoalescence {
        cap: schedule.cap(),
    })
}

/// Runs every start from time `-depth` to 0. Returns one row per time
/// index `-depth..=0`, each row holding one state per start.
pub fn backward_paths<M, N>(
    model: &M,
    noise: &N,
    starts: &[M::State],
    depth: u64,
) -> Result<Vec<Vec<M::State>>>
where
    M: Recursion,
    N: NoiseSource + ?Sized,
{
    let mut rows = Vec::with_capacity(depth as usize + 1);
    let mut cur = starts.to_vec();
    rows.push(cur.clone());
    for t in -(depth as i64)..0 {
        let atom = atom_at(noise, t)?;
        cur = cur.iter().map(|x| model.step(x, &atom)).collect();
        rows.push(cur.clone());
    }
    Ok(rows)
}

/// Image at time 0 of every enumerated state started at `-depth`.
pub fn backward_map<M, N>(model: &M, noise: &N, depth: u64) -> Result<Vec<(M::State, M::State)>>
where
    M: FiniteSpace,
    N: NoiseSource + ?Sized,
{
    let states = model.states();
    let rows = backward_paths(model, noise, &states, depth)?;
    Ok(states
        .into_iter()
        .zip(rows.last().cloned().unwrap_or_default())
        .collect())
}

fn run_all<M, N>(
    model: &M,
    noise: &N,
    starts: &[M::State],
    depth: u64,
) -> Result<(Option<(M::State, i64)>, u64)>
where
    M: Recursion,
    N: NoiseSource + ?Sized,
{
    let mut cur = starts.to_vec();
    let mut within = if all_equal(&cur) {
        Some(-(depth as i64))
    } else {
        None
    };
    let mut evals = 0u64;
    for t in -(depth as i64)..0 {
        let atom = atom_at(noise, t)?;
        if within.is_some() {
            cur.truncate(1);
        }
        cur = cur.iter().map(|x| model.step(x, &atom)).collect();
        evals += cur.len() as u64;
        if within.is_none() && all_equal(&cur) {
            within = Some(t + 1);
        }
    }
    Ok((within.map(|w| (cur.swap_remove(0), w)), evals))
}

/// CFTP tracking the path of every enumerated state.
pub fn cftp_bruteforce<M, N>(
    model: &M,
    noise: &N,
    schedule: &BackoffSchedule,
) -> Result<CoalescenceCertificate<M::State>>
where
    M: FiniteSpace,
    N: NoiseSource + ?Sized,
{
    let states = model.states();
    backoff(schedule, |depth| run_all(model, noise, &states, depth))
}

/// CFTP tracking only the paths from the bottom and top states. The order
/// is checked on every step; a violation aborts with the offending triple.
pub fn cftp_monotone<M, N>(
    model: &M,
    noise: &N,
    schedule: &BackoffSchedule,
) -> Result<CoalescenceCertificate<M::State>>
where
    M: Monotone,
    N: NoiseSource + ?Sized,
{
    let (bottom, top) = (model.bottom(), model.top());
    backoff(schedule, |depth| {
        let (mut lo, mut hi) = (bottom.clone(), top.clone());
        let mut within = if lo == hi {
            Some(-(depth as i64))
        } else {
            None
        };
        let mut evals = 0u64;
        for t in -(depth as i64)..0 {
            let atom = atom_at(noise, t)?;
            if within.is_some() {
                lo = model.step(&lo, &atom);
                evals += 1;
                continue;
            }
            let (nlo, nhi) = (model.step(&lo, &atom), model.step(&hi, &atom));
            evals += 2;
            if !model.precedes(&nlo, &nhi) {
                return Err(order_violation(&lo, &hi, &atom));
            }
            lo = nlo;
            hi = nhi;
            if lo == hi {
                within = Some(t + 1);
            }
        }
        Ok((within.map(|w| (lo, w)), evals))
    })
}

fn order_violation<S: Debug>(lower: &S, upper: &S, atom: &NoiseAtom) -> Error {
    Error::OrderViolation {
        lower: format!("{lower:?}"),
        upper: format!("{upper:?}"),
        atom: atom.to_string(),
    }
}

/// CFTP on the bounding chain started from the full state space.
pub fn cftp_bounding<M, N>(
    model: &M,
    noise: &N,
    schedule: &BackoffSchedule,
) -> Result<CoalescenceCertificate<M::State>>
where
    M: BoundingChain,
    N: NoiseSource + ?Sized,
{
    let full = model.full_set();
    backoff(schedule, |depth| {
        let mut y = full.clone();
        let mut within = y.singleton().map(|_| -(depth as i64));
        let mut evals = 0u64;
        for t in -(depth as i64)..0 {
            let atom = atom_at(noise, t)?;
            y = match y.singleton() {
                Some(x) => BoundingSet::new(vec![model.step(x, &atom)]),
                None => model.bound(&y, &atom),
            };
            evals += 1;
            if within.is_none() && y.singleton().is_some() {
                within = Some(t + 1);
            }
        }
        Ok((y.singleton().cloned().zip(within), evals))
    })
}

/// Bounding sets at times `-depth..=0`.
pub fn bounding_trace<M, N>(model: &M, noise: &N, depth: u64) -> Result<Vec<BoundingSet<M::State>>>
where
    M: BoundingChain,
    N: NoiseSource + ?Sized,
{
    let mut y = model.full_set();
    let mut out = vec![y.clone()];
    for t in -(depth as i64)..0 {
        let atom = atom_at(noise, t)?;
        y = match y.singleton() {
            Some(x) => BoundingSet::new(vec![model.step(x, &atom)]),
            None => model.bound(&y, &atom),
        };
        out.push(y.clone());
    }
    Ok(out)
}

/// Checks that every enumerated path lies inside the bounding set at every
/// time of a depth-`depth` run.
pub fn audit_bounding<M, N>(model: &M, noise: &N, depth: u64) -> Result<()>
where
    M: BoundingChain,
    N: NoiseSource + ?Sized,
{
    let sets = bounding_trace(model, noise, depth)?;
    let paths = backward_paths(model, noise, &model.states(), depth)?;
    for (i, (set, row)) in sets.iter().zip(&paths).enumerate() {
        if let Some(x) = row.iter().find(|x| !set.contains(x)) {
            return Err(Error::InvalidState(format!(
                "path value {x:?} escapes bounding set {:?} at time {}",
                set.states(),
                i as i64 - depth as i64
            )));
        }
    }
    Ok(())
}

/// Checks that every enumerated path stays between the bottom and top paths
/// at every time of a depth-`depth` run.
pub fn audit_sandwich<M, N>(model: &M, noise: &N, depth: u64) -> Result<()>
where
    M: FiniteSpace + Monotone,
    N: NoiseSource + ?Sized,
{
    let mut starts = vec![model.bottom(), model.top()];
    starts.extend(model.states());
    for (i, row) in backward_paths(model, noise, &starts, depth)?
        .iter()
        .enumerate()
    {
        let (lo, hi) = (&row[0], &row[1]);
        if let Some(x) = row[2..]
            .iter()
            .find(|x| !(model.precedes(lo, x) && model.precedes(x, hi)))
        {
            return Err(Error::InvalidState(format!(
                "path value {x:?} leaves [{lo:?}, {hi:?}] at time {}",
                i as i64 - depth as i64
            )));
        }
    }
    Ok(())
}
