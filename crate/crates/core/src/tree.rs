//! Finite filtered probability space on a scenario tree.
//!
//! Time runs through the integers `0..=T`. The information structure is a
//! rooted tree: the atoms of the time-`t` partition are the subtrees rooted
//! at depth `t`, and leaves are numbered depth-first so every atom is a
//! contiguous range of leaf indices. `F_0` is trivial, `F_T` separates all
//! leaves, and each partition refines the previous one by construction.
//!
//! Random variables are leaf vectors; essentially bounded means plain finite
//! here. Essential suprema over finite families collapse to atom-by-atom
//! maxima, which is what makes every dual formula in the downstream modules
//! an exactly computable finite expression.

use crate::error::{Error, Result};
use crate::scalar::{total, Scalar};
use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::ops::Range;
use std::sync::Arc;

/// Declarative description of a tree: horizon, branching counts of the
/// internal nodes in depth-first order, and terminal leaf weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeSpec<S> {
    pub horizon: usize,
    pub branching: Vec<usize>,
    pub weights: Vec<S>,
}

/// Filtration on a finite scenario tree together with the reference
/// probability `P` (strictly positive on every leaf).
#[derive(Debug)]
pub struct FilteredSpace<S> {
    horizon: usize,
    branching: Vec<usize>,
    weights: Vec<S>,
    /// `atoms[t]` partitions `0..leaves()` into contiguous ranges.
    atoms: Vec<Vec<Range<usize>>>,
    /// `atom_of[t][leaf]` is the index of the time-`t` atom containing leaf.
    atom_of: Vec<Vec<usize>>,
    digest: u64,
}

impl<S: PartialEq> PartialEq for FilteredSpace<S> {
    fn eq(&self, other: &Self) -> bool {
        self.horizon == other.horizon
            && self.branching == other.branching
            && self.weights == other.weights
    }
}

/// Builds the filtered space from a declarative tree description.
///
/// Leaf order is depth-first with ascending child index, so the same
/// description always yields the same leaf numbering. Weights may be off by
/// at most 1e-9 from summing to one; more than 1e-12 off, they are rescaled
/// to unit total, while near-exact weights are kept as supplied.
pub fn build_tree<S: Scalar>(spec: &TreeSpec<S>) -> Result<Arc<FilteredSpace<S>>> {
    let t_max = spec.horizon;
    if t_max == 0 {
        return Err(Error::EmptyTree);
    }
    if spec.branching.is_empty() || spec.branching.contains(&0) {
        return Err(Error::EmptyTree);
    }

    // Depth-first walk consuming one branching count per internal node.
    // Record, per depth, the half-open leaf span of every node visited.
    let mut spans: Vec<Vec<Range<usize>>> = vec![Vec::new(); t_max + 1];
    let mut counts = spec.branching.iter().copied();
    let mut next_leaf = 0usize;
    // Explicit stack of (depth, remaining-children) to avoid recursion.
    struct Frame {
        depth: usize,
        start: usize,
        remaining: usize,
    }
    let mut stack: Vec<Frame> = Vec::new();
    let root_children = counts.next().ok_or(Error::EmptyTree)?;
    stack.push(Frame { depth: 0, start: 0, remaining: root_children });
    while let Some(top) = stack.last_mut() {
        if top.remaining == 0 {
            let frame = stack.pop().unwrap();
            spans[frame.depth].push(frame.start..next_leaf);
            continue;
        }
        top.remaining -= 1;
        let child_depth = stack.last().unwrap().depth + 1;
        if child_depth == t_max {
            spans[t_max].push(next_leaf..next_leaf + 1);
            next_leaf += 1;
        } else {
            let k = counts
                .next()
                .ok_or_else(|| Error::Invalid("branching list ran out of counts".into()))?;
            if k == 0 {
                return Err(Error::EmptyTree);
            }
            stack.push(Frame { depth: child_depth, start: next_leaf, remaining: k });
        }
    }
    if counts.next().is_some() {
        return Err(Error::Invalid("branching list has unused counts".into()));
    }
    let leaves = next_leaf;
    if leaves == 0 {
        return Err(Error::EmptyTree);
    }

    if spec.weights.len() != leaves {
        return Err(Error::SpaceMismatch {
            context: "leaf weights".into(),
            expected: leaves,
            got: spec.weights.len(),
        });
    }
    for (index, w) in spec.weights.iter().enumerate() {
        if *w <= S::zero() {
            return Err(Error::NonPositiveWeight { index, value: w.approx() });
        }
    }
    let sum = total(&spec.weights);
    if (sum.clone() - S::one()).abs() > S::of(1e-9) {
        return Err(Error::WeightsDoNotSumToOne { sum: sum.approx() });
    }
    // Rescaling is skipped inside the round-off band so that weights written
    // to text and read back land on identical values.
    let weights: Vec<S> = if (sum.clone() - S::one()).abs() > S::of(1e-12) {
        spec.weights.iter().map(|w| w.clone() / sum.clone()).collect()
    } else {
        spec.weights.clone()
    };

    let mut atoms = spans;
    for level in atoms.iter_mut() {
        level.sort_by_key(|r| r.start);
    }
    let atom_of = atoms
        .iter()
        .map(|level| {
            let mut idx = vec![0usize; leaves];
            for (i, r) in level.iter().enumerate() {
                for leaf in r.clone() {
                    idx[leaf] = i;
                }
            }
            idx
        })
        .collect();

    let mut h = DefaultHasher::new();
    h.write_usize(t_max);
    for b in &spec.branching {
        h.write_usize(*b);
    }
    for w in &weights {
        w.feed_hash(&mut h);
    }
    Ok(Arc::new(FilteredSpace {
        horizon: t_max,
        branching: spec.branching.clone(),
        weights,
        atoms,
        atom_of,
        digest: h.finish(),
    }))
}

impl<S: Scalar> FilteredSpace<S> {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn leaves(&self) -> usize {
        self.weights.len()
    }

    /// Reference probability weight of one leaf.
    pub fn p(&self, leaf: usize) -> &S {
        &self.weights[leaf]
    }

    pub fn p_weights(&self) -> &[S] {
        &self.weights
    }

    pub fn branching(&self) -> &[usize] {
        &self.branching
    }

    pub fn spec(&self) -> TreeSpec<S> {
        TreeSpec {
            horizon: self.horizon,
            branching: self.branching.clone(),
            weights: self.weights.clone(),
        }
    }

    pub fn atoms(&self, t: usize) -> &[Range<usize>] {
        &self.atoms[t]
    }

    pub fn atom_count(&self, t: usize) -> usize {
        self.atoms[t].len()
    }

    pub fn atom_of(&self, t: usize, leaf: usize) -> usize {
        self.atom_of[t][leaf]
    }

    /// Structural digest, used for cache keys and cheap mismatch detection.
    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn check_times(&self, s: usize, t: usize, u: usize) -> Result<()> {
        if s <= t && t <= u && u <= self.horizon {
            Ok(())
        } else {
            Err(Error::TimeOrderViolation { s, t, u, horizon: self.horizon })
        }
    }

    fn check_len(&self, len: usize, context: &str) -> Result<()> {
        if len == self.leaves() {
            Ok(())
        } else {
            Err(Error::SpaceMismatch {
                context: context.into(),
                expected: self.leaves(),
                got: len,
            })
        }
    }

    /// Smallest `t` such that the vector is constant on every time-`t` atom.
    pub fn measurability_level(&self, values: &[S]) -> usize {
        for t in 0..self.horizon {
            let constant = self.atoms[t].iter().all(|r| {
                let first = &values[r.start];
                values[r.clone()].iter().all(|v| v == first)
            });
            if constant {
                return t;
            }
        }
        self.horizon
    }

    /// Wraps leaf values as a random variable, recording its finest
    /// measurability level.
    pub fn rv(&self, values: Vec<S>) -> Result<RandomVariable<S>> {
        self.check_len(values.len(), "random variable")?;
        let level = self.measurability_level(&values);
        Ok(RandomVariable { values, level })
    }

    /// Like [`rv`](Self::rv) but requires measurability at time `t`.
    pub fn rv_at(&self, values: Vec<S>, t: usize) -> Result<RandomVariable<S>> {
        let rv = self.rv(values)?;
        if rv.level > t {
            return Err(Error::NotAdapted { t, level: rv.level });
        }
        Ok(rv)
    }

    pub fn constant(&self, value: S) -> RandomVariable<S> {
        RandomVariable { values: vec![value; self.leaves()], level: 0 }
    }

    /// Builds an `F_t`-measurable variable from one value per time-`t` atom.
    pub fn from_atom_values(&self, t: usize, atom_values: &[S]) -> Result<RandomVariable<S>> {
        if atom_values.len() != self.atom_count(t) {
            return Err(Error::SpaceMismatch {
                context: format!("atom values at t={t}"),
                expected: self.atom_count(t),
                got: atom_values.len(),
            });
        }
        let mut values = Vec::with_capacity(self.leaves());
        for leaf in 0..self.leaves() {
            values.push(atom_values[self.atom_of(t, leaf)].clone());
        }
        let level = self.measurability_level(&values).min(t);
        Ok(RandomVariable { values, level })
    }

    /// One representative value per time-`t` atom (valid when `level <= t`).
    pub fn atom_values(&self, x: &RandomVariable<S>, t: usize) -> Vec<S> {
        self.atoms[t].iter().map(|r| x.values[r.start].clone()).collect()
    }

    /// Mass a measure-like weight vector assigns to each time-`t` atom.
    pub fn atom_masses(&self, weights: &[S], t: usize) -> Vec<S> {
        self.atoms[t].iter().map(|r| total(&weights[r.clone()])).collect()
    }

    /// `E_Q[X | F_t]` with the null-atom convention: on atoms of zero
    /// `Q`-mass the `P`-conditional value is used, so the result is always
    /// defined and deterministic.
    pub fn conditional_expectation(
        &self,
        x: &RandomVariable<S>,
        q: &TreeMeasure<S>,
        t: usize,
    ) -> Result<RandomVariable<S>> {
        self.check_len(q.q.len(), "measure")?;
        self.check_len(x.values.len(), "random variable")?;
        let mut values = vec![S::zero(); self.leaves()];
        for r in &self.atoms[t] {
            let mass = total(&q.q[r.clone()]);
            let value = if mass.is_zero() {
                let p_mass = total(&self.weights[r.clone()]);
                let num = r
                    .clone()
                    .fold(S::zero(), |acc, i| acc + self.weights[i].clone() * x.values[i].clone());
                num / p_mass
            } else {
                let num = r
                    .clone()
                    .fold(S::zero(), |acc, i| acc + q.q[i].clone() * x.values[i].clone());
                num / mass
            };
            for i in r.clone() {
                values[i] = value.clone();
            }
        }
        let level = self.measurability_level(&values).min(t);
        Ok(RandomVariable { values, level })
    }

    /// Plain expectation `E_Q[X]` (time-0 value of the conditional one).
    pub fn expectation(&self, x: &RandomVariable<S>, q: &TreeMeasure<S>) -> S {
        crate::scalar::dot(&x.values, &q.q)
    }

    /// Atom-by-atom maximum of a finite family, the essential supremum at
    /// time `t`.
    pub fn nodewise_max(
        &self,
        family: &[RandomVariable<S>],
        t: usize,
    ) -> Result<RandomVariable<S>> {
        if family.is_empty() {
            return Err(Error::EmptyFamily);
        }
        for member in family {
            self.check_len(member.values.len(), "family member")?;
            if member.level > t {
                return Err(Error::NotAdapted { t, level: member.level });
            }
        }
        let mut values = vec![S::zero(); self.leaves()];
        for r in &self.atoms[t] {
            let mut best = family[0].values[r.start].clone();
            for member in &family[1..] {
                let v = &member.values[r.start];
                if *v > best {
                    best = v.clone();
                }
            }
            for i in r.clone() {
                values[i] = best.clone();
            }
        }
        let level = self.measurability_level(&values).min(t);
        Ok(RandomVariable { values, level })
    }

    /// Density process `Z_t = E_P[dQ/dP | F_t]`, i.e. `Q(A)/P(A)` on each
    /// time-`t` atom `A`.
    pub fn density_process(&self, q: &TreeMeasure<S>, t: usize) -> Result<RandomVariable<S>> {
        self.check_len(q.q.len(), "measure")?;
        let mut values = vec![S::zero(); self.leaves()];
        for r in &self.atoms[t] {
            let z = total(&q.q[r.clone()]) / total(&self.weights[r.clone()]);
            for i in r.clone() {
                values[i] = z.clone();
            }
        }
        let level = self.measurability_level(&values).min(t);
        Ok(RandomVariable { values, level })
    }

    /// Resolves an arbitrary leaf set into time-`t` atoms; errors unless the
    /// set is a union of whole atoms.
    pub fn event_atoms(&self, t: usize, member: &[bool]) -> Result<Vec<usize>> {
        self.check_len(member.len(), "event")?;
        let mut out = Vec::new();
        for (i, r) in self.atoms[t].iter().enumerate() {
            let inside = member[r.start];
            if member[r.clone()].iter().any(|m| *m != inside) {
                return Err(Error::NotMeasurableEvent { t });
            }
            if inside {
                out.push(i);
            }
        }
        Ok(out)
    }

    /// Conditional one-step kernel `Q(B | A)` for `A` at time `s` and the
    /// time-`t` atoms `B` inside it, with the `P`-fallback on null atoms.
    pub fn kernel(&self, q: &TreeMeasure<S>, s: usize, t: usize) -> Vec<Vec<S>> {
        let t_masses = self.atom_masses(&q.q, t);
        let p_t = self.atom_masses(&self.weights, t);
        self.atoms[s]
            .iter()
            .map(|r| {
                let s_mass = total(&q.q[r.clone()]);
                let children: Vec<usize> = self
                    .atoms[t]
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.start >= r.start && b.end <= r.end)
                    .map(|(i, _)| i)
                    .collect();
                if s_mass.is_zero() {
                    let p_s = total(&self.weights[r.clone()]);
                    children.iter().map(|&b| p_t[b].clone() / p_s.clone()).collect()
                } else {
                    children.iter().map(|&b| t_masses[b].clone() / s_mass.clone()).collect()
                }
            })
            .collect()
    }

    /// Indices of the time-`t` atoms contained in the time-`s` atom `a`.
    pub fn children(&self, s: usize, a: usize, t: usize) -> Vec<usize> {
        let r = &self.atoms[s][a];
        self.atoms[t]
            .iter()
            .enumerate()
            .filter(|(_, b)| b.start >= r.start && b.end <= r.end)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Leaf-indexed random variable tagged with its finest measurability level.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomVariable<S> {
    values: Vec<S>,
    level: usize,
}

impl<S: Scalar> RandomVariable<S> {
    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn value(&self, leaf: usize) -> &S {
        &self.values[leaf]
    }

    pub fn map(&self, f: impl Fn(&S) -> S) -> RandomVariable<S> {
        RandomVariable { values: self.values.iter().map(f).collect(), level: self.level }
    }

    pub fn neg(&self) -> RandomVariable<S> {
        self.map(|v| -v.clone())
    }

    /// Pointwise combination; the result is measurable wherever both are.
    pub fn zip(&self, other: &RandomVariable<S>, f: impl Fn(&S, &S) -> S) -> RandomVariable<S> {
        debug_assert_eq!(self.values.len(), other.values.len());
        RandomVariable {
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(a, b)).collect(),
            level: self.level.max(other.level),
        }
    }

    pub fn add(&self, other: &RandomVariable<S>) -> RandomVariable<S> {
        self.zip(other, |a, b| a.clone() + b.clone())
    }

    pub fn sub(&self, other: &RandomVariable<S>) -> RandomVariable<S> {
        self.zip(other, |a, b| a.clone() - b.clone())
    }

    pub fn min_value(&self) -> S {
        self.values
            .iter()
            .skip(1)
            .fold(self.values[0].clone(), |acc, v| if *v < acc { v.clone() } else { acc })
    }

    pub fn max_value(&self) -> S {
        self.values
            .iter()
            .skip(1)
            .fold(self.values[0].clone(), |acc, v| if *v > acc { v.clone() } else { acc })
    }

    pub fn approx_values(&self) -> Vec<f64> {
        self.values.iter().map(Scalar::approx).collect()
    }
}

/// Probability measure given by leaf weights, with structure flags relative
/// to the reference measure.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeMeasure<S> {
    q: Vec<S>,
    equivalent_to_p: bool,
    reduces_to_p_at: usize,
}

impl<S: Scalar> TreeMeasure<S> {
    /// Validates weights (nonnegative, summing to one within 1e-9, and
    /// rescaled to unit mass when more than 1e-12 off) and computes the
    /// structure flags.
    pub fn new(space: &FilteredSpace<S>, weights: Vec<S>) -> Result<TreeMeasure<S>> {
        if weights.len() != space.leaves() {
            return Err(Error::SpaceMismatch {
                context: "measure weights".into(),
                expected: space.leaves(),
                got: weights.len(),
            });
        }
        for (index, w) in weights.iter().enumerate() {
            if *w < S::zero() {
                return Err(Error::NonPositiveWeight { index, value: w.approx() });
            }
        }
        let sum = total(&weights);
        if (sum.clone() - S::one()).abs() > S::of(1e-9) {
            return Err(Error::WeightsDoNotSumToOne { sum: sum.approx() });
        }
        // As in the tree builder, near-exact masses are kept verbatim so
        // that text round-trips are stable.
        let q: Vec<S> = if (sum.clone() - S::one()).abs() > S::of(1e-12) {
            weights.into_iter().map(|w| w / sum.clone()).collect()
        } else {
            weights
        };
        let equivalent_to_p = q.iter().all(|w| *w > S::zero());

        // Largest t with Q = P on the time-t atoms; t = 0 always qualifies.
        let tol = S::of(1e-12);
        let mut reduces_to_p_at = 0;
        for t in (0..=space.horizon()).rev() {
            let masses = space.atom_masses(&q, t);
            let p_masses = space.atom_masses(space.p_weights(), t);
            if masses
                .iter()
                .zip(&p_masses)
                .all(|(a, b)| (a.clone() - b.clone()).abs() <= tol)
            {
                reduces_to_p_at = t;
                break;
            }
        }
        Ok(TreeMeasure { q, equivalent_to_p, reduces_to_p_at })
    }

    pub fn p_measure(space: &FilteredSpace<S>) -> TreeMeasure<S> {
        TreeMeasure {
            q: space.p_weights().to_vec(),
            equivalent_to_p: true,
            reduces_to_p_at: space.horizon(),
        }
    }

    pub fn weights(&self) -> &[S] {
        &self.q
    }

    pub fn weight(&self, leaf: usize) -> &S {
        &self.q[leaf]
    }

    pub fn equivalent_to_p(&self) -> bool {
        self.equivalent_to_p
    }

    /// Largest `t` such that the measure agrees with `P` on `F_t`
    /// (0 when only the trivial agreement holds).
    pub fn reduces_to_p_at(&self) -> usize {
        self.reduces_to_p_at
    }
}

/// Process with one `F_t`-measurable slice per time, constrained to a value
/// band (discount processes use `[0, 1]`).
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedProcess<S> {
    slices: Vec<RandomVariable<S>>,
}

impl<S: Scalar> AdaptedProcess<S> {
    pub fn new(
        space: &FilteredSpace<S>,
        slices: Vec<RandomVariable<S>>,
        band: Option<(S, S)>,
    ) -> Result<AdaptedProcess<S>> {
        if slices.len() != space.horizon() + 1 {
            return Err(Error::SpaceMismatch {
                context: "process slices".into(),
                expected: space.horizon() + 1,
                got: slices.len(),
            });
        }
        for (t, slice) in slices.iter().enumerate() {
            if slice.values.len() != space.leaves() {
                return Err(Error::SpaceMismatch {
                    context: format!("process slice at t={t}"),
                    expected: space.leaves(),
                    got: slice.values.len(),
                });
            }
            if slice.level > t {
                return Err(Error::NotAdapted { t, level: slice.level });
            }
            if let Some((lo, hi)) = &band {
                for v in &slice.values {
                    if v < lo || v > hi {
                        return Err(Error::FactorOutOfRange { value: v.approx() });
                    }
                }
            }
        }
        Ok(AdaptedProcess { slices })
    }

    pub fn slice(&self, t: usize) -> &RandomVariable<S> {
        &self.slices[t]
    }

    pub fn slices(&self) -> &[RandomVariable<S>] {
        &self.slices
    }
}

/// Measure of total mass `a ∈ [0, 1]` split as `a · Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubProbability<S> {
    pub a: S,
    pub q: TreeMeasure<S>,
    /// With zero mass the direction `Q` carries no information.
    pub q_non_unique: bool,
}

impl<S: Scalar> SubProbability<S> {
    pub fn leaf_weights(&self) -> Vec<S> {
        self.q.weights().iter().map(|w| self.a.clone() * w.clone()).collect()
    }
}
