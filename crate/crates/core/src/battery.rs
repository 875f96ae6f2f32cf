//! Seeded generators for test material: payoff batteries, premise pairs for
//! the monotone consistency checkers, random trees, and randomized
//! structured models built from per-node transition grids.
//!
//! Everything is driven by an explicit seed through a fixed-algorithm
//! generator, so batteries are reproducible across runs and platforms.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dual_dynamic::{
    DiscountTable, DualModel, DualPair, DynamicRiskMeasure, ModelOptions,
};
use crate::error::Result;
use crate::scalar::{Cost, Scalar};
use crate::structure::build_cocycle_penalty;
use crate::tree::{build_tree, FilteredSpace, RandomVariable, TreeMeasure, TreeSpec};

/// Uniformly random payoffs in `[-amplitude, amplitude]`, leaf by leaf.
pub fn random_battery<S: Scalar>(
    space: &FilteredSpace<S>,
    count: usize,
    amplitude: f64,
    seed: u64,
) -> Vec<RandomVariable<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let values = (0..space.leaves())
                .map(|_| S::of(rng.gen_range(-amplitude..=amplitude)))
                .collect();
            space.rv(values).expect("leaf-sized vector")
        })
        .collect()
}

/// Premise pairs for the monotone checkers, cycling through four shapes:
///
/// * `(X, X - m)` with a nonnegative shift `m`, ordered by monotonicity,
/// * `(X, lambda X)` with `lambda` alternating between `1/2` and `2`,
/// * `(X, X + g)` with `g` averaging to zero inside every last-period atom,
///   so conditional expectations at earlier dates are untouched while tail
///   values move freely,
/// * independent draws `(X, X - |shift|)`.
///
/// The checkers re-test every premise, so shapes whose ordering a given
/// model does not respect are merely counted as vacuous.
pub fn comparable_pairs<S: Scalar>(
    space: &FilteredSpace<S>,
    count: usize,
    amplitude: f64,
    seed: u64,
) -> Vec<(RandomVariable<S>, RandomVariable<S>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> Vec<f64> {
        (0..space.leaves()).map(|_| rng.gen_range(lo..=hi)).collect()
    };
    let mut pairs = Vec::with_capacity(count);
    for k in 0..count {
        let x_raw = draw(&mut rng, -amplitude, amplitude);
        let x = space
            .rv(x_raw.iter().map(|v| S::of(*v)).collect())
            .expect("leaf-sized vector");
        let y = match k % 4 {
            0 => {
                let shift = draw(&mut rng, 0.0, amplitude);
                let values = x_raw.iter().zip(&shift).map(|(v, m)| S::of(v - m)).collect();
                space.rv(values).expect("leaf-sized vector")
            }
            1 => {
                let lambda = if k % 8 == 1 { 0.5 } else { 2.0 };
                x.map(|v| v.clone() * S::of(lambda))
            }
            2 => {
                let noise = draw(&mut rng, -amplitude, amplitude);
                let last = space.horizon().saturating_sub(1);
                let mut values = x_raw.clone();
                for r in space.atoms(last) {
                    let mean: f64 =
                        r.clone().map(|leaf| noise[leaf]).sum::<f64>() / r.len() as f64;
                    for leaf in r.clone() {
                        values[leaf] += noise[leaf] - mean;
                    }
                }
                space
                    .rv(values.into_iter().map(S::of).collect())
                    .expect("leaf-sized vector")
            }
            _ => {
                let shift = draw(&mut rng, 0.0, amplitude);
                let values = x_raw.iter().zip(&shift).map(|(v, m)| S::of(v - m)).collect();
                space.rv(values).expect("leaf-sized vector")
            }
        };
        pairs.push((x, y));
    }
    pairs
}

/// Pairs `(X, X after a leaf transposition)` where the transposition swaps
/// two leaves of the same last-period atom carrying identical weight under
/// the reference and under every supplied measure.
///
/// Such a swap leaves every conditional law unchanged, so the two payoffs
/// are indistinguishable to any functional built from those measures: ideal
/// equality premises for the weak-star checker. Returns an empty vector when
/// no safe transposition exists.
pub fn equal_law_pairs<S: Scalar>(
    space: &FilteredSpace<S>,
    measures: &[TreeMeasure<S>],
    base: &[RandomVariable<S>],
) -> Vec<(RandomVariable<S>, RandomVariable<S>)> {
    let last = space.horizon().saturating_sub(1);
    let mut swaps = Vec::new();
    for r in space.atoms(last) {
        for i in r.clone() {
            for j in i + 1..r.end {
                let same_p = (space.p(i).clone() - space.p(j).clone()).abs().approx() <= 1e-15;
                let same_q = measures.iter().all(|q| {
                    (q.weight(i).clone() - q.weight(j).clone()).abs().approx() <= 1e-15
                });
                if same_p && same_q {
                    swaps.push((i, j));
                }
            }
        }
    }
    let mut pairs = Vec::new();
    for x in base {
        for &(i, j) in &swaps {
            let mut values = x.values().to_vec();
            values.swap(i, j);
            let y = space.rv(values).expect("leaf-sized vector");
            pairs.push((x.clone(), y));
        }
    }
    pairs
}

/// Random tree specification: one arity per node drawn from
/// `2..=max_arity`, positive leaf weights normalized to one.
pub fn random_tree_spec(seed: u64, horizon: usize, max_arity: usize) -> TreeSpec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut branching = Vec::new();
    let mut nodes = 1usize;
    for _ in 0..horizon {
        let mut next = 0usize;
        for _ in 0..nodes {
            let arity = rng.gen_range(2..=max_arity.max(2));
            branching.push(arity);
            next += arity;
        }
        nodes = next;
    }
    let weights: Vec<f64> = (0..nodes).map(|_| rng.gen_range(0.2..=1.0)).collect();
    let mass: f64 = weights.iter().sum();
    TreeSpec { horizon, branching, weights: weights.into_iter().map(|w| w / mass).collect() }
}

/// Shape of a randomized structured model.
#[derive(Clone, Copy, Debug)]
pub struct RandomModelOptions {
    /// Tree horizon.
    pub horizon: usize,
    /// Branching factor at every node.
    pub arity: usize,
    /// Number of nodes (in breadth-first order) granted a second transition
    /// choice besides the reference transition. The measure family is the
    /// product over nodes of their choice sets, so this bounds its size by
    /// `2^choice_nodes`.
    pub choice_nodes: usize,
    /// Number of options for the first discount factor; the remaining
    /// factors are shared by every table, which keeps the discount family
    /// closed under splicing at later dates.
    pub discount_options: usize,
    /// Scale applied to the divergence-based one-step penalties.
    pub penalty_weight: f64,
}

impl Default for RandomModelOptions {
    fn default() -> RandomModelOptions {
        RandomModelOptions {
            horizon: 2,
            arity: 2,
            choice_nodes: 3,
            discount_options: 2,
            penalty_weight: 1.0,
        }
    }
}

/// Randomized structured model: a product family of transition choices, a
/// shared-tail product discount family, and penalties accumulated from
/// per-node divergence terms by the cocycle recursion.
///
/// Per node the choice set holds the reference transition plus (for the
/// first `choice_nodes` nodes) one random strictly positive alternative; the
/// measure family is every product of choices, so it is closed under pasting
/// and bifurcation by construction. Discount tables are product-form with a
/// shared tail. One-step penalties charge the chi-square divergence of the
/// chosen transition against the reference, weighted by `penalty_weight`;
/// the all-reference member therefore has zero penalty everywhere, which
/// normalizes the family. The closure certificates still have to be earned:
/// callers pass the result through [`crate::structure::StructuredModel::certify`].
pub fn random_structured_model(
    seed: u64,
    opts: &RandomModelOptions,
) -> Result<DynamicRiskMeasure<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaves = opts.arity.pow(opts.horizon as u32);
    let raw: Vec<f64> = (0..leaves).map(|_| rng.gen_range(0.2..=1.0)).collect();
    let mass: f64 = raw.iter().sum();
    let spec = TreeSpec {
        horizon: opts.horizon,
        branching: vec![opts.arity; (leaves - 1) / (opts.arity - 1)],
        weights: raw.into_iter().map(|w| w / mass).collect(),
    };
    let space = build_tree(&spec)?;

    // Nodes in breadth-first order with their reference transitions.
    let mut nodes: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for t in 0..opts.horizon {
        for a in 0..space.atom_count(t) {
            let children = space.children(t, a, t + 1);
            let parent: f64 = space.atoms(t)[a].clone().map(|leaf| space.p(leaf)).sum();
            let trans: Vec<f64> = children
                .iter()
                .map(|&b| {
                    let child: f64 = space.atoms(t + 1)[b].clone().map(|leaf| space.p(leaf)).sum();
                    child / parent
                })
                .collect();
            nodes.push((t, a, trans));
        }
    }
    let mut choices: Vec<Vec<Vec<f64>>> = Vec::new();
    for (idx, (_, _, reference)) in nodes.iter().enumerate() {
        let mut options = vec![reference.clone()];
        if idx < opts.choice_nodes {
            let raw: Vec<f64> = (0..reference.len()).map(|_| rng.gen_range(0.1..=0.9)).collect();
            let mass: f64 = raw.iter().sum();
            options.push(raw.into_iter().map(|w| w / mass).collect());
        }
        choices.push(options);
    }

    // Every product of per-node choices becomes one measure.
    let mut selections: Vec<Vec<usize>> = vec![Vec::new()];
    for options in &choices {
        let mut next = Vec::new();
        for sel in &selections {
            for o in 0..options.len() {
                let mut grown = sel.clone();
                grown.push(o);
                next.push(grown);
            }
        }
        selections = next;
    }
    let mut measures = Vec::with_capacity(selections.len());
    for sel in &selections {
        let mut w = vec![1.0f64; space.leaves()];
        for (node, (t, a, _)) in nodes.iter().enumerate() {
            let trans = &choices[node][sel[node]];
            let children = space.children(*t, *a, t + 1);
            for (pos, &b) in children.iter().enumerate() {
                for leaf in space.atoms(t + 1)[b].clone() {
                    w[leaf] *= trans[pos];
                }
            }
        }
        measures.push(TreeMeasure::new(&space, w)?);
    }

    let shared_tail: Vec<f64> =
        (1..opts.horizon).map(|_| rng.gen_range(0.5..=1.0)).collect();
    let mut discounts = Vec::new();
    for d in 0..opts.discount_options.max(1) {
        let head = if d == 0 { 1.0 } else { rng.gen_range(0.3..=0.95) };
        let mut factors = vec![head];
        factors.extend(&shared_tail);
        discounts.push(DiscountTable::from_factors(&space, &factors)?);
    }

    let mut pairs = Vec::new();
    let mut one_step = Vec::new();
    for discount in &discounts {
        for (m, sel) in selections.iter().enumerate() {
            pairs.push(DualPair { d: discount.clone(), q: measures[m].clone() });
            let mut steps = Vec::new();
            for t in 0..opts.horizon {
                let mut slice = Vec::with_capacity(space.atom_count(t));
                for a in 0..space.atom_count(t) {
                    let node = node_index(&nodes, t, a);
                    let chosen = &choices[node][sel[node]];
                    let reference = &nodes[node].2;
                    let div: f64 = chosen
                        .iter()
                        .zip(reference)
                        .map(|(c, p)| (c - p) * (c - p) / p)
                        .sum();
                    slice.push(Cost::Finite(opts.penalty_weight * div));
                }
                steps.push(slice);
            }
            one_step.push(steps);
        }
    }
    let penalty = build_cocycle_penalty(&space, &pairs, &one_step)?;
    let model = DualModel::new_with(
        Arc::clone(&space),
        pairs,
        penalty,
        ModelOptions { all_q_equivalent: true, require_normalized: true },
    )?;
    Ok(DynamicRiskMeasure::new(model))
}

fn node_index(nodes: &[(usize, usize, Vec<f64>)], t: usize, a: usize) -> usize {
    nodes
        .iter()
        .position(|(nt, na, _)| *nt == t && *na == a)
        .expect("interior node")
}

/// Grid-valued product family on a shared space: every node draws its
/// transition from the same finite list, discounts are product-form over the
/// given first-factor grid with a fixed tail, and penalties accumulate
/// divergence one-steps through the cocycle recursion.
///
/// This is the deterministic sibling of [`random_structured_model`], used
/// for fixtures whose exact membership matters.
pub fn grid_model<S: Scalar>(
    space: &Arc<FilteredSpace<S>>,
    transitions: &[Vec<S>],
    discount_heads: &[S],
    discount_tail: &[S],
    penalty_weight: S,
) -> Result<DynamicRiskMeasure<S>> {
    let horizon = space.horizon();
    let mut nodes: Vec<(usize, usize)> = Vec::new();
    for t in 0..horizon {
        for a in 0..space.atom_count(t) {
            nodes.push((t, a));
        }
    }
    let mut selections: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in &nodes {
        let mut next = Vec::new();
        for sel in &selections {
            for o in 0..transitions.len() {
                let mut grown = sel.clone();
                grown.push(o);
                next.push(grown);
            }
        }
        selections = next;
    }
    let mut measures = Vec::with_capacity(selections.len());
    for sel in &selections {
        let mut w = vec![S::one(); space.leaves()];
        for (node, (t, a)) in nodes.iter().enumerate() {
            let trans = &transitions[sel[node]];
            let children = space.children(*t, *a, t + 1);
            for (pos, &b) in children.iter().enumerate() {
                for leaf in space.atoms(t + 1)[b].clone() {
                    w[leaf] = w[leaf].clone() * trans[pos].clone();
                }
            }
        }
        measures.push(TreeMeasure::new(space, w)?);
    }
    let mut discounts = Vec::new();
    for head in discount_heads {
        let mut factors = vec![head.clone()];
        factors.extend(discount_tail.iter().cloned());
        discounts.push(DiscountTable::from_factors(space, &factors)?);
    }

    let reference: Vec<Vec<S>> = nodes
        .iter()
        .map(|(t, a)| {
            let children = space.children(*t, *a, t + 1);
            let parent = crate::scalar::total(
                &space.p_weights()[space.atoms(*t)[*a].clone()],
            );
            children
                .iter()
                .map(|&b| {
                    let child = crate::scalar::total(
                        &space.p_weights()[space.atoms(t + 1)[b].clone()],
                    );
                    child / parent.clone()
                })
                .collect()
        })
        .collect();

    let mut pairs = Vec::new();
    let mut one_step = Vec::new();
    for discount in &discounts {
        for (m, sel) in selections.iter().enumerate() {
            pairs.push(DualPair { d: discount.clone(), q: measures[m].clone() });
            let mut steps = Vec::new();
            for t in 0..horizon {
                let mut slice = Vec::with_capacity(space.atom_count(t));
                for a in 0..space.atom_count(t) {
                    let node = nodes.iter().position(|n| *n == (t, a)).expect("interior node");
                    let chosen = &transitions[sel[node]];
                    let anchor = &reference[node];
                    let mut div = S::zero();
                    for (c, p) in chosen.iter().zip(anchor) {
                        let diff = c.clone() - p.clone();
                        div = div + diff.clone() * diff / p.clone();
                    }
                    slice.push(Cost::Finite(penalty_weight.clone() * div));
                }
                steps.push(slice);
            }
            one_step.push(steps);
        }
    }
    let penalty = build_cocycle_penalty(space, &pairs, &one_step)?;
    let model = DualModel::new_with(
        Arc::clone(space),
        pairs,
        penalty,
        ModelOptions { all_q_equivalent: true, require_normalized: true },
    )?;
    Ok(DynamicRiskMeasure::new(model))
}

/// Maps a `BTreeMap`-shaped penalty override onto a model, adding `delta` to
/// the existing values at the given slice for one pair.
///
/// The result deliberately violates the cocycle identity by `delta` at every
/// proper split of `(s, u)`, which makes it a calibrated broken fixture; the
/// model is rebuilt without the normalization requirement because the bumped
/// slice may no longer reach zero.
pub fn ablate_penalty<S: Scalar>(
    rm: &DynamicRiskMeasure<S>,
    pair: usize,
    s: usize,
    u: usize,
    delta: S,
) -> Result<DynamicRiskMeasure<S>> {
    let model = rm.model();
    let space = model.space_arc();
    let mut penalty = model.penalty().clone();
    let bumped: Vec<Cost<S>> = model
        .penalty()
        .c(pair, s, u)
        .iter()
        .map(|c| c.add(&Cost::Finite(delta.clone())))
        .collect();
    penalty.set(&space, pair, s, u, bumped)?;
    let rebuilt = DualModel::new_with(
        space,
        model.pairs().to_vec(),
        penalty,
        ModelOptions { require_normalized: false, ..model.options() },
    )?;
    Ok(DynamicRiskMeasure::new(rebuilt))
}

/// Two-pair model that is monotone-inconsistent by design: the reference
/// expectation pair is joined by a point-mass pair whose penalty is infinite
/// over `(1, 2)` windows but free over `(0, 2)`.
///
/// At `t = 1` the point mass is invisible, so premises are judged by plain
/// conditional expectation; at `t = 0` it prices the tail leaf at full
/// weight, which reverses orderings for payoffs that trade tail-leaf losses
/// against within-atom gains.
pub fn monotone_breaker<S: Scalar>(
    space: &Arc<FilteredSpace<S>>,
) -> Result<DynamicRiskMeasure<S>> {
    let horizon = space.horizon();
    let leaves = space.leaves();
    let reference = DualPair {
        d: DiscountTable::ones(space),
        q: TreeMeasure::p_measure(space),
    };
    let mut tail = vec![S::zero(); leaves];
    tail[leaves - 1] = S::one();
    let point = DualPair { d: DiscountTable::ones(space), q: TreeMeasure::new(space, tail)? };
    let pairs = vec![reference, point];
    let mut penalty = crate::dual_dynamic::PenaltyTerm::zero(space, 2);
    for t in 1..horizon {
        for u in t..=horizon {
            penalty.set(
                space,
                1,
                t,
                u,
                vec![Cost::Infinite; space.atom_count(t)],
            )?;
        }
    }
    let model = DualModel::new_with(
        Arc::clone(space),
        pairs,
        penalty,
        ModelOptions { all_q_equivalent: false, require_normalized: true },
    )?;
    Ok(DynamicRiskMeasure::new(model))
}
