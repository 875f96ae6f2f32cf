//! Structural operations on measure and discount families: pasting at a date,
//! bifurcation along an event, joint pasting of discount/measure pairs, and
//! penalty construction by the cocycle recursion.
//!
//! These operations are the raw material for the closure certificates in
//! [`StructuredModel`]: a model whose families are verifiably stable under
//! them supports the recursivity argument exercised by
//! [`crate::consistency::verify_theorem_tc`].
//!
//! Conventions shared by every constructor here:
//! * the first argument supplies the law up to the splice point (marginals
//!   before the splice come from the first measure or table),
//! * conditional laws on null atoms fall back to the reference weights, the
//!   same convention used by [`FilteredSpace::conditional_expectation`],
//! * identities are verified post hoc on indicator bases rather than assumed
//!   from the construction.

use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use crate::dual_dynamic::{DiscountTable, DualModel, DualPair, PenaltyTerm};
use crate::error::{Error, Result};
use crate::report::{ConsistencyReport, Scope, Witness};
use crate::scalar::{sup_gap, total, Cost, Scalar};
use crate::tree::{FilteredSpace, TreeMeasure};

/// Tolerance for the exact-identity checks behind closure certificates.
///
/// Splices and pastes are finite products and quotients of the input weights,
/// so agreement should hold to rounding error; anything looser hides a
/// genuinely different measure.
pub const CLOSURE_TOL: f64 = 1e-12;

/// Measure that follows `q1` up to time `t` and `q2` afterwards.
///
/// The result has `q1`'s marginal on the time-`t` atoms and `q2`'s
/// conditional law inside each of them; on atoms where `q2` vanishes the
/// conditional law falls back to the reference weights. The splice leaves the
/// `s` argument free on purpose: the defining identity
/// `E_Q*[X | F_s] = E_q1[ E_q2[X | F_t] | F_s ]` then holds for every
/// `s <= t` at once, which [`paste_identity_gap`] verifies.
pub fn paste_measures<S: Scalar>(
    space: &FilteredSpace<S>,
    q1: &TreeMeasure<S>,
    q2: &TreeMeasure<S>,
    s: usize,
    t: usize,
) -> Result<TreeMeasure<S>> {
    space.check_times(s, t, space.horizon())?;
    let m1 = space.atom_masses(q1.weights(), t);
    let m2 = space.atom_masses(q2.weights(), t);
    let mut w = vec![S::zero(); space.leaves()];
    for (a, r) in space.atoms(t).iter().enumerate() {
        if m2[a].is_zero() {
            let p_mass = total(&space.p_weights()[r.clone()]);
            for leaf in r.clone() {
                w[leaf] = m1[a].clone() * space.p(leaf).clone() / p_mass.clone();
            }
        } else {
            for leaf in r.clone() {
                w[leaf] = m1[a].clone() * q2.weight(leaf).clone() / m2[a].clone();
            }
        }
    }
    TreeMeasure::new(space, w)
}

/// Worst gap in the pasting identity over the terminal indicator basis.
///
/// Checks `E_qstar[1_w | F_s] = E_q1[ E_q2[1_w | F_t] | F_s ]` for every leaf
/// `w`, returning the largest leafwise deviation.
pub fn paste_identity_gap<S: Scalar>(
    space: &FilteredSpace<S>,
    q1: &TreeMeasure<S>,
    q2: &TreeMeasure<S>,
    qstar: &TreeMeasure<S>,
    s: usize,
    t: usize,
) -> Result<f64> {
    space.check_times(s, t, space.horizon())?;
    let mut worst = 0.0f64;
    for leaf in 0..space.leaves() {
        let mut e = vec![S::zero(); space.leaves()];
        e[leaf] = S::one();
        let e = space.rv(e)?;
        let inner = space.conditional_expectation(&e, q2, t)?;
        let nested = space.conditional_expectation(&inner, q1, s)?;
        let lhs = space.conditional_expectation(&e, qstar, s)?;
        worst = worst.max(sup_gap(lhs.values(), nested.values()).approx());
    }
    Ok(worst)
}

/// Measure whose conditional law given `F_s` follows `q1` on the event and
/// `q2` off it.
///
/// `event` is a leafwise membership mask that must be measurable at `s`. The
/// construction splices densities, `Z* proportional to 1_A Z1 + 1_Ac Z2`,
/// and renormalizes: a full event returns `q1` verbatim, an empty one `q2`.
/// The defining identity only constrains conditional laws given the time-`s`
/// atoms, so the marginal is a convention; the density splice is the one
/// under which the two degenerate events collapse to their inputs.
pub fn bifurcate_measures<S: Scalar>(
    space: &FilteredSpace<S>,
    q1: &TreeMeasure<S>,
    q2: &TreeMeasure<S>,
    s: usize,
    event: &[bool],
) -> Result<TreeMeasure<S>> {
    space.check_times(s, s, space.horizon())?;
    space.event_atoms(s, event)?;
    let mut w = vec![S::zero(); space.leaves()];
    for r in space.atoms(s) {
        let source = if event[r.start] { q1 } else { q2 };
        for leaf in r.clone() {
            w[leaf] = source.weight(leaf).clone();
        }
    }
    let mass = total(&w);
    if mass.is_zero() {
        return Err(Error::Invalid(
            "the spliced measure carries no mass on either side of the event".into(),
        ));
    }
    TreeMeasure::new(space, w.into_iter().map(|v| v / mass.clone()).collect())
}

/// Worst gap in the bifurcation identity over the terminal indicator basis.
///
/// Checks that `E_qstar[1_w | F_s]` matches `E_q1[1_w | F_s]` on the event
/// and `E_q2[1_w | F_s]` off it.
pub fn bifurcation_identity_gap<S: Scalar>(
    space: &FilteredSpace<S>,
    q1: &TreeMeasure<S>,
    q2: &TreeMeasure<S>,
    qstar: &TreeMeasure<S>,
    s: usize,
    event: &[bool],
) -> Result<f64> {
    space.event_atoms(s, event)?;
    let mut worst = 0.0f64;
    for leaf in 0..space.leaves() {
        let mut e = vec![S::zero(); space.leaves()];
        e[leaf] = S::one();
        let e = space.rv(e)?;
        let star = space.conditional_expectation(&e, qstar, s)?;
        let one = space.conditional_expectation(&e, q1, s)?;
        let two = space.conditional_expectation(&e, q2, s)?;
        for w in 0..space.leaves() {
            let expect = if event[w] { one.value(w) } else { two.value(w) };
            let d = (star.value(w).clone() - expect.clone()).abs().approx();
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

/// Discount table spliced along an event that is measurable at `s`.
///
/// Slices starting at `t >= s` take `d1`'s values on atoms inside the event
/// and `d2`'s values outside; slices starting before `s` are copied from `d1`
/// (the splice cannot reach them without breaking adaptedness).
pub fn bifurcate_discounts<S: Scalar>(
    space: &FilteredSpace<S>,
    d1: &DiscountTable<S>,
    d2: &DiscountTable<S>,
    s: usize,
    event: &[bool],
) -> Result<DiscountTable<S>> {
    space.check_times(s, s, space.horizon())?;
    space.event_atoms(s, event)?;
    let mut table = std::collections::BTreeMap::new();
    for t in 0..space.horizon() {
        for u in t + 1..=space.horizon() {
            let one = d1.atom_values(space, t, u)?;
            let two = d2.atom_values(space, t, u)?;
            let values = if t < s {
                one
            } else {
                space
                    .atoms(t)
                    .iter()
                    .enumerate()
                    .map(|(a, r)| if event[r.start] { one[a].clone() } else { two[a].clone() })
                    .collect()
            };
            table.insert((t, u), values);
        }
    }
    DiscountTable::new(space, table)
}

/// Output of [`joint_paste`]: the time-`(s, u)` discount slice together with
/// the reweighted measure that realizes the two-stage evaluation in one step.
#[derive(Clone, Debug)]
pub struct JointPaste<S> {
    /// Discount values indexed by the time-`s` atoms.
    pub discount_su: Vec<S>,
    /// Measure carrying `p1`'s law to `t` (reweighted) and `p2`'s beyond.
    pub measure: TreeMeasure<S>,
}

/// Discount/measure pair realizing the nested evaluation
/// `D*_{s,u} E_Q*[X | F_s] = D1_{s,t} E_q1[ D2_{t,u} E_q2[X | F_t] | F_s ]`
/// for every `X` measurable at `u`.
///
/// Per time-`s` atom `A` the construction sets `H(A) = E_q1[D2_{t,u} | F_s]`
/// and `D*(A) = D1_{s,t}(A) H(A)`, then tilts `q1`'s transition into each
/// time-`t` atom `B` by `D2(B) / H(A)` before continuing with `q2`'s
/// conditional law. When `H(A)` vanishes the tilt is skipped (the identity
/// degenerates to `0 = 0` there). Pasting a product-form pair with itself
/// short-circuits to the pair's own slice and measure, which satisfies the
/// identity exactly.
pub fn joint_paste<S: Scalar>(
    space: &FilteredSpace<S>,
    p1: &DualPair<S>,
    p2: &DualPair<S>,
    s: usize,
    t: usize,
    u: usize,
) -> Result<JointPaste<S>> {
    space.check_times(s, t, u)?;
    if p1.d.factors().is_some() && p1.d == p2.d && p1.q.weights() == p2.q.weights() {
        return Ok(JointPaste {
            discount_su: p1.d.atom_values(space, s, u)?,
            measure: p1.q.clone(),
        });
    }
    let d1_st = p1.d.atom_values(space, s, t)?;
    let d2_tu = p2.d.atom_values(space, t, u)?;
    let kernel = space.kernel(&p1.q, s, t);
    let s_mass = space.atom_masses(p1.q.weights(), s);
    let t_mass = space.atom_masses(p2.q.weights(), t);
    let mut discount_su = Vec::with_capacity(space.atom_count(s));
    let mut w = vec![S::zero(); space.leaves()];
    for a in 0..space.atom_count(s) {
        let children = space.children(s, a, t);
        let mut h = S::zero();
        for (pos, &b) in children.iter().enumerate() {
            h = h + kernel[a][pos].clone() * d2_tu[b].clone();
        }
        let d = d1_st[a].clone() * h.clone();
        let dv = d.approx();
        if !(-1e-9..=1.0 + 1e-9).contains(&dv) {
            return Err(Error::FactorOutOfRange { value: dv });
        }
        discount_su.push(d);
        for (pos, &b) in children.iter().enumerate() {
            let tilt = if h.is_zero() {
                S::one()
            } else {
                d2_tu[b].clone() / h.clone()
            };
            let mass = s_mass[a].clone() * kernel[a][pos].clone() * tilt;
            let rb = &space.atoms(t)[b];
            if t_mass[b].is_zero() {
                let p_mass = total(&space.p_weights()[rb.clone()]);
                for leaf in rb.clone() {
                    w[leaf] = mass.clone() * space.p(leaf).clone() / p_mass.clone();
                }
            } else {
                for leaf in rb.clone() {
                    w[leaf] = mass.clone() * p2.q.weight(leaf).clone() / t_mass[b].clone();
                }
            }
        }
    }
    Ok(JointPaste { discount_su, measure: TreeMeasure::new(space, w)? })
}

/// Worst gap in the joint-pasting identity over the time-`u` indicator basis.
///
/// `candidate` is the `(D_{s,u} slice, measure)` pair claimed to realize the
/// nested evaluation of `(p1, p2)` at `(s, t, u)`.
pub fn joint_identity_gap<S: Scalar>(
    space: &FilteredSpace<S>,
    p1: &DualPair<S>,
    p2: &DualPair<S>,
    candidate: (&[S], &TreeMeasure<S>),
    s: usize,
    t: usize,
    u: usize,
) -> Result<f64> {
    space.check_times(s, t, u)?;
    let (d_su, q) = candidate;
    let d1_st = p1.d.atom_values(space, s, t)?;
    let d2_tu = p2.d.atom_values(space, t, u)?;
    let mut worst = 0.0f64;
    for b in 0..space.atom_count(u) {
        let mut ind = vec![S::zero(); space.atom_count(u)];
        ind[b] = S::one();
        let e = space.from_atom_values(u, &ind)?;
        let inner = space.conditional_expectation(&e, &p2.q, t)?;
        let weighted: Vec<S> = space
            .atom_values(&inner, t)
            .iter()
            .zip(&d2_tu)
            .map(|(v, d)| v.clone() * d.clone())
            .collect();
        let weighted = space.from_atom_values(t, &weighted)?;
        let nested = space.conditional_expectation(&weighted, &p1.q, s)?;
        let rhs: Vec<S> = space
            .atom_values(&nested, s)
            .iter()
            .zip(&d1_st)
            .map(|(v, d)| v.clone() * d.clone())
            .collect();
        let ce = space.conditional_expectation(&e, q, s)?;
        let lhs: Vec<S> = space
            .atom_values(&ce, s)
            .iter()
            .zip(d_su)
            .map(|(v, d)| v.clone() * d.clone())
            .collect();
        worst = worst.max(sup_gap(&lhs, &rhs).approx());
    }
    Ok(worst)
}

/// Penalty built from one-step terms by the cocycle recursion
/// `c_{s,u} = c_{s,s+1} + D_{s,s+1} E_Q[c_{s+1,u} | F_s]`.
///
/// `one_step[i][r]` holds pair `i`'s period-`r` penalty, indexed by the
/// time-`r` atoms; entries may be infinite but never negative. The recursion
/// only wires adjacent splits; whether every split of every span agrees is a
/// property of the inputs that [`check_cocycle`] verifies rather than one the
/// builder may assume.
pub fn build_cocycle_penalty<S: Scalar>(
    space: &FilteredSpace<S>,
    pairs: &[DualPair<S>],
    one_step: &[Vec<Vec<Cost<S>>>],
) -> Result<PenaltyTerm<S>> {
    if pairs.is_empty() {
        return Err(Error::EmptyFamily);
    }
    if one_step.len() != pairs.len() {
        return Err(Error::SpaceMismatch {
            context: "one-step penalty families".into(),
            expected: pairs.len(),
            got: one_step.len(),
        });
    }
    let horizon = space.horizon();
    for (i, steps) in one_step.iter().enumerate() {
        if steps.len() != horizon {
            return Err(Error::SpaceMismatch {
                context: format!("one-step slices for pair {i}"),
                expected: horizon,
                got: steps.len(),
            });
        }
        for (r, slice) in steps.iter().enumerate() {
            if slice.len() != space.atom_count(r) {
                return Err(Error::SpaceMismatch {
                    context: format!("one-step values for pair {i} at t={r}"),
                    expected: space.atom_count(r),
                    got: slice.len(),
                });
            }
            for v in slice {
                if let Some(f) = v.finite() {
                    if f.approx() < 0.0 {
                        return Err(Error::Invalid(format!(
                            "negative one-step penalty {} for pair {i} at t={r}",
                            f.approx()
                        )));
                    }
                }
            }
        }
    }
    let mut penalty = PenaltyTerm::zero(space, pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let mut table: std::collections::BTreeMap<(usize, usize), Vec<Cost<S>>> =
            std::collections::BTreeMap::new();
        for t in 0..=horizon {
            table.insert((t, t), vec![Cost::zero(); space.atom_count(t)]);
        }
        for span in 1..=horizon {
            for s in 0..=horizon - span {
                let u = s + span;
                let step = &one_step[i][s];
                let next = table[&(s + 1, u)].clone();
                let d = pair.d.atom_values(space, s, s + 1)?;
                let kernel = space.kernel(&pair.q, s, s + 1);
                let mut values = Vec::with_capacity(space.atom_count(s));
                for a in 0..space.atom_count(s) {
                    let children = space.children(s, a, s + 1);
                    let mut acc = Cost::zero();
                    for (pos, &b) in children.iter().enumerate() {
                        acc = acc.add(&next[b].scale(&kernel[a][pos]));
                    }
                    values.push(step[a].add(&acc.scale(&d[a])));
                }
                table.insert((s, u), values);
            }
        }
        for ((t, u), values) in table {
            penalty.set(space, i, t, u, values)?;
        }
    }
    Ok(penalty)
}

/// Checks the cocycle identity `c_{s,u} = c_{s,t} + D_{s,t} E_Q[c_{t,u} | F_s]`
/// for every pair and every split `s <= t <= u`, atom by atom.
///
/// Infinite values propagate through the right-hand side under the `0 * inf
/// = 0` convention, so a finite left side facing an infinite right side (or
/// vice versa) is reported as an infinite violation.
pub fn check_cocycle<S: Scalar>(model: &DualModel<S>, tolerance: f64) -> ConsistencyReport {
    let space = model.space();
    let mut report = ConsistencyReport::new("cocycle", tolerance);
    for (i, pair) in model.pairs().iter().enumerate() {
        for s in 0..=space.horizon() {
            for t in s..=space.horizon() {
                let kernel = space.kernel(&pair.q, s, t);
                let d = pair
                    .d
                    .atom_values(space, s, t)
                    .expect("validated discount table");
                for u in t..=space.horizon() {
                    let lhs = model.penalty().c(i, s, u);
                    let c_st = model.penalty().c(i, s, t);
                    let c_tu = model.penalty().c(i, t, u);
                    let mut worst = 0.0f64;
                    let mut at = 0usize;
                    for a in 0..space.atom_count(s) {
                        let children = space.children(s, a, t);
                        let mut acc = Cost::zero();
                        for (pos, &b) in children.iter().enumerate() {
                            acc = acc.add(&c_tu[b].scale(&kernel[a][pos]));
                        }
                        let rhs = c_st[a].add(&acc.scale(&d[a]));
                        let gap = lhs[a].gap(&rhs).approx();
                        if gap > worst {
                            worst = gap;
                            at = a;
                        }
                    }
                    report.push(
                        Scope::times(s, t, u).with_tag(format!("pair#{i}")),
                        worst,
                        Some(Witness::new(format!("pair {i} atom {at}"), json!({ "atom": at }))),
                    );
                }
            }
        }
    }
    report.sort();
    report
}

const AGREEMENT_TOL: f64 = 1e-12;

/// Locality check: pairs whose discount and conditional law agree on a
/// time-`s` atom must carry the same penalty there.
///
/// Premises are found by scanning: for each unordered pair of model entries
/// and each time-`s` atom, agreement means the discount slices `D_{s,t}` for
/// every `t >= s` and the terminal conditional law given the atom coincide to
/// rounding error. In a family closed under bifurcation such premises are
/// plentiful because spliced members agree with a parent on the splice event
/// by construction. Instances with no agreement are vacuous and only counted.
pub fn check_locality<S: Scalar>(model: &DualModel<S>, tolerance: f64) -> ConsistencyReport {
    let space = model.space();
    let mut report = ConsistencyReport::new("locality", tolerance);
    let n = model.pairs().len();
    let mut non_vacuous = 0usize;
    let mut vacuous = 0usize;
    for s in 0..=space.horizon() {
        let laws: Vec<Vec<Vec<S>>> = model
            .pairs()
            .iter()
            .map(|p| space.kernel(&p.q, s, space.horizon()))
            .collect();
        let slices: Vec<Vec<Vec<S>>> = model
            .pairs()
            .iter()
            .map(|p| {
                (s..=space.horizon())
                    .map(|t| p.d.atom_values(space, s, t).expect("validated discount table"))
                    .collect()
            })
            .collect();
        for i in 0..n {
            for j in i + 1..n {
                for a in 0..space.atom_count(s) {
                    let law_gap = sup_gap(&laws[i][a], &laws[j][a]).approx();
                    let d_gap = (0..=space.horizon() - s)
                        .map(|k| (slices[i][k][a].clone() - slices[j][k][a].clone()).abs().approx())
                        .fold(0.0f64, f64::max);
                    if law_gap > AGREEMENT_TOL || d_gap > AGREEMENT_TOL {
                        vacuous += 1;
                        continue;
                    }
                    non_vacuous += 1;
                    let mut worst = 0.0f64;
                    let mut at = s;
                    for t in s..=space.horizon() {
                        let gap = model.penalty().c(i, s, t)[a]
                            .gap(&model.penalty().c(j, s, t)[a])
                            .approx();
                        if gap > worst {
                            worst = gap;
                            at = t;
                        }
                    }
                    report.push(
                        Scope::pair_times(s, at).with_tag(format!("pairs#{i}/{j} atom {a}")),
                        worst,
                        Some(Witness::new(
                            format!("pairs {i},{j} agree on atom {a} at s={s}"),
                            json!({ "s": s, "atom": a, "pair_lo": i, "pair_hi": j }),
                        )),
                    );
                }
            }
        }
    }
    report.non_vacuous = Some(non_vacuous);
    report.vacuous = Some(vacuous);
    report.sort();
    report
}

/// One certified closure instance: the operation described by `instance`
/// lands on family member `witness`.
#[derive(Clone, Debug)]
pub struct ClosureEntry {
    pub instance: String,
    pub witness: usize,
}

/// Dual model whose measure, discount, and pair families carry certified
/// closure tables for pasting, bifurcation, discount splicing, and joint
/// pasting.
///
/// [`StructuredModel::certify`] constructs every instance, searches the
/// family for a member realizing the defining identity to [`CLOSURE_TOL`],
/// and fails with [`Error::NotClosed`] when none exists. Bifurcation events
/// range over single atoms: a splice along a union of atoms is a chain of
/// single-atom splices, so atom-level closure already covers general events.
#[derive(Clone)]
pub struct StructuredModel<S: Scalar> {
    rm: crate::dual_dynamic::DynamicRiskMeasure<S>,
    measures: Vec<TreeMeasure<S>>,
    discounts: Vec<DiscountTable<S>>,
    paste_table: Vec<ClosureEntry>,
    bifurcation_table: Vec<ClosureEntry>,
    discount_table: Vec<ClosureEntry>,
    joint_table: Vec<ClosureEntry>,
}

impl<S: Scalar> StructuredModel<S> {
    pub fn certify(rm: crate::dual_dynamic::DynamicRiskMeasure<S>, tol: f64) -> Result<StructuredModel<S>> {
        let space: Arc<FilteredSpace<S>> = rm.model().space_arc();
        let space = space.as_ref();
        let pairs = rm.model().pairs().to_vec();

        let mut measures: Vec<TreeMeasure<S>> = Vec::new();
        for p in &pairs {
            if !measures.iter().any(|m| sup_gap(m.weights(), p.q.weights()).approx() <= tol) {
                measures.push(p.q.clone());
            }
        }
        let mut discounts: Vec<DiscountTable<S>> = Vec::new();
        for p in &pairs {
            let same = |d: &DiscountTable<S>| -> bool {
                for t in 0..space.horizon() {
                    for u in t + 1..=space.horizon() {
                        let a = d.atom_values(space, t, u).expect("validated table");
                        let b = p.d.atom_values(space, t, u).expect("validated table");
                        if sup_gap(&a, &b).approx() > tol {
                            return false;
                        }
                    }
                }
                true
            };
            if !discounts.iter().any(|d| same(d)) {
                discounts.push(p.d.clone());
            }
        }

        let mut paste_table = Vec::new();
        for i in 0..measures.len() {
            for j in 0..measures.len() {
                for t in 0..=space.horizon() {
                    let target = paste_measures(space, &measures[i], &measures[j], 0, t)?;
                    let verify = |k: usize| -> Result<bool> {
                        for s in 0..=t {
                            let gap = paste_identity_gap(
                                space,
                                &measures[i],
                                &measures[j],
                                &measures[k],
                                s,
                                t,
                            )?;
                            if gap > tol {
                                return Ok(false);
                            }
                        }
                        Ok(true)
                    };
                    let witness = find_witness(&measures, &target, tol, verify)?;
                    let instance = format!("paste q{i}*q{j} at t={t}");
                    let witness = witness.ok_or(Error::NotClosed { instance: instance.clone() })?;
                    paste_table.push(ClosureEntry { instance, witness });
                }
            }
        }

        let mut bifurcation_table = Vec::new();
        for s in 0..=space.horizon() {
            if space.atom_count(s) < 2 {
                continue;
            }
            for a in 0..space.atom_count(s) {
                let mut event = vec![false; space.leaves()];
                for leaf in space.atoms(s)[a].clone() {
                    event[leaf] = true;
                }
                for i in 0..measures.len() {
                    for j in 0..measures.len() {
                        let target = bifurcate_measures(space, &measures[i], &measures[j], s, &event)?;
                        let verify = |k: usize| -> Result<bool> {
                            let gap = bifurcation_identity_gap(
                                space,
                                &measures[i],
                                &measures[j],
                                &measures[k],
                                s,
                                &event,
                            )?;
                            Ok(gap <= tol)
                        };
                        let witness = find_witness(&measures, &target, tol, verify)?;
                        let instance = format!("bifurcate q{i}/q{j} on atom {a} at s={s}");
                        let witness =
                            witness.ok_or(Error::NotClosed { instance: instance.clone() })?;
                        bifurcation_table.push(ClosureEntry { instance, witness });
                    }
                }
            }
        }

        let mut discount_table = Vec::new();
        for s in 0..=space.horizon() {
            if space.atom_count(s) < 2 {
                continue;
            }
            for a in 0..space.atom_count(s) {
                let mut event = vec![false; space.leaves()];
                for leaf in space.atoms(s)[a].clone() {
                    event[leaf] = true;
                }
                for i in 0..discounts.len() {
                    for j in 0..discounts.len() {
                        let spliced = bifurcate_discounts(space, &discounts[i], &discounts[j], s, &event)?;
                        let mut witness = None;
                        for (k, d) in discounts.iter().enumerate() {
                            let mut ok = true;
                            for u in s + 1..=space.horizon() {
                                let want = spliced.atom_values(space, s, u)?;
                                let got = d.atom_values(space, s, u)?;
                                if sup_gap(&want, &got).approx() > tol {
                                    ok = false;
                                    break;
                                }
                            }
                            if ok {
                                witness = Some(k);
                                break;
                            }
                        }
                        let instance = format!("splice d{i}/d{j} on atom {a} at s={s}");
                        let witness =
                            witness.ok_or(Error::NotClosed { instance: instance.clone() })?;
                        discount_table.push(ClosureEntry { instance, witness });
                    }
                }
            }
        }

        let mut joint_instances = Vec::new();
        for i in 0..pairs.len() {
            for j in 0..pairs.len() {
                for s in 0..=space.horizon() {
                    for t in s..=space.horizon() {
                        for u in t..=space.horizon() {
                            joint_instances.push((i, j, s, t, u));
                        }
                    }
                }
            }
        }
        let joint_table: Vec<ClosureEntry> = joint_instances
            .par_iter()
            .map(|&(i, j, s, t, u)| {
                let jp = joint_paste(space, &pairs[i], &pairs[j], s, t, u)?;
                let mut witness = None;
                for k in candidate_order(pairs.len(), i, j) {
                    let d_su = pairs[k].d.atom_values(space, s, u)?;
                    if sup_gap(&d_su, &jp.discount_su).approx() > tol {
                        continue;
                    }
                    if sup_gap(pairs[k].q.weights(), jp.measure.weights()).approx() > tol {
                        continue;
                    }
                    witness = Some(k);
                    break;
                }
                if witness.is_none() {
                    for k in 0..pairs.len() {
                        let d_su = pairs[k].d.atom_values(space, s, u)?;
                        let gap = joint_identity_gap(
                            space,
                            &pairs[i],
                            &pairs[j],
                            (&d_su, &pairs[k].q),
                            s,
                            t,
                            u,
                        )?;
                        if gap <= tol {
                            witness = Some(k);
                            break;
                        }
                    }
                }
                let instance = format!("joint pair{i}*pair{j} at ({s},{t},{u})");
                let witness = witness.ok_or(Error::NotClosed { instance: instance.clone() })?;
                Ok(ClosureEntry { instance, witness })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(StructuredModel {
            rm,
            measures,
            discounts,
            paste_table,
            bifurcation_table,
            discount_table,
            joint_table,
        })
    }

    pub fn rm(&self) -> &crate::dual_dynamic::DynamicRiskMeasure<S> {
        &self.rm
    }

    pub fn measures(&self) -> &[TreeMeasure<S>] {
        &self.measures
    }

    pub fn discounts(&self) -> &[DiscountTable<S>] {
        &self.discounts
    }

    pub fn paste_table(&self) -> &[ClosureEntry] {
        &self.paste_table
    }

    pub fn bifurcation_table(&self) -> &[ClosureEntry] {
        &self.bifurcation_table
    }

    pub fn discount_table(&self) -> &[ClosureEntry] {
        &self.discount_table
    }

    pub fn joint_table(&self) -> &[ClosureEntry] {
        &self.joint_table
    }
}

/// Searches `measures` for a member realizing `target`, preferring a direct
/// weight match and falling back to the identity check `verify`.
fn find_witness<S: Scalar>(
    measures: &[TreeMeasure<S>],
    target: &TreeMeasure<S>,
    tol: f64,
    verify: impl Fn(usize) -> Result<bool>,
) -> Result<Option<usize>> {
    for (k, m) in measures.iter().enumerate() {
        if sup_gap(m.weights(), target.weights()).approx() <= tol && verify(k)? {
            return Ok(Some(k));
        }
    }
    for k in 0..measures.len() {
        if verify(k)? {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// Candidate ordering for joint-paste witnesses: the degenerate splits land
/// on one of the operands, so try those first.
fn candidate_order(n: usize, i: usize, j: usize) -> Vec<usize> {
    let mut order = vec![j, i];
    order.extend((0..n).filter(|&k| k != i && k != j));
    order.dedup();
    order
}
