//! Time-consistency checkers for dynamic risk measures on finite trees.
//!
//! Three nested notions are tested, each quantified nodewise over tree atoms:
//!
//! * **strong** (recursive): `rho_{s,t}(-rho_{t,u}(X)) = rho_{s,u}(X)` for
//!   every `s <= t <= u`,
//! * **weak**: `rho_{t,u}(X) >= rho_{t,u}(Y)` everywhere implies
//!   `rho_{s,u}(X) >= rho_{s,u}(Y)` for every `s <= t`,
//! * **weak-star**: equality of `rho_{t,u}(X)` and `rho_{t,u}(Y)` everywhere
//!   implies equality at every earlier date.
//!
//! The weak and weak-star conclusions are quantified over dates `s <= t`: a
//! premise observed at `t` binds every earlier evaluation of the same pair.
//! [`verify_theorem_tc`] ties the structural closure certificates of
//! [`StructuredModel`] to the strong property, and [`check_tc_implications`]
//! exercises the implication lattice together with its one-sided remnants.
//! [`put_premium_model`] supplies the standard witness separating weak from
//! strong consistency.

use std::sync::Arc;

use serde_json::json;

use crate::dual_dynamic::{
    DiscountTable, DualModel, DualPair, DynamicFunctional, DynamicRiskMeasure, ModelOptions,
    PenaltyTerm,
};
use crate::error::{Error, Result};
use crate::report::{ConsistencyReport, Scope, Witness};
use crate::scalar::{sup_gap, total, Scalar};
use crate::structure::{check_cocycle, check_locality, StructuredModel};
use crate::tree::{AdaptedProcess, FilteredSpace, RandomVariable, TreeMeasure};

/// Tolerances and floors shared by the consistency checkers.
#[derive(Clone, Copy, Debug)]
pub struct TcOptions {
    /// Slack when deciding whether a nodewise premise holds.
    pub premise_slack: f64,
    /// Tolerance for the conclusion inequality or equality.
    pub tolerance: f64,
    /// Minimum number of non-vacuous premise instances required; fewer is an
    /// error, not a pass.
    pub min_non_vacuous: usize,
}

impl Default for TcOptions {
    fn default() -> TcOptions {
        TcOptions { premise_slack: 1e-9, tolerance: 1e-7, min_non_vacuous: 1 }
    }
}

/// Projects each battery member onto every date via conditional expectation
/// under the reference weights, so a terminal payoff can be tested at
/// intermediate evaluation dates.
fn projections<S: Scalar>(
    space: &FilteredSpace<S>,
    battery: &[RandomVariable<S>],
) -> Result<Vec<Vec<RandomVariable<S>>>> {
    let p = TreeMeasure::p_measure(space);
    battery
        .iter()
        .map(|x| {
            (0..=space.horizon())
                .map(|u| space.conditional_expectation(x, &p, u))
                .collect()
        })
        .collect()
}

/// Recursive consistency: `rho_{s,t}(-rho_{t,u}(X))` must match
/// `rho_{s,u}(X)` atom by atom for every triple `s <= t <= u` and every
/// battery member, projected to be measurable at `u`.
pub fn check_strong_tc<S: Scalar, F: DynamicFunctional<S>>(
    rm: &F,
    battery: &[RandomVariable<S>],
    tolerance: f64,
) -> Result<ConsistencyReport> {
    let space = rm.space();
    if battery.is_empty() {
        return Err(Error::EmptyBattery);
    }
    let proj = projections(space, battery)?;
    let mut report = ConsistencyReport::new("strong-tc", tolerance);
    for s in 0..=space.horizon() {
        for t in s..=space.horizon() {
            for u in t..=space.horizon() {
                let mut worst = 0.0f64;
                let mut at = 0usize;
                for (k, per_date) in proj.iter().enumerate() {
                    let x = &per_date[u];
                    let inner = rm.rho(x, t, u)?;
                    let chained = rm.rho(&inner.neg(), s, t)?;
                    let direct = rm.rho(x, s, u)?;
                    let gap = sup_gap(chained.values(), direct.values()).approx();
                    if gap > worst {
                        worst = gap;
                        at = k;
                    }
                }
                report.push(
                    Scope::times(s, t, u),
                    worst,
                    Some(Witness::new(format!("battery[{at}]"), json!({ "battery": at }))),
                );
            }
        }
    }
    report.sort();
    Ok(report)
}

/// Nodewise comparison outcome of two level-compatible variables.
fn dominates<S: Scalar>(a: &RandomVariable<S>, b: &RandomVariable<S>, slack: f64) -> bool {
    a.values()
        .iter()
        .zip(b.values())
        .all(|(x, y)| (x.clone() - y.clone()).approx() >= -slack)
}

/// Monotone consistency: a nodewise premise `rho_{t,u}(X) >= rho_{t,u}(Y)`
/// must persist at every earlier date `s <= t`.
///
/// Each `(pair, t, u)` instance resolves its own premise direction: if the
/// premise holds one way the matching conclusion is tested, if it holds both
/// ways (equality) both are, and if neither direction holds the instance is
/// vacuous and only counted. The report records non-vacuous and vacuous
/// instance counts; fewer non-vacuous instances than the configured floor is
/// an error rather than a silent pass.
pub fn check_weak_tc<S: Scalar, F: DynamicFunctional<S>>(
    rm: &F,
    pairs: &[(RandomVariable<S>, RandomVariable<S>)],
    opts: &TcOptions,
) -> Result<ConsistencyReport> {
    check_monotone(rm, pairs, opts, false)
}

/// Equality-premise consistency: `rho_{t,u}(X) = rho_{t,u}(Y)` everywhere
/// must persist at every earlier date `s <= t`.
///
/// Same instance accounting as [`check_weak_tc`] with the premise tightened
/// to a two-sided bound.
pub fn check_weak_star_tc<S: Scalar, F: DynamicFunctional<S>>(
    rm: &F,
    pairs: &[(RandomVariable<S>, RandomVariable<S>)],
    opts: &TcOptions,
) -> Result<ConsistencyReport> {
    check_monotone(rm, pairs, opts, true)
}

fn check_monotone<S: Scalar, F: DynamicFunctional<S>>(
    rm: &F,
    pairs: &[(RandomVariable<S>, RandomVariable<S>)],
    opts: &TcOptions,
    equality: bool,
) -> Result<ConsistencyReport> {
    let space = rm.space();
    if pairs.is_empty() {
        // No pairs at all is the degenerate case of too few usable
        // premises, so it reports through the same error.
        return Err(Error::InsufficientNonVacuousPairs {
            found: 0,
            needed: opts.min_non_vacuous.max(1),
        });
    }
    let p = TreeMeasure::p_measure(space);
    let name = if equality { "weak-star-tc" } else { "weak-tc" };
    let mut report = ConsistencyReport::new(name, opts.tolerance);
    let mut non_vacuous = 0usize;
    let mut vacuous = 0usize;
    for (k, (x, y)) in pairs.iter().enumerate() {
        for u in 1..=space.horizon() {
            let xu = space.conditional_expectation(x, &p, u)?;
            let yu = space.conditional_expectation(y, &p, u)?;
            for t in 1..=u {
                let rx = rm.rho(&xu, t, u)?;
                let ry = rm.rho(&yu, t, u)?;
                let fwd = dominates(&rx, &ry, opts.premise_slack);
                let bwd = dominates(&ry, &rx, opts.premise_slack);
                let live = if equality { fwd && bwd } else { fwd || bwd };
                if !live {
                    vacuous += 1;
                    continue;
                }
                non_vacuous += 1;
                let mut worst = 0.0f64;
                let mut at = 0usize;
                for s in 0..t {
                    let rxs = rm.rho(&xu, s, u)?;
                    let rys = rm.rho(&yu, s, u)?;
                    let gap = if equality {
                        sup_gap(rxs.values(), rys.values()).approx()
                    } else {
                        let fwd_gap = if fwd { overshoot(&rys, &rxs) } else { 0.0 };
                        let bwd_gap = if bwd { overshoot(&rxs, &rys) } else { 0.0 };
                        fwd_gap.max(bwd_gap)
                    };
                    if gap > worst {
                        worst = gap;
                        at = s;
                    }
                }
                report.push(
                    Scope::pair_times(t, u).with_tag(format!("pair#{k}")),
                    worst,
                    Some(Witness::new(
                        format!("pair {k} at s={at}"),
                        json!({ "pair": k, "s": at, "forward": fwd, "backward": bwd }),
                    )),
                );
            }
        }
    }
    report.non_vacuous = Some(non_vacuous);
    report.vacuous = Some(vacuous);
    if non_vacuous < opts.min_non_vacuous {
        return Err(Error::InsufficientNonVacuousPairs {
            found: non_vacuous,
            needed: opts.min_non_vacuous,
        });
    }
    report.sort();
    Ok(report)
}

/// Largest amount by which `a` exceeds `b` anywhere, clipped at zero.
fn overshoot<S: Scalar>(a: &RandomVariable<S>, b: &RandomVariable<S>) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x.clone() - y.clone()).approx())
        .fold(0.0f64, f64::max)
        .max(0.0)
}

/// Constancy: a level known at the evaluation date must price to its own
/// negation, `rho_{t,T}(m) = -m` for `m` measurable at `t`.
///
/// Battery entries carry their evaluation date explicitly; an entry finer
/// than its date is rejected with [`Error::NotAdapted`].
pub fn check_constancy<S: Scalar, F: DynamicFunctional<S>>(
    rm: &F,
    levels: &[(usize, RandomVariable<S>)],
    tolerance: f64,
) -> Result<ConsistencyReport> {
    let space = rm.space();
    if levels.is_empty() {
        return Err(Error::EmptyBattery);
    }
    let mut report = ConsistencyReport::new("constancy", tolerance);
    for (k, (t, m)) in levels.iter().enumerate() {
        if m.level() > *t {
            return Err(Error::NotAdapted { t: *t, level: m.level() });
        }
        let r = rm.rho(m, *t, space.horizon())?;
        let violation = r
            .values()
            .iter()
            .zip(m.values())
            .map(|(a, b)| (a.clone() + b.clone()).abs().approx())
            .fold(0.0f64, f64::max);
        report.push(
            Scope::pair_times(*t, space.horizon()).with_tag(format!("level#{k}")),
            violation,
            Some(Witness::new(
                format!("level {k} at t={t}"),
                json!({ "level": k, "t": t, "range": [m.min_value().approx(), m.max_value().approx()] }),
            )),
        );
    }
    report.sort();
    Ok(report)
}

/// Conditions checked by [`verify_theorem_tc`] before it tests recursivity.
const CONDITION_EQUIVALENCE: &str = "measure-equivalence";
const CONDITION_PASTE: &str = "measure-pasting-closure";
const CONDITION_BIFURCATE: &str = "measure-bifurcation-closure";
const CONDITION_DISCOUNT: &str = "discount-bifurcation-closure";
const CONDITION_JOINT: &str = "joint-pasting-closure";
const CONDITION_PENALTY: &str = "penalty-nonnegative";
const CONDITION_LOCALITY: &str = "penalty-locality";
const CONDITION_COCYCLE: &str = "penalty-cocycle";

/// Runs the full battery of structural conditions on a certified model and,
/// once they all hold, tests recursivity itself.
///
/// The closure certificates come from [`StructuredModel::certify`]; this
/// function re-reports them as verdict items, adds measure equivalence,
/// penalty sign, locality, and the cocycle identity, and refuses with
/// [`Error::PreconditionNotMet`] if any structural condition fails. With the
/// hypotheses in place a strong-consistency failure is flagged in the notes
/// as a defect of the model construction: the structural conditions are
/// exactly what forces recursivity, so a violation here means the model does
/// not satisfy what its certificates claim.
pub fn verify_theorem_tc<S: Scalar>(
    sm: &StructuredModel<S>,
    battery: &[RandomVariable<S>],
    tolerance: f64,
) -> Result<ConsistencyReport> {
    let rm = sm.rm();
    let model = rm.model();
    let space = model.space();
    let mut report = ConsistencyReport::new("theorem-tc", tolerance);
    let mut failed: Vec<&str> = Vec::new();

    let mut bad_measure = None;
    for (i, m) in sm.measures().iter().enumerate() {
        if !m.equivalent_to_p() {
            bad_measure = Some(i);
            break;
        }
    }
    let equiv_violation = if bad_measure.is_some() { 1.0 } else { 0.0 };
    report.push(
        Scope::tag(CONDITION_EQUIVALENCE),
        equiv_violation,
        Some(Witness::new("measure family", json!({ "offender": bad_measure }))),
    );
    if bad_measure.is_some() {
        failed.push(CONDITION_EQUIVALENCE);
    }

    for (name, table) in [
        (CONDITION_PASTE, sm.paste_table()),
        (CONDITION_BIFURCATE, sm.bifurcation_table()),
        (CONDITION_DISCOUNT, sm.discount_table()),
        (CONDITION_JOINT, sm.joint_table()),
    ] {
        report.push(
            Scope::tag(name),
            0.0,
            Some(Witness::new("closure certificate", json!({ "instances": table.len() }))),
        );
    }

    let mut min_penalty = 0.0f64;
    for i in 0..model.pairs().len() {
        for t in 0..=space.horizon() {
            for u in t..=space.horizon() {
                for c in model.penalty().c(i, t, u) {
                    if let Some(v) = c.finite() {
                        min_penalty = min_penalty.min(v.approx());
                    }
                }
            }
        }
    }
    let penalty_violation = (-min_penalty).max(0.0);
    report.push(
        Scope::tag(CONDITION_PENALTY),
        penalty_violation,
        Some(Witness::new("penalty sign", json!({ "min": min_penalty }))),
    );
    if penalty_violation > tolerance {
        failed.push(CONDITION_PENALTY);
    }

    let locality = check_locality(model, tolerance);
    report.push(
        Scope::tag(CONDITION_LOCALITY),
        locality.worst_violation(),
        Some(Witness::new(
            "locality sweep",
            json!({
                "non_vacuous": locality.non_vacuous,
                "worst": locality.worst().map(|i| i.scope.render()),
            }),
        )),
    );
    if !locality.passed() {
        failed.push(CONDITION_LOCALITY);
    }

    let cocycle = check_cocycle(model, tolerance);
    report.push(
        Scope::tag(CONDITION_COCYCLE),
        cocycle.worst_violation(),
        Some(Witness::new(
            "cocycle sweep",
            json!({ "worst": cocycle.worst().map(|i| i.scope.render()) }),
        )),
    );
    if !cocycle.passed() {
        failed.push(CONDITION_COCYCLE);
    }

    if !failed.is_empty() {
        return Err(Error::PreconditionNotMet { failed: failed.join(", ") });
    }

    let strong = check_strong_tc(rm, battery, tolerance)?;
    let recursivity = strong.worst_violation();
    report.push(
        Scope::tag("recursivity"),
        recursivity,
        Some(Witness::new(
            "strong consistency",
            json!({ "worst": strong.worst().map(|i| i.scope.render()) }),
        )),
    );
    if recursivity > tolerance {
        report
            .notes
            .push("structural conditions hold but recursivity failed: treat this as a defect in the model construction, not as a counterexample".into());
        for item in strong.items.into_iter().filter(|i| !i.pass) {
            report.push_item(item);
        }
    }
    report.notes.push(format!(
        "closure certificates: {} paste, {} bifurcation, {} discount, {} joint",
        sm.paste_table().len(),
        sm.bifurcation_table().len(),
        sm.discount_table().len(),
        sm.joint_table().len()
    ));
    report.sort();
    Ok(report)
}

/// Implication lattice between the consistency notions, plus the one-sided
/// inequalities that survive when only monotone consistency is available.
///
/// Conditional claims are scored as implications: an item's violation is the
/// consequent's worst violation when the antecedent holds and zero (vacuous)
/// otherwise. The one-sided items compare `rho_{s,u}(X)` against
/// `rho_{s,t}(-rho_{t,u}(X))` on battery members whose intermediate value has
/// a definite sign: everywhere nonpositive values force `<=`, everywhere
/// nonnegative values force `>=`, and mixed signs are skipped as vacuous.
pub fn check_tc_implications<S: Scalar, F: DynamicFunctional<S>>(
    rm: &F,
    battery: &[RandomVariable<S>],
    pairs: &[(RandomVariable<S>, RandomVariable<S>)],
    opts: &TcOptions,
) -> Result<ConsistencyReport> {
    let space = rm.space();
    let sub_opts = TcOptions { min_non_vacuous: 0, ..*opts };
    let strong = check_strong_tc(rm, battery, opts.tolerance)?;
    let weak = check_weak_tc(rm, pairs, &sub_opts)?;
    let weak_star = check_weak_star_tc(rm, pairs, &sub_opts)?;
    let levels = constancy_levels(space, battery)?;
    let constancy = check_constancy(rm, &levels, opts.tolerance)?;

    let mut report = ConsistencyReport::new("tc-implications", opts.tolerance);
    let implication = |holds: bool, consequent: &ConsistencyReport| -> f64 {
        if holds {
            consequent.worst_violation()
        } else {
            0.0
        }
    };
    report.push(
        Scope::tag("strong-implies-weak"),
        implication(strong.passed(), &weak),
        Some(Witness::new(
            "implication",
            json!({
                "antecedent": strong.passed(),
                "weak_non_vacuous": weak.non_vacuous,
            }),
        )),
    );
    report.push(
        Scope::tag("weak-implies-weak-star"),
        implication(weak.passed(), &weak_star),
        Some(Witness::new(
            "implication",
            json!({
                "antecedent": weak.passed(),
                "weak_star_non_vacuous": weak_star.non_vacuous,
            }),
        )),
    );
    report.push(
        Scope::tag("weak-star-plus-constancy-implies-strong"),
        implication(weak_star.passed() && constancy.passed(), &strong),
        Some(Witness::new(
            "implication",
            json!({
                "weak_star": weak_star.passed(),
                "constancy": constancy.passed(),
            }),
        )),
    );

    let proj = projections(space, battery)?;
    let mut sided = 0usize;
    let mut skipped = 0usize;
    for (k, per_date) in proj.iter().enumerate() {
        let u = space.horizon();
        let x = &per_date[u];
        for t in 1..=u {
            let inner = rm.rho(x, t, u)?;
            let lo = inner.min_value().approx();
            let hi = inner.max_value().approx();
            let nonpositive = hi <= opts.premise_slack;
            let nonnegative = lo >= -opts.premise_slack;
            if !nonpositive && !nonnegative {
                skipped += 1;
                continue;
            }
            sided += 1;
            let mut worst = 0.0f64;
            let mut at = 0usize;
            for s in 0..t {
                let chained = rm.rho(&inner.neg(), s, t)?;
                let direct = rm.rho(x, s, u)?;
                let gap = if nonpositive {
                    overshoot(&direct, &chained)
                } else {
                    overshoot(&chained, &direct)
                };
                if gap > worst {
                    worst = gap;
                    at = s;
                }
            }
            let side = if nonpositive { "<=" } else { ">=" };
            report.push(
                Scope::times(at, t, u).with_tag("one-sided"),
                worst,
                Some(Witness::new(
                    format!("battery[{k}] sign {side}"),
                    json!({ "battery": k, "side": side }),
                )),
            );
        }
    }
    report.non_vacuous = Some(sided);
    report.vacuous = Some(skipped);
    report.notes.push(
        "conditional items score the consequent only when the antecedent holds; one-sided items need a sign-definite intermediate value".into(),
    );
    report.sort();
    Ok(report)
}

/// Builds a constancy battery from constants and the battery's own
/// conditional expectations at each date.
pub fn constancy_levels<S: Scalar>(
    space: &FilteredSpace<S>,
    battery: &[RandomVariable<S>],
) -> Result<Vec<(usize, RandomVariable<S>)>> {
    let p = TreeMeasure::p_measure(space);
    let mut levels = Vec::new();
    for t in 0..=space.horizon() {
        levels.push((t, space.constant(S::one())));
        levels.push((t, space.constant(S::zero() - S::one())));
        levels.push((t, space.constant(S::of(0.5))));
        for x in battery.iter().take(2) {
            levels.push((t, space.conditional_expectation(x, &p, t)?));
        }
    }
    Ok(levels)
}

/// Ambiguity-averse premium: `rho_{t,u}(X) = gamma_t^{-1} E[(-X)^+ | F_t]`
/// with an adapted loading `gamma_t > 1`.
///
/// The measure is monotone-consistent but not recursive: discounting only
/// the loss leg breaks constancy (`rho_t(m) != -m`), and chaining two
/// evaluations double-discounts, so the recursive gap is strictly positive
/// on constant losses.
#[derive(Clone)]
pub struct PutPremiumMeasure<S: Scalar> {
    space: Arc<FilteredSpace<S>>,
    gamma: AdaptedProcess<S>,
}

/// Validates the loading process and wraps it as a [`PutPremiumMeasure`].
pub fn put_premium_model<S: Scalar>(
    space: &Arc<FilteredSpace<S>>,
    gamma: AdaptedProcess<S>,
) -> Result<PutPremiumMeasure<S>> {
    for t in 0..=space.horizon() {
        for v in gamma.slice(t).values() {
            if v.approx() <= 1.0 {
                return Err(Error::GammaNotGreaterThanOne { t, value: v.approx() });
            }
        }
    }
    Ok(PutPremiumMeasure { space: Arc::clone(space), gamma })
}

/// Constant-loading convenience constructor.
pub fn constant_gamma<S: Scalar>(
    space: &Arc<FilteredSpace<S>>,
    value: S,
) -> Result<AdaptedProcess<S>> {
    let slices = (0..=space.horizon()).map(|_| space.constant(value.clone())).collect();
    AdaptedProcess::new(space, slices, None)
}

impl<S: Scalar> PutPremiumMeasure<S> {
    pub fn gamma(&self) -> &AdaptedProcess<S> {
        &self.gamma
    }

    /// Rebuilds the measure as an explicit discount/measure dictionary and
    /// returns the induced dynamic risk measure.
    ///
    /// One pair per leaf set `E`: the measure conditions the reference
    /// weights on `E`, the discount is `gamma_t^{-1} P(E | F_t)`, and the
    /// penalty vanishes; the empty set enters as a vanishing discount so a
    /// payoff with no loss anywhere prices to zero. Maximizing over pairs
    /// then selects exactly the leaves where the loss is positive, which
    /// reproduces the closed form at every `t < u`. The enumeration is
    /// exponential in the leaf count and is refused beyond 8 leaves.
    pub fn dictionary_model(&self) -> Result<DynamicRiskMeasure<S>> {
        let space = self.space.as_ref();
        let leaves = space.leaves();
        if leaves > 8 {
            return Err(Error::GridTooLarge {
                points: (1u64 << leaves) as f64,
                budget: 256.0,
            });
        }
        let mut pairs = Vec::new();
        // The empty selection prices to zero: a vanishing discount carries
        // it, with the reference measure as an inert placeholder.
        let mut zero_table = std::collections::BTreeMap::new();
        for t in 0..space.horizon() {
            for u in t + 1..=space.horizon() {
                zero_table.insert((t, u), vec![S::zero(); space.atom_count(t)]);
            }
        }
        pairs.push(DualPair {
            d: DiscountTable::new(space, zero_table)?,
            q: TreeMeasure::p_measure(space),
        });
        for mask in 1u32..(1 << leaves) {
            let raw: Vec<S> = (0..leaves)
                .map(|leaf| {
                    if mask & (1 << leaf) != 0 {
                        space.p(leaf).clone()
                    } else {
                        S::zero()
                    }
                })
                .collect();
            // Conditioning on the leaf set: normalizing by its mass leaves
            // every within-atom conditional law unchanged.
            let mass = total(&raw);
            let q = TreeMeasure::new(
                space,
                raw.into_iter().map(|w| w / mass.clone()).collect(),
            )?;
            let mut table = std::collections::BTreeMap::new();
            for t in 0..space.horizon() {
                let gamma_t = self.gamma.slice(t);
                let values: Vec<S> = space
                    .atoms(t)
                    .iter()
                    .map(|r| {
                        let mut hit = S::zero();
                        for leaf in r.clone() {
                            if mask & (1 << leaf) != 0 {
                                hit = hit + space.p(leaf).clone();
                            }
                        }
                        let atom_mass = total(&space.p_weights()[r.clone()]);
                        hit / atom_mass / gamma_t.value(r.start).clone()
                    })
                    .collect();
                for u in t + 1..=space.horizon() {
                    table.insert((t, u), values.clone());
                }
            }
            pairs.push(DualPair { d: DiscountTable::new(space, table)?, q });
        }
        let penalty = PenaltyTerm::zero(space, pairs.len());
        let model = DualModel::new_with(
            self.space.clone(),
            pairs,
            penalty,
            ModelOptions { all_q_equivalent: false, require_normalized: true },
        )?;
        Ok(DynamicRiskMeasure::new(model))
    }
}

impl<S: Scalar> DynamicFunctional<S> for PutPremiumMeasure<S> {
    fn space(&self) -> &FilteredSpace<S> {
        self.space.as_ref()
    }

    fn rho(&self, x: &RandomVariable<S>, t: usize, u: usize) -> Result<RandomVariable<S>> {
        let space = self.space.as_ref();
        space.check_times(t, u, space.horizon())?;
        if x.level() > u {
            return Err(Error::NotAdapted { t: u, level: x.level() });
        }
        let loss = x.map(|v| {
            let neg = S::zero() - v.clone();
            if neg > S::zero() {
                neg
            } else {
                S::zero()
            }
        });
        let p = TreeMeasure::p_measure(space);
        let ce = space.conditional_expectation(&loss, &p, t)?;
        let gamma_t = self.gamma.slice(t);
        let values: Vec<S> = ce
            .values()
            .iter()
            .zip(gamma_t.values())
            .map(|(v, g)| v.clone() / g.clone())
            .collect();
        space.rv_at(values, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::{
        ablate_penalty, comparable_pairs, equal_law_pairs, grid_model, monotone_breaker,
        random_battery,
    };
    use crate::dual_dynamic::{DiscountTable, DualModel, DualPair, DynamicRiskMeasure};
    use crate::structure::{StructuredModel, CLOSURE_TOL};
    use crate::tree::{build_tree, TreeSpec};

    fn uniform4() -> Arc<FilteredSpace<f64>> {
        build_tree(&TreeSpec {
            horizon: 2,
            branching: vec![2, 2, 2],
            weights: vec![0.25; 4],
        })
        .unwrap()
    }

    fn expectation_model(space: &Arc<FilteredSpace<f64>>) -> DynamicRiskMeasure<f64> {
        let pair = DualPair {
            d: DiscountTable::ones(space),
            q: TreeMeasure::p_measure(space),
        };
        let model = DualModel::new(
            Arc::clone(space),
            vec![pair],
            PenaltyTerm::zero(space, 1),
        )
        .unwrap();
        DynamicRiskMeasure::new(model)
    }

    fn premium(space: &Arc<FilteredSpace<f64>>) -> PutPremiumMeasure<f64> {
        put_premium_model(space, constant_gamma(space, 2.0).unwrap()).unwrap()
    }

    #[test]
    fn expectation_model_is_recursively_consistent() {
        let space = uniform4();
        let rm = expectation_model(&space);
        let battery = random_battery(&space, 5, 2.0, 7);
        let report = check_strong_tc(&rm, &battery, 1e-9).unwrap();
        assert!(report.passed(), "worst {}", report.worst_violation());
    }

    #[test]
    fn premium_prices_only_the_loss_leg() {
        let space = uniform4();
        let pp = premium(&space);
        let x = space.rv(vec![-4.0, 0.0, -2.0, 2.0]).unwrap();
        let r = pp.rho(&x, 1, 2).unwrap();
        assert_eq!(r.values(), &[1.0, 1.0, 0.5, 0.5]);
        let m = space.constant(-1.0);
        for t in 0..=2 {
            let r = pp.rho(&m, t, 2).unwrap();
            assert!(r.values().iter().all(|v| *v == 0.5));
        }
    }

    #[test]
    fn premium_chaining_double_discounts_by_a_quarter() {
        let space = uniform4();
        let pp = premium(&space);
        let battery = [space.constant(-1.0)];
        let report = check_strong_tc(&pp, &battery, 1e-7).unwrap();
        assert!(!report.passed());
        assert_eq!(report.worst_violation(), 0.25);
        let split = report
            .items
            .iter()
            .find(|i| (i.scope.s, i.scope.t, i.scope.u) == (Some(0), Some(1), Some(2)))
            .unwrap();
        assert_eq!(split.violation, 0.25);
    }

    #[test]
    fn premium_is_monotone_consistent() {
        let space = uniform4();
        let pp = premium(&space);
        let pairs = comparable_pairs(&space, 200, 3.0, 31);
        let weak = check_weak_tc(&pp, &pairs, &TcOptions::default()).unwrap();
        assert!(weak.passed(), "worst {}", weak.worst_violation());
        assert!(weak.non_vacuous.unwrap() > 100);

        let base = random_battery(&space, 10, 2.0, 12);
        let equal = equal_law_pairs(&space, &[], &base);
        assert!(!equal.is_empty());
        let star = check_weak_star_tc(&pp, &equal, &TcOptions::default()).unwrap();
        assert!(star.passed(), "worst {}", star.worst_violation());
        assert!(star.non_vacuous.unwrap() > 0);
    }

    #[test]
    fn premium_fails_constancy_by_known_margins() {
        let space = uniform4();
        let pp = premium(&space);
        let levels = vec![
            (0, space.constant(1.0)),
            (1, space.constant(1.0)),
            (0, space.constant(-1.0)),
            (1, space.constant(-1.0)),
            (0, space.constant(0.5)),
        ];
        let report = check_constancy(&pp, &levels, 1e-9).unwrap();
        assert!(!report.passed());
        assert_eq!(report.worst_violation(), 1.0);
        assert!(report.items.iter().any(|i| i.violation == 0.5));
    }

    #[test]
    fn expectation_model_satisfies_constancy() {
        let space = uniform4();
        let rm = expectation_model(&space);
        let battery = random_battery(&space, 3, 2.0, 44);
        let levels = constancy_levels(&space, &battery).unwrap();
        let report = check_constancy(&rm, &levels, 1e-9).unwrap();
        assert!(report.passed(), "worst {}", report.worst_violation());
    }

    #[test]
    fn constancy_rejects_levels_finer_than_their_date() {
        let space = uniform4();
        let rm = expectation_model(&space);
        let x = space.rv(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let err = check_constancy(&rm, &[(1, x)], 1e-9);
        assert!(matches!(err, Err(Error::NotAdapted { .. })));
    }

    #[test]
    fn premium_dictionary_matches_the_closed_form() {
        let space = uniform4();
        let pp = premium(&space);
        let dict = pp.dictionary_model().unwrap();
        let p = TreeMeasure::p_measure(&space);
        let battery = random_battery(&space, 4, 3.0, 99);
        for x in &battery {
            for u in 1..=2usize {
                let xu = space.conditional_expectation(x, &p, u).unwrap();
                for t in 0..u {
                    let direct = pp.rho(&xu, t, u).unwrap();
                    let tabled = dict.rho(&xu, t, u).unwrap();
                    let gap = crate::scalar::sup_gap(direct.values(), tabled.values());
                    assert!(gap <= 1e-9, "gap {gap} at t={t} u={u}");
                }
            }
        }
    }

    #[test]
    fn oversized_trees_refuse_dictionary_expansion() {
        let spec = TreeSpec {
            horizon: 2,
            branching: vec![3, 3, 3, 3],
            weights: vec![1.0 / 9.0; 9],
        };
        let space = build_tree(&spec).unwrap();
        let pp = premium(&space);
        match pp.dictionary_model() {
            Err(Error::GridTooLarge { points, .. }) => assert_eq!(points, 512.0),
            other => panic!("expected a size refusal, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn loading_must_exceed_one() {
        let space = uniform4();
        let gamma = constant_gamma(&space, 1.0).unwrap();
        let err = put_premium_model(&space, gamma);
        assert!(matches!(err, Err(Error::GammaNotGreaterThanOne { t: 0, .. })));
    }

    #[test]
    fn hidden_tail_pricing_is_caught_by_the_monotone_check() {
        let space = uniform4();
        let rm = monotone_breaker(&space).unwrap();
        let pairs = comparable_pairs(&space, 1000, 3.0, 5);
        let report = check_weak_tc(&rm, &pairs, &TcOptions::default()).unwrap();
        assert!(!report.passed());
        let failing = report.items.iter().filter(|i| !i.pass).count();
        assert!(failing >= 1, "no failing instances found");
    }

    #[test]
    fn unordered_pairs_do_not_count_toward_the_quota() {
        let space = uniform4();
        let rm = expectation_model(&space);
        let x = space.rv(vec![3.0, -1.0, -3.0, 1.0]).unwrap();
        let y = space.rv(vec![-3.0, 1.0, 3.0, -1.0]).unwrap();
        let err = check_weak_tc(&rm, &[(x, y)], &TcOptions::default());
        assert!(matches!(
            err,
            Err(Error::InsufficientNonVacuousPairs { found: 0, needed: 1 })
        ));
    }

    #[test]
    fn implication_chain_holds_for_the_expectation_model() {
        let space = uniform4();
        let rm = expectation_model(&space);
        let battery = random_battery(&space, 4, 2.0, 61);
        let pairs = comparable_pairs(&space, 40, 2.0, 62);
        let report =
            check_tc_implications(&rm, &battery, &pairs, &TcOptions::default()).unwrap();
        assert!(report.passed(), "worst {}", report.worst_violation());
        assert!(report.items.len() >= 3);
    }

    #[test]
    fn implication_chain_tolerates_the_premium_via_one_sided_bounds() {
        let space = uniform4();
        let pp = premium(&space);
        let battery = random_battery(&space, 4, 2.0, 71);
        let pairs = comparable_pairs(&space, 40, 2.0, 72);
        let report =
            check_tc_implications(&pp, &battery, &pairs, &TcOptions::default()).unwrap();
        assert!(report.passed(), "worst {}", report.worst_violation());
        assert!(report.items.iter().any(|i| i.scope.tag.contains("one-sided")));
    }

    #[test]
    fn certified_conditions_force_recursivity() {
        let space = uniform4();
        let rm = grid_model(
            &space,
            &[vec![0.5, 0.5], vec![0.25, 0.75]],
            &[1.0, 0.5],
            &[1.0],
            0.7,
        )
        .unwrap();
        let sm = StructuredModel::certify(rm, CLOSURE_TOL).unwrap();
        let battery = random_battery(&space, 6, 2.0, 13);
        let report = verify_theorem_tc(&sm, &battery, 1e-7).unwrap();
        assert!(report.passed(), "worst {}", report.worst_violation());
        assert!(report.items.iter().any(|i| i.scope.tag == "recursivity"));
    }

    #[test]
    fn broken_cocycle_is_named_before_recursivity_is_judged() {
        let space = uniform4();
        let rm = expectation_model(&space);
        let broken = ablate_penalty(&rm, 0, 0, 2, 0.25).unwrap();
        let direct = check_strong_tc(&broken, &[space.constant(0.0)], 1e-9).unwrap();
        assert!(!direct.passed());
        assert_eq!(direct.worst_violation(), 0.25);

        let sm = StructuredModel::certify(broken, CLOSURE_TOL).unwrap();
        let battery = random_battery(&space, 3, 2.0, 3);
        match verify_theorem_tc(&sm, &battery, 1e-7) {
            Err(Error::PreconditionNotMet { failed }) => {
                assert!(failed.contains("penalty-cocycle"), "failed: {failed}");
            }
            other => panic!("expected a named precondition failure, got {:?}", other.map(|_| ())),
        }
    }
}
