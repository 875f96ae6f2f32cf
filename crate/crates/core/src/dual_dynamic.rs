//! Dynamic risk measures driven by a finite family of discount/measure
//! pairs with a penalty process.
//!
//! A model fixes pairs `(D^i, Q^i)` where `D^i` assigns every time pair
//! `t <= u` an `F_t`-measurable discount factor in `[0, 1]` and `Q^i` is a
//! probability measure on the tree, together with penalty values
//! `c^i_{t,u}` in `[0, +inf]` per time-`t` atom. The induced measure is
//!
//! ```text
//! rho_{t,u}(X) = max_i { D^i_{t,u} * E_{Q^i}[-X | F_t] - c^i_{t,u} }
//! ```
//!
//! computed atom by atom with infinite-penalty pairs skipped. The module
//! also carries the conjugate machinery (per-atom minimal penalties via
//! the exact LP on subtrees), the time-0 aggregation `X -> E_P[rho_t(X)]`
//! with its product dictionary, and the decomposition of a subprobability
//! into a discount factor times a measure that agrees with `P` up to `t`.

use crate::dual_static::{
    DictEntry, DualDictionary, Normalization, RiskFunctional, StaticRiskMeasure,
};
use crate::error::{Error, Result};
use crate::report::{ConsistencyReport, Scope, Witness};
use crate::scalar::{total, Cost, Scalar};
use crate::tree::{FilteredSpace, RandomVariable, TreeMeasure};
use serde_json::json;
use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;
use std::sync::{Arc, Mutex};

/// Discount factors indexed by time pairs `t <= u`: one value per time-`t`
/// atom, inside `[0, 1]`. The diagonal `D_{t,t} = 1` is implicit. When the
/// table was built from one-period factors the factor list is kept so
/// closure checks can splice families factor-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscountTable<S> {
    horizon: usize,
    table: BTreeMap<(usize, usize), Vec<S>>,
    factors: Option<Vec<S>>,
}

impl<S: Scalar> DiscountTable<S> {
    /// Validates a full table: every `t < u <= T` present, atom-indexed,
    /// values in `[0, 1]`.
    pub fn new(
        space: &FilteredSpace<S>,
        table: BTreeMap<(usize, usize), Vec<S>>,
    ) -> Result<DiscountTable<S>> {
        let horizon = space.horizon();
        for t in 0..horizon {
            for u in (t + 1)..=horizon {
                let Some(values) = table.get(&(t, u)) else {
                    return Err(Error::Invalid(format!(
                        "discount table is missing the ({t},{u}) slice"
                    )));
                };
                if values.len() != space.atom_count(t) {
                    return Err(Error::SpaceMismatch {
                        context: format!("discount slice ({t},{u})"),
                        expected: space.atom_count(t),
                        got: values.len(),
                    });
                }
                for v in values {
                    if *v < S::zero() || *v > S::one() {
                        return Err(Error::FactorOutOfRange { value: v.approx() });
                    }
                }
            }
        }
        for (t, u) in table.keys() {
            if t >= u || *u > horizon {
                return Err(Error::TimeOrderViolation { s: *t, t: *t, u: *u, horizon });
            }
        }
        Ok(DiscountTable { horizon, table, factors: None })
    }

    /// Everything discounted at one: `D_{t,u} = 1` throughout.
    pub fn ones(space: &FilteredSpace<S>) -> DiscountTable<S> {
        Self::from_factors(space, &vec![S::one(); space.horizon()])
            .expect("unit factors are valid")
    }

    /// Product form `D_{t,u} = delta_t * ... * delta_{u-1}` from one
    /// deterministic factor per period. Being constants, all slices are
    /// measurable at every level, and splicing two such tables at an
    /// intermediate time yields another table of the same form.
    pub fn from_factors(space: &FilteredSpace<S>, deltas: &[S]) -> Result<DiscountTable<S>> {
        let horizon = space.horizon();
        if deltas.len() != horizon {
            return Err(Error::SpaceMismatch {
                context: "discount factors".into(),
                expected: horizon,
                got: deltas.len(),
            });
        }
        for d in deltas {
            if *d < S::zero() || *d > S::one() {
                return Err(Error::FactorOutOfRange { value: d.approx() });
            }
        }
        let mut table = BTreeMap::new();
        for t in 0..horizon {
            let mut product = S::one();
            for u in (t + 1)..=horizon {
                product = product * deltas[u - 1].clone();
                table.insert((t, u), vec![product.clone(); space.atom_count(t)]);
            }
        }
        Ok(DiscountTable { horizon, table, factors: Some(deltas.to_vec()) })
    }

    /// The one-period factors when the table was built in product form.
    pub fn factors(&self) -> Option<&[S]> {
        self.factors.as_deref()
    }

    /// Per-atom values of `D_{t,u}`; the diagonal returns ones.
    pub fn atom_values(&self, space: &FilteredSpace<S>, t: usize, u: usize) -> Result<Vec<S>> {
        space.check_times(t, t, u)?;
        if t == u {
            return Ok(vec![S::one(); space.atom_count(t)]);
        }
        self.table
            .get(&(t, u))
            .cloned()
            .ok_or_else(|| Error::Invalid(format!("discount table has no ({t},{u}) slice")))
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Penalty process: per pair and time pair `t <= u`, one value in
/// `[0, +inf]` per time-`t` atom. Atom-indexed storage makes every slice
/// measurable at its own time by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyTerm<S> {
    per_pair: Vec<BTreeMap<(usize, usize), Vec<Cost<S>>>>,
}

impl<S: Scalar> PenaltyTerm<S> {
    /// All-zero penalties for `npairs` pairs.
    pub fn zero(space: &FilteredSpace<S>, npairs: usize) -> PenaltyTerm<S> {
        let mut slices = BTreeMap::new();
        for t in 0..=space.horizon() {
            for u in t..=space.horizon() {
                slices.insert((t, u), vec![Cost::zero(); space.atom_count(t)]);
            }
        }
        PenaltyTerm { per_pair: vec![slices; npairs] }
    }

    /// Replaces one slice. Values must be nonnegative where finite.
    pub fn set(
        &mut self,
        space: &FilteredSpace<S>,
        pair: usize,
        t: usize,
        u: usize,
        values: Vec<Cost<S>>,
    ) -> Result<()> {
        space.check_times(t, t, u)?;
        if pair >= self.per_pair.len() {
            return Err(Error::Invalid(format!("penalty pair index {pair} out of range")));
        }
        if values.len() != space.atom_count(t) {
            return Err(Error::SpaceMismatch {
                context: format!("penalty slice ({t},{u})"),
                expected: space.atom_count(t),
                got: values.len(),
            });
        }
        for v in &values {
            if let Cost::Finite(c) = v {
                if *c < S::zero() {
                    return Err(Error::Invalid(format!(
                        "penalty {} is negative",
                        c.approx()
                    )));
                }
            }
        }
        self.per_pair[pair].insert((t, u), values);
        Ok(())
    }

    pub fn c(&self, pair: usize, t: usize, u: usize) -> &[Cost<S>] {
        &self.per_pair[pair][&(t, u)]
    }

    pub fn npairs(&self) -> usize {
        self.per_pair.len()
    }
}

/// One dual pair: a discount table and a measure.
#[derive(Clone, Debug)]
pub struct DualPair<S> {
    pub d: DiscountTable<S>,
    pub q: TreeMeasure<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct ModelOptions {
    /// Require every `Q` to have strictly positive leaf weights.
    pub all_q_equivalent: bool,
    /// Require the nodewise minimum of the penalties over pairs to vanish
    /// on every atom of every slice (what makes `rho_{t,u}(0) = 0`).
    pub require_normalized: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions { all_q_equivalent: false, require_normalized: true }
    }
}

#[derive(Clone, Debug)]
pub struct DualModel<S> {
    space: Arc<FilteredSpace<S>>,
    pairs: Vec<DualPair<S>>,
    penalty: PenaltyTerm<S>,
    options: ModelOptions,
}

impl<S: Scalar> DualModel<S> {
    pub fn new(
        space: Arc<FilteredSpace<S>>,
        pairs: Vec<DualPair<S>>,
        penalty: PenaltyTerm<S>,
    ) -> Result<DualModel<S>> {
        Self::new_with(space, pairs, penalty, ModelOptions::default())
    }

    pub fn new_with(
        space: Arc<FilteredSpace<S>>,
        pairs: Vec<DualPair<S>>,
        penalty: PenaltyTerm<S>,
        options: ModelOptions,
    ) -> Result<DualModel<S>> {
        if pairs.is_empty() {
            return Err(Error::EmptyFamily);
        }
        if penalty.npairs() != pairs.len() {
            return Err(Error::SpaceMismatch {
                context: "penalty pair count".into(),
                expected: pairs.len(),
                got: penalty.npairs(),
            });
        }
        for (i, pair) in pairs.iter().enumerate() {
            if pair.q.weights().len() != space.leaves() {
                return Err(Error::SpaceMismatch {
                    context: format!("pair {i} measure"),
                    expected: space.leaves(),
                    got: pair.q.weights().len(),
                });
            }
            if pair.d.horizon() != space.horizon() {
                return Err(Error::SpaceMismatch {
                    context: format!("pair {i} discount table"),
                    expected: space.horizon(),
                    got: pair.d.horizon(),
                });
            }
            if options.all_q_equivalent && !pair.q.equivalent_to_p() {
                return Err(Error::Invalid(format!(
                    "pair {i} measure has a null leaf but the family is declared equivalent"
                )));
            }
        }
        if options.require_normalized {
            for t in 0..=space.horizon() {
                for u in t..=space.horizon() {
                    for atom in 0..space.atom_count(t) {
                        let min = (0..pairs.len())
                            .filter_map(|i| penalty.c(i, t, u)[atom].finite())
                            .fold(None::<S>, |acc, c| match acc {
                                Some(m) if m <= *c => Some(m),
                                _ => Some(c.clone()),
                            });
                        let ok = min.as_ref().map_or(false, |m| *m <= S::of(1e-12));
                        if !ok {
                            return Err(Error::Invalid(format!(
                                "penalty is not normalized: min over pairs at (t={t},u={u}) \
                                 atom {atom} is {}",
                                min.map_or("inf".into(), |m| m.approx().to_string())
                            )));
                        }
                    }
                }
            }
        }
        Ok(DualModel { space, pairs, penalty, options })
    }

    pub fn space(&self) -> &FilteredSpace<S> {
        &self.space
    }

    pub fn space_arc(&self) -> Arc<FilteredSpace<S>> {
        Arc::clone(&self.space)
    }

    pub fn pairs(&self) -> &[DualPair<S>] {
        &self.pairs
    }

    pub fn penalty(&self) -> &PenaltyTerm<S> {
        &self.penalty
    }

    pub fn options(&self) -> ModelOptions {
        self.options
    }

    /// Leaf measure `P(A) D_{t,T}(A) Q(. | A)` induced by one pair at `t`:
    /// the dual point the aggregated time-0 functional sees for it.
    pub fn induced_leaf_measure(&self, pair: usize, t: usize) -> Vec<S> {
        let space = &self.space;
        let horizon = space.horizon();
        let d = self.pairs[pair]
            .d
            .atom_values(space, t, horizon)
            .expect("validated table");
        let q = self.pairs[pair].q.weights();
        let mut w = vec![S::zero(); space.leaves()];
        for (atom, range) in space.atoms(t).iter().enumerate() {
            let q_mass = total(&q[range.clone()]);
            let p_mass = total(&space.p_weights()[range.clone()]);
            for leaf in range.clone() {
                let cond = if q_mass.is_zero() {
                    space.p(leaf).clone() / p_mass.clone()
                } else {
                    q[leaf].clone() / q_mass.clone()
                };
                w[leaf] = p_mass.clone() * d[atom].clone() * cond;
            }
        }
        w
    }
}

/// Anything that evaluates `rho_{t,u}`: pair-table models and closed-form
/// measures alike. Consistency checkers only need this surface.
pub trait DynamicFunctional<S: Scalar> {
    fn space(&self) -> &FilteredSpace<S>;
    fn rho(&self, x: &RandomVariable<S>, t: usize, u: usize) -> Result<RandomVariable<S>>;
}

struct CacheSlot<S> {
    x: Vec<S>,
    result: RandomVariable<S>,
}

/// A dual model with a thread-safe evaluation memo. Cloning shares both
/// the model and the cache. Cache hits verify the stored payoff vector,
/// so a digest collision degrades to a recompute, never a wrong value.
#[derive(Clone)]
pub struct DynamicRiskMeasure<S> {
    model: Arc<DualModel<S>>,
    cache: Arc<Mutex<HashMap<(u64, usize, usize), CacheSlot<S>>>>,
}

impl<S: Scalar> DynamicRiskMeasure<S> {
    pub fn new(model: DualModel<S>) -> DynamicRiskMeasure<S> {
        DynamicRiskMeasure { model: Arc::new(model), cache: Arc::new(Mutex::new(HashMap::new())) }
    }

    pub fn model(&self) -> &DualModel<S> {
        &self.model
    }

    fn digest(&self, x: &RandomVariable<S>, t: usize, u: usize) -> (u64, usize, usize) {
        let mut hasher = DefaultHasher::new();
        for v in x.values() {
            v.feed_hash(&mut hasher);
        }
        (hasher.finish(), t, u)
    }

    /// `rho_{t,u}(X)`: atom-by-atom maximum over the finite-penalty pairs
    /// of `D_{t,u} E_Q[-X | F_t] - c_{t,u}`. The result is measurable at
    /// `t` by construction.
    pub fn rho(&self, x: &RandomVariable<S>, t: usize, u: usize) -> Result<RandomVariable<S>> {
        let space = self.model.space();
        space.check_times(t, t, u)?;
        if x.values().len() != space.leaves() {
            return Err(Error::SpaceMismatch {
                context: "payoff".into(),
                expected: space.leaves(),
                got: x.values().len(),
            });
        }
        if x.level() > u {
            return Err(Error::NotAdapted { t: u, level: x.level() });
        }
        let key = self.digest(x, t, u);
        if let Some(slot) = self.cache.lock().unwrap().get(&key) {
            if slot.x == x.values() {
                return Ok(slot.result.clone());
            }
        }
        let neg = x.neg();
        let natoms = space.atom_count(t);
        let mut best: Vec<Option<S>> = vec![None; natoms];
        for (i, pair) in self.model.pairs().iter().enumerate() {
            let c = self.model.penalty().c(i, t, u);
            let d = pair.d.atom_values(space, t, u)?;
            let ce = space.conditional_expectation(&neg, &pair.q, t)?;
            let ce_atoms = space.atom_values(&ce, t);
            for atom in 0..natoms {
                let Cost::Finite(cv) = &c[atom] else { continue };
                let score = d[atom].clone() * ce_atoms[atom].clone() - cv.clone();
                if best[atom].as_ref().map_or(true, |b| score > *b) {
                    best[atom] = Some(score);
                }
            }
        }
        let mut atom_values = Vec::with_capacity(natoms);
        for (atom, value) in best.into_iter().enumerate() {
            match value {
                Some(v) => atom_values.push(v),
                None => {
                    return Err(Error::Invalid(format!(
                        "every pair has infinite penalty on atom {atom} at (t={t},u={u})"
                    )))
                }
            }
        }
        let result = space.from_atom_values(t, &atom_values)?;
        self.cache
            .lock()
            .unwrap()
            .insert(key, CacheSlot { x: x.values().to_vec(), result: result.clone() });
        Ok(result)
    }

    /// Minimal penalty of one pair against `rho_{t,T}`, atom by atom.
    pub fn minimal_penalty(&self, pair: usize, t: usize) -> Result<Vec<Cost<S>>> {
        self.minimal_penalty_at(pair, t, self.model.space().horizon())
    }

    /// Minimal penalty of one pair against `rho_{t,u}`: on each time-`t`
    /// atom the conjugate of the restricted dictionary, computed by the
    /// exact LP over the time-`u` atoms below it. `+inf` exactly when the
    /// pair's restricted point leaves the local hull.
    pub fn minimal_penalty_at(&self, pair: usize, t: usize, u: usize) -> Result<Vec<Cost<S>>> {
        let space = self.model.space();
        space.check_times(t, t, u)?;
        if pair >= self.model.pairs().len() {
            return Err(Error::Invalid(format!("pair index {pair} out of range")));
        }
        let points: Vec<Vec<Vec<S>>> = (0..self.model.pairs().len())
            .map(|j| self.restricted_points(j, t, u))
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(space.atom_count(t));
        for atom in 0..space.atom_count(t) {
            let below = space.children(t, atom, u);
            let mut columns: Vec<(usize, &Vec<S>)> = Vec::new();
            for (j, per_atom) in points.iter().enumerate() {
                if self.model.penalty().c(j, t, u)[atom].is_finite() {
                    columns.push((j, &per_atom[atom]));
                }
            }
            // Rows: one per time-u atom below this one, plus the simplex
            // row; exact arithmetic end to end.
            use num_rational::BigRational;
            use num_traits::One;
            let mut a_mat: Vec<Vec<BigRational>> = Vec::with_capacity(below.len() + 1);
            for (row, _) in below.iter().enumerate() {
                a_mat.push(columns.iter().map(|(_, pt)| pt[row].to_exact()).collect());
            }
            a_mat.push(vec![BigRational::one(); columns.len()]);
            let mut b: Vec<BigRational> =
                points[pair][atom].iter().map(Scalar::to_exact).collect();
            b.push(BigRational::one());
            let costs: Vec<BigRational> = columns
                .iter()
                .map(|(j, _)| {
                    self.model.penalty().c(*j, t, u)[atom]
                        .finite()
                        .expect("filtered to finite")
                        .to_exact()
                })
                .collect();
            match crate::lp::solve_eq_lp(&a_mat, &b, &costs)? {
                crate::lp::LpOutcome::Optimal { value, .. } => {
                    out.push(Cost::Finite(S::from_exact(&value)))
                }
                crate::lp::LpOutcome::Infeasible => out.push(Cost::Infinite),
            }
        }
        Ok(out)
    }

    /// Per time-`t` atom, the vector `D_{t,u}(A) Q(B | A)` over the
    /// time-`u` atoms `B` below `A` (the pair's dual point restricted to
    /// the subtree), with the `P`-fallback convention on null atoms.
    fn restricted_points(&self, pair: usize, t: usize, u: usize) -> Result<Vec<Vec<S>>> {
        let space = self.model.space();
        let p = &self.model.pairs()[pair];
        let d = p.d.atom_values(space, t, u)?;
        let q_at_u = space.atom_masses(p.q.weights(), u);
        let p_at_u = space.atom_masses(space.p_weights(), u);
        let q_at_t = space.atom_masses(p.q.weights(), t);
        let p_at_t = space.atom_masses(space.p_weights(), t);
        let mut out = Vec::with_capacity(space.atom_count(t));
        for atom in 0..space.atom_count(t) {
            let below = space.children(t, atom, u);
            let null = q_at_t[atom].is_zero();
            let point: Vec<S> = below
                .iter()
                .map(|&b| {
                    let cond = if null {
                        p_at_u[b].clone() / p_at_t[atom].clone()
                    } else {
                        q_at_u[b].clone() / q_at_t[atom].clone()
                    };
                    d[atom].clone() * cond
                })
                .collect();
            out.push(point);
        }
        Ok(out)
    }

    /// Swaps the penalty process for the minimal one, slice by slice. The
    /// result generates the same measure (checked, not assumed: see
    /// `check_representation`).
    pub fn rebuild_with_minimal_penalty(&self) -> Result<DynamicRiskMeasure<S>> {
        let space = self.model.space();
        let mut penalty = PenaltyTerm::zero(space, self.model.pairs().len());
        for i in 0..self.model.pairs().len() {
            for t in 0..=space.horizon() {
                for u in t..=space.horizon() {
                    penalty.set(space, i, t, u, self.minimal_penalty_at(i, t, u)?)?;
                }
            }
        }
        let model = DualModel::new_with(
            self.model.space_arc(),
            self.model.pairs().to_vec(),
            penalty,
            self.model.options(),
        )?;
        Ok(DynamicRiskMeasure::new(model))
    }
}

impl<S: Scalar> DynamicFunctional<S> for DynamicRiskMeasure<S> {
    fn space(&self) -> &FilteredSpace<S> {
        self.model.space()
    }

    fn rho(&self, x: &RandomVariable<S>, t: usize, u: usize) -> Result<RandomVariable<S>> {
        DynamicRiskMeasure::rho(self, x, t, u)
    }
}

/// Nodewise axiom battery for `rho_t = rho_{t,T}` at every `t`: convexity,
/// monotonicity, cash-subadditivity against both constant and genuinely
/// `F_t`-measurable shifts, normalization, and the shift identity
/// `rho_t(X + m_t) + m_t = max_i { m_t (1 - D^i_t) + D^i_t E_{Q^i}[-X|F_t]
/// - c^i_t }` that the cash-subadditivity argument runs through.
pub fn check_dynamic_axioms<S: Scalar>(
    rm: &DynamicRiskMeasure<S>,
    battery: &[RandomVariable<S>],
    tol: f64,
) -> Result<ConsistencyReport> {
    if battery.is_empty() {
        return Err(Error::EmptyBattery);
    }
    let space = rm.model().space();
    let horizon = space.horizon();
    let mut report = ConsistencyReport::new("dynamic-axioms", tol);
    let lambdas = [S::of(0.25), S::of(0.5), S::of(0.75)];

    for t in 0..=horizon {
        let scope = |tag: &str| Scope::pair_times(t, horizon).with_tag(tag);

        let mut worst = (0.0f64, None);
        for (i, x) in battery.iter().enumerate() {
            let y = &battery[(i + 1) % battery.len()];
            let rx = rm.rho(x, t, horizon)?;
            let ry = rm.rho(y, t, horizon)?;
            for l in &lambdas {
                let mix = x.zip(y, |a, b| {
                    l.clone() * a.clone() + (S::one() - l.clone()) * b.clone()
                });
                let rmix = rm.rho(&mix, t, horizon)?;
                let bound = rx.zip(&ry, |a, b| {
                    l.clone() * a.clone() + (S::one() - l.clone()) * b.clone()
                });
                let gap = rmix.sub(&bound).max_value().approx();
                track(&mut worst, gap, || {
                    Witness::new(format!("x#{i}"), json!({"lambda": l.approx()}))
                });
            }
        }
        push(&mut report, scope("convexity"), worst);

        let mut worst = (0.0f64, None);
        for (i, x) in battery.iter().enumerate() {
            let bump = battery[(i + 1) % battery.len()].map(|v| v.clone().abs());
            let y = x.add(&bump);
            let gap = rm.rho(&y, t, horizon)?.sub(&rm.rho(x, t, horizon)?).max_value();
            track(&mut worst, gap.approx(), || {
                Witness::new(format!("x#{i}"), json!({"bump": bump.approx_values()}))
            });
        }
        push(&mut report, scope("monotonicity"), worst);

        let mut worst = (0.0f64, None);
        for (i, x) in battery.iter().enumerate() {
            let rx = rm.rho(x, t, horizon)?;
            for (kind, m) in shift_variables(rm, battery, i, t)? {
                let up = rm.rho(&x.add(&m), t, horizon)?;
                let down = rm.rho(&x.sub(&m), t, horizon)?;
                let gap_up = rx.sub(&m).sub(&up).max_value();
                let gap_down = down.sub(&rx).sub(&m).max_value();
                track(&mut worst, gap_up.approx().max(gap_down.approx()), || {
                    Witness::new(format!("x#{i}"), json!({"shift": kind, "m": m.approx_values()}))
                });
            }
        }
        push(&mut report, scope("cash-subadditivity"), worst);

        let zero = rm.rho(&space.constant(S::zero()), t, horizon)?;
        let viol = zero
            .values()
            .iter()
            .map(|v| v.approx().abs())
            .fold(0.0, f64::max);
        report.push(
            scope("normalization"),
            viol,
            Some(Witness::new("zero", json!({"rho_zero": zero.approx_values()}))),
        );

        let mut worst = (0.0f64, None);
        for (i, x) in battery.iter().enumerate() {
            for (kind, m) in shift_variables(rm, battery, i, t)? {
                let lhs = rm.rho(&x.add(&m), t, horizon)?.add(&m);
                let rhs = shift_chain_rhs(rm, x, &m, t)?;
                let gap = lhs.sub(&rhs).values().iter().map(|v| v.clone().abs().approx()).fold(0.0, f64::max);
                track(&mut worst, gap, || {
                    Witness::new(format!("x#{i}"), json!({"shift": kind}))
                });
            }
        }
        push(&mut report, scope("shift-chain"), worst);
    }
    report.sort();
    Ok(report)
}

/// Nonnegative `F_t`-measurable shifts for the battery: constants plus a
/// genuinely random one built from the next battery member.
fn shift_variables<S: Scalar>(
    rm: &DynamicRiskMeasure<S>,
    battery: &[RandomVariable<S>],
    i: usize,
    t: usize,
) -> Result<Vec<(&'static str, RandomVariable<S>)>> {
    let space = rm.model().space();
    let other = &battery[(i + 1) % battery.len()];
    let abs = other.map(|v| v.clone().abs());
    let random = space.conditional_expectation(&abs, &TreeMeasure::p_measure(space), t)?;
    Ok(vec![
        ("constant", space.constant(S::one())),
        ("measurable", random),
    ])
}

/// Right-hand side of the shift identity, evaluated pair by pair.
fn shift_chain_rhs<S: Scalar>(
    rm: &DynamicRiskMeasure<S>,
    x: &RandomVariable<S>,
    m: &RandomVariable<S>,
    t: usize,
) -> Result<RandomVariable<S>> {
    let space = rm.model().space();
    let horizon = space.horizon();
    let m_atoms = space.atom_values(m, t);
    let neg = x.neg();
    let natoms = space.atom_count(t);
    let mut best: Vec<Option<S>> = vec![None; natoms];
    for (i, pair) in rm.model().pairs().iter().enumerate() {
        let c = rm.model().penalty().c(i, t, horizon);
        let d = pair.d.atom_values(space, t, horizon)?;
        let ce = space.conditional_expectation(&neg, &pair.q, t)?;
        let ce_atoms = space.atom_values(&ce, t);
        for atom in 0..natoms {
            let Cost::Finite(cv) = &c[atom] else { continue };
            let score = m_atoms[atom].clone() * (S::one() - d[atom].clone())
                + d[atom].clone() * ce_atoms[atom].clone()
                - cv.clone();
            if best[atom].as_ref().map_or(true, |b| score > *b) {
                best[atom] = Some(score);
            }
        }
    }
    let atom_values: Vec<S> = best.into_iter().map(|v| v.expect("nonempty model")).collect();
    space.from_atom_values(t, &atom_values)
}

/// Worst nodewise cash-additivity gap `|rho_t(X + m) - (rho_t(X) - m)|`
/// over the battery at time `t`, reported with its witness. Separate from
/// the axiom battery: cash-subadditive measures may fail it legitimately.
pub fn dynamic_cash_additivity_gap<S: Scalar>(
    rm: &DynamicRiskMeasure<S>,
    battery: &[RandomVariable<S>],
    t: usize,
) -> Result<(f64, Witness)> {
    if battery.is_empty() {
        return Err(Error::EmptyBattery);
    }
    let space = rm.model().space();
    let horizon = space.horizon();
    let mut worst = 0.0f64;
    let mut witness = Witness::new("none", json!(null));
    for (i, x) in battery.iter().enumerate() {
        let rx = rm.rho(x, t, horizon)?;
        for m in [S::one(), S::of(0.5)] {
            let shifted = x.map(|v| v.clone() + m.clone());
            let up = rm.rho(&shifted, t, horizon)?;
            let gap = up
                .sub(&rx)
                .values()
                .iter()
                .map(|v| (v.clone() + m.clone()).abs().approx())
                .fold(0.0, f64::max);
            if gap > worst {
                worst = gap;
                witness = Witness::new(
                    format!("x#{i}"),
                    json!({"x": x.approx_values(), "m": m.approx(), "gap": gap}),
                );
            }
        }
    }
    Ok((worst, witness))
}

/// One regularity probe: splice `X` over an `F_t`-measurable event into
/// `Y` and compare against the leafwise splice of the two evaluations.
#[derive(Clone, Debug)]
pub struct RegularityCase<S> {
    pub x: RandomVariable<S>,
    pub y: RandomVariable<S>,
    pub t: usize,
    /// Leaf membership mask of the event; must be a union of time-`t` atoms.
    pub event: Vec<bool>,
}

/// Verifies `rho_t(X 1_A + Y 1_{A^c}) = 1_A rho_t(X) + 1_{A^c} rho_t(Y)`
/// for each case.
pub fn check_regularity<S: Scalar>(
    rm: &DynamicRiskMeasure<S>,
    cases: &[RegularityCase<S>],
    tol: f64,
) -> Result<ConsistencyReport> {
    let space = rm.model().space();
    let horizon = space.horizon();
    let mut report = ConsistencyReport::new("regularity", tol);
    for (k, case) in cases.iter().enumerate() {
        space.event_atoms(case.t, &case.event)?;
        let spliced_x = splice_by_mask(&case.x, &case.y, &case.event);
        let lhs = rm.rho(&space.rv(spliced_x)?, case.t, horizon)?;
        let rx = rm.rho(&case.x, case.t, horizon)?;
        let ry = rm.rho(&case.y, case.t, horizon)?;
        let rhs = splice_by_mask(&rx, &ry, &case.event);
        let viol = lhs
            .values()
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a.clone() - b.clone()).abs().approx())
            .fold(0.0, f64::max);
        report.push(
            Scope::pair_times(case.t, horizon).with_tag(format!("case#{k}")),
            viol,
            Some(Witness::new(
                format!("case#{k}"),
                json!({"event": case.event, "t": case.t}),
            )),
        );
    }
    report.sort();
    Ok(report)
}

fn splice_by_mask<S: Scalar>(x: &RandomVariable<S>, y: &RandomVariable<S>, mask: &[bool]) -> Vec<S> {
    x.values()
        .iter()
        .zip(y.values())
        .zip(mask)
        .map(|((a, b), &in_event)| if in_event { a.clone() } else { b.clone() })
        .collect()
}

/// Decomposition of a subprobability at time `t`.
#[derive(Clone, Debug)]
pub struct Decomposition<S> {
    /// `D_t = a Z_t`, measurable at `t`, nonnegative.
    pub d_t: RandomVariable<S>,
    /// Agrees with `P` on every time-`t` atom; reweighted by the inverse
    /// density below positive atoms, plain `P` below null ones.
    pub q_tilde: TreeMeasure<S>,
    /// Indices of the time-`t` atoms where the density vanishes.
    pub null_atoms: Vec<usize>,
}

/// Splits `mu = a Q` as `D_t * q_tilde` with `q_tilde = P` on `F_t`.
/// The bound `D_t <= 1` holds when the minimal penalty of `mu` at time 0
/// is finite but can fail otherwise, so it is asserted only when the
/// caller certifies finiteness via `penalty_finite`.
pub fn discount_decomposition<S: Scalar>(
    space: &FilteredSpace<S>,
    mu: &crate::tree::SubProbability<S>,
    t: usize,
    penalty_finite: bool,
) -> Result<Decomposition<S>> {
    space.check_times(t, t, space.horizon())?;
    if mu.a < S::zero() {
        return Err(Error::Invalid(format!("mass {} is negative", mu.a.approx())));
    }
    if mu.a > S::one() + S::of(1e-12) {
        return Err(Error::MassExceedsOne { mass: mu.a.approx() });
    }
    let z_t = space.density_process(&mu.q, t)?;
    let z_atoms = space.atom_values(&z_t, t);
    let null_atoms: Vec<usize> = z_atoms
        .iter()
        .enumerate()
        .filter(|(_, z)| z.is_zero())
        .map(|(i, _)| i)
        .collect();
    let d_t = z_t.map(|z| mu.a.clone() * z.clone());
    if penalty_finite {
        for v in d_t.values() {
            if *v > S::one() + S::of(1e-12) {
                return Err(Error::FactorOutOfRange { value: v.approx() });
            }
        }
    }
    let mut weights = Vec::with_capacity(space.leaves());
    for (atom, range) in space.atoms(t).iter().enumerate() {
        let z = &z_atoms[atom];
        for leaf in range.clone() {
            if z.is_zero() {
                weights.push(space.p(leaf).clone());
            } else {
                weights.push(mu.q.weight(leaf).clone() / z.clone());
            }
        }
    }
    let q_tilde = TreeMeasure::new(space, weights)?;
    Ok(Decomposition { d_t, q_tilde, null_atoms })
}

/// The time-0 aggregation `X -> E_P[rho_t(X)]`, exposed with the static
/// functional surface so the same axiom battery applies to it.
#[derive(Clone)]
pub struct AggregatedRho<S> {
    rm: DynamicRiskMeasure<S>,
    t: usize,
}

pub fn aggregate_rho0t<S: Scalar>(rm: &DynamicRiskMeasure<S>, t: usize) -> Result<AggregatedRho<S>> {
    let space = rm.model().space();
    space.check_times(t, t, space.horizon())?;
    Ok(AggregatedRho { rm: rm.clone(), t })
}

impl<S: Scalar> AggregatedRho<S> {
    pub fn t(&self) -> usize {
        self.t
    }
}

impl<S: Scalar> RiskFunctional<S> for AggregatedRho<S> {
    fn space(&self) -> &FilteredSpace<S> {
        self.rm.model().space()
    }

    fn eval(&self, x: &RandomVariable<S>) -> Result<S> {
        let space = self.rm.model().space();
        let r = self.rm.rho(x, self.t, space.horizon())?;
        Ok(space.expectation(&r, &TreeMeasure::p_measure(space)))
    }
}

/// Explicit dictionary for the aggregated functional: one entry per
/// selection of a pair on each time-`t` atom, with measure
/// `sum_A P(A) D^{j_A}(A) Q^{j_A}(. | A)` and penalty
/// `sum_A P(A) c^{j_A}(A)`. Selections touching an infinite penalty are
/// dropped (they never attain the max). Entry count is `pairs^atoms`,
/// guarded by `budget`.
pub fn aggregate_dictionary<S: Scalar>(
    rm: &DynamicRiskMeasure<S>,
    t: usize,
    budget: f64,
) -> Result<StaticRiskMeasure<S>> {
    let model = rm.model();
    let space = model.space();
    space.check_times(t, t, space.horizon())?;
    let natoms = space.atom_count(t);
    let npairs = model.pairs().len();
    let count = (npairs as f64).powi(natoms as i32);
    if count > budget {
        return Err(Error::GridTooLarge { points: count, budget });
    }
    let horizon = space.horizon();
    let per_pair: Vec<Vec<S>> = (0..npairs).map(|i| model.induced_leaf_measure(i, t)).collect();
    let p_atoms = space.atom_masses(space.p_weights(), t);
    let mut entries = Vec::new();
    let mut selection = vec![0usize; natoms];
    'outer: loop {
        let mut weights = vec![S::zero(); space.leaves()];
        let mut cost = S::zero();
        let mut skip = false;
        for (atom, range) in space.atoms(t).iter().enumerate() {
            let j = selection[atom];
            match &model.penalty().c(j, t, horizon)[atom] {
                Cost::Finite(c) => cost = cost + p_atoms[atom].clone() * c.clone(),
                Cost::Infinite => {
                    skip = true;
                    break;
                }
            }
            for leaf in range.clone() {
                weights[leaf] = per_pair[j][leaf].clone();
            }
        }
        if !skip {
            entries.push(DictEntry::from_leaf_weights(space, weights, Cost::Finite(cost))?);
        }
        let mut axis = 0;
        loop {
            if axis == natoms {
                break 'outer;
            }
            selection[axis] += 1;
            if selection[axis] < npairs {
                break;
            }
            selection[axis] = 0;
            axis += 1;
        }
    }
    let dict = DualDictionary::new(entries, Normalization::Accept)?;
    StaticRiskMeasure::new(model.space_arc(), dict)
}

/// Two independent routes to the aggregated penalty of one pair at `t`:
/// the expectation of the per-atom minimal penalties, and the conjugate of
/// the aggregated dictionary at the pair's induced time-0 point. Equal
/// within tolerance, or both infinite.
pub fn penalty_aggregation_check<S: Scalar>(
    rm: &DynamicRiskMeasure<S>,
    pair: usize,
    t: usize,
    budget: f64,
    tol: f64,
) -> Result<ConsistencyReport> {
    let model = rm.model();
    let space = model.space();
    let per_atom = rm.minimal_penalty(pair, t)?;
    let p_atoms = space.atom_masses(space.p_weights(), t);
    let mut lhs = Cost::Finite(S::zero());
    for (atom, c) in per_atom.iter().enumerate() {
        lhs = lhs.add(&c.clone().scale(&p_atoms[atom]));
    }
    let dict_measure = aggregate_dictionary(rm, t, budget)?;
    let target = model.induced_leaf_measure(pair, t);
    let rhs = dict_measure.minimal_penalty_raw(&target)?;
    let violation = lhs.gap(&rhs).approx();
    let mut report = ConsistencyReport::new("penalty-aggregation", tol);
    report.push(
        Scope::pair_times(t, space.horizon()).with_tag(format!("pair#{pair}")),
        violation,
        Some(Witness::new(
            format!("pair#{pair}"),
            json!({"nodewise_expectation": lhs.approx(), "aggregated_conjugate": rhs.approx()}),
        )),
    );
    Ok(report)
}

/// Representation fixed point: re-evaluating with the minimal penalty in
/// place of the model penalty must reproduce `rho_{t,u}` on the battery.
pub fn check_representation<S: Scalar>(
    rm: &DynamicRiskMeasure<S>,
    battery: &[RandomVariable<S>],
    tol: f64,
) -> Result<ConsistencyReport> {
    if battery.is_empty() {
        return Err(Error::EmptyBattery);
    }
    let space = rm.model().space();
    let horizon = space.horizon();
    let rebuilt = rm.rebuild_with_minimal_penalty()?;
    let p = TreeMeasure::p_measure(space);
    let mut report = ConsistencyReport::new("representation", tol);
    for u in 0..=horizon {
        for t in 0..=u {
            let mut worst = (0.0f64, None);
            for (i, x) in battery.iter().enumerate() {
                let x_u = space.conditional_expectation(x, &p, u)?;
                let a = rm.rho(&x_u, t, u)?;
                let b = rebuilt.rho(&x_u, t, u)?;
                let gap = a
                    .sub(&b)
                    .values()
                    .iter()
                    .map(|v| v.clone().abs().approx())
                    .fold(0.0, f64::max);
                track(&mut worst, gap, || Witness::new(format!("x#{i}"), json!(null)));
            }
            push(&mut report, Scope::pair_times(t, u), worst);
        }
    }
    report.sort();
    Ok(report)
}

fn track(worst: &mut (f64, Option<Witness>), violation: f64, witness: impl FnOnce() -> Witness) {
    if violation > worst.0 {
        *worst = (violation, Some(witness()));
    }
}

fn push(report: &mut ConsistencyReport, scope: Scope, worst: (f64, Option<Witness>)) {
    report.push(scope, worst.0.max(0.0), worst.1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual_static::check_static_axioms;
    use crate::tree::{build_tree, SubProbability, TreeSpec};

    fn uniform4() -> Arc<FilteredSpace<f64>> {
        build_tree(&TreeSpec { horizon: 2, branching: vec![2, 2, 2], weights: vec![0.25; 4] })
            .unwrap()
    }

    fn pair_p(space: &FilteredSpace<f64>) -> DualPair<f64> {
        DualPair { d: DiscountTable::ones(space), q: TreeMeasure::p_measure(space) }
    }

    fn expectation_model(space: &Arc<FilteredSpace<f64>>) -> DynamicRiskMeasure<f64> {
        let penalty = PenaltyTerm::zero(space, 1);
        DynamicRiskMeasure::new(
            DualModel::new(Arc::clone(space), vec![pair_p(space)], penalty).unwrap(),
        )
    }

    #[test]
    fn single_pair_is_the_conditional_expectation() {
        let sp = uniform4();
        let rm = expectation_model(&sp);
        let x = sp.rv(vec![4.0, 0.0, 2.0, 2.0]).unwrap();
        let r1 = rm.rho(&x, 1, 2).unwrap();
        assert_eq!(r1.values(), &[-2.0, -2.0, -2.0, -2.0]);
        let r0 = rm.rho(&x, 0, 2).unwrap();
        assert_eq!(r0.values(), &[-2.0; 4]);
        assert!(r1.level() <= 1);
        let direct = sp
            .conditional_expectation(&x.neg(), &TreeMeasure::p_measure(&sp), 1)
            .unwrap();
        assert_eq!(r1.values(), direct.values());
    }

    #[test]
    fn zero_payoff_evaluates_to_zero_nodewise() {
        let sp = uniform4();
        let q = TreeMeasure::new(&sp, vec![0.5, 0.0, 0.25, 0.25]).unwrap();
        let pairs = vec![
            pair_p(&sp),
            DualPair { d: DiscountTable::from_factors(&sp, &[0.5, 1.0]).unwrap(), q },
        ];
        let penalty = PenaltyTerm::zero(&sp, 2);
        let rm = DynamicRiskMeasure::new(DualModel::new(Arc::clone(&sp), pairs, penalty).unwrap());
        for t in 0..=2 {
            for u in t..=2 {
                let r = rm.rho(&sp.constant(0.0), t, u).unwrap();
                assert!(r.values().iter().all(|v| *v == 0.0), "t={t} u={u}");
            }
        }
    }

    #[test]
    fn infinite_penalty_pairs_are_skipped_atomwise() {
        let sp = uniform4();
        let q2 = TreeMeasure::new(&sp, vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        let mut penalty = PenaltyTerm::zero(&sp, 2);
        penalty
            .set(&sp, 1, 1, 2, vec![Cost::Infinite, Cost::Finite(0.0)])
            .unwrap();
        let pairs = vec![pair_p(&sp), DualPair { d: DiscountTable::ones(&sp), q: q2 }];
        let rm = DynamicRiskMeasure::new(DualModel::new(Arc::clone(&sp), pairs, penalty).unwrap());
        let x = sp.rv(vec![-1.0, -3.0, -5.0, 1.0]).unwrap();
        let r = rm.rho(&x, 1, 2).unwrap();
        // First atom: only the P pair (score 2). Second atom: max of the
        // P pair (score 2) and the concentrated pair (score 2).
        assert_eq!(sp.atom_values(&r, 1), vec![2.0, 2.0]);
    }

    #[test]
    fn cache_returns_identical_results() {
        let sp = uniform4();
        let rm = expectation_model(&sp);
        let x = sp.rv(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = rm.rho(&x, 1, 2).unwrap();
        let b = rm.rho(&x, 1, 2).unwrap();
        assert_eq!(a.values(), b.values());
        let y = sp.rv(vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        assert_ne!(rm.rho(&y, 1, 2).unwrap().values(), a.values());
    }

    #[test]
    fn time_order_and_measurability_are_enforced() {
        let sp = uniform4();
        let rm = expectation_model(&sp);
        let x = sp.rv(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(rm.rho(&x, 2, 1), Err(Error::TimeOrderViolation { .. })));
        assert!(matches!(rm.rho(&x, 0, 3), Err(Error::TimeOrderViolation { .. })));
        // x is genuinely terminal, so it is not measurable at u = 1.
        assert!(matches!(rm.rho(&x, 0, 1), Err(Error::NotAdapted { .. })));
    }

    #[test]
    fn own_pair_minimal_penalty_is_zero_for_zero_penalty_models() {
        let sp = uniform4();
        let rm = expectation_model(&sp);
        for t in 0..=2 {
            let c = rm.minimal_penalty(0, t).unwrap();
            assert!(c.iter().all(|v| matches!(v, Cost::Finite(x) if *x == 0.0)));
        }
    }

    #[test]
    fn zero_discount_pair_has_zero_minimal_penalty() {
        let sp = uniform4();
        let zero_d = DiscountTable::from_factors(&sp, &[0.0, 0.0]).unwrap();
        let pairs = vec![
            pair_p(&sp),
            DualPair { d: zero_d, q: TreeMeasure::p_measure(&sp) },
        ];
        let rm = DynamicRiskMeasure::new(
            DualModel::new(Arc::clone(&sp), pairs, PenaltyTerm::zero(&sp, 2)).unwrap(),
        );
        for t in 0..2 {
            let c = rm.minimal_penalty(1, t).unwrap();
            assert!(c.iter().all(|v| matches!(v, Cost::Finite(x) if *x == 0.0)), "t={t}");
        }
    }

    #[test]
    fn dynamic_conjugate_at_time_zero_matches_the_static_one() {
        let sp = uniform4();
        // Pair 2 carries zero discount and penalty 1 everywhere, the
        // dictionary {(1,P,0), (0,P,1)} lifted to the dynamic setting.
        let zero_d = DiscountTable::from_factors(&sp, &[0.0, 0.0]).unwrap();
        let mut penalty = PenaltyTerm::zero(&sp, 2);
        for t in 0..=2 {
            for u in t..=2 {
                let n = sp.atom_count(t);
                penalty.set(&sp, 1, t, u, vec![Cost::Finite(1.0); n]).unwrap();
            }
        }
        let pairs = vec![
            pair_p(&sp),
            DualPair { d: zero_d, q: TreeMeasure::p_measure(&sp) },
        ];
        let rm = DynamicRiskMeasure::new(
            DualModel::new(Arc::clone(&sp), pairs, penalty).unwrap(),
        );
        let c = rm.minimal_penalty(1, 0).unwrap();
        assert_eq!(c, vec![Cost::Finite(1.0)]);

        use crate::dual_static::{DictEntry, DualDictionary, Normalization, StaticRiskMeasure};
        let dict = DualDictionary::new(
            vec![
                DictEntry::new(
                    SubProbability {
                        a: 1.0,
                        q: TreeMeasure::p_measure(&sp),
                        q_non_unique: false,
                    },
                    Cost::Finite(0.0),
                ),
                DictEntry::new(
                    SubProbability {
                        a: 0.0,
                        q: TreeMeasure::p_measure(&sp),
                        q_non_unique: true,
                    },
                    Cost::Finite(1.0),
                ),
            ],
            Normalization::Verify,
        )
        .unwrap();
        let static_rm = StaticRiskMeasure::new(Arc::clone(&sp), dict).unwrap();
        let static_c = static_rm
            .minimal_penalty(&SubProbability {
                a: 0.0,
                q: TreeMeasure::p_measure(&sp),
                q_non_unique: true,
            })
            .unwrap();
        assert_eq!(static_c, Cost::Finite(1.0));
    }

    #[test]
    fn axioms_pass_on_the_conditional_expectation_model() {
        let sp = uniform4();
        let rm = expectation_model(&sp);
        let battery = vec![
            sp.rv(vec![4.0, 0.0, 2.0, 2.0]).unwrap(),
            sp.rv(vec![-1.0, 3.0, 0.5, -2.0]).unwrap(),
            sp.constant(-1.0),
        ];
        let report = check_dynamic_axioms(&rm, &battery, 1e-9).unwrap();
        assert!(report.passed(), "{}", report.render_table());
        for t in 0..=2 {
            let (gap, _) = dynamic_cash_additivity_gap(&rm, &battery, t).unwrap();
            assert!(gap <= 1e-12);
        }
    }

    #[test]
    fn non_normalized_penalty_fails_normalization_by_its_offset() {
        let sp = uniform4();
        let mut penalty = PenaltyTerm::zero(&sp, 1);
        for t in 0..=2 {
            for u in t..=2 {
                let n = sp.atom_count(t);
                penalty.set(&sp, 0, t, u, vec![Cost::Finite(0.1); n]).unwrap();
            }
        }
        let model = DualModel::new(Arc::clone(&sp), vec![pair_p(&sp)], penalty.clone());
        assert!(model.is_err());
        let opts = ModelOptions { require_normalized: false, ..Default::default() };
        let rm = DynamicRiskMeasure::new(
            DualModel::new_with(Arc::clone(&sp), vec![pair_p(&sp)], penalty, opts).unwrap(),
        );
        let battery = vec![sp.rv(vec![1.0, -1.0, 0.5, 0.0]).unwrap()];
        let report = check_dynamic_axioms(&rm, &battery, 1e-9).unwrap();
        assert!(!report.passed());
        let norm_items: Vec<_> = report
            .items
            .iter()
            .filter(|i| i.scope.tag == "normalization")
            .collect();
        assert!(!norm_items.is_empty());
        for item in norm_items {
            assert!((item.violation - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn regularity_holds_on_pair_models() {
        let sp = uniform4();
        let q = TreeMeasure::new(&sp, vec![0.4, 0.1, 0.3, 0.2]).unwrap();
        let pairs = vec![
            pair_p(&sp),
            DualPair { d: DiscountTable::from_factors(&sp, &[0.8, 0.9]).unwrap(), q },
        ];
        let rm = DynamicRiskMeasure::new(
            DualModel::new(Arc::clone(&sp), pairs, PenaltyTerm::zero(&sp, 2)).unwrap(),
        );
        let x = sp.rv(vec![3.0, -1.0, 2.0, 0.0]).unwrap();
        let y = sp.rv(vec![-2.0, 5.0, 1.0, 4.0]).unwrap();
        let cases = vec![
            RegularityCase { x: x.clone(), y: y.clone(), t: 1, event: vec![true; 4] },
            RegularityCase { x: x.clone(), y: y.clone(), t: 1, event: vec![false; 4] },
            RegularityCase { x, y, t: 1, event: vec![true, true, false, false] },
        ];
        let report = check_regularity(&rm, &cases, 1e-9).unwrap();
        assert!(report.passed(), "{}", report.render_table());
    }

    #[test]
    fn regularity_rejects_non_measurable_events() {
        let sp = uniform4();
        let rm = expectation_model(&sp);
        let x = sp.constant(1.0);
        let cases = vec![RegularityCase {
            x: x.clone(),
            y: x,
            t: 1,
            event: vec![true, false, false, false],
        }];
        assert!(matches!(
            check_regularity(&rm, &cases, 1e-9),
            Err(Error::NotMeasurableEvent { .. })
        ));
    }

    #[test]
    fn decomposition_of_a_half_mass_measure() {
        let sp = uniform4();
        let q = TreeMeasure::new(&sp, vec![0.5, 0.0, 0.25, 0.25]).unwrap();
        let mu = SubProbability { a: 0.5, q, q_non_unique: false };
        let dec = discount_decomposition(&sp, &mu, 1, true).unwrap();
        assert_eq!(dec.d_t.values(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(dec.null_atoms.is_empty());
        assert_eq!(dec.q_tilde.weights(), &[0.5, 0.0, 0.25, 0.25]);
        // q_tilde agrees with P at time 1 and mu = d_t * q_tilde leafwise.
        assert_eq!(sp.atom_masses(dec.q_tilde.weights(), 1), vec![0.5, 0.5]);
        let mu_leaf = mu.leaf_weights();
        for leaf in 0..4 {
            assert!(
                (dec.d_t.values()[leaf] * dec.q_tilde.weights()[leaf] - mu_leaf[leaf]).abs()
                    < 1e-15
            );
        }
    }

    #[test]
    fn decomposition_of_the_full_reference_measure_is_trivial() {
        let sp = uniform4();
        let mu = SubProbability {
            a: 1.0,
            q: TreeMeasure::p_measure(&sp),
            q_non_unique: false,
        };
        for t in 0..=2 {
            let dec = discount_decomposition(&sp, &mu, t, true).unwrap();
            assert!(dec.d_t.values().iter().all(|v| *v == 1.0));
            assert_eq!(dec.q_tilde.weights(), sp.p_weights());
        }
    }

    #[test]
    fn decomposition_with_a_null_atom_falls_back_to_p() {
        let sp = uniform4();
        let q = TreeMeasure::new(&sp, vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        let mu = SubProbability { a: 0.5, q: q.clone(), q_non_unique: false };
        let dec = discount_decomposition(&sp, &mu, 1, true).unwrap();
        assert_eq!(dec.null_atoms, vec![0]);
        // Z_1 = (0,0,2,2): P on the null atom, rescaled Q on the other.
        assert_eq!(dec.d_t.values(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(dec.q_tilde.weights(), &[0.25, 0.25, 0.25, 0.25]);
        // The terminal density vanishes on the null atom.
        let z_t = sp.density_process(&q, 2).unwrap();
        assert_eq!(z_t.values()[0], 0.0);
        assert_eq!(z_t.values()[1], 0.0);
    }

    #[test]
    fn decomposition_bound_check_is_conditional() {
        let sp = uniform4();
        let q = TreeMeasure::new(&sp, vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        let mu = SubProbability { a: 1.0, q, q_non_unique: false };
        // D_1 reaches 1.0 on the charged atom only after rescaling by the
        // density 2, so the certified call fails while the raw one works.
        assert!(discount_decomposition(&sp, &mu, 0, true).is_ok());
        let dec = discount_decomposition(&sp, &mu, 1, false).unwrap();
        assert!(dec.d_t.values().iter().any(|v| *v > 0.99));
    }

    #[test]
    fn aggregation_of_the_conditional_expectation_is_the_expectation() {
        let sp = uniform4();
        let rm = expectation_model(&sp);
        let agg = aggregate_rho0t(&rm, 1).unwrap();
        let x = sp.rv(vec![4.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(agg.eval(&x).unwrap(), -2.0);
        let battery = vec![x, sp.rv(vec![-1.0, 3.0, 0.5, -2.0]).unwrap()];
        let report = check_static_axioms(&agg, &battery, &[0.0, 0.5, 1.0], 1e-9).unwrap();
        assert!(report.passed(), "{}", report.render_table());
    }

    #[test]
    fn penalty_aggregation_zero_and_constant_cases() {
        let sp = uniform4();
        let rm = expectation_model(&sp);
        let report = penalty_aggregation_check(&rm, 0, 1, 1e6, 1e-9).unwrap();
        assert!(report.passed(), "{}", report.render_table());
        assert_eq!(report.worst_violation(), 0.0);

        let mut penalty = PenaltyTerm::zero(&sp, 1);
        for t in 0..=2 {
            for u in t..=2 {
                let n = sp.atom_count(t);
                penalty.set(&sp, 0, t, u, vec![Cost::Finite(0.3); n]).unwrap();
            }
        }
        let opts = ModelOptions { require_normalized: false, ..Default::default() };
        let rm = DynamicRiskMeasure::new(
            DualModel::new_with(Arc::clone(&sp), vec![pair_p(&sp)], penalty, opts).unwrap(),
        );
        let report = penalty_aggregation_check(&rm, 0, 1, 1e6, 1e-9).unwrap();
        assert!(report.passed(), "{}", report.render_table());
        let item = &report.items[0];
        assert!((item.witness.as_ref().unwrap().detail["nodewise_expectation"]
            .as_f64()
            .unwrap()
            - 0.3)
            .abs()
            < 1e-12);
    }

    #[test]
    fn penalty_aggregation_on_a_two_pair_model() {
        let sp = uniform4();
        let q = TreeMeasure::new(&sp, vec![0.4, 0.1, 0.3, 0.2]).unwrap();
        let mut penalty = PenaltyTerm::zero(&sp, 2);
        for t in 0..=2 {
            for u in t..=2 {
                let n = sp.atom_count(t);
                penalty.set(&sp, 1, t, u, vec![Cost::Finite(0.25); n]).unwrap();
            }
        }
        let pairs = vec![
            pair_p(&sp),
            DualPair { d: DiscountTable::from_factors(&sp, &[0.5, 0.8]).unwrap(), q },
        ];
        let rm = DynamicRiskMeasure::new(
            DualModel::new(Arc::clone(&sp), pairs, penalty).unwrap(),
        );
        for pair in 0..2 {
            for t in 0..=2 {
                let report = penalty_aggregation_check(&rm, pair, t, 1e6, 1e-9).unwrap();
                assert!(report.passed(), "pair={pair} t={t}\n{}", report.render_table());
            }
        }
    }

    #[test]
    fn representation_fixed_point_holds() {
        let sp = uniform4();
        let q = TreeMeasure::new(&sp, vec![0.4, 0.1, 0.3, 0.2]).unwrap();
        let mut penalty = PenaltyTerm::zero(&sp, 2);
        for t in 0..=2 {
            for u in t..=2 {
                let n = sp.atom_count(t);
                penalty.set(&sp, 1, t, u, vec![Cost::Finite(0.4); n]).unwrap();
            }
        }
        let pairs = vec![
            pair_p(&sp),
            DualPair { d: DiscountTable::from_factors(&sp, &[0.6, 0.7]).unwrap(), q },
        ];
        let rm = DynamicRiskMeasure::new(
            DualModel::new(Arc::clone(&sp), pairs, penalty).unwrap(),
        );
        let battery = vec![
            sp.rv(vec![4.0, 0.0, 2.0, 2.0]).unwrap(),
            sp.rv(vec![-1.0, 3.0, 0.5, -2.0]).unwrap(),
            sp.rv(vec![0.5, -0.25, 1.5, -3.0]).unwrap(),
        ];
        let report = check_representation(&rm, &battery, 1e-9).unwrap();
        assert!(report.passed(), "{}", report.render_table());
    }

    #[test]
    fn decreasing_payoffs_have_increasing_risk_with_vanishing_gap() {
        let sp = uniform4();
        let q = TreeMeasure::new(&sp, vec![0.4, 0.1, 0.3, 0.2]).unwrap();
        let pairs = vec![
            pair_p(&sp),
            DualPair { d: DiscountTable::from_factors(&sp, &[0.5, 0.9]).unwrap(), q },
        ];
        let rm = DynamicRiskMeasure::new(
            DualModel::new(Arc::clone(&sp), pairs, PenaltyTerm::zero(&sp, 2)).unwrap(),
        );
        let x = sp.rv(vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let limit = rm.rho(&x, 1, 2).unwrap();
        let mut previous: Option<Vec<f64>> = None;
        for n in 0..=20 {
            let c = (0.5f64).powi(n);
            let xn = x.map(|v| v + c);
            let r = rm.rho(&xn, 1, 2).unwrap();
            if let Some(prev) = &previous {
                for (a, b) in r.values().iter().zip(prev) {
                    assert!(*a >= *b - 1e-15);
                }
            }
            previous = Some(r.values().to_vec());
            if n == 20 {
                for (a, b) in r.values().iter().zip(limit.values()) {
                    assert!((a - b).abs() <= 2.0 * c);
                }
            }
        }
    }

    #[test]
    fn discount_table_validation() {
        let sp = uniform4();
        assert!(matches!(
            DiscountTable::from_factors(&sp, &[1.5, 0.5]),
            Err(Error::FactorOutOfRange { .. })
        ));
        assert!(DiscountTable::from_factors(&sp, &[0.5]).is_err());
        let mut table = BTreeMap::new();
        table.insert((0, 1), vec![0.5]);
        table.insert((0, 2), vec![0.25]);
        // (1,2) missing.
        assert!(DiscountTable::new(&sp, table).is_err());
        let d = DiscountTable::from_factors(&sp, &[0.5, 0.4]).unwrap();
        assert_eq!(d.atom_values(&sp, 0, 2).unwrap(), vec![0.2]);
        assert_eq!(d.atom_values(&sp, 1, 1).unwrap(), vec![1.0, 1.0]);
        assert_eq!(d.factors().unwrap(), &[0.5, 0.4]);
    }

    #[test]
    fn equivalence_flag_is_enforced() {
        let sp = uniform4();
        let q = TreeMeasure::new(&sp, vec![0.5, 0.0, 0.25, 0.25]).unwrap();
        let pairs = vec![DualPair { d: DiscountTable::ones(&sp), q }];
        let opts = ModelOptions { all_q_equivalent: true, require_normalized: true };
        assert!(DualModel::new_with(
            Arc::clone(&sp),
            pairs,
            PenaltyTerm::zero(&sp, 1),
            opts
        )
        .is_err());
    }
}
