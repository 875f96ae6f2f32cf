//! Static risk measures given by a finite dual dictionary.
//!
//! A dictionary is a finite list of subprobabilities `a_i Q_i` with penalty
//! values `c_i` in `[0, +inf]`; the risk measure it generates is
//!
//! ```text
//! rho(X) = max_i { a_i * E_{Q_i}[-X] - c_i }        (finite c_i only)
//! ```
//!
//! a finite max of affine functionals of `X`. Because of that shape the
//! minimal penalty (the convex conjugate of `rho` in the measure pairing)
//! is the lower convex hull of the dictionary points and is computed here
//! exactly by a small linear program; a brute-force grid search over `X`
//! serves as an independent oracle for it in the test suites.

use crate::error::{Error, Result};
use crate::lp::{solve_eq_lp, LpOutcome};
use crate::report::{ConsistencyReport, Scope, Witness};
use crate::scalar::{dot, total, Cost, Scalar};
use crate::tree::{FilteredSpace, RandomVariable, SubProbability, TreeMeasure};
use num_rational::BigRational;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::sync::Arc;

/// One dual dictionary record: a subprobability and its penalty.
///
/// The authoritative datum is the raw leaf vector `a * Q`; the split into
/// mass and direction is a derived view. Keeping the vector verbatim
/// matters because the conjugate LP runs in exact arithmetic: a
/// decompose-then-recombine round trip through division would perturb
/// hull membership at the last bit.
#[derive(Clone, Debug, PartialEq)]
pub struct DictEntry<S> {
    pub(crate) mu: SubProbability<S>,
    pub(crate) c: Cost<S>,
    pub(crate) leaf: Vec<S>,
}

impl<S: Scalar> DictEntry<S> {
    pub fn new(mu: SubProbability<S>, c: Cost<S>) -> DictEntry<S> {
        let leaf = mu.leaf_weights();
        DictEntry { mu, c, leaf }
    }

    /// Builds the entry from raw nonnegative leaf weights, keeping them
    /// verbatim as the dual point.
    pub fn from_leaf_weights(
        space: &FilteredSpace<S>,
        weights: Vec<S>,
        c: Cost<S>,
    ) -> Result<DictEntry<S>> {
        let mu = decompose_subprobability(space, &weights)?;
        Ok(DictEntry { mu, c, leaf: weights })
    }

    pub fn mu(&self) -> &SubProbability<S> {
        &self.mu
    }

    pub fn c(&self) -> &Cost<S> {
        &self.c
    }

    pub fn leaf_weights(&self) -> &[S] {
        &self.leaf
    }
}

/// How the constructor treats the normalization requirement
/// `min_i c_i = 0` (which is what makes `rho(0) = 0`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// Reject dictionaries whose smallest finite penalty is not zero.
    /// Default: a nonzero minimum is usually a modeling error.
    Verify,
    /// Shift every finite penalty down by the minimum.
    Shift,
    /// Keep the penalties as given. For functionals that are deliberately
    /// non-normalized, e.g. aggregations of shifted penalty processes.
    Accept,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualDictionary<S> {
    entries: Vec<DictEntry<S>>,
}

impl<S: Scalar> DualDictionary<S> {
    pub fn new(mut entries: Vec<DictEntry<S>>, mode: Normalization) -> Result<DualDictionary<S>> {
        if entries.is_empty() {
            return Err(Error::Invalid("dictionary has no entries".into()));
        }
        for e in &entries {
            if e.mu.a < S::zero() {
                return Err(Error::Invalid(format!(
                    "dictionary mass {} is negative",
                    e.mu.a.approx()
                )));
            }
            if e.mu.a > S::one() + S::of(1e-12) {
                return Err(Error::MassExceedsOne { mass: e.mu.a.approx() });
            }
            if let Cost::Finite(c) = &e.c {
                if *c < S::zero() {
                    return Err(Error::Invalid(format!(
                        "penalty {} is negative",
                        c.approx()
                    )));
                }
            }
        }
        let min_c = entries
            .iter()
            .filter_map(|e| e.c.finite())
            .fold(None::<S>, |acc, c| match acc {
                Some(m) if m <= *c => Some(m),
                _ => Some(c.clone()),
            });
        let Some(min_c) = min_c else {
            return Err(Error::Invalid("dictionary has no finite-penalty entry".into()));
        };
        match mode {
            Normalization::Verify => {
                if min_c > S::of(1e-12) {
                    return Err(Error::Invalid(format!(
                        "dictionary is not normalized: smallest finite penalty is {}",
                        min_c.approx()
                    )));
                }
            }
            Normalization::Shift => {
                for e in entries.iter_mut() {
                    if let Cost::Finite(c) = &mut e.c {
                        *c = c.clone() - min_c.clone();
                    }
                }
            }
            Normalization::Accept => {}
        }
        Ok(DualDictionary { entries })
    }

    pub fn entries(&self) -> &[DictEntry<S>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Static risk measure: a dictionary bound to its space.
#[derive(Clone, Debug)]
pub struct StaticRiskMeasure<S> {
    space: Arc<FilteredSpace<S>>,
    dictionary: DualDictionary<S>,
}

/// Anything that maps terminal payoffs to a single number the axiom battery
/// can probe: dictionary-backed measures and time-aggregated dynamic ones.
pub trait RiskFunctional<S: Scalar> {
    fn space(&self) -> &FilteredSpace<S>;
    fn eval(&self, x: &RandomVariable<S>) -> Result<S>;
}

impl<S: Scalar> StaticRiskMeasure<S> {
    pub fn new(space: Arc<FilteredSpace<S>>, dictionary: DualDictionary<S>) -> Result<Self> {
        for e in dictionary.entries() {
            if e.leaf.len() != space.leaves() {
                return Err(Error::SpaceMismatch {
                    context: "dictionary entry".into(),
                    expected: space.leaves(),
                    got: e.leaf.len(),
                });
            }
        }
        Ok(StaticRiskMeasure { space, dictionary })
    }

    pub fn dictionary(&self) -> &DualDictionary<S> {
        &self.dictionary
    }

    pub fn space_arc(&self) -> Arc<FilteredSpace<S>> {
        Arc::clone(&self.space)
    }

    /// `max_i { a_i E_{Q_i}[-X] - c_i }` over the finite-penalty entries.
    pub fn rho(&self, x: &RandomVariable<S>) -> Result<S> {
        if x.values().len() != self.space.leaves() {
            return Err(Error::SpaceMismatch {
                context: "payoff".into(),
                expected: self.space.leaves(),
                got: x.values().len(),
            });
        }
        let mut best: Option<S> = None;
        for e in self.dictionary.entries() {
            let Cost::Finite(c) = &e.c else { continue };
            let v = -dot(&e.leaf, x.values()) - c.clone();
            if best.as_ref().map_or(true, |b| v > *b) {
                best = Some(v);
            }
        }
        Ok(best.expect("dictionary has a finite-penalty entry"))
    }

    /// Minimal penalty at a subprobability: the exact conjugate value.
    pub fn minimal_penalty(&self, mu: &SubProbability<S>) -> Result<Cost<S>> {
        self.minimal_penalty_raw(&mu.leaf_weights())
    }

    /// Conjugate at an arbitrary nonnegative leaf measure. The value is the
    /// cheapest convex combination of dictionary points hitting the target
    /// leaf by leaf, `+inf` when the target lies outside their hull (which
    /// covers every target of mass above one). Pivoting runs in exact
    /// rational arithmetic regardless of the ambient scalar.
    pub fn minimal_penalty_raw(&self, target: &[S]) -> Result<Cost<S>> {
        if target.len() != self.space.leaves() {
            return Err(Error::SpaceMismatch {
                context: "conjugate target".into(),
                expected: self.space.leaves(),
                got: target.len(),
            });
        }
        let finite: Vec<(&DictEntry<S>, &S)> = self
            .dictionary
            .entries()
            .iter()
            .filter_map(|e| e.c.finite().map(|c| (e, c)))
            .collect();
        let leaves = self.space.leaves();
        let mut a_mat: Vec<Vec<BigRational>> = Vec::with_capacity(leaves + 1);
        for leaf in 0..leaves {
            a_mat.push(finite.iter().map(|(e, _)| e.leaf[leaf].to_exact()).collect());
        }
        a_mat.push(vec![BigRational::one(); finite.len()]);
        let mut b: Vec<BigRational> = target.iter().map(Scalar::to_exact).collect();
        b.push(BigRational::one());
        let costs: Vec<BigRational> = finite.iter().map(|(_, c)| c.to_exact()).collect();
        match solve_eq_lp(&a_mat, &b, &costs)? {
            LpOutcome::Optimal { value, .. } => Ok(Cost::Finite(S::from_exact(&value))),
            LpOutcome::Infeasible => Ok(Cost::Infinite),
        }
    }

    /// Replaces every penalty by the conjugate value at its own point,
    /// dropping entries the hull prices at `+inf` (none in practice: each
    /// point supports itself). The result generates the same risk measure,
    /// so the penalties are kept as computed: a normalized dictionary
    /// tightens to a normalized one on its own, and a deliberately
    /// non-normalized dictionary must not be rejected here.
    pub fn tighten(&self) -> Result<StaticRiskMeasure<S>> {
        let mut entries = Vec::new();
        for e in self.dictionary.entries() {
            match self.minimal_penalty_raw(&e.leaf)? {
                Cost::Finite(c) => entries.push(DictEntry {
                    mu: e.mu.clone(),
                    c: Cost::Finite(c),
                    leaf: e.leaf.clone(),
                }),
                Cost::Infinite => {}
            }
        }
        StaticRiskMeasure::new(
            Arc::clone(&self.space),
            DualDictionary::new(entries, Normalization::Accept)?,
        )
    }
}

impl<S: Scalar> RiskFunctional<S> for StaticRiskMeasure<S> {
    fn space(&self) -> &FilteredSpace<S> {
        &self.space
    }

    fn eval(&self, x: &RandomVariable<S>) -> Result<S> {
        self.rho(x)
    }
}

/// Splits raw nonnegative leaf weights into mass and direction `a * Q`.
/// With zero mass the direction defaults to `P` and is flagged arbitrary.
pub fn decompose_subprobability<S: Scalar>(
    space: &FilteredSpace<S>,
    raw: &[S],
) -> Result<SubProbability<S>> {
    if raw.len() != space.leaves() {
        return Err(Error::SpaceMismatch {
            context: "raw subprobability".into(),
            expected: space.leaves(),
            got: raw.len(),
        });
    }
    for (index, w) in raw.iter().enumerate() {
        if *w < S::zero() {
            return Err(Error::NonPositiveWeight { index, value: w.approx() });
        }
    }
    let mass = total(raw);
    if mass > S::one() + S::of(1e-12) {
        return Err(Error::MassExceedsOne { mass: mass.approx() });
    }
    if mass.is_zero() {
        return Ok(SubProbability {
            a: S::zero(),
            q: TreeMeasure::p_measure(space),
            q_non_unique: true,
        });
    }
    let a = if mass > S::one() { S::one() } else { mass.clone() };
    let q = TreeMeasure::new(space, raw.iter().map(|w| w.clone() / mass.clone()).collect())?;
    Ok(SubProbability { a, q, q_non_unique: false })
}

/// Axiom battery for any static functional: convexity on sampled pairs,
/// antitone monotonicity, cash-subadditivity against nonnegative shifts,
/// normalization, and the two bounds `rho(m) >= -m`, `rho(-m) <= m` that
/// follow from them. One report item per axiom, worst violation wins.
pub fn check_static_axioms<S: Scalar, F: RiskFunctional<S>>(
    rm: &F,
    battery: &[RandomVariable<S>],
    lambda_samples: &[S],
    tol: f64,
) -> Result<ConsistencyReport> {
    if battery.is_empty() {
        return Err(Error::EmptyBattery);
    }
    let space = rm.space();
    let mut report = ConsistencyReport::new("static-axioms", tol);
    let zero = S::zero();

    let shifts = shift_magnitudes(battery);

    // convexity: rho(l X + (1-l) Y) <= l rho(X) + (1-l) rho(Y)
    let mut worst = (0.0f64, None);
    for (i, x) in battery.iter().enumerate() {
        let y = &battery[(i + 1) % battery.len()];
        let rx = rm.eval(x)?;
        let ry = rm.eval(y)?;
        for l in lambda_samples {
            if *l < zero || *l > S::one() {
                continue;
            }
            let mix = x.zip(y, |a, b| {
                l.clone() * a.clone() + (S::one() - l.clone()) * b.clone()
            });
            let lhs = rm.eval(&mix)?;
            let rhs = l.clone() * rx.clone() + (S::one() - l.clone()) * ry.clone();
            track(&mut worst, (lhs - rhs).approx(), || {
                Witness::new(
                    format!("x#{i}"),
                    json!({"x": x.approx_values(), "y": y.approx_values(), "lambda": l.approx()}),
                )
            });
        }
    }
    finish(&mut report, "convexity", worst);

    // monotonicity: X <= Y pointwise implies rho(X) >= rho(Y)
    let mut worst = (0.0f64, None);
    for (i, x) in battery.iter().enumerate() {
        let other = &battery[(i + 1) % battery.len()];
        let bump = other.map(|v| v.clone().abs());
        let y = x.add(&bump);
        let vx = rm.eval(x)?;
        let vy = rm.eval(&y)?;
        track(&mut worst, (vy - vx).approx(), || {
            Witness::new(
                format!("x#{i}"),
                json!({"x": x.approx_values(), "y": y.approx_values()}),
            )
        });
    }
    finish(&mut report, "monotonicity", worst);

    // cash-subadditivity: rho(X + m) >= rho(X) - m and rho(X - m) <= rho(X) + m
    let mut worst = (0.0f64, None);
    for (i, x) in battery.iter().enumerate() {
        let vx = rm.eval(x)?;
        for m in &shifts {
            let up = rm.eval(&x.map(|v| v.clone() + m.clone()))?;
            let down = rm.eval(&x.map(|v| v.clone() - m.clone()))?;
            let gap_up = (vx.clone() - m.clone() - up).approx();
            let gap_down = (down - vx.clone() - m.clone()).approx();
            track(&mut worst, gap_up.max(gap_down), || {
                Witness::new(
                    format!("x#{i}"),
                    json!({"x": x.approx_values(), "m": m.approx()}),
                )
            });
        }
    }
    finish(&mut report, "cash-subadditivity", worst);

    // normalization: rho(0) = 0
    let v0 = rm.eval(&space.constant(zero.clone()))?;
    report.push(
        Scope::tag("normalization"),
        v0.approx().abs(),
        Some(Witness::new("zero", json!({"rho_zero": v0.approx()}))),
    );

    // bounds: for m >= 0, rho(m) >= -m and rho(-m) <= m
    let mut worst = (0.0f64, None);
    for m in &shifts {
        let at_m = rm.eval(&space.constant(m.clone()))?;
        let at_neg = rm.eval(&space.constant(-m.clone()))?;
        let lower = (-m.clone() - at_m).approx();
        let upper = (at_neg - m.clone()).approx();
        track(&mut worst, lower.max(upper), || {
            Witness::new("m", json!({"m": m.approx()}))
        });
    }
    finish(&mut report, "constant-bounds", worst);

    report.sort();
    Ok(report)
}

/// Worst cash-additivity gap `|rho(X + m) - (rho(X) - m)|` over the battery,
/// with its witness. Reported separately from the axiom battery because
/// cash-subadditive measures are allowed to fail it; the gap being zero is
/// what characterizes the cash-additive special case.
pub fn cash_additivity_gap<S: Scalar, F: RiskFunctional<S>>(
    rm: &F,
    battery: &[RandomVariable<S>],
) -> Result<(f64, Witness)> {
    if battery.is_empty() {
        return Err(Error::EmptyBattery);
    }
    let shifts = shift_magnitudes(battery);
    let mut worst = 0.0f64;
    let mut witness = Witness::new("none", json!(null));
    for (i, x) in battery.iter().enumerate() {
        let vx = rm.eval(x)?;
        for m in &shifts {
            let up = rm.eval(&x.map(|v| v.clone() + m.clone()))?;
            let gap = (up - (vx.clone() - m.clone())).approx().abs();
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

/// Nonnegative shift magnitudes scaled to the battery: zero, unit, and
/// fractions of the largest payoff magnitude.
fn shift_magnitudes<S: Scalar>(battery: &[RandomVariable<S>]) -> Vec<S> {
    let mut peak = S::zero();
    for x in battery {
        for v in x.values() {
            let a = v.clone().abs();
            if a > peak {
                peak = a;
            }
        }
    }
    if peak.is_zero() {
        peak = S::one();
    }
    vec![
        S::zero(),
        S::one(),
        peak.clone() / S::of(4.0),
        peak.clone() / S::of(2.0),
        peak,
    ]
}

fn track(worst: &mut (f64, Option<Witness>), violation: f64, witness: impl FnOnce() -> Witness) {
    if violation > worst.0 {
        *worst = (violation, Some(witness()));
    }
}

fn finish(report: &mut ConsistencyReport, tag: &str, worst: (f64, Option<Witness>)) {
    report.push(Scope::tag(tag), worst.0.max(0.0), worst.1);
}

/// Options for the brute-force conjugate oracle.
#[derive(Clone, Debug)]
pub struct OracleOptions {
    /// Maximum number of full-grid points; beyond it the oracle switches to
    /// multi-start coordinate refinement (or errors when disabled).
    pub budget: f64,
    pub refine: bool,
    pub starts: usize,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { budget: 2e7, refine: true, starts: 64, seed: 7 }
    }
}

/// Brute-force lower bound on the minimal penalty: maximizes
/// `E_mu[-X] - rho(X)` over the lattice `[-box, box]^leaves` with `n`
/// points per axis. Exhaustive within budget; otherwise seeded multi-start
/// coordinate ascent with pairwise polishing. Never calls the LP, so the
/// two conjugate routes stay independent.
pub fn conjugate_grid_oracle<S: Scalar>(
    rm: &StaticRiskMeasure<S>,
    mu: &SubProbability<S>,
    half_box: f64,
    n: usize,
    opts: &OracleOptions,
) -> Result<S> {
    if half_box <= 0.0 || n < 2 {
        return Err(Error::Invalid("oracle needs box > 0 and n >= 2".into()));
    }
    let leaves = rm.space.leaves();
    let mu_w: Vec<S> = mu.leaf_weights();
    if mu_w.len() != leaves {
        return Err(Error::SpaceMismatch {
            context: "oracle target".into(),
            expected: leaves,
            got: mu_w.len(),
        });
    }
    let step = 2.0 * half_box / (n - 1) as f64;
    let grid: Vec<S> = (0..n).map(|k| S::of(-half_box + step * k as f64)).collect();
    let entries: Vec<(Vec<S>, S)> = rm
        .dictionary
        .entries()
        .iter()
        .filter_map(|e| e.c.finite().map(|c| (e.leaf.clone(), c.clone())))
        .collect();

    let points = (n as f64).powi(leaves as i32);
    if points <= opts.budget {
        return Ok(enumerate_lattice(&grid, &mu_w, &entries, leaves));
    }
    if !opts.refine {
        return Err(Error::GridTooLarge { points, budget: opts.budget });
    }
    Ok(refine_lattice(&grid, &mu_w, &entries, leaves, opts))
}

/// Objective at the current lattice point, given maintained dot products.
fn objective<S: Scalar>(mu_dot: &S, entry_dots: &[S], entries: &[(Vec<S>, S)]) -> S {
    // g(X) = -<mu, X> - max_i(-<a_i Q_i, X> - c_i)
    let mut rho: Option<S> = None;
    for (dot_i, (_, c)) in entry_dots.iter().zip(entries) {
        let v = -dot_i.clone() - c.clone();
        if rho.as_ref().map_or(true, |b| v > *b) {
            rho = Some(v);
        }
    }
    -mu_dot.clone() - rho.expect("at least one finite entry")
}

struct LatticeState<S> {
    idx: Vec<usize>,
    mu_dot: S,
    entry_dots: Vec<S>,
}

impl<S: Scalar> LatticeState<S> {
    fn at(idx: Vec<usize>, grid: &[S], mu_w: &[S], entries: &[(Vec<S>, S)]) -> Self {
        let x: Vec<S> = idx.iter().map(|&k| grid[k].clone()).collect();
        let mu_dot = dot(mu_w, &x);
        let entry_dots = entries.iter().map(|(coeff, _)| dot(coeff, &x)).collect();
        LatticeState { idx, mu_dot, entry_dots }
    }

    fn set(&mut self, leaf: usize, k: usize, grid: &[S], mu_w: &[S], entries: &[(Vec<S>, S)]) {
        let old = grid[self.idx[leaf]].clone();
        let new = grid[k].clone();
        let delta = new - old;
        if !delta.is_zero() {
            self.mu_dot = self.mu_dot.clone() + mu_w[leaf].clone() * delta.clone();
            for (dot_i, (coeff, _)) in self.entry_dots.iter_mut().zip(entries) {
                *dot_i = dot_i.clone() + coeff[leaf].clone() * delta.clone();
            }
        }
        self.idx[leaf] = k;
    }
}

fn enumerate_lattice<S: Scalar>(
    grid: &[S],
    mu_w: &[S],
    entries: &[(Vec<S>, S)],
    leaves: usize,
) -> S {
    let n = grid.len();
    let mut state = LatticeState::at(vec![0; leaves], grid, mu_w, entries);
    let mut best = objective(&state.mu_dot, &state.entry_dots, entries);
    loop {
        // Odometer step; rolled-over axes reset to the first grid value.
        let mut axis = 0;
        loop {
            if axis == leaves {
                return best;
            }
            if state.idx[axis] + 1 < n {
                let next = state.idx[axis] + 1;
                state.set(axis, next, grid, mu_w, entries);
                break;
            }
            state.set(axis, 0, grid, mu_w, entries);
            axis += 1;
        }
        let v = objective(&state.mu_dot, &state.entry_dots, entries);
        if v > best {
            best = v;
        }
    }
}

fn refine_lattice<S: Scalar>(
    grid: &[S],
    mu_w: &[S],
    entries: &[(Vec<S>, S)],
    leaves: usize,
    opts: &OracleOptions,
) -> S {
    let n = grid.len();
    let zero_idx = grid
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            (*a).clone().abs().partial_cmp(&(*b).clone().abs()).unwrap()
        })
        .map(|(k, _)| k)
        .unwrap();
    let mut starts: Vec<Vec<usize>> = vec![vec![zero_idx; leaves]];
    // Corner of the box maximizing each single affine piece.
    for (coeff, _) in entries {
        starts.push(
            (0..leaves)
                .map(|leaf| {
                    if coeff[leaf] >= mu_w[leaf] {
                        n - 1
                    } else {
                        0
                    }
                })
                .collect(),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    while starts.len() < opts.starts {
        starts.push((0..leaves).map(|_| rng.gen_range(0..n)).collect());
    }

    let mut best: Option<S> = None;
    for idx in starts {
        let mut state = LatticeState::at(idx, grid, mu_w, entries);
        let mut current = objective(&state.mu_dot, &state.entry_dots, entries);
        // Cyclic coordinate ascent until a full sweep makes no progress.
        let mut improved = true;
        let mut sweeps = 0;
        while improved && sweeps < 200 {
            improved = false;
            sweeps += 1;
            for leaf in 0..leaves {
                let here = state.idx[leaf];
                let mut best_k = here;
                for k in 0..n {
                    if k == here {
                        continue;
                    }
                    state.set(leaf, k, grid, mu_w, entries);
                    let v = objective(&state.mu_dot, &state.entry_dots, entries);
                    if v > current {
                        current = v;
                        best_k = k;
                    }
                }
                state.set(leaf, best_k, grid, mu_w, entries);
                improved |= best_k != here;
            }
            // Pairwise +-1 polish to step across single-coordinate ridges.
            for i in 0..leaves {
                for j in (i + 1)..leaves {
                    let (ki, kj) = (state.idx[i], state.idx[j]);
                    for (di, dj) in [(1i64, 1i64), (1, -1), (-1, 1), (-1, -1)] {
                        let ni = ki as i64 + di;
                        let nj = kj as i64 + dj;
                        if ni < 0 || nj < 0 || ni >= n as i64 || nj >= n as i64 {
                            continue;
                        }
                        state.set(i, ni as usize, grid, mu_w, entries);
                        state.set(j, nj as usize, grid, mu_w, entries);
                        let v = objective(&state.mu_dot, &state.entry_dots, entries);
                        if v > current {
                            current = v;
                            improved = true;
                        } else {
                            state.set(i, ki, grid, mu_w, entries);
                            state.set(j, kj, grid, mu_w, entries);
                        }
                    }
                }
            }
        }
        if best.as_ref().map_or(true, |b| current > *b) {
            best = Some(current);
        }
    }
    best.expect("at least one start")
}
