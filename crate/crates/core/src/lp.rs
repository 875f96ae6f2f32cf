//! Dense two-phase simplex for the tiny equality-form programs behind
//! minimal penalties.
//!
//! Problems have one row per leaf plus a convex-combination row and one
//! column per dual entry, so a dense tableau is the right tool. The solver
//! is generic over [`Scalar`]; instantiated with `BigRational` every pivot
//! is exact and feasibility is decided without tolerance, which is how the
//! penalty routines call it.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome<S> {
    Optimal { value: S, solution: Vec<S> },
    Infeasible,
}

/// Minimizes `c·x` over `{A x = b, x >= 0}`.
///
/// `a` is row-major with `b.len()` rows of `c.len()` entries. The feasible
/// region is expected to be bounded (every caller includes a simplex row);
/// an unbounded ray is reported as an error rather than an outcome.
pub fn solve_eq_lp<S: Scalar>(a: &[Vec<S>], b: &[S], c: &[S]) -> Result<LpOutcome<S>> {
    let m = b.len();
    let n = c.len();
    if a.len() != m || a.iter().any(|row| row.len() != n) {
        return Err(Error::Invalid("LP dimensions are inconsistent".into()));
    }
    if n == 0 {
        return Ok(if b.iter().all(|v| v.is_zero()) {
            LpOutcome::Optimal { value: S::zero(), solution: vec![] }
        } else {
            LpOutcome::Infeasible
        });
    }
    let eps = if S::exact() { S::zero() } else { S::of(1e-11) };

    // Tableau: m constraint rows over n structural + m artificial columns,
    // rhs kept separately. Rows are sign-flipped so every rhs is >= 0 and
    // artificial i starts basic in row i.
    let mut rows: Vec<Vec<S>> = Vec::with_capacity(m);
    let mut rhs: Vec<S> = Vec::with_capacity(m);
    for i in 0..m {
        let flip = b[i] < S::zero();
        let mut row: Vec<S> = a[i]
            .iter()
            .map(|v| if flip { -v.clone() } else { v.clone() })
            .collect();
        row.extend((0..m).map(|j| if j == i { S::one() } else { S::zero() }));
        rows.push(row);
        rhs.push(if flip { -b[i].clone() } else { b[i].clone() });
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Phase 1: minimize the sum of artificials. Its reduced-cost row is the
    // negated sum of the constraint rows on structural columns.
    let mut obj = vec![S::zero(); n + m];
    let mut obj_value = S::zero();
    for i in 0..m {
        for j in 0..n {
            obj[j] = obj[j].clone() - rows[i][j].clone();
        }
        obj_value = obj_value - rhs[i].clone();
    }
    pivot_to_optimum(&mut rows, &mut rhs, &mut obj, &mut obj_value, &mut basis, &eps)?;
    // obj_value holds -(sum of artificials); feasible iff it reached zero.
    if -obj_value.clone() > eps {
        return Ok(LpOutcome::Infeasible);
    }

    // Drive leftover artificials out of the basis (degenerate pivots), then
    // drop redundant all-zero rows.
    let mut i = 0;
    while i < rows.len() {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| rows[i][j].clone().abs() > eps) {
                apply_pivot(&mut rows, &mut rhs, &mut obj, &mut obj_value, &mut basis, i, j);
            } else {
                rows.remove(i);
                rhs.remove(i);
                basis.remove(i);
                continue;
            }
        }
        i += 1;
    }
    // Artificial columns are dead from here on.
    for row in rows.iter_mut() {
        row.truncate(n);
    }

    // Phase 2: true objective, reduced against the current basis.
    let mut obj: Vec<S> = c.to_vec();
    let mut obj_value = S::zero();
    for (i, &bi) in basis.iter().enumerate() {
        let w = obj[bi].clone();
        if !w.is_zero() {
            for j in 0..n {
                obj[j] = obj[j].clone() - w.clone() * rows[i][j].clone();
            }
            obj_value = obj_value - w * rhs[i].clone();
        }
    }
    pivot_to_optimum(&mut rows, &mut rhs, &mut obj, &mut obj_value, &mut basis, &eps)?;

    let mut solution = vec![S::zero(); n];
    for (i, &bi) in basis.iter().enumerate() {
        solution[bi] = rhs[i].clone();
    }
    // obj_value tracks -(objective of the current basis).
    Ok(LpOutcome::Optimal { value: -obj_value, solution })
}

/// Runs Bland's-rule pivots until no reduced cost is below `-eps`.
/// Bland's rule (lowest eligible index for both entering and leaving
/// variables) never cycles, so termination needs no perturbation.
fn pivot_to_optimum<S: Scalar>(
    rows: &mut [Vec<S>],
    rhs: &mut [S],
    obj: &mut [S],
    obj_value: &mut S,
    basis: &mut [usize],
    eps: &S,
) -> Result<()> {
    loop {
        let Some(enter) = obj.iter().position(|r| r.clone() < -eps.clone()) else {
            return Ok(());
        };
        let mut leave: Option<usize> = None;
        for i in 0..rows.len() {
            if rows[i][enter] > *eps {
                let better = match leave {
                    None => true,
                    Some(l) => {
                        let cand = rhs[i].clone() / rows[i][enter].clone();
                        let best = rhs[l].clone() / rows[l][enter].clone();
                        cand < best || (cand == best && basis[i] < basis[l])
                    }
                };
                if better {
                    leave = Some(i);
                }
            }
        }
        let Some(leave) = leave else {
            return Err(Error::Invalid("LP is unbounded".into()));
        };
        apply_pivot_split(rows, rhs, obj, obj_value, basis, leave, enter);
    }
}

fn apply_pivot<S: Scalar>(
    rows: &mut Vec<Vec<S>>,
    rhs: &mut Vec<S>,
    obj: &mut Vec<S>,
    obj_value: &mut S,
    basis: &mut Vec<usize>,
    row: usize,
    col: usize,
) {
    apply_pivot_split(rows, rhs, obj, obj_value, basis, row, col);
}

fn apply_pivot_split<S: Scalar>(
    rows: &mut [Vec<S>],
    rhs: &mut [S],
    obj: &mut [S],
    obj_value: &mut S,
    basis: &mut [usize],
    row: usize,
    col: usize,
) {
    let p = rows[row][col].clone();
    for v in rows[row].iter_mut() {
        *v = v.clone() / p.clone();
    }
    rhs[row] = rhs[row].clone() / p;
    for i in 0..rows.len() {
        if i == row {
            continue;
        }
        let f = rows[i][col].clone();
        if f.is_zero() {
            continue;
        }
        for j in 0..rows[i].len() {
            let delta = f.clone() * rows[row][j].clone();
            rows[i][j] = rows[i][j].clone() - delta;
        }
        rhs[i] = rhs[i].clone() - f * rhs[row].clone();
    }
    let f = obj[col].clone();
    if !f.is_zero() {
        for j in 0..obj.len() {
            let delta = f.clone() * rows[row][j].clone();
            obj[j] = obj[j].clone() - delta;
        }
        *obj_value = obj_value.clone() - f * rhs[row].clone();
    }
    basis[row] = col;
}
