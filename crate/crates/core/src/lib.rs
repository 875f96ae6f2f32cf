//! Scenario-tree laboratory for discounted convex risk measures.
//!
//! Everything lives on a finite tree: a filtration given by nested atom
//! partitions over integer times `0..=T`, probability measures as leaf
//! weights, payoffs as leaf vectors. On top of that the crate builds
//!
//! * static risk measures generated by finite dual dictionaries, with an
//!   exact linear-programming conjugate and an independent grid oracle,
//! * dynamic, discounted risk measures driven by pair tables of measures
//!   and adapted discount factors with penalty processes,
//! * checkers for the structural assumptions (pasting and bifurcation
//!   closures, penalty locality, the cocycle identity) and for the several
//!   flavors of time-consistency they imply, reporting worst violations
//!   with witnesses instead of bare booleans.
//!
//! All numeric kernels are generic over [`Scalar`]; `f64` is the working
//! lane, `BigRational` the exact one used internally by the conjugate LP.

pub mod battery;
pub mod fixtures;
pub mod format;
pub mod consistency;
pub mod dual_dynamic;
pub mod dual_static;
pub mod error;
mod lp;
pub mod report;
pub mod scalar;
pub mod structure;
pub mod tree;

pub use battery::{
    ablate_penalty, comparable_pairs, equal_law_pairs, grid_model, monotone_breaker,
    random_battery, random_structured_model, random_tree_spec, RandomModelOptions,
};
pub use consistency::{
    check_constancy, check_strong_tc, check_tc_implications, check_weak_star_tc, check_weak_tc,
    constancy_levels, constant_gamma, put_premium_model, verify_theorem_tc, PutPremiumMeasure,
    TcOptions,
};
pub use dual_dynamic::{
    aggregate_dictionary, aggregate_rho0t, check_dynamic_axioms, check_regularity,
    check_representation, discount_decomposition, dynamic_cash_additivity_gap,
    penalty_aggregation_check, AggregatedRho, Decomposition, DiscountTable, DualModel, DualPair,
    DynamicFunctional, DynamicRiskMeasure, ModelOptions, PenaltyTerm, RegularityCase,
};
pub use dual_static::{
    cash_additivity_gap, check_static_axioms, conjugate_grid_oracle, decompose_subprobability,
    DictEntry, DualDictionary, Normalization, OracleOptions, RiskFunctional, StaticRiskMeasure,
};
pub use error::{Error, Result};
pub use fixtures::{
    broken_cocycle_model, coherent_grid_model, conditional_expectation_model,
    discounted_cocycle_model, put_premium_fixture, two_entry_dictionary, uniform_binary, zoo,
    Fixture,
};
pub use format::{parse_model, parse_payoff, ModelFile};
pub use lp::{solve_eq_lp, LpOutcome};
pub use report::{CheckItem, ConsistencyReport, Scope, Witness};
pub use scalar::{Cost, Scalar};
pub use structure::{
    bifurcate_discounts, bifurcate_measures, bifurcation_identity_gap, build_cocycle_penalty,
    check_cocycle, check_locality, joint_identity_gap, joint_paste, paste_identity_gap,
    paste_measures, ClosureEntry, JointPaste, StructuredModel, CLOSURE_TOL,
};
pub use tree::{
    build_tree, AdaptedProcess, FilteredSpace, RandomVariable, SubProbability, TreeMeasure,
    TreeSpec,
};

/// Default working scalar.
pub type Real = f64;

/// Exact scalar lane.
pub type Exact = num_rational::BigRational;
