//! The fixture zoo: small named models with known behavior, shipped as
//! text files and rebuilt here so tests can pin their contents.
//!
//! Every fixture file under `fixtures/` is the canonical rendering of the
//! constructor with the same name, so parsing a shipped file and rendering
//! it back reproduces the file byte for byte.

use std::sync::Arc;

use crate::battery::{ablate_penalty, grid_model};
use crate::consistency::{constant_gamma, put_premium_model, PutPremiumMeasure};
use crate::dual_dynamic::{
    DiscountTable, DualModel, DualPair, DynamicRiskMeasure, ModelOptions, PenaltyTerm,
};
use crate::dual_static::{DictEntry, DualDictionary, Normalization, StaticRiskMeasure};
use crate::error::Result;
use crate::format::ModelFile;
use crate::scalar::Cost;
use crate::tree::{build_tree, FilteredSpace, TreeMeasure, TreeSpec};

/// Uniform binary tree with the given horizon: every node has two
/// children and every leaf carries equal weight.
pub fn uniform_binary(horizon: usize) -> Result<Arc<FilteredSpace<f64>>> {
    let leaves = 1usize << horizon;
    let nodes = (1usize << horizon) - 1;
    build_tree(&TreeSpec {
        horizon,
        branching: vec![2; nodes],
        weights: vec![1.0 / leaves as f64; leaves],
    })
}

/// Single reference pair, unit discount, zero penalty: the risk measure
/// collapses to the conditional expectation of the loss and is recursively
/// consistent by the tower property.
pub fn conditional_expectation_model() -> Result<DynamicRiskMeasure<f64>> {
    let space = uniform_binary(2)?;
    let pairs = vec![DualPair {
        d: DiscountTable::ones(&space),
        q: TreeMeasure::p_measure(&space),
    }];
    let penalty = PenaltyTerm::zero(&space, 1);
    let options = ModelOptions { all_q_equivalent: true, require_normalized: true };
    Ok(DynamicRiskMeasure::new(DualModel::new_with(space, pairs, penalty, options)?))
}

fn grid_transitions() -> Vec<Vec<f64>> {
    vec![
        vec![1.0 / 3.0, 2.0 / 3.0],
        vec![0.5, 0.5],
        vec![2.0 / 3.0, 1.0 / 3.0],
    ]
}

/// Every node chooses its transition law from a three-point grid, the
/// discount is identically one, and every penalty vanishes: a coherent
/// worst-case model over twenty-seven product measures, closed under
/// pasting and recursively consistent.
pub fn coherent_grid_model() -> Result<DynamicRiskMeasure<f64>> {
    let space = uniform_binary(2)?;
    grid_model(&space, &grid_transitions(), &[1.0], &[1.0], 0.0)
}

/// The same transition grid with genuine discounting and compensating
/// penalties. The first-period discount factor is free over `{1, 1/2}`
/// while the later factor is shared by every table, which keeps the
/// discount family closed under splicing, and the penalties accumulate
/// discounted chi-square divergences along the tree, which makes them a
/// cocycle by construction.
pub fn discounted_cocycle_model() -> Result<DynamicRiskMeasure<f64>> {
    let space = uniform_binary(2)?;
    grid_model(&space, &grid_transitions(), &[1.0, 0.5], &[0.5], 0.5)
}

/// Put premium with constant loading two on the uniform binary tree: the
/// worked counterexample whose recursion gap on the constant loss is one
/// quarter.
pub fn put_premium_fixture() -> Result<PutPremiumMeasure<f64>> {
    let space = uniform_binary(2)?;
    put_premium_model(&space, constant_gamma(&space, 2.0)?)
}

/// Conditional-expectation model with the root-to-horizon penalty bumped
/// by `delta`: the cocycle identity now fails by exactly `delta` and the
/// recursion inherits a gap of the same size.
pub fn broken_cocycle_model(delta: f64) -> Result<DynamicRiskMeasure<f64>> {
    ablate_penalty(&conditional_expectation_model()?, 0, 0, 2, delta)
}

/// Two-entry dictionary on a one-period tree, used by the conjugate
/// examples: the mixture hull of its points is a segment, so targets on
/// the segment price finitely and targets off it price to infinity.
pub fn two_entry_dictionary() -> Result<StaticRiskMeasure<f64>> {
    let space = uniform_binary(1)?;
    let entries = vec![
        DictEntry::from_leaf_weights(&space, vec![0.5, 0.5], Cost::Finite(0.0))?,
        DictEntry::from_leaf_weights(&space, vec![0.75, 0.25], Cost::Finite(0.25))?,
    ];
    let dictionary = DualDictionary::new(entries, Normalization::Accept)?;
    StaticRiskMeasure::new(space, dictionary)
}

/// A named fixture: the model plus a short account of why it is in the
/// zoo.
pub struct Fixture {
    pub name: &'static str,
    pub summary: &'static str,
    pub model: ModelFile,
}

/// Builds every shipped fixture. File names under `fixtures/` are the
/// zoo names with a `.model` extension.
pub fn zoo() -> Result<Vec<Fixture>> {
    Ok(vec![
        Fixture {
            name: "conditional-expectation",
            summary: "single reference pair, unit discount, zero penalty",
            model: ModelFile::Dynamic(conditional_expectation_model()?),
        },
        Fixture {
            name: "coherent-grid",
            summary: "three-point transition grid, no discounting, no penalty",
            model: ModelFile::Dynamic(coherent_grid_model()?),
        },
        Fixture {
            name: "discounted-cocycle",
            summary: "transition grid with shared-tail discounts and cocycle penalties",
            model: ModelFile::Dynamic(discounted_cocycle_model()?),
        },
        Fixture {
            name: "put-premium",
            summary: "loss-leg premium with loading two, recursion gap one quarter",
            model: ModelFile::Premium(put_premium_fixture()?),
        },
        Fixture {
            name: "broken-cocycle-0.01",
            summary: "root-to-horizon penalty bumped by 0.01",
            model: ModelFile::Dynamic(broken_cocycle_model(0.01)?),
        },
        Fixture {
            name: "broken-cocycle-0.05",
            summary: "root-to-horizon penalty bumped by 0.05",
            model: ModelFile::Dynamic(broken_cocycle_model(0.05)?),
        },
        Fixture {
            name: "broken-cocycle-0.1",
            summary: "root-to-horizon penalty bumped by 0.1",
            model: ModelFile::Dynamic(broken_cocycle_model(0.1)?),
        },
        Fixture {
            name: "two-entry-dictionary",
            summary: "one-period dictionary with a segment-shaped hull",
            model: ModelFile::Static(two_entry_dictionary()?),
        },
    ])
}
