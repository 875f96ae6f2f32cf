//! Line-oriented text format for model files and payoff vectors.
//!
//! Three model kinds share one framing: `#` starts a comment, blank lines
//! are skipped, and the first content line is `model dynamic`, `model
//! static`, or `model premium`. Every kind continues with the tree block
//!
//! ```text
//! horizon 2
//! branching 2 2 2
//! weights 0.25 0.25 0.25 0.25
//! ```
//!
//! and then diverges:
//!
//! * dynamic: an `options` line, then one block per dual pair opened by
//!   `pair`, holding a `discount factors ...` line (product form) or a full
//!   set of `discount slice t u ...` lines, a `measure ...` line, and any
//!   number of `penalty t u ...` lines (omitted slices are zero, `+inf` or
//!   `inf` is the infinite penalty);
//! * static: a `normalization` line and one `entry c w1 .. wL` line per
//!   dictionary entry, where `c` may be `+inf`;
//! * premium: one `gamma t v1 .. v_k` line per date, atom-valued.
//!
//! Rendering is canonical (shortest float round-trip, sorted slices), so
//! parse-render-parse is byte-stable; the round-trip tests in the fixture
//! zoo rely on that.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::consistency::{put_premium_model, PutPremiumMeasure};
use crate::dual_dynamic::{
    DiscountTable, DualModel, DualPair, DynamicFunctional, DynamicRiskMeasure, ModelOptions,
    PenaltyTerm,
};
use crate::dual_static::{DictEntry, DualDictionary, Normalization, RiskFunctional, StaticRiskMeasure};
use crate::error::{Error, Result};
use crate::scalar::Cost;
use crate::tree::{
    build_tree, AdaptedProcess, FilteredSpace, TreeMeasure, TreeSpec,
};

/// A parsed model file: one of the three supported kinds.
#[derive(Clone)]
pub enum ModelFile {
    Dynamic(DynamicRiskMeasure<f64>),
    Static(StaticRiskMeasure<f64>),
    Premium(PutPremiumMeasure<f64>),
}

impl ModelFile {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelFile::Dynamic(_) => "dynamic",
            ModelFile::Static(_) => "static",
            ModelFile::Premium(_) => "premium",
        }
    }

    pub fn space(&self) -> &FilteredSpace<f64> {
        match self {
            ModelFile::Dynamic(rm) => rm.model().space(),
            ModelFile::Static(rm) => rm.space(),
            ModelFile::Premium(pp) => pp.space(),
        }
    }

    /// Canonical text rendering; `parse_model` inverts it byte for byte.
    pub fn render(&self) -> String {
        match self {
            ModelFile::Dynamic(rm) => render_dynamic(rm),
            ModelFile::Static(rm) => render_static(rm),
            ModelFile::Premium(pp) => render_premium(pp),
        }
    }
}

struct Cursor<'a> {
    lines: Vec<(usize, &'a str)>,
    at: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Cursor<'a> {
        let lines = text
            .lines()
            .enumerate()
            .filter_map(|(i, raw)| {
                let content = raw.split('#').next().unwrap_or("").trim();
                if content.is_empty() {
                    None
                } else {
                    Some((i + 1, content))
                }
            })
            .collect();
        Cursor { lines, at: 0 }
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.lines.get(self.at).copied()
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let item = self.peek();
        if item.is_some() {
            self.at += 1;
        }
        item
    }

    fn expect(&mut self, keyword: &str) -> Result<(usize, Vec<&'a str>)> {
        match self.next() {
            Some((line, content)) => {
                let mut parts = content.split_whitespace();
                let head = parts.next().unwrap_or("");
                if head != keyword {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected `{keyword}`, found `{head}`"),
                    });
                }
                Ok((line, parts.collect()))
            }
            None => Err(Error::Parse {
                line: self.lines.last().map_or(0, |(l, _)| *l),
                message: format!("expected `{keyword}`, found end of file"),
            }),
        }
    }
}

fn parse_f64(token: &str, line: usize) -> Result<f64> {
    token.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("`{token}` is not a number"),
    })
}

fn parse_usize(token: &str, line: usize) -> Result<usize> {
    token.parse::<usize>().map_err(|_| Error::Parse {
        line,
        message: format!("`{token}` is not a nonnegative integer"),
    })
}

fn parse_cost(token: &str, line: usize) -> Result<Cost<f64>> {
    if token == "inf" || token == "+inf" {
        Ok(Cost::Infinite)
    } else {
        Ok(Cost::Finite(parse_f64(token, line)?))
    }
}

fn parse_bool(token: &str, line: usize) -> Result<bool> {
    match token {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Parse {
            line,
            message: format!("`{other}` is not `true` or `false`"),
        }),
    }
}

fn parse_numbers(tokens: &[&str], line: usize) -> Result<Vec<f64>> {
    tokens.iter().map(|t| parse_f64(t, line)).collect()
}

/// Anchors a construction error to the directive that caused it, so the
/// diagnostic always carries a line number.
fn at_line<T>(line: usize, result: Result<T>) -> Result<T> {
    result.map_err(|e| match e {
        Error::Parse { .. } => e,
        other => Error::Parse { line, message: other.to_string() },
    })
}

fn parse_tree(cursor: &mut Cursor) -> Result<Arc<FilteredSpace<f64>>> {
    let (line, args) = cursor.expect("horizon")?;
    if args.len() != 1 {
        return Err(Error::Parse { line, message: "horizon takes one value".into() });
    }
    let horizon = parse_usize(args[0], line)?;
    let (line, args) = cursor.expect("branching")?;
    let branching = args
        .iter()
        .map(|t| parse_usize(t, line))
        .collect::<Result<Vec<_>>>()?;
    let (line, args) = cursor.expect("weights")?;
    let weights = parse_numbers(&args, line)?;
    at_line(line, build_tree(&TreeSpec { horizon, branching, weights }))
}

/// Parses a model file of any kind.
pub fn parse_model(text: &str) -> Result<ModelFile> {
    let mut cursor = Cursor::new(text);
    let (line, args) = cursor.expect("model")?;
    let kind = *args.first().ok_or_else(|| Error::Parse {
        line,
        message: "missing model kind".into(),
    })?;
    match kind {
        "dynamic" => parse_dynamic(&mut cursor).map(ModelFile::Dynamic),
        "static" => parse_static(&mut cursor).map(ModelFile::Static),
        "premium" => parse_premium(&mut cursor).map(ModelFile::Premium),
        other => Err(Error::Parse {
            line,
            message: format!("unknown model kind `{other}` (want dynamic, static, or premium)"),
        }),
    }
}

struct PairDraft {
    opened_at: usize,
    discount_line: usize,
    factors: Option<Vec<f64>>,
    slices: BTreeMap<(usize, usize), Vec<f64>>,
    measure: Option<TreeMeasure<f64>>,
    penalties: Vec<(usize, usize, usize, Vec<Cost<f64>>)>,
}

fn parse_dynamic(cursor: &mut Cursor) -> Result<DynamicRiskMeasure<f64>> {
    let space = parse_tree(cursor)?;
    let (line, args) = cursor.expect("options")?;
    let mut options = ModelOptions { all_q_equivalent: true, require_normalized: true };
    for arg in args {
        let (key, value) = arg.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("option `{arg}` is not key=value"),
        })?;
        match key {
            "all_q_equivalent" => options.all_q_equivalent = parse_bool(value, line)?,
            "require_normalized" => options.require_normalized = parse_bool(value, line)?,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown option `{other}`"),
                })
            }
        }
    }

    let mut drafts: Vec<PairDraft> = Vec::new();
    while let Some((line, content)) = cursor.next() {
        let mut parts = content.split_whitespace();
        let head = parts.next().unwrap_or("");
        let args: Vec<&str> = parts.collect();
        match head {
            "pair" => drafts.push(PairDraft {
                opened_at: line,
                discount_line: line,
                factors: None,
                slices: BTreeMap::new(),
                measure: None,
                penalties: Vec::new(),
            }),
            "discount" => {
                let draft = drafts.last_mut().ok_or_else(|| Error::Parse {
                    line,
                    message: "discount line before the first `pair`".into(),
                })?;
                draft.discount_line = line;
                match args.split_first() {
                    Some((&"factors", rest)) => {
                        draft.factors = Some(parse_numbers(rest, line)?);
                    }
                    Some((&"slice", rest)) if rest.len() >= 2 => {
                        let t = parse_usize(rest[0], line)?;
                        let u = parse_usize(rest[1], line)?;
                        draft.slices.insert((t, u), parse_numbers(&rest[2..], line)?);
                    }
                    _ => {
                        return Err(Error::Parse {
                            line,
                            message: "discount wants `factors ...` or `slice t u ...`".into(),
                        })
                    }
                }
            }
            "measure" => {
                let draft = drafts.last_mut().ok_or_else(|| Error::Parse {
                    line,
                    message: "measure line before the first `pair`".into(),
                })?;
                draft.measure =
                    Some(at_line(line, TreeMeasure::new(&space, parse_numbers(&args, line)?))?);
            }
            "penalty" => {
                let draft = drafts.last_mut().ok_or_else(|| Error::Parse {
                    line,
                    message: "penalty line before the first `pair`".into(),
                })?;
                if args.len() < 2 {
                    return Err(Error::Parse {
                        line,
                        message: "penalty wants `t u values...`".into(),
                    });
                }
                let t = parse_usize(args[0], line)?;
                let u = parse_usize(args[1], line)?;
                let values = args[2..]
                    .iter()
                    .map(|v| parse_cost(v, line))
                    .collect::<Result<Vec<_>>>()?;
                draft.penalties.push((line, t, u, values));
            }
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown directive `{other}` in a dynamic model"),
                })
            }
        }
    }
    if drafts.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "dynamic model has no `pair` blocks".into(),
        });
    }

    let mut pairs = Vec::with_capacity(drafts.len());
    let mut penalty = PenaltyTerm::zero(&space, drafts.len());
    for (i, draft) in drafts.into_iter().enumerate() {
        let d = match (&draft.factors, draft.slices.is_empty()) {
            (Some(factors), true) => {
                at_line(draft.discount_line, DiscountTable::from_factors(&space, factors))?
            }
            (None, false) => at_line(
                draft.discount_line,
                DiscountTable::new(&space, {
                    let mut table = BTreeMap::new();
                    for ((t, u), values) in draft.slices {
                        table.insert((t, u), values);
                    }
                    table
                }),
            )?,
            _ => {
                return Err(Error::Parse {
                    line: draft.opened_at,
                    message: "pair needs `discount factors` or `discount slice` lines, not both"
                        .into(),
                })
            }
        };
        let q = draft.measure.ok_or_else(|| Error::Parse {
            line: draft.opened_at,
            message: "pair has no measure line".into(),
        })?;
        for (line, t, u, values) in draft.penalties {
            at_line(line, penalty.set(&space, i, t, u, values))?;
        }
        pairs.push(DualPair { d, q });
    }
    let model = DualModel::new_with(space, pairs, penalty, options)?;
    Ok(DynamicRiskMeasure::new(model))
}

fn parse_static(cursor: &mut Cursor) -> Result<StaticRiskMeasure<f64>> {
    let space = parse_tree(cursor)?;
    let (line, args) = cursor.expect("normalization")?;
    let mode = match args.first().copied() {
        Some("verify") => Normalization::Verify,
        Some("shift") => Normalization::Shift,
        Some("accept") => Normalization::Accept,
        other => {
            return Err(Error::Parse {
                line,
                message: format!(
                    "normalization wants verify, shift, or accept; found `{}`",
                    other.unwrap_or("")
                ),
            })
        }
    };
    let mut entries = Vec::new();
    while let Some((line, content)) = cursor.next() {
        let mut parts = content.split_whitespace();
        let head = parts.next().unwrap_or("");
        if head != "entry" {
            return Err(Error::Parse {
                line,
                message: format!("unknown directive `{head}` in a static model"),
            });
        }
        let args: Vec<&str> = parts.collect();
        if args.is_empty() {
            return Err(Error::Parse {
                line,
                message: "entry wants `c w1 .. wL`".into(),
            });
        }
        let c = parse_cost(args[0], line)?;
        let weights = parse_numbers(&args[1..], line)?;
        entries.push(at_line(line, DictEntry::from_leaf_weights(&space, weights, c))?);
    }
    let dictionary = DualDictionary::new(entries, mode)?;
    StaticRiskMeasure::new(space, dictionary)
}

fn parse_premium(cursor: &mut Cursor) -> Result<PutPremiumMeasure<f64>> {
    let space = parse_tree(cursor)?;
    let mut slices: Vec<Option<crate::tree::RandomVariable<f64>>> =
        vec![None; space.horizon() + 1];
    while let Some((line, content)) = cursor.next() {
        let mut parts = content.split_whitespace();
        let head = parts.next().unwrap_or("");
        if head != "gamma" {
            return Err(Error::Parse {
                line,
                message: format!("unknown directive `{head}` in a premium model"),
            });
        }
        let args: Vec<&str> = parts.collect();
        if args.is_empty() {
            return Err(Error::Parse {
                line,
                message: "gamma wants `t v1 .. v_atoms`".into(),
            });
        }
        let t = parse_usize(args[0], line)?;
        if t > space.horizon() {
            return Err(Error::Parse {
                line,
                message: format!("gamma date {t} exceeds the horizon"),
            });
        }
        let values = parse_numbers(&args[1..], line)?;
        if values.len() != space.atom_count(t) {
            return Err(Error::Parse {
                line,
                message: format!(
                    "gamma at t={t} wants {} values, found {}",
                    space.atom_count(t),
                    values.len()
                ),
            });
        }
        slices[t] = Some(at_line(line, space.from_atom_values(t, &values))?);
    }
    let slices = slices
        .into_iter()
        .enumerate()
        .map(|(t, s)| {
            s.ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("premium model is missing the gamma line for t={t}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let gamma = AdaptedProcess::new(&space, slices, None)?;
    put_premium_model(&space, gamma)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_numbers(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ")
}

fn fmt_cost(c: &Cost<f64>) -> String {
    match c {
        Cost::Infinite => "+inf".into(),
        Cost::Finite(v) => fmt_f64(*v),
    }
}

fn render_tree(space: &FilteredSpace<f64>, out: &mut String) {
    let spec = space.spec();
    out.push_str(&format!("horizon {}\n", spec.horizon));
    out.push_str(&format!(
        "branching {}\n",
        spec.branching.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(" ")
    ));
    out.push_str(&format!("weights {}\n", fmt_numbers(&spec.weights)));
}

fn render_dynamic(rm: &DynamicRiskMeasure<f64>) -> String {
    let model = rm.model();
    let space = model.space();
    let mut out = String::from("model dynamic\n");
    render_tree(space, &mut out);
    let opts = model.options();
    out.push_str(&format!(
        "options all_q_equivalent={} require_normalized={}\n",
        opts.all_q_equivalent, opts.require_normalized
    ));
    for (i, pair) in model.pairs().iter().enumerate() {
        out.push_str("pair\n");
        if let Some(factors) = pair.d.factors() {
            out.push_str(&format!("discount factors {}\n", fmt_numbers(factors)));
        } else {
            for t in 0..space.horizon() {
                for u in t + 1..=space.horizon() {
                    let values = pair
                        .d
                        .atom_values(space, t, u)
                        .expect("validated discount table");
                    out.push_str(&format!("discount slice {t} {u} {}\n", fmt_numbers(&values)));
                }
            }
        }
        out.push_str(&format!("measure {}\n", fmt_numbers(pair.q.weights())));
        for t in 0..space.horizon() {
            for u in t + 1..=space.horizon() {
                let values = model.penalty().c(i, t, u);
                if values.iter().all(|c| matches!(c, Cost::Finite(v) if *v == 0.0)) {
                    continue;
                }
                let rendered =
                    values.iter().map(fmt_cost).collect::<Vec<_>>().join(" ");
                out.push_str(&format!("penalty {t} {u} {rendered}\n"));
            }
        }
    }
    out
}

fn render_static(rm: &StaticRiskMeasure<f64>) -> String {
    let mut out = String::from("model static\n");
    render_tree(rm.space(), &mut out);
    out.push_str("normalization accept\n");
    for entry in rm.dictionary().entries() {
        out.push_str(&format!(
            "entry {} {}\n",
            fmt_cost(entry.c()),
            fmt_numbers(entry.leaf_weights())
        ));
    }
    out
}

fn render_premium(pp: &PutPremiumMeasure<f64>) -> String {
    let space = pp.space();
    let mut out = String::from("model premium\n");
    render_tree(space, &mut out);
    for t in 0..=space.horizon() {
        let values = space.atom_values(pp.gamma().slice(t), t);
        out.push_str(&format!("gamma {t} {}\n", fmt_numbers(&values)));
    }
    out
}

/// Parses a payoff vector: numbers separated by whitespace, commas, or
/// newlines, with `#` comments.
pub fn parse_payoff(text: &str) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        for token in content.split(|c: char| c.is_whitespace() || c == ',') {
            if token.is_empty() {
                continue;
            }
            values.push(parse_f64(token, i + 1)?);
        }
    }
    if values.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "payoff file holds no numbers".into(),
        });
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DYNAMIC: &str = "\
# two-pair file
model dynamic
horizon 2
branching 2 2 2
weights 0.25 0.25 0.25 0.25
options all_q_equivalent=false require_normalized=true
pair
discount factors 1.0 1.0
measure 0.25 0.25 0.25 0.25
pair
discount slice 0 1 0.5
discount slice 0 2 0.25
discount slice 1 2 0.5 0.5
measure 0.5 0.0 0.25 0.25
penalty 1 2 inf 0.5
";

    #[test]
    fn dynamic_files_round_trip() {
        let parsed = parse_model(DYNAMIC).unwrap();
        let ModelFile::Dynamic(rm) = &parsed else { panic!("wrong kind") };
        assert_eq!(rm.model().pairs().len(), 2);
        assert_eq!(
            rm.model().penalty().c(1, 1, 2),
            &[Cost::Infinite, Cost::Finite(0.5)]
        );
        let rendered = parsed.render();
        let reparsed = parse_model(&rendered).unwrap();
        assert_eq!(reparsed.render(), rendered);
    }

    #[test]
    fn static_files_round_trip() {
        let text = "\
model static
horizon 1
branching 2
weights 0.5 0.5
normalization accept
entry 0.0 0.5 0.5
entry inf 0.25 0.25
entry 0.25 0.2 0.3
";
        let parsed = parse_model(text).unwrap();
        let ModelFile::Static(rm) = &parsed else { panic!("wrong kind") };
        assert_eq!(rm.dictionary().len(), 3);
        let rendered = parsed.render();
        assert_eq!(parse_model(&rendered).unwrap().render(), rendered);
    }

    #[test]
    fn premium_files_round_trip() {
        let text = "\
model premium
horizon 2
branching 2 2 2
weights 0.25 0.25 0.25 0.25
gamma 0 2.0
gamma 1 2.0 3.0
gamma 2 2.0 3.0 2.0 3.0
";
        let parsed = parse_model(text).unwrap();
        let ModelFile::Premium(pp) = &parsed else { panic!("wrong kind") };
        assert_eq!(pp.gamma().slice(1).values(), &[2.0, 2.0, 3.0, 3.0]);
        let rendered = parsed.render();
        assert_eq!(parse_model(&rendered).unwrap().render(), rendered);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "\
model dynamic
horizon 2
branching 2 2 2
weights 0.25 0.25 banana 0.25
";
        match parse_model(text) {
            Err(Error::Parse { line: 4, message }) => {
                assert!(message.contains("banana"));
            }
            other => panic!("expected a line-4 parse error, got {:?}", other.err()),
        }
    }

    #[test]
    fn unknown_directives_are_rejected() {
        let text = "model dynamic\nhorizon 1\nbranching 2\nweights 0.5 0.5\noptions\npair\ndiscount factors 1.0\nmeasure 0.5 0.5\nfrobnicate 3\n";
        match parse_model(text) {
            Err(Error::Parse { line: 9, .. }) => {}
            other => panic!("expected a line-9 parse error, got {:?}", other.err()),
        }
    }

    #[test]
    fn payoff_lists_accept_commas_and_comments() {
        let parsed = parse_payoff("# header\n1.5, -2 3\n4\n").unwrap();
        assert_eq!(parsed, vec![1.5, -2.0, 3.0, 4.0]);
        assert!(matches!(
            parse_payoff("# nothing\n"),
            Err(Error::Parse { .. })
        ));
    }
}
