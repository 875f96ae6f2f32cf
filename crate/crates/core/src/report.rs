//! Check reports: one verdict per scope item, with worst violation and a
//! replayable witness.
//!
//! Reports render to a fixed-width table, CSV, or JSON. Item order is
//! canonical (sorted by scope), so a report built from a parallel run is
//! byte-identical to a sequential one.

use serde_json::{json, Value};
use std::fmt::Write as _;

/// Where a verdict applies: optional time indices plus a free-form tag
/// (axiom name, pair id, atom id). Ordering gives the canonical item order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Scope {
    pub s: Option<usize>,
    pub t: Option<usize>,
    pub u: Option<usize>,
    pub tag: String,
}

impl Scope {
    pub fn times(s: usize, t: usize, u: usize) -> Scope {
        Scope { s: Some(s), t: Some(t), u: Some(u), ..Default::default() }
    }

    pub fn pair_times(t: usize, u: usize) -> Scope {
        Scope { t: Some(t), u: Some(u), ..Default::default() }
    }

    pub fn tag(tag: impl Into<String>) -> Scope {
        Scope { tag: tag.into(), ..Default::default() }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Scope {
        self.tag = tag.into();
        self
    }

    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        if let Some(s) = self.s {
            parts.push(format!("s={s}"));
        }
        if let Some(t) = self.t {
            parts.push(format!("t={t}"));
        }
        if let Some(u) = self.u {
            parts.push(format!("u={u}"));
        }
        if !self.tag.is_empty() {
            parts.push(self.tag.clone());
        }
        if parts.is_empty() {
            "-".into()
        } else {
            parts.join(" ")
        }
    }
}

/// Replayable description of the inputs that produced a violation.
#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub id: String,
    pub detail: Value,
}

impl Witness {
    pub fn new(id: impl Into<String>, detail: Value) -> Witness {
        Witness { id: id.into(), detail }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckItem {
    pub scope: Scope,
    pub pass: bool,
    pub violation: f64,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub check: String,
    pub tolerance: f64,
    pub items: Vec<CheckItem>,
    /// Premise-implication checks count how many sampled pairs actually
    /// triggered the premise.
    pub non_vacuous: Option<usize>,
    pub vacuous: Option<usize>,
    pub notes: Vec<String>,
}

impl ConsistencyReport {
    pub fn new(check: impl Into<String>, tolerance: f64) -> ConsistencyReport {
        ConsistencyReport {
            check: check.into(),
            tolerance,
            items: Vec::new(),
            non_vacuous: None,
            vacuous: None,
            notes: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        scope: Scope,
        violation: f64,
        witness: Option<Witness>,
    ) {
        let pass = violation <= self.tolerance;
        self.items.push(CheckItem { scope, pass, violation, witness });
    }

    pub fn push_item(&mut self, item: CheckItem) {
        self.items.push(item);
    }

    /// Canonical item order; call after parallel collection.
    pub fn sort(&mut self) {
        self.items.sort_by(|a, b| a.scope.cmp(&b.scope));
    }

    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.pass)
    }

    pub fn worst(&self) -> Option<&CheckItem> {
        self.items
            .iter()
            .max_by(|a, b| a.violation.partial_cmp(&b.violation).unwrap())
    }

    pub fn worst_violation(&self) -> f64 {
        self.worst().map(|i| i.violation).unwrap_or(0.0)
    }

    pub fn merge(&mut self, other: ConsistencyReport) {
        self.items.extend(other.items);
        self.notes.extend(other.notes);
        if let Some(n) = other.non_vacuous {
            *self.non_vacuous.get_or_insert(0) += n;
        }
        if let Some(n) = other.vacuous {
            *self.vacuous.get_or_insert(0) += n;
        }
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("check,scope,verdict,violation,witness\n");
        for item in &self.items {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.check,
                csv_field(&item.scope.render()),
                if item.pass { "pass" } else { "fail" },
                item.violation,
                csv_field(item.witness.as_ref().map(|w| w.id.as_str()).unwrap_or("-")),
            );
        }
        out
    }

    pub fn to_json(&self) -> Value {
        json!({
            "check": self.check,
            "tolerance": self.tolerance,
            "passed": self.passed(),
            "worst_violation": self.worst_violation(),
            "non_vacuous": self.non_vacuous,
            "vacuous": self.vacuous,
            "notes": self.notes,
            "items": self.items.iter().map(|item| json!({
                "scope": item.scope.render(),
                "verdict": if item.pass { "pass" } else { "fail" },
                "violation": item.violation,
                "witness": item.witness.as_ref().map(|w| json!({
                    "id": w.id,
                    "detail": w.detail,
                })),
            })).collect::<Vec<_>>(),
        })
    }

    pub fn render_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.to_json()).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} (tolerance {}): {}",
            self.check,
            self.tolerance,
            if self.passed() { "pass" } else { "FAIL" }
        );
        if let Some(n) = self.non_vacuous {
            let _ = writeln!(
                out,
                "premise pairs: {} non-vacuous, {} vacuous",
                n,
                self.vacuous.unwrap_or(0)
            );
        }
        for note in &self.notes {
            let _ = writeln!(out, "note: {note}");
        }
        let scope_w = self
            .items
            .iter()
            .map(|i| i.scope.render().len())
            .max()
            .unwrap_or(5)
            .max(5);
        let _ = writeln!(out, "{:<scope_w$}  {:^7}  {:<22}  witness", "scope", "verdict", "violation");
        for item in &self.items {
            let _ = writeln!(
                out,
                "{:<scope_w$}  {:^7}  {:<22}  {}",
                item.scope.render(),
                if item.pass { "pass" } else { "FAIL" },
                item.violation,
                item.witness.as_ref().map(|w| w.id.as_str()).unwrap_or("-"),
            );
        }
        out
    }
}

fn csv_field(raw: &str) -> String {
    if raw.contains([',', '"', '\n']) {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}
