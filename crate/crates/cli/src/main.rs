//! Batch front end for the scenario-tree risk measure laboratory.
//!
//! Three subcommands cover the workflow: `eval` prices a payoff under a
//! model file, `check` runs one of the verification suites and reports
//! pass/fail per instance, and `conjugate` computes minimal penalty values
//! at a target measure. Reports render as a human table, CSV, or JSON.
//!
//! Exit codes: 0 all selected checks pass, 1 a check fails (`--expect-fail`
//! swaps these two), 2 parse or usage errors, 3 dimension mismatches, 4 a
//! premise-based check found too few non-vacuous instances.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use risktree_core::{
    check_cocycle, check_dynamic_axioms, check_locality, check_regularity, check_static_axioms,
    check_strong_tc, check_tc_implications, check_weak_star_tc, check_weak_tc, comparable_pairs,
    conjugate_grid_oracle, decompose_subprobability, equal_law_pairs, parse_model, parse_payoff,
    random_battery, verify_theorem_tc, ConsistencyReport, Cost, DynamicFunctional,
    DynamicRiskMeasure, Error, ModelFile, OracleOptions, RegularityCase, Result, Scope,
    StructuredModel, TcOptions, Witness, CLOSURE_TOL,
};

#[derive(Parser)]
#[command(
    name = "risktree",
    version,
    about = "Evaluate, verify, and dualize risk measures on finite scenario trees",
    after_help = "Model files are line oriented: `model dynamic` declares dual \
pairs (discount, measure, penalty), `model static` declares a dictionary of \
measure/penalty entries, and `model premium` declares a loss-leg premium by \
its loading process. Penalties admit the token `+inf`."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price a payoff: prints the per-atom values of the risk measure
    Eval(EvalArgs),
    /// Run a verification suite and report each checked instance
    Check(CheckArgs),
    /// Minimal penalty values, optionally cross-checked by a grid oracle
    Conjugate(ConjugateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Table,
}

#[derive(Args)]
struct CommonArgs {
    /// Model file to load
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Report format
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Tolerance override for the selected operation
    #[arg(long, env = "RISKTREE_TOL", value_name = "EPS")]
    tol: Option<f64>,
    /// Seed for generated payoff batteries
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Worker threads (default: one per core)
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Payoff file (numbers separated by whitespace or commas)
    #[arg(long, value_name = "FILE", conflicts_with = "x_inline")]
    x: Option<PathBuf>,
    /// Payoff given inline, e.g. "4,0,2,2"
    #[arg(long, value_name = "CSV", allow_hyphen_values = true)]
    x_inline: Option<String>,
    /// Evaluation date (default 0)
    #[arg(long)]
    t: Option<usize>,
    /// Maturity (default: the horizon)
    #[arg(long)]
    u: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckKind {
    /// Convexity, monotonicity, cash subadditivity, normalization
    Axioms,
    /// Values restricted to an event depend on the input there only
    Regularity,
    /// Penalty splits across intermediate dates
    Cocycle,
    /// Equal conditional laws and penalties force equal values
    Locality,
    /// Measure, discount, and joint families are closed under splicing
    Pasting,
    /// Recursive evaluation equals direct evaluation
    Strong,
    /// Nodewise dominance at a later date propagates backward
    Weak,
    /// Nodewise equality at a later date propagates backward
    Weakstar,
    /// Structural conditions certified, then recursivity verified
    Theorem,
    /// Strong consistency forces the one-sided and weak forms
    Implications,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which suite to run
    #[arg(value_enum)]
    check: CheckKind,
    /// Invert the pass/fail exit semantics (counterexample fixtures)
    #[arg(long)]
    expect_fail: bool,
    /// Battery size for generated payoffs and pairs
    #[arg(long, default_value_t = 200, value_name = "N")]
    battery: usize,
    /// Run payoff-battery checks on exactly this payoff file instead of a
    /// generated battery (premise pairs stay generated)
    #[arg(long, value_name = "FILE", conflicts_with = "x_inline")]
    x: Option<PathBuf>,
    /// Same, inline, e.g. "-1,-1,-1,-1"
    #[arg(long, value_name = "CSV", allow_hyphen_values = true)]
    x_inline: Option<String>,
}

#[derive(Args)]
struct ConjugateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Target measure's leaf weights, from a file
    #[arg(long, value_name = "FILE", conflicts_with = "x_inline")]
    x: Option<PathBuf>,
    /// Target measure's leaf weights inline, e.g. "0.5,0.5"
    #[arg(long, value_name = "CSV", allow_hyphen_values = true)]
    x_inline: Option<String>,
    /// Conditioning date for dynamic models (default 0)
    #[arg(long)]
    t: Option<usize>,
    /// Cross-check the exact value against a derivative-free grid search
    #[arg(long)]
    oracle: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Eval(args) => run_eval(args),
        Command::Check(args) => run_check(args),
        Command::Conjugate(args) => run_conjugate(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn configure_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        // A second build_global in one process is rejected by rayon; the
        // pool from the first call stays in effect, which is fine here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn load_model(path: &PathBuf) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
    parse_model(&text)
}

fn load_payoff(x: &Option<PathBuf>, inline: &Option<String>) -> Result<Vec<f64>> {
    match (x, inline) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
            parse_payoff(&text)
        }
        (None, Some(text)) => parse_payoff(text),
        _ => Err(Error::Invalid(
            "supply the payoff with exactly one of --x or --x-inline".into(),
        )),
    }
}

fn fmt_value(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_cost(c: &Cost<f64>) -> String {
    match c {
        Cost::Infinite => "+inf".into(),
        Cost::Finite(v) => fmt_value(*v),
    }
}

fn cost_json(c: &Cost<f64>) -> serde_json::Value {
    match c {
        Cost::Infinite => json!("+inf"),
        Cost::Finite(v) => json!(v),
    }
}

fn run_eval(args: EvalArgs) -> Result<u8> {
    configure_jobs(args.common.jobs);
    let model = load_model(&args.common.model)?;
    let payoff = load_payoff(&args.x, &args.x_inline)?;

    let (t, u, values) = match &model {
        ModelFile::Dynamic(rm) => {
            let space = rm.model().space();
            let x = space.rv(payoff)?;
            let t = args.t.unwrap_or(0);
            let u = args.u.unwrap_or(space.horizon());
            let out = rm.rho(&x, t, u)?;
            (t, u, space.atom_values(&out, t))
        }
        ModelFile::Premium(pp) => {
            let space = pp.space();
            let x = space.rv(payoff)?;
            let t = args.t.unwrap_or(0);
            let u = args.u.unwrap_or(space.horizon());
            let out = pp.rho(&x, t, u)?;
            (t, u, space.atom_values(&out, t))
        }
        ModelFile::Static(rm) => {
            use risktree_core::RiskFunctional;
            let space = rm.space_arc();
            let x = space.rv(payoff)?;
            if args.t.unwrap_or(0) != 0 || args.u.unwrap_or(space.horizon()) != space.horizon() {
                return Err(Error::Invalid(
                    "a static model prices terminal payoffs at the root only; drop --t/--u".into(),
                ));
            }
            (0, space.horizon(), vec![rm.eval(&x)?])
        }
    };

    let out = match args.common.format {
        Format::Table => {
            let mut s = format!("rho t={t} u={u}\n");
            for (i, v) in values.iter().enumerate() {
                s.push_str(&format!("atom {i}: {}\n", fmt_value(*v)));
            }
            s
        }
        Format::Csv => {
            let mut s = String::from("atom,value\n");
            for (i, v) in values.iter().enumerate() {
                s.push_str(&format!("{i},{}\n", fmt_value(*v)));
            }
            s
        }
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&json!({
                "t": t,
                "u": u,
                "values": values,
            }))
            .expect("eval output serializes");
            s.push('\n');
            s
        }
    };
    print!("{out}");
    Ok(0)
}

/// Builds the closure-certificate report for `pasting` and the full
/// structural-plus-recursivity report for `theorem`. A missing witness or a
/// failed precondition is a check failure, not a usage error.
/// The payoff battery behind `check`: generated from the seed, or the
/// single payoff supplied with `--x`/`--x-inline`.
fn payoff_battery(
    space: &risktree_core::FilteredSpace<f64>,
    args: &CheckArgs,
) -> Result<Vec<risktree_core::RandomVariable<f64>>> {
    if args.x.is_some() || args.x_inline.is_some() {
        Ok(vec![space.rv(load_payoff(&args.x, &args.x_inline)?)?])
    } else {
        Ok(random_battery(space, args.battery, 3.0, args.common.seed))
    }
}

fn structured_report(
    rm: &DynamicRiskMeasure<f64>,
    kind: CheckKind,
    tol: f64,
    battery: &[risktree_core::RandomVariable<f64>],
) -> Result<ConsistencyReport> {
    let name = match kind {
        CheckKind::Pasting => "pasting-closure",
        _ => "theorem-tc",
    };
    match StructuredModel::certify(rm.clone(), CLOSURE_TOL.max(tol)) {
        Ok(sm) => match kind {
            CheckKind::Pasting => {
                let mut report = ConsistencyReport::new(name, CLOSURE_TOL.max(tol));
                let tables = [
                    sm.paste_table(),
                    sm.bifurcation_table(),
                    sm.discount_table(),
                    sm.joint_table(),
                ];
                for entry in tables.iter().copied().flatten() {
                    report.push(
                        Scope::tag(entry.instance.clone()),
                        0.0,
                        Some(Witness::new(
                            format!("member-{}", entry.witness),
                            json!({ "witness": entry.witness }),
                        )),
                    );
                }
                report.sort();
                Ok(report)
            }
            _ => verify_theorem_tc(&sm, battery, tol),
        },
        Err(Error::NotClosed { instance }) => {
            let mut report = ConsistencyReport::new(name, CLOSURE_TOL.max(tol));
            report.push(Scope::tag(instance), 1.0, None);
            report
                .notes
                .push("no family member realizes this splice".into());
            Ok(report)
        }
        Err(Error::PreconditionNotMet { failed }) => {
            let mut report = ConsistencyReport::new(name, CLOSURE_TOL.max(tol));
            report.push(Scope::tag(failed), 1.0, None);
            report.notes.push("structural precondition failed".into());
            Ok(report)
        }
        Err(e) => Err(e),
    }
}

/// The suites defined for any dynamic functional: consistency in its
/// strong, weak, equality-premise, and implication forms. `measures`
/// supplies the laws that equal-law pair generation must respect.
fn functional_check<F: DynamicFunctional<f64>>(
    rm: &F,
    measures: &[risktree_core::TreeMeasure<f64>],
    args: &CheckArgs,
) -> Result<ConsistencyReport> {
    let space = rm.space();
    let seed = args.common.seed;
    let n = args.battery;
    let opts = TcOptions {
        premise_slack: 1e-9,
        tolerance: args.common.tol.unwrap_or(1e-7),
        min_non_vacuous: 1,
    };
    match args.check {
        CheckKind::Strong => check_strong_tc(
            rm,
            &payoff_battery(space, args)?,
            args.common.tol.unwrap_or(1e-9),
        ),
        CheckKind::Weak => check_weak_tc(rm, &comparable_pairs(space, n, 3.0, seed), &opts),
        CheckKind::Weakstar => {
            let base = payoff_battery(space, args)?;
            check_weak_star_tc(rm, &equal_law_pairs(space, measures, &base), &opts)
        }
        _ => check_tc_implications(
            rm,
            &payoff_battery(space, args)?,
            &comparable_pairs(space, n, 3.0, seed),
            &opts,
        ),
    }
}

fn dynamic_check(
    rm: &DynamicRiskMeasure<f64>,
    args: &CheckArgs,
    note: Option<&str>,
) -> Result<ConsistencyReport> {
    let space = rm.model().space();
    let tight = args.common.tol.unwrap_or(1e-9);
    let loose = args.common.tol.unwrap_or(1e-7);
    let mut report = match args.check {
        CheckKind::Axioms => check_dynamic_axioms(rm, &payoff_battery(space, args)?, tight)?,
        CheckKind::Regularity => {
            let battery = payoff_battery(space, args)?;
            let mut cases = Vec::new();
            for t in 0..=space.horizon() {
                for (a, r) in space.atoms(t).iter().enumerate().take(4) {
                    let mut event = vec![false; space.leaves()];
                    for leaf in r.clone() {
                        event[leaf] = true;
                    }
                    let x = battery[(t + a) % battery.len()].clone();
                    let y = battery[(t + a + 1) % battery.len()].clone();
                    cases.push(RegularityCase { x, y, t, event });
                }
            }
            check_regularity(rm, &cases, tight)?
        }
        CheckKind::Cocycle => check_cocycle(rm.model(), tight),
        CheckKind::Locality => check_locality(rm.model(), tight),
        CheckKind::Pasting | CheckKind::Theorem => {
            structured_report(rm, args.check, loose, &payoff_battery(space, args)?)?
        }
        CheckKind::Strong | CheckKind::Weak | CheckKind::Weakstar | CheckKind::Implications => {
            let measures: Vec<_> = rm.model().pairs().iter().map(|p| p.q.clone()).collect();
            functional_check(rm, &measures, args)?
        }
    };
    if let Some(text) = note {
        report.notes.push(text.into());
    }
    Ok(report)
}

fn run_check(args: CheckArgs) -> Result<u8> {
    configure_jobs(args.common.jobs);
    let model = load_model(&args.common.model)?;

    let report = match &model {
        ModelFile::Dynamic(rm) => dynamic_check(rm, &args, None)?,
        ModelFile::Premium(pp) => match args.check {
            // The premium itself is not a pair table; the table-facing
            // suites run on its dictionary expansion, which agrees with it
            // strictly before the horizon.
            CheckKind::Axioms
            | CheckKind::Regularity
            | CheckKind::Cocycle
            | CheckKind::Locality
            | CheckKind::Pasting
            | CheckKind::Theorem => {
                let expanded = pp.dictionary_model()?;
                dynamic_check(
                    &expanded,
                    &args,
                    Some("ran on the dictionary expansion of the premium"),
                )?
            }
            CheckKind::Strong | CheckKind::Weak | CheckKind::Weakstar | CheckKind::Implications => {
                functional_check(pp, &[], &args)?
            }
        },
        ModelFile::Static(rm) => match args.check {
            CheckKind::Axioms => {
                use risktree_core::RiskFunctional;
                let space = rm.space();
                let battery = payoff_battery(space, &args)?;
                let lambdas = [0.25, 0.5, 0.75];
                check_static_axioms(rm, &battery, &lambdas, args.common.tol.unwrap_or(1e-9))?
            }
            _ => {
                return Err(Error::Invalid(
                    "this suite needs a dynamic or premium model; a static dictionary supports `check axioms` and `conjugate`".into(),
                ))
            }
        },
    };

    let out = match args.common.format {
        Format::Csv => report.render_csv(),
        Format::Json => report.render_json(),
        Format::Table => report.render_table(),
    };
    print!("{out}");

    let passed = report.passed();
    let code = if passed == args.expect_fail { 1 } else { 0 };
    Ok(code)
}

fn run_conjugate(args: ConjugateArgs) -> Result<u8> {
    configure_jobs(args.common.jobs);
    let model = load_model(&args.common.model)?;

    match &model {
        ModelFile::Static(rm) => {
            let target = load_payoff(&args.x, &args.x_inline)?;
            let value = rm.minimal_penalty_raw(&target)?;
            let mut rows: Vec<(String, String, serde_json::Value)> = vec![(
                "minimal_penalty".into(),
                fmt_cost(&value),
                cost_json(&value),
            )];
            if args.oracle {
                let space = rm.space_arc();
                let mu = decompose_subprobability(&space, &target)?;
                let opts = OracleOptions {
                    seed: args.common.seed,
                    ..OracleOptions::default()
                };
                let (half_box, n) = (4.0, 17);
                let step = 2.0 * half_box / (n - 1) as f64;
                let bound = conjugate_grid_oracle(rm, &mu, half_box, n, &opts)?;
                let discrepancy = match &value {
                    Cost::Finite(v) => (v - bound).abs(),
                    Cost::Infinite => f64::INFINITY,
                };
                rows.push(("oracle_bound".into(), fmt_value(bound), json!(bound)));
                rows.push(("grid_step".into(), fmt_value(step), json!(step)));
                rows.push((
                    "discrepancy".into(),
                    fmt_value(discrepancy),
                    if discrepancy.is_finite() { json!(discrepancy) } else { json!("+inf") },
                ));
            }
            print_rows(args.common.format, &rows);
        }
        ModelFile::Dynamic(rm) => {
            if args.oracle {
                return Err(Error::Invalid(
                    "the grid oracle cross-checks static dictionaries; drop --oracle".into(),
                ));
            }
            let t = args.t.unwrap_or(0);
            let mut rows = Vec::new();
            for pair in 0..rm.model().pairs().len() {
                let values = rm.minimal_penalty(pair, t)?;
                for (atom, c) in values.iter().enumerate() {
                    rows.push((
                        format!("pair_{pair}_atom_{atom}"),
                        fmt_cost(c),
                        cost_json(c),
                    ));
                }
            }
            print_rows(args.common.format, &rows);
        }
        ModelFile::Premium(_) => {
            return Err(Error::Invalid(
                "conjugates are defined for dictionary and pair-table models".into(),
            ))
        }
    }
    Ok(0)
}

fn print_rows(format: Format, rows: &[(String, String, serde_json::Value)]) {
    let out = match format {
        Format::Table => {
            let mut s = String::new();
            for (k, v, _) in rows {
                s.push_str(&format!("{k}: {v}\n"));
            }
            s
        }
        Format::Csv => {
            let mut s = String::from("quantity,value\n");
            for (k, v, _) in rows {
                s.push_str(&format!("{k},{v}\n"));
            }
            s
        }
        Format::Json => {
            let map: serde_json::Map<String, serde_json::Value> =
                rows.iter().map(|(k, _, j)| (k.clone(), j.clone())).collect();
            let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(map))
                .expect("conjugate output serializes");
            s.push('\n');
            s
        }
    };
    print!("{out}");
}
