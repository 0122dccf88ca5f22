//! Command-line front end. Every subcommand writes an experiment report as
//! JSON (stdout, or `--out`) and, for tabular results, a CSV summary
//! (`--csv`, or stdout with `--format csv`).
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error, 3 bound or theorem
//! violation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use matrix_transfer::bounds::{
    bound_diagonal, bound_reports, build_saturating_diagonal, build_saturating_nondiagonal, nondiagonal_chain,
    BoundReport,
};
use matrix_transfer::channel::{
    check_isometry, kraus_completeness_residual, kraus_operators, ChannelSpec, Side,
};
use matrix_transfer::constraints::{
    check_constraint, sample_satisfying_channel, structural_zero_report, ConstraintKind, SamplerConfig,
    TransferConstraint,
};
use matrix_transfer::memory::memory_table;
use matrix_transfer::optimizer::{maximize_memory, sweep, OptError, OptResult, OptimizerConfig};
use matrix_transfer::qcore::DensityMatrix;
use matrix_transfer::scenarios::{
    example_setup, make_two_state_setup, sample_two_state_diagonal_channels,
    search_two_state_nondiagonal_counterexample, verify_two_state_diagonal_theorem, TwoStateSetup,
    COUNTEREXAMPLE_THRESHOLD,
};

#[derive(Parser, Serialize)]
#[command(name = "mtransfer", version, about = "Density-matrix element transfer: memory, constraints, bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Isometry, Kraus and (optionally) constraint and bound checks of a channel file
    Check {
        channel: PathBuf,
        #[command(flatten)]
        constraint: ConstraintArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Memory table ‖Θ_ca‖ of a channel file
    Memory {
        channel: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Closed-form bounds against the saturating constructions over an ε grid
    Bounds {
        #[arg(long, value_enum)]
        kind: TemplateKind,
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// ε grid
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        /// second ε of the diagonal construction (defaults to each grid value)
        #[arg(long)]
        eps2: Option<f64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Sample channels satisfying a constraint
    Sample {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 1)]
        dc: usize,
        #[command(flatten)]
        constraint: ConstraintArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        restarts: usize,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Write sampled channels here (`-<i>` appended before the extension when count > 1)
        #[arg(long)]
        channel_out: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Maximize the memory on one element under a constraint
    Optimize {
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        constraint: ConstraintArgs,
        /// One-based element a,c whose memory ‖Θ_ca‖ is maximized
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2])]
        pair: Vec<usize>,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        #[arg(long)]
        channel_out: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Optimize over an ε grid and compare with the closed-form bound
    Sweep {
        #[arg(long, value_enum)]
        kind: TemplateKind,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        /// fixed ε of the second diagonal element (defaults to each grid value)
        #[arg(long)]
        eps2: Option<f64>,
        /// One-based constrained elements (diagonal: u,v; non-diagonal: a,b)
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2])]
        elements: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2])]
        pair: Vec<usize>,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Worked scenarios
    Scenario {
        #[command(subcommand)]
        scenario: Scenario,
    },
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Scenario {
    /// Two non-commuting qubit states with ρ₁₁χ₁₂ = χ₁₁ρ₁₂
    TwoState {
        /// ρ as JSON rows of [re, im]
        #[arg(long, requires = "chi", conflicts_with = "states_file")]
        rho: Option<String>,
        /// χ as JSON rows of [re, im]
        #[arg(long, requires = "rho", conflicts_with = "states_file")]
        chi: Option<String>,
        /// JSON file { "rho": ..., "chi": ... }
        #[arg(long)]
        states_file: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TwoStateMode::Both)]
        mode: TwoStateMode,
        /// sampled channels per ancilla dimension for the diagonal check
        #[arg(long, default_value_t = 30)]
        count: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2])]
        dcs: Vec<usize>,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        #[arg(long)]
        channel_out: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum TwoStateMode {
    Diagonal,
    Nondiagonal,
    Both,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum TemplateKind {
    Diagonal,
    Nondiagonal,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum KindArg {
    DiagIdeal,
    DiagNonideal,
    NondiagIdeal,
    NondiagNonideal,
    RealPart,
}

#[derive(Args, Serialize)]
struct ConstraintArgs {
    #[arg(long, value_enum, conflicts_with = "constraint_file")]
    constraint: Option<KindArg>,
    /// One-based elements: a (diag-ideal), u1,u2,... (diag-nonideal), a,b (others)
    #[arg(long, value_delimiter = ',')]
    elements: Option<Vec<usize>>,
    /// ε values: one per element (diag-nonideal) or one (nondiag-nonideal)
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Constraint JSON { "n", "kind", "params" }
    #[arg(long)]
    constraint_file: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct OptimizerArgs {
    #[arg(long, default_value_t = 1)]
    dc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    restarts: usize,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 10.0)]
    penalty_initial: f64,
    #[arg(long, default_value_t = 10.0)]
    penalty_factor: f64,
    #[arg(long, default_value_t = 4)]
    penalty_stages: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Do not seed restart 0 from a saturating construction
    #[arg(long)]
    no_warm_start: bool,
}

impl OptimizerArgs {
    fn config(&self) -> OptimizerConfig {
        OptimizerConfig {
            restarts: self.restarts,
            max_iters: self.max_iters,
            penalty_initial: self.penalty_initial,
            penalty_factor: self.penalty_factor,
            penalty_stages: self.penalty_stages,
            tol: self.tol,
            seed: self.seed,
            dc: self.dc,
            warm_start: !self.no_warm_start,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Serialize)]
struct OutputArgs {
    /// stdout format; JSON goes to stdout only without --out, and commands
    /// without a table print JSON either way
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write the JSON report here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the CSV summary here
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct ExperimentReport {
    command: Vec<String>,
    version: &'static str,
    config: Value,
    results: Value,
    wall_time_s: f64,
    input_digests: BTreeMap<String, String>,
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

/// What a subcommand hands back for writing.
struct Outcome {
    results: Value,
    csv: Option<String>,
    /// reported after the files are written
    violation: Option<String>,
}

#[derive(Default)]
struct Inputs {
    digests: BTreeMap<String, String>,
}

impl Inputs {
    fn read(&mut self, path: &Path) -> Result<String, Failure> {
        let bytes = std::fs::read(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
        self.digests
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        String::from_utf8(bytes).map_err(|e| Failure(format!("{}: {e}", path.display())))
    }

    fn channel(&mut self, path: &Path) -> Result<ChannelSpec, Failure> {
        Ok(ChannelSpec::from_json(&self.read(path)?)?)
    }
}

fn one_based(i: usize, n: usize) -> Result<usize, Failure> {
    if i == 0 || i > n {
        return Err(Failure(format!("index {i} out of range 1..={n}")));
    }
    Ok(i - 1)
}

impl ConstraintArgs {
    fn is_set(&self) -> bool {
        self.constraint.is_some() || self.constraint_file.is_some()
    }

    fn build(&self, n: Option<usize>, inputs: &mut Inputs) -> Result<TransferConstraint, Failure> {
        if let Some(path) = &self.constraint_file {
            let tc: TransferConstraint = serde_json::from_str(&inputs.read(path)?)?;
            if let Some(n) = n.filter(|&n| n != tc.n()) {
                return Err(Failure(format!("--n {n} disagrees with constraint file n = {}", tc.n())));
            }
            return Ok(tc);
        }
        let kind = self
            .constraint
            .ok_or_else(|| Failure("a constraint is required (--constraint or --constraint-file)".into()))?;
        let n = n.ok_or_else(|| Failure("--n is required with --constraint".into()))?;
        let elements = self.elements.clone().unwrap_or_else(|| vec![1, 2]);
        let elems = elements
            .iter()
            .map(|&i| one_based(i, n))
            .collect::<Result<Vec<_>, _>>()?;
        let eps = self.eps.clone().unwrap_or_default();
        let two = |what: &str| -> Result<(usize, usize), Failure> {
            match elems[..] {
                [a, b] => Ok((a, b)),
                _ => Err(Failure(format!("{what} needs exactly two elements"))),
            }
        };
        let kind = match kind {
            KindArg::DiagIdeal => match elems[..] {
                [a] => ConstraintKind::DiagonalIdeal { a },
                _ => return Err(Failure("diag-ideal needs exactly one element".into())),
            },
            KindArg::DiagNonideal => {
                if eps.len() != elems.len() {
                    return Err(Failure("diag-nonideal needs one ε per element".into()));
                }
                ConstraintKind::DiagonalNonIdeal {
                    pairs: elems.iter().copied().zip(eps).collect(),
                }
            }
            KindArg::NondiagIdeal => {
                let (a, b) = two("nondiag-ideal")?;
                ConstraintKind::NondiagonalIdeal { a, b }
            }
            KindArg::NondiagNonideal => {
                let (a, b) = two("nondiag-nonideal")?;
                let [eps] = eps[..] else {
                    return Err(Failure("nondiag-nonideal needs exactly one ε".into()));
                };
                ConstraintKind::NondiagonalNonIdeal { a, b, eps }
            }
            KindArg::RealPart => {
                let (a, b) = two("real-part")?;
                ConstraintKind::RealPartIdeal { a, b }
            }
        };
        Ok(TransferConstraint::new(n, kind)?)
    }
}

fn violations(reports: &[BoundReport]) -> Option<String> {
    let bad: Vec<String> = reports
        .iter()
        .filter(|r| r.violated())
        .map(|r| format!("pair {:?}: achieved {} > bound {}", r.pair, r.achieved, r.theoretical))
        .collect();
    (!bad.is_empty()).then(|| bad.join("; "))
}

fn check(path: &Path, args: &ConstraintArgs, inputs: &mut Inputs) -> Result<Outcome, Failure> {
    let ch = inputs.channel(path)?;
    let iso = check_isometry(&ch);
    let kraus_a = kraus_completeness_residual(&kraus_operators(&ch, Side::A)?, ch.n());
    let kraus_b = kraus_completeness_residual(&kraus_operators(&ch, Side::B)?, ch.n());
    let mut rows = vec![
        ("isometry_residual", iso.max()),
        ("kraus_completeness_a", kraus_a),
        ("kraus_completeness_b", kraus_b),
    ];
    let mut results = json!({
        "n": ch.n(),
        "dc": ch.dc(),
        "isometry": iso,
        "kraus_completeness": { "a": kraus_a, "b": kraus_b },
    });
    let mut violation = None;
    if args.is_set() {
        let tc = args.build(Some(ch.n()), inputs)?;
        let residual = check_constraint(&ch, &tc)?;
        rows.push(("constraint_residual", residual));
        let reports = bound_reports(&ch, &tc)?;
        let structural = structural_zero_report(&ch, &tc).ok();
        if let Some(reports) = &reports {
            violation = violations(reports);
        }
        results["constraint"] = json!({
            "constraint": tc,
            "description": tc.describe(),
            "residual": residual,
            "bounds": reports,
            "structural_zeros": structural,
        });
    }
    let csv = rows
        .iter()
        .fold(String::from("quantity,value\n"), |mut s, (k, v)| {
            let _ = writeln!(s, "{k},{v:e}");
            s
        });
    Ok(Outcome {
        results,
        csv: Some(csv),
        violation,
    })
}

fn memory(path: &Path, inputs: &mut Inputs) -> Result<Outcome, Failure> {
    let ch = inputs.channel(path)?;
    let table = memory_table(&ch);
    Ok(Outcome {
        csv: Some(table.to_csv()),
        results: serde_json::to_value(&table)?,
        violation: None,
    })
}

fn bounds(kind: TemplateKind, n: usize, grid: &[f64], eps2: Option<f64>) -> Result<Outcome, Failure> {
    let mut csv = String::from("eps,eps2,a,c,theoretical,achieved,slack,chain_worst_violation\n");
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for &eps in grid {
        let (ch, tc, e2) = match kind {
            TemplateKind::Diagonal => {
                let e2 = eps2.unwrap_or(eps);
                let ch = build_saturating_diagonal(n, eps, e2)?;
                let tc = TransferConstraint::new(n, ConstraintKind::DiagonalNonIdeal { pairs: vec![(0, eps), (1, e2)] })?;
                (ch, tc, Some(e2))
            }
            TemplateKind::Nondiagonal => {
                let ch = build_saturating_nondiagonal(n, eps)?;
                let tc = TransferConstraint::new(n, ConstraintKind::NondiagonalNonIdeal { a: 0, b: 1, eps })?;
                (ch, tc, None)
            }
        };
        let reports = bound_reports(&ch, &tc)?
            .ok_or_else(|| Failure(format!("construction at ε = {eps} is not admissible")))?;
        let chain = matches!(kind, TemplateKind::Nondiagonal).then(|| nondiagonal_chain(&ch, 0, 1, eps));
        if let Some(v) = violations(&reports) {
            bad.push(format!("ε = {eps}: {v}"));
        }
        for r in &reports {
            let _ = writeln!(
                csv,
                "{eps},{},{},{},{:e},{:e},{:e},{}",
                e2.map_or(String::new(), |e| e.to_string()),
                r.pair.0,
                r.pair.1,
                r.theoretical,
                r.achieved,
                r.slack,
                chain.as_ref().map_or(String::new(), |c| format!("{:e}", c.worst_violation()))
            );
        }
        rows.push(json!({ "eps": eps, "eps2": e2, "reports": reports, "chain": chain }));
    }
    Ok(Outcome {
        results: json!({ "kind": kind, "n": n, "rows": rows }),
        csv: Some(csv),
        violation: (!bad.is_empty()).then(|| bad.join("; ")),
    })
}

fn numbered(path: &Path, i: usize, count: usize) -> PathBuf {
    if count == 1 {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-{i}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{i}"),
    };
    path.with_file_name(name)
}

#[allow(clippy::too_many_arguments)]
fn sample(
    tc: &TransferConstraint,
    cfg: SamplerConfig,
    count: usize,
    channel_out: Option<&Path>,
) -> Result<Outcome, Failure> {
    let mut csv = String::from("index,seed,isometry_residual,constraint_residual,max_offdiag_memory\n");
    let mut samples = Vec::new();
    let mut bad = Vec::new();
    for i in 0..count {
        let seed = cfg.seed.wrapping_add(i as u64);
        let ch = sample_satisfying_channel(tc, &SamplerConfig { seed, ..cfg })?;
        let iso = check_isometry(&ch).max();
        let residual = check_constraint(&ch, tc)?;
        let table = memory_table(&ch);
        let reports = bound_reports(&ch, tc)?;
        if let Some(v) = reports.as_deref().and_then(violations) {
            bad.push(format!("sample {i}: {v}"));
        }
        let _ = writeln!(csv, "{i},{seed},{iso:e},{residual:e},{:e}", table.max_offdiag());
        if let Some(path) = channel_out {
            ch.save(&numbered(path, i, count))?;
        }
        samples.push(json!({
            "seed": seed,
            "isometry_residual": iso,
            "constraint_residual": residual,
            "memory": table,
            "bounds": reports,
            "structural_zeros": structural_zero_report(&ch, tc).ok(),
            "channel": ch,
        }));
    }
    Ok(Outcome {
        results: json!({ "constraint": tc, "description": tc.describe(), "samples": samples }),
        csv: Some(csv),
        violation: (!bad.is_empty()).then(|| bad.join("; ")),
    })
}

fn opt_csv(res: &OptResult) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
    format!(
        "a,c,achieved,bound,slack,constraint_residual,isometry_residual,best_restart\n{},{},{:e},{},{},{:e},{:e},{}\n",
        res.pair.0,
        res.pair.1,
        res.achieved,
        opt(res.bound),
        opt(res.slack()),
        res.constraint_residual,
        res.isometry_residual,
        res.best_restart
    )
}

/// Splits an optimizer outcome into a report payload and a violation flag.
fn opt_outcome(result: Result<OptResult, OptError>) -> Result<(OptResult, Option<String>), Failure> {
    match result {
        Ok(res) => Ok((res, None)),
        Err(OptError::BoundViolation(res)) => {
            let msg = format!(
                "achieved {} exceeds bound {:?}; channel:\n{}",
                res.achieved,
                res.bound,
                res.channel.to_json()
            );
            Ok((*res, Some(msg)))
        }
        Err(e) => Err(e.into()),
    }
}

fn optimize(
    tc: &TransferConstraint,
    pair: (usize, usize),
    cfg: &OptimizerConfig,
    channel_out: Option<&Path>,
) -> Result<Outcome, Failure> {
    let (res, violation) = opt_outcome(maximize_memory(tc, pair, cfg))?;
    if let Some(path) = channel_out {
        res.channel.save(path)?;
    }
    Ok(Outcome {
        csv: Some(opt_csv(&res)),
        results: json!({
            "description": tc.describe(),
            "memory": memory_table(&res.channel),
            "result": res,
        }),
        violation,
    })
}

fn sweep_cmd(
    kind: TemplateKind,
    n: usize,
    grid: &[f64],
    eps2: Option<f64>,
    elements: (usize, usize),
    pair: (usize, usize),
    cfg: &OptimizerConfig,
) -> Result<Outcome, Failure> {
    let (u, v) = elements;
    let template = |eps: f64| {
        let kind = match kind {
            TemplateKind::Diagonal => ConstraintKind::DiagonalNonIdeal {
                pairs: vec![(u, eps), (v, eps2.unwrap_or(eps))],
            },
            TemplateKind::Nondiagonal => ConstraintKind::NondiagonalNonIdeal { a: u, b: v, eps },
        };
        TransferConstraint::new(n, kind)
    };
    match sweep(template, grid, pair, cfg) {
        Ok(table) => Ok(Outcome {
            csv: Some(table.to_csv()),
            results: serde_json::to_value(&table)?,
            violation: None,
        }),
        Err(OptError::BoundViolation(res)) => {
            let msg = format!(
                "ε sweep: achieved {} exceeds bound {:?}; channel:\n{}",
                res.achieved,
                res.bound,
                res.channel.to_json()
            );
            Ok(Outcome {
                csv: Some(opt_csv(&res)),
                results: json!({ "violating_result": res }),
                violation: Some(msg),
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn parse_state(s: &str) -> Result<DensityMatrix, Failure> {
    Ok(serde_json::from_str(s)?)
}

#[allow(clippy::too_many_arguments)]
fn two_state(
    rho: Option<&str>,
    chi: Option<&str>,
    states_file: Option<&Path>,
    mode: TwoStateMode,
    count: usize,
    dcs: &[usize],
    cfg: &OptimizerConfig,
    channel_out: Option<&Path>,
    inputs: &mut Inputs,
) -> Result<Outcome, Failure> {
    #[derive(serde::Deserialize)]
    struct StatesFile {
        rho: DensityMatrix,
        chi: DensityMatrix,
    }
    let setup: TwoStateSetup = match (rho, chi, states_file) {
        (_, _, Some(path)) => {
            let f: StatesFile = serde_json::from_str(&inputs.read(path)?)?;
            make_two_state_setup(f.rho, f.chi)?
        }
        (Some(r), Some(c), None) => make_two_state_setup(parse_state(r)?, parse_state(c)?)?,
        _ => example_setup(),
    };
    let mut results = json!({ "setup": setup });
    let mut rows = vec![
        ("castro_residual".to_string(), setup.castro_residual()),
        ("commutator_norm".to_string(), setup.commutator_norm()),
    ];
    let mut violation = None;
    if mode != TwoStateMode::Nondiagonal {
        let channels = sample_two_state_diagonal_channels(&setup, count, dcs, cfg.seed)?;
        let rep = verify_two_state_diagonal_theorem(&setup, &channels)?;
        rows.push(("diagonal_max_memory_12".into(), rep.max_memory_12));
        rows.push(("diagonal_max_structural_zero".into(), rep.max_structural_zero));
        if !rep.theorem_holds() {
            violation = Some(format!("diagonal two-state transfer left memory {}", rep.max_memory_12));
        }
        results["diagonal"] = json!({ "report": rep, "theorem_holds": rep.theorem_holds() });
    }
    if mode != TwoStateMode::Diagonal {
        let res = search_two_state_nondiagonal_counterexample(&setup, cfg)?;
        let table = memory_table(&res.channel);
        let max_entry = table.max_offdiag();
        let found = max_entry >= COUNTEREXAMPLE_THRESHOLD;
        if !found {
            eprintln!("warning: largest off-diagonal memory {max_entry} is below {COUNTEREXAMPLE_THRESHOLD}");
        }
        if let Some(path) = channel_out {
            res.channel.save(path)?;
        }
        rows.push(("nondiagonal_memory_12".into(), res.achieved));
        rows.push(("nondiagonal_max_offdiag_memory".into(), max_entry));
        results["nondiagonal"] = json!({
            "counterexample_found": found,
            "max_offdiag_memory": max_entry,
            "memory": table,
            "result": res,
        });
    }
    let csv = rows.iter().fold(String::from("quantity,value\n"), |mut s, (k, v)| {
        let _ = writeln!(s, "{k},{v:e}");
        s
    });
    Ok(Outcome {
        results,
        csv: Some(csv),
        violation,
    })
}

fn pair_of(v: &[usize], n: usize) -> Result<(usize, usize), Failure> {
    match v {
        [a, c] => Ok((one_based(*a, n)?, one_based(*c, n)?)),
        _ => Err(Failure(format!("expected two one-based indices, got {v:?}"))),
    }
}

fn run<'a>(cli: &'a Cli, inputs: &mut Inputs) -> Result<(Outcome, &'a OutputArgs), Failure> {
    Ok(match &cli.command {
        Command::Check {
            channel,
            constraint,
            output,
        } => (check(channel, constraint, inputs)?, output),
        Command::Memory { channel, output } => (memory(channel, inputs)?, output),
        Command::Bounds {
            kind,
            n,
            eps,
            eps2,
            output,
        } => {
            if matches!(kind, TemplateKind::Diagonal) {
                // reject bad ε before building anything
                for &e in eps {
                    bound_diagonal(e, eps2.unwrap_or(e))?;
                }
            }
            (bounds(*kind, *n, eps, *eps2)?, output)
        }
        Command::Sample {
            n,
            dc,
            constraint,
            seed,
            count,
            restarts,
            max_iters,
            tol,
            channel_out,
            output,
        } => {
            let tc = constraint.build(*n, inputs)?;
            let cfg = SamplerConfig {
                dc: *dc,
                seed: *seed,
                tol: *tol,
                restarts: *restarts,
                max_iters: *max_iters,
            };
            (sample(&tc, cfg, *count, channel_out.as_deref())?, output)
        }
        Command::Optimize {
            n,
            constraint,
            pair,
            optimizer,
            channel_out,
            output,
        } => {
            let tc = constraint.build(*n, inputs)?;
            let pair = pair_of(pair, tc.n())?;
            (optimize(&tc, pair, &optimizer.config(), channel_out.as_deref())?, output)
        }
        Command::Sweep {
            kind,
            n,
            eps,
            eps2,
            elements,
            pair,
            optimizer,
            output,
        } => {
            let elements = pair_of(elements, *n)?;
            let pair = pair_of(pair, *n)?;
            (sweep_cmd(*kind, *n, eps, *eps2, elements, pair, &optimizer.config())?, output)
        }
        Command::Scenario {
            scenario:
                Scenario::TwoState {
                    rho,
                    chi,
                    states_file,
                    mode,
                    count,
                    dcs,
                    optimizer,
                    channel_out,
                    output,
                },
        } => (
            two_state(
                rho.as_deref(),
                chi.as_deref(),
                states_file.as_deref(),
                *mode,
                *count,
                dcs,
                &optimizer.config(),
                channel_out.as_deref(),
                inputs,
            )?,
            output,
        ),
    })
}

fn write_outputs(report: &ExperimentReport, csv: Option<&str>, output: &OutputArgs) -> Result<(), Failure> {
    let json = serde_json::to_string_pretty(report)? + "\n";
    if let Some(path) = &output.out {
        std::fs::write(path, &json)?;
    }
    if let (Some(csv), Some(path)) = (csv, &output.csv) {
        std::fs::write(path, csv)?;
    }
    match (output.format, csv) {
        (Format::Csv, Some(csv)) => print!("{csv}"),
        _ if output.out.is_none() => print!("{json}"),
        _ => {}
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let start = Instant::now();
    let mut inputs = Inputs::default();
    let (outcome, output) = match run(&cli, &mut inputs) {
        Ok(v) => v,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let report = ExperimentReport {
        command: argv,
        version: env!("CARGO_PKG_VERSION"),
        config: serde_json::to_value(&cli.command).unwrap_or(Value::Null),
        results: outcome.results,
        wall_time_s: start.elapsed().as_secs_f64(),
        input_digests: inputs.digests,
    };
    if let Err(Failure(msg)) = write_outputs(&report, outcome.csv.as_deref(), output) {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    if let Some(msg) = outcome.violation {
        eprintln!("bound violation: {msg}");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
