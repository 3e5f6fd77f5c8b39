//! One function per subcommand. Each returns `Ok(passed)`; reports go to the
//! configured output directory as pretty JSON.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use psolv_core::estimate::{bisect, Bisection, BisectionStatus};
use psolv_core::io::{read_field, write_field, write_operator_csv, write_scalar_csv, Field};
use psolv_core::linalg::{c, CMat};
use psolv_core::psi::{check_psibar, default_tau_zero, sign_partition, signed_distance, trace_bicharacteristic, PsiBarReport, Trace, TraceOptions};
use psolv_core::system::{classify, gallery, gallery_items, run_item, ClassificationReport, MatrixSymbol};
use psolv_core::weights::{certify_inequalities, WeightBundle, WeightCertificate};
use psolv_core::{MatrixField, ScalarField};

use crate::expr::Expr;
use crate::symbols::{self, ResolvedSymbol};
use crate::{CliError, Command, FieldsAction, RunConfig};

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    passed: bool,
    config: &'a RunConfig,
    result: &'a T,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn report<T: Serialize>(cfg: &RunConfig, command: &str, passed: bool, result: &T) -> Result<PathBuf, CliError> {
    let path = cfg.out.join(format!("{command}.json"));
    let r = Report { tool: "psolv", version: psolv_core::VERSION, command, passed, config: cfg, result };
    write_json(&path, &r)?;
    println!("{command}: {} ({})", if passed { "PASS" } else { "FAIL" }, path.display());
    Ok(path)
}

pub fn dispatch(command: &Command, cfg: &RunConfig) -> Result<bool, CliError> {
    match command {
        Command::CheckPsi => check_psi(cfg),
        Command::Classify { .. } => classify_cmd(cfg),
        Command::Verify => verify(cfg),
        Command::Gallery => gallery_cmd(cfg),
        Command::Weights => weights(cfg),
        Command::Fields { action } => fields(action, cfg),
    }
}

fn tau_for(cfg: &RunConfig, f: &ScalarField) -> f64 {
    cfg.tolerances.tau_zero.unwrap_or_else(|| default_tau_zero(f))
}

fn print_witnesses(report: &PsiBarReport) {
    for v in report.violations.iter().take(5) {
        println!(
            "  violation at (x, xi) = ({:.4}, {:.4}): f > tau at t = {:.4}, f < -tau at t = {:.4}",
            v.x, v.xi, v.witness.s_plus, v.witness.s_minus
        );
    }
    if report.violating_nodes > 5 {
        println!("  ... {} violating nodes in total", report.violating_nodes);
    }
}

#[derive(Serialize)]
struct CheckPsiResult {
    symbol: String,
    psibar: PsiBarReport,
    trace: Option<Trace>,
}

fn check_psi(cfg: &RunConfig) -> Result<bool, CliError> {
    let sym = ResolvedSymbol::from_config(cfg)?;
    let f = sym.sampled(cfg, cfg.t_half)?;
    let psibar = check_psibar(&f, tau_for(cfg, &f));
    let trace = match &cfg.trace {
        None => None,
        Some(tc) => {
            let parse = |s: &str| Expr::parse(s).map_err(|e| CliError::Config(format!("trace: {e}")));
            let (re, im, h) = (parse(&tc.re)?, parse(&tc.im)?, cfg.h);
            let q = move |x: f64, xi: f64| c(re.eval(0.0, x, xi, h), im.eval(0.0, x, xi, h));
            let g = sym.grid(cfg)?;
            let opts = TraceOptions { window: [g.x_min, g.x_max, g.xi_min, g.xi_max], ..Default::default() };
            Some(trace_bicharacteristic(q, (tc.start[0], tc.start[1]), tc.step, tc.max_steps, opts)?)
        }
    };
    let passed = psibar.holds;
    if !passed {
        print_witnesses(&psibar);
    }
    report(cfg, "check-psi", passed, &CheckPsiResult { symbol: sym.name, psibar, trace })?;
    Ok(passed)
}

/// Bilinear in `(x, ξ)` on one time slice, clamped to the lattice.
fn slice_symbol(field: MatrixField, slice: usize, name: String) -> Result<MatrixSymbol, CliError> {
    if slice >= field.time.n_t {
        return Err(CliError::Config(format!("classify.slice {slice} out of range (n_t = {})", field.time.n_t)));
    }
    let dim = field.dim;
    Ok(MatrixSymbol::new(name, dim, 2, move |w| {
        let g = &field.grid;
        let locate = |v: f64, lo: f64, d: f64, n: usize| {
            let s = ((v - lo) / d - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (s.floor() as usize).min(n - 2);
            (i, s - i as f64)
        };
        let (j, a) = locate(w[0], g.x_min, g.dx(), g.n_x);
        let (k, b) = locate(w[1], g.xi_min, g.dxi(), g.n_xi);
        let mut out = CMat::zeros(dim, dim);
        for (dj, wj) in [(0, 1.0 - a), (1, a)] {
            for (dk, wk) in [(0, 1.0 - b), (1, b)] {
                out += field.block(slice, j + dj, k + dk) * c(wj * wk, 0.0);
            }
        }
        out
    }))
}

fn classify_cmd(cfg: &RunConfig) -> Result<bool, CliError> {
    let opts = cfg.classify_options();
    let cc = &cfg.classify;
    if let Some(name) = &cc.item {
        let items = gallery_items();
        let mut item = items.into_iter().find(|it| it.name == name).ok_or_else(|| CliError::Config(format!("unknown gallery item '{name}'")))?;
        if let Some(p) = &cc.point {
            if p.len() != item.point.len() {
                return Err(CliError::Config(format!("classify.point needs {} coordinates for '{name}'", item.point.len())));
            }
            item.point = p.clone();
        }
        let entry = run_item(&item, &opts);
        let passed = entry.matches();
        for m in &entry.mismatches {
            println!("  {}: {m}", entry.name);
        }
        report(cfg, "classify", passed, &entry)?;
        return Ok(passed);
    }
    let Some(path) = &cc.file else {
        return Err(CliError::Config("classify needs classify.item or classify.file".into()));
    };
    let field = symbols::read_matrix(path)?;
    let point = cc.point.clone().unwrap_or_else(|| vec![0.0, 0.0]);
    if point.len() != 2 {
        return Err(CliError::Config("classify.point needs (x, xi) for a field file".into()));
    }
    let sym = slice_symbol(field, cc.slice, path.display().to_string())?;
    let rep: ClassificationReport = classify(&sym, &point, &opts);
    let passed = rep.principal_type.verdict.as_bool().is_some();
    report(cfg, "classify", passed, &rep)?;
    Ok(passed)
}

fn gallery_cmd(cfg: &RunConfig) -> Result<bool, CliError> {
    let entries = gallery(&cfg.classify_options());
    let dir = cfg.out.join("gallery");
    for e in &entries {
        write_json(&dir.join(format!("{}.json", e.name)), e)?;
        if !e.matches() {
            println!("  mismatch in {}: {}", e.name, e.mismatches.join("; "));
        }
    }
    let summary: Vec<(String, bool)> = entries.iter().map(|e| (e.name.clone(), e.matches())).collect();
    let passed = entries.iter().all(|e| e.matches());
    report(cfg, "gallery", passed, &summary)?;
    Ok(passed)
}

fn weight_bundle(f: &ScalarField, tau: f64) -> Result<WeightBundle, CliError> {
    let sd = signed_distance(&sign_partition(f, tau));
    Ok(WeightBundle::build(f, &sd)?)
}

fn weights(cfg: &RunConfig) -> Result<bool, CliError> {
    let sym = ResolvedSymbol::from_config(cfg)?;
    let f = sym.sampled(cfg, cfg.t_half)?;
    let bundle = weight_bundle(&f, tau_for(cfg, &f))?;
    let cert = certify_inequalities(&bundle, cfg.seed);
    let dir = cfg.out.join("weights");
    fs::create_dir_all(&dir)?;
    for (name, field) in [
        ("delta0", &bundle.delta0),
        ("hinv_sqrt", &bundle.hinv_sqrt),
        ("big_m", &bundle.big_m),
        ("m", &bundle.m),
    ] {
        write_field(dir.join(format!("{name}.pslf")), &Field::Scalar(field.clone()))?;
    }
    let passed = cert.passed();
    report(cfg, "weights", passed, &cert)?;
    Ok(passed)
}

#[derive(Serialize)]
struct Checks {
    bisection: bool,
    direct: bool,
    conjugated: Option<bool>,
    cauchy_schwarz: bool,
    west3: bool,
    derivative_term: bool,
    pseudo_sign: bool,
    weights: bool,
    reduction_residual: Option<bool>,
}

impl Checks {
    fn all(&self) -> bool {
        self.bisection
            && self.direct
            && self.conjugated != Some(false)
            && self.cauchy_schwarz
            && self.west3
            && self.derivative_term
            && self.pseudo_sign
            && self.weights
            && self.reduction_residual != Some(false)
    }
}

#[derive(Serialize)]
struct VerifyResult {
    symbol: String,
    lower_order: Option<String>,
    gate: PsiBarReport,
    bisection: Option<Bisection>,
    weights: Option<WeightCertificate>,
    checks: Option<Checks>,
}

/// Residual ceiling for the lower-order reduction.
const REDUCTION_TOL: f64 = 1e-8;

fn verify(cfg: &RunConfig) -> Result<bool, CliError> {
    let sym = ResolvedSymbol::from_config(cfg)?;
    let lower = symbols::lower_order(cfg)?;
    let opts = cfg.estimate_options();
    let grid = sym.grid(cfg)?;

    let gate_field = match &sym.field {
        Some(f) => f.clone(),
        None => {
            let time = psolv_core::TimeGrid::symmetric(opts.t_hi, opts.n_t)?;
            let e = sym.eval.clone();
            psolv_core::grid::sample_scalar(move |t, x, xi| e(t, x, xi), time, grid)?
        }
    };
    let gate = check_psibar(&gate_field, tau_for(cfg, &gate_field));
    let mut result = VerifyResult {
        symbol: sym.name.clone(),
        lower_order: lower.as_ref().map(|l| l.name.clone()),
        gate,
        bisection: None,
        weights: None,
        checks: None,
    };
    if !result.gate.holds {
        print_witnesses(&result.gate);
        if !cfg.estimate.skip_gate {
            report(cfg, "verify", false, &result)?;
            return Ok(false);
        }
    }

    let b = bisect(&*sym.eval, lower.as_ref(), grid, &opts)?;
    let ev = &b.evaluation;
    let bundle = weight_bundle(&ev.fields.f, ev.gate.tau_zero)?;
    let cert = certify_inequalities(&bundle, cfg.seed);
    let checks = Checks {
        bisection: b.status != BisectionStatus::FailsAtAllTested,
        direct: ev.direct.verdict,
        conjugated: ev.conjugated.as_ref().map(|r| r.verdict),
        cauchy_schwarz: ev.direct.cauchy_schwarz_ok,
        west3: ev.west3.ok,
        derivative_term: ev.derivative_term.ok,
        pseudo_sign: ev.pseudo_sign.ok,
        weights: cert.passed(),
        reduction_residual: ev.reduction.as_ref().map(|r| r.residual <= REDUCTION_TOL),
    };
    let passed = result.gate.holds && checks.all();

    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("estimate.csv"), ev.direct.to_csv())?;
    if let Some(conj) = &ev.conjugated {
        fs::write(cfg.out.join("estimate_conjugated.csv"), conj.to_csv())?;
    }
    if !result.gate.holds {
        fs::write(cfg.out.join("estimate_at_max.csv"), b.at_max.to_csv())?;
    }
    println!(
        "  T_corpus = {}, C0 = {}, c1 = {:.4}, min rhs = {:.4e}",
        b.t_corpus.map_or("none".into(), |t| format!("{t:.4}")),
        ev.direct.fitted_C0.map_or("n/a".into(), |c| format!("{c:.4}")),
        ev.west3.c1,
        ev.min_rhs(),
    );
    result.bisection = Some(b);
    result.weights = Some(cert);
    result.checks = Some(checks);
    report(cfg, "verify", passed, &result)?;
    Ok(passed)
}

#[derive(Serialize)]
struct FieldSummary {
    kind: &'static str,
    grid: psolv_core::PhaseGrid,
    time: Option<psolv_core::TimeGrid>,
    dim: usize,
    len: usize,
    max_abs: f64,
}

fn summarize(field: &Field) -> FieldSummary {
    match field {
        Field::Scalar(f) => FieldSummary {
            kind: "scalar",
            grid: f.grid,
            time: Some(f.time),
            dim: 1,
            len: f.values.len(),
            max_abs: f.max_abs(),
        },
        Field::Matrix(f) => FieldSummary {
            kind: "matrix",
            grid: f.grid,
            time: Some(f.time),
            dim: f.dim,
            len: f.values.len(),
            max_abs: f.values.iter().map(|z| z.norm()).fold(0.0, f64::max),
        },
        Field::Operator(op) => FieldSummary {
            kind: "operator",
            grid: op.grid,
            time: None,
            dim: op.sys_dim,
            len: op.entries.len(),
            max_abs: op.entries.iter().map(|z| z.norm()).fold(0.0, f64::max),
        },
    }
}

fn write_matrix_csv(path: &Path, field: &MatrixField) -> Result<(), CliError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "t,x,xi,row,col,re,im")?;
    let n = field.dim;
    let g = field.grid;
    for (p, z) in field.values.iter().enumerate() {
        let (point, entry) = (p / (n * n), p % (n * n));
        let (x, xi) = g.coords(point % g.nodes());
        let t = field.time.t(point / g.nodes());
        writeln!(out, "{t:e},{x:e},{xi:e},{},{},{:e},{:e}", entry / n, entry % n, z.re, z.im)?;
    }
    Ok(())
}

fn fields(action: &FieldsAction, cfg: &RunConfig) -> Result<bool, CliError> {
    let open = |p: &Path| read_field(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())));
    match action {
        FieldsAction::Inspect { file } => {
            let s = summarize(&open(file)?);
            println!("{}", serde_json::to_string_pretty(&s).map_err(|e| CliError::Runtime(e.to_string()))?);
        }
        FieldsAction::Convert { file, csv } => match open(file)? {
            Field::Scalar(f) => write_scalar_csv(csv, &f)?,
            Field::Matrix(f) => write_matrix_csv(csv, &f)?,
            Field::Operator(op) => write_operator_csv(csv, &op)?,
        },
        FieldsAction::Sample => {
            let sym = ResolvedSymbol::from_config(cfg)?;
            let f = sym.sampled(cfg, cfg.t_half)?;
            fs::create_dir_all(&cfg.out)?;
            let path = cfg.out.join("symbol.pslf");
            write_field(&path, &Field::Scalar(f))?;
            println!("wrote {}", path.display());
            if let Some(l) = symbols::lower_order(cfg)? {
                let time = psolv_core::TimeGrid::symmetric(cfg.t_half, cfg.grid.n_t)?;
                let path = cfg.out.join("lower_order.pslf");
                write_field(&path, &Field::Matrix(l.sample(time, cfg.phase_grid()?)?))?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(true)
}
