//! Acceptance suite. One test per criterion; each prints a single
//! `[PASS]`/`[FAIL]` line with the measured numbers, then asserts.
//!
//! Run with `cargo test -p psolv-cli --test acceptance -- --nocapture`.

use std::process::Command;
use std::time::{Duration, Instant};

use psolv_core::corpus::{builtin, lower_order, CorpusSymbol, LOWER_ORDER};
use psolv_core::estimate::{bisect, evaluate_at, reduce_lower_order, BisectionStatus, EstimateOptions, LowerOrderTerm};
use psolv_core::linalg::{c, random_unitary, spectral_norm, CMat};
use psolv_core::psi::{eps_grid, lipschitz_neighbours, sign_partition, signed_distance, default_tau_zero};
use psolv_core::pseudo_sign::{brute_force_rho, build_rho, certify};
use psolv_core::quantization::{gaussian_vector, wick_quantize_real, CoherentFrame};
use psolv_core::system::{block_reduce, gallery, rotated_section, ClassifyOptions};
use psolv_core::weights::{certify_inequalities, WeightBundle};
use psolv_core::{PhaseGrid, ScalarField, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: u32, title: &str, pass: bool, detail: String) {
    println!("[{}] criterion {id}: {title}: {detail}", if pass { "PASS" } else { "FAIL" });
}

/// Compliant builtins plus five random band-limited fields.
fn corpus(h: f64) -> Vec<CorpusSymbol> {
    let names = ["zero", "x", "tanh_x", "t_times_g", "moving_front", "bump_times_t", "x2_minus_xi_bump"];
    let mut out: Vec<CorpusSymbol> = names.iter().map(|n| builtin(n, h).unwrap()).collect();
    out.extend((0..5).map(|s| builtin(&format!("random_{s}"), h).unwrap()));
    assert!(out.iter().all(|s| s.compliant));
    out
}

fn sample(sym: &CorpusSymbol, n: usize, n_t: usize, h: f64) -> ScalarField {
    let grid = PhaseGrid::dft_window(n, 24.0, h).unwrap();
    sym.sample(TimeGrid::symmetric(1.0, n_t).unwrap(), grid).unwrap()
}

#[test]
fn criterion_1_signed_distance() {
    let h = 0.1;
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst_lip: f64 = 0.0;
    let syms = corpus(h);
    for sym in &syms {
        let f = sample(sym, 64, 33, h);
        let tau = default_tau_zero(&f);
        let sd = signed_distance(&sign_partition(&f, tau));
        let d = &sd.delta0;
        let cap = h.powf(-0.5) * (1.0 + 1e-12);
        if d.values.iter().any(|v| v.abs() > cap) {
            failures.push(format!("{}: |delta0| above cap", sym.name));
        }
        let g = d.grid.nodes();
        let monotone = (0..d.time.n_t - 1).all(|i| (0..g).all(|p| d.at(i + 1, p) >= d.at(i, p)));
        if !monotone {
            failures.push(format!("{}: not monotone in t", sym.name));
        }
        let signs = f.values.iter().zip(&d.values).all(|(&fv, &dv)| !(fv > tau && dv < 0.0) && !(fv < -tau && dv > 0.0));
        if !signs {
            failures.push(format!("{}: sign of delta0 disagrees with f", sym.name));
        }
        let lip = lipschitz_neighbours(d);
        worst_lip = worst_lip.max(lip);
        if lip > 1.0 + eps_grid(&d.grid) {
            failures.push(format!("{}: Lipschitz {lip:.3}", sym.name));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && syms.len() >= 10 && elapsed < Duration::from_secs(60);
    verdict(
        1,
        "signed distance",
        pass,
        format!(
            "{} symbols at 33x64x64, max Lipschitz {worst_lip:.3}, {:.1}s, failures {failures:?}",
            syms.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_weight_inequalities() {
    let h = 0.1;
    let mut failures = Vec::new();
    let mut ratio_max: f64 = 0.0;
    for sym in corpus(h) {
        let f = sample(&sym, 48, 33, h);
        let sd = signed_distance(&sign_partition(&f, default_tau_zero(&f)));
        let bundle = WeightBundle::build(&f, &sd).unwrap();
        let cert = certify_inequalities(&bundle, 0);
        let ratio = cert.mest0_c0.value;
        ratio_max = ratio_max.max(ratio);
        if !(cert.hhhest_ok && cert.mchain_ok) {
            failures.push(format!("{}: pointwise chain", sym.name));
        }
        if !cert.qmax_ok {
            failures.push(format!("{}: qmax on {} triples", sym.name, cert.qmax_triples));
        }
        if !ratio.is_finite() || ratio > 64.0 {
            failures.push(format!("{}: ratio {ratio}", sym.name));
        }
    }
    let pass = failures.is_empty();
    verdict(2, "weight inequalities", pass, format!("corpus max ratio {ratio_max:.3} (budget 64), failures {failures:?}"));
    assert!(pass);
}

#[test]
fn criterion_3_pseudo_sign() {
    let h = 0.1;
    let mut failures = Vec::new();
    let (mut worst_rel, mut worst_excess, mut worst_margin) = (0.0_f64, f64::NEG_INFINITY, f64::INFINITY);
    for sym in corpus(h) {
        let f = sample(&sym, 32, 33, h);
        let sd = signed_distance(&sign_partition(&f, default_tau_zero(&f)));
        let bundle = WeightBundle::build(&f, &sd).unwrap();
        for t_half in [1.0, 0.5] {
            let fast = build_rho(&bundle.delta0, &bundle.m, t_half).unwrap();
            let slow = brute_force_rho(&bundle.delta0, &bundle.m, t_half).unwrap();
            let rel = fast
                .rho
                .values
                .iter()
                .zip(&slow.rho.values)
                .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
                .fold(0.0, f64::max);
            worst_rel = worst_rel.max(rel);
            let cert = certify(&fast, &bundle.delta0, &bundle.m);
            worst_excess = worst_excess.max(cert.rho_bound_excess);
            worst_margin = worst_margin.min(cert.derivative_margin + cert.derivative_tolerance);
            // |rho| <= m is exact up to the last-bit rounding of rho = -m at s = t
            let exact = 1e-12 * bundle.m.max_abs().max(1.0);
            if rel > 1e-12 || !cert.ok || cert.rho_bound_excess > exact {
                failures.push(format!("{} T={t_half}: rel {rel:e}, excess {:e}", sym.name, cert.rho_bound_excess));
            }
        }
    }
    let pass = failures.is_empty();
    verdict(
        3,
        "pseudo-sign",
        pass,
        format!(
            "oracle rel diff {worst_rel:.1e}, max(|rho| - m) {worst_excess:.1e}, derivative slack {worst_margin:.2e}, failures {failures:?}"
        ),
    );
    assert!(pass);
}

fn bump_symbol(grid: &PhaseGrid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bumps: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.random_range(-0.3..0.3) * grid.x_len(),
                rng.random_range(-0.3..0.3) * grid.xi_len(),
                rng.random_range(0.5..2.5),
                rng.random_range(0.1..1.0),
            ]
        })
        .collect();
    (0..grid.nodes())
        .map(|p| {
            let (x, xi) = grid.coords(p);
            bumps.iter().map(|b| b[3] * (-((x - b[0]).powi(2) + (xi - b[1]).powi(2)) / (b[2] * b[2])).exp()).sum()
        })
        .collect()
}

#[test]
fn criterion_4_wick_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = Vec::new();
    let (mut id_err, mut neg, mut over, mut gap) = (0.0_f64, 0.0_f64, f64::NEG_INFINITY, 0.0_f64);
    for h in [0.1, 0.05] {
        let grid = PhaseGrid::dft_window(32, 20.0, h).unwrap();
        let one = wick_quantize_real(grid, &vec![1.0; grid.nodes()]).unwrap();
        for x0 in [-4.0, -2.0, 0.0, 2.0, 4.0] {
            for k in [0.0, 1.0, -2.0] {
                let u = gaussian_vector(&grid, x0, k, 1.0);
                id_err = id_err.max((one.apply(&u) - &u).norm() / u.norm());
            }
        }
        let frame = CoherentFrame::new(grid);
        for _ in 0..20 {
            let a = bump_symbol(&grid, &mut rng);
            let sup = a.iter().cloned().fold(0.0, f64::max);
            let op = wick_quantize_real(grid, &a).unwrap();
            neg = neg.max(-op.min_hermitian_eigenvalue() / sup);
            over = over.max(op.spectral_norm() - sup);
            let direct = frame.quantize(&a).unwrap();
            gap = gap.max(spectral_norm(&(&op.entries - &direct.entries)));
        }
    }
    let elapsed = start.elapsed();
    if id_err > 1e-6 {
        failures.push("identity");
    }
    if neg > 1e-6 {
        failures.push("positivity");
    }
    if over > 1e-6 {
        failures.push("contraction");
    }
    if gap > 1e-6 {
        failures.push("frame agreement");
    }
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    verdict(
        4,
        "Wick suite",
        pass,
        format!(
            "identity err {id_err:.1e}, min eig/sup {:.1e}, norm - sup {over:.1e}, frame gap {gap:.1e}, 40 symbols, {:.1}s, failures {failures:?}",
            -neg,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_multiplier_estimate() {
    let start = Instant::now();
    let hs = [0.2, 0.1, 0.05];
    let opts = EstimateOptions::default();
    let names = ["x", "tanh_x", "t_times_g", "moving_front", "bump_times_t", "x2_minus_xi_bump", "zero", "random_0", "random_1"];
    let mut good = Vec::new();
    let mut lines = Vec::new();
    let mut growth = Vec::new();
    for name in names {
        let mut c0 = Vec::new();
        let mut positive = true;
        for h in hs {
            let sym = builtin(name, h).unwrap();
            let b = bisect(&*sym.callback(), None, opts.grid(h).unwrap(), &opts).unwrap();
            let ev = &b.evaluation;
            positive &= b.status != BisectionStatus::FailsAtAllTested && ev.direct.verdict && ev.direct.trials.len() == 30;
            c0.push(ev.direct.fitted_C0.unwrap_or(f64::INFINITY));
        }
        let finite = c0.iter().all(|v| v.is_finite());
        let spread = c0.iter().cloned().fold(0.0, f64::max) / c0.iter().cloned().fold(f64::INFINITY, f64::min);
        // C0 must not blow up as h shrinks, whatever the spread
        if c0.windows(2).any(|w| w[1] > 4.0 * w[0]) {
            growth.push(name);
        }
        lines.push(format!("{name}: C0 {:.3}/{:.3}/{:.3} spread {spread:.2}", c0[0], c0[1], c0[2]));
        if positive && finite && spread <= 4.0 {
            good.push(name);
        }
    }
    for l in &lines {
        println!("    {l}");
    }
    let neg_opts = EstimateOptions { skip_gate: true, ..opts };
    let h = 0.1;
    let bad = builtin("minus_t_times_g", h).unwrap();
    let control = evaluate_at(&*bad.callback(), None, neg_opts.grid(h).unwrap(), 1.0, &neg_opts).unwrap();
    let nonpositive = control.direct.trials.iter().filter(|t| t.rhs <= 0.0).count();
    let elapsed = start.elapsed();
    let pass = good.len() >= 5 && growth.is_empty() && nonpositive >= 1 && elapsed < Duration::from_secs(600);
    verdict(
        5,
        "multiplier estimate",
        pass,
        format!(
            "{} symbols positive with spread <= 4 across h {{0.2, 0.1, 0.05}}: {good:?}; growth {growth:?}; negative control: {nonpositive} nonpositive trials; {:.1}s",
            good.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_west3() {
    let h = 0.1;
    let opts = EstimateOptions::default();
    let mut c1_min = f64::INFINITY;
    let mut failures = Vec::new();
    for sym in corpus(h) {
        let ev = evaluate_at(&*sym.callback(), None, opts.grid(h).unwrap(), 1.0, &opts).unwrap();
        c1_min = c1_min.min(ev.west3.c1);
        if ev.west3.c1.is_nan() || ev.west3.c1 <= 0.0 {
            failures.push(sym.name.clone());
        }
    }
    let zero = builtin("zero", 1.0).unwrap();
    let ev = evaluate_at(&*zero.callback(), None, opts.grid(1.0).unwrap(), 1.0, &opts).unwrap();
    let c1_zero = ev.west3.c1;
    let pass = failures.is_empty() && (0.3..=0.7).contains(&c1_zero);
    verdict(6, "West3 building block", pass, format!("corpus min c1 {c1_min:.4} at h=0.1, f=0 at h=1: c1 {c1_zero:.4}, failures {failures:?}"));
    assert!(pass);
}

#[test]
fn criterion_7_system_gallery() {
    let opts = ClassifyOptions::default();
    let entries = gallery(&opts);
    let mismatched: Vec<_> = entries.iter().filter(|e| !e.matches()).map(|e| (e.name.clone(), e.mismatches.clone())).collect();
    let invariant = entries
        .iter()
        .all(|e| e.sandwich_verdict == e.report.principal_type.verdict && e.adjoint_verdict == e.report.principal_type.verdict);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = random_unitary(&mut rng, 3);
    let lam = |w: &[f64]| c(w[0] + 0.3 * w[1] * w[1], 0.5 * w[1]);
    let sym = rotated_section(u, lam);
    let pts: Vec<Vec<f64>> = (0..21).map(|i| vec![0.04 * i as f64 - 0.4, 0.3 - 0.03 * i as f64]).collect();
    let red = block_reduce(&sym, &lam, &pts, &opts).unwrap();
    let p_norm = pts.iter().map(|w| spectral_norm(&sym.at(w))).fold(0.0, f64::max);
    let round_trip = red.max_round_trip();
    let pass = mismatched.is_empty() && invariant && round_trip <= 1e-8 * p_norm;
    verdict(
        7,
        "system gallery",
        pass,
        format!(
            "{} examples, mismatches {mismatched:?}, A.P.B/adjoint invariant {invariant}, block round trip {round_trip:.1e} (||P|| {p_norm:.2})",
            entries.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_lower_order_reduction() {
    let h = 0.1;
    let grid = PhaseGrid::dft_window(8, 8.0, h).unwrap();
    let time = TimeGrid::symmetric(1.0, 33).unwrap();
    let f0 = CMat::from_row_slice(2, 2, &[c(0.3, 0.0), c(0.5, 0.2), c(0.0, -0.1), c(-0.4, 0.1)]);
    let term = {
        let f0 = f0.clone();
        LowerOrderTerm::new("constant", 2, move |_, _, _| f0.clone())
    };
    let red = reduce_lower_order(&term, time, grid, 16).unwrap();
    // D_t E + F0 E = 0 with E(0) = I
    let mut oracle_err: f64 = 0.0;
    for i in 0..time.n_t {
        let want = (&f0 * c(0.0, -time.t(i))).exp();
        for p in [0, 17, 63] {
            let (j, k) = (p / grid.n_xi, p % grid.n_xi);
            oracle_err = oracle_err.max((red.e.block(i, j, k) - &want).norm());
        }
    }

    let big = PhaseGrid::dft_window(48, 24.0, h).unwrap();
    let mut worst_residual: f64 = 0.0;
    for name in LOWER_ORDER {
        let r = reduce_lower_order(&lower_order(name, h).unwrap(), time, big, 16).unwrap();
        worst_residual = worst_residual.max(r.residual);
    }

    let opts = EstimateOptions::default();
    let sym = builtin("t_times_g", h).unwrap();
    let mut conj = Vec::new();
    for name in ["pauli_x", "rotating", "bump_coupled", "nilpotent_cos"] {
        let lo = lower_order(name, h).unwrap();
        let b = bisect(&*sym.callback(), Some(&lo), opts.grid(h).unwrap(), &opts).unwrap();
        let ok = b.status != BisectionStatus::FailsAtAllTested && b.evaluation.conjugated.as_ref().is_some_and(|r| r.verdict);
        conj.push((name, b.t_corpus, ok));
    }
    let pass = oracle_err <= 1e-10 && worst_residual <= 1e-8 && conj.iter().all(|c| c.2);
    verdict(
        8,
        "lower-order reduction",
        pass,
        format!("exp oracle err {oracle_err:.1e}, corpus residual {worst_residual:.1e}, conjugated (term, T, positive) {conj:?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_9_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "h = 0.1\nseed = 11\nout = {:?}\n[symbol]\nbuiltin = \"random_3\"\n[lower_order]\nbuiltin = \"rotating\"\n[grid]\nn_x = 32\nn_xi = 32\nl_x = 20.0\n",
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let status = Command::new(env!("CARGO_BIN_EXE_psolv")).arg("--config").arg(&config).arg("verify").output().unwrap();
        let json = std::fs::read(out.join("verify.json")).unwrap();
        let csv = std::fs::read(out.join("estimate.csv")).unwrap();
        runs.push((status.status.code(), json, csv));
    }
    let identical = runs[0] == runs[1];
    let pass = identical && runs[0].0.is_some();
    verdict(9, "reproducibility", pass, format!("exit codes {:?}/{:?}, verify.json {} bytes, identical {identical}", runs[0].0, runs[1].0, runs[0].1.len()));
    assert!(pass);
}
