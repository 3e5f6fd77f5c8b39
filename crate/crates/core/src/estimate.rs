//! The model operator `P₀ = (D_t + i f^w) Id_N + F₀^w` on a discrete `(t, x)`
//! lattice, the multiplier `b_T^w = B_T^{Wick}`, and numerical checks of
//!
//! ```text
//! h^{1/2} (‖b_T^w u‖² + ‖u‖²) ≤ C₀ T Im⟨P₀u, b_T^w u⟩
//! ```
//!
//! over a fixed corpus of windowed trial functions.
//!
//! Space-time functions are `Vec<CVec>`, one component-major vector of length
//! `N·n_x` per time slice. The inner product is the trapezoid rule in `t`
//! times `dx` in `x`. `D_t = −i∂_t` uses fourth-order central differences with
//! one-sided closures on the two outermost slices at each end.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Cholesky;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grid::{sample_matrix, sample_scalar, MatrixField, PhaseGrid, ScalarField, TimeGrid};
use crate::linalg::{self, c, CMat, CVec};
use crate::psi::{check_psibar, default_tau_zero, sign_partition, signed_distance};
use crate::pseudo_sign::{self, build_rho, PseudoSign, PseudoSignCertificate};
use crate::quantization::{weyl_quantize, wick_quantize_real, OperatorMatrix, RefinedSymbol};
use crate::weights::{build_H, build_m};
use crate::grid::DerivativeNorms;

/// A space-time function: one `N·n_x` vector per time slice.
pub type SpaceTimeFn = Vec<CVec>;

pub type MatrixFn = Arc<dyn Fn(f64, f64, f64) -> CMat + Send + Sync>;

/// An `N × N` lower-order term `F₀(t, x, ξ)`.
#[derive(Clone)]
pub struct LowerOrderTerm {
    pub name: String,
    pub dim: usize,
    eval: MatrixFn,
}

impl std::fmt::Debug for LowerOrderTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LowerOrderTerm({}, N = {})", self.name, self.dim)
    }
}

impl LowerOrderTerm {
    pub fn new(name: impl Into<String>, dim: usize, eval: impl Fn(f64, f64, f64) -> CMat + Send + Sync + 'static) -> Self {
        Self { name: name.into(), dim, eval: Arc::new(eval) }
    }

    #[inline]
    pub fn at(&self, t: f64, x: f64, xi: f64) -> CMat {
        (self.eval)(t, x, xi)
    }

    pub fn sample(&self, time: TimeGrid, grid: PhaseGrid) -> Result<MatrixField> {
        let e = self.eval.clone();
        sample_matrix(move |t, x, xi| e(t, x, xi), self.dim, time, grid)
    }

    /// Piecewise-cubic interpolation in `t` of a sampled field.
    pub fn from_field(name: impl Into<String>, field: MatrixField) -> Self {
        let dim = field.dim;
        let field = Arc::new(field);
        Self::new(name, dim, move |t, x, xi| {
            let g = &field.grid;
            let j = (((x - g.x_min) / g.dx() - 0.5).round().max(0.0) as usize).min(g.n_x - 1);
            let k = (((xi - g.xi_min) / g.dxi() - 0.5).round().max(0.0) as usize).min(g.n_xi - 1);
            let time = &field.time;
            let s = ((t - time.t_min) / time.dt()).clamp(0.0, (time.n_t - 1) as f64);
            let n = time.n_t;
            let base = (s.floor() as usize).saturating_sub(1).min(n.saturating_sub(4));
            let pts: Vec<usize> = (base..(base + 4).min(n)).collect();
            let mut out = CMat::zeros(dim, dim);
            for &p in &pts {
                let mut w = 1.0;
                for &q in &pts {
                    if q != p {
                        w *= (s - q as f64) / (p as f64 - q as f64);
                    }
                }
                out += field.block(p, j, k) * c(w, 0.0);
            }
            out
        })
    }
}

/// Per-slice operators for `P₀`.
#[derive(Debug, Clone)]
pub struct SpaceTimeOperator {
    pub grid: PhaseGrid,
    pub time: TimeGrid,
    /// System size `N`.
    pub dim: usize,
    /// Scalar `f^w(t_i)`, `n_x × n_x`.
    pub f_slices: Vec<OperatorMatrix>,
    /// `F₀^w(t_i)`, `N·n_x × N·n_x`.
    pub lower: Option<Vec<OperatorMatrix>>,
    /// Largest relative Hermitian defect over the `f^w` slices.
    pub hermitian_defect: f64,
}

/// Builds `P₀` from node samples of `f` and optionally `F₀`.
#[allow(non_snake_case)]
pub fn assemble_P0(f: &ScalarField, lower: Option<&MatrixField>) -> Result<SpaceTimeOperator> {
    let (grid, time) = (f.grid, f.time);
    if time.n_t < 5 {
        return Err(Error::StencilTooSmall { needed: 5, got: time.n_t });
    }
    let f_slices = Exec::default()
        .map(time.n_t, |i| RefinedSymbol::from_real_nodes(grid, f.slice(i)).map(|s| weyl_quantize(&s)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let hermitian_defect = f_slices.iter().map(|op| op.hermitian_defect()).fold(0.0, f64::max);
    let dim = lower.map_or(1, |l| l.dim);
    let lower = match lower {
        None => None,
        Some(l) => {
            if l.grid != grid || l.time != time {
                return Err(Error::ShapeMismatch("F₀ and f on different grids".into()));
            }
            let bs = grid.nodes() * dim * dim;
            let ops = Exec::default()
                .map(time.n_t, |i| {
                    RefinedSymbol::from_nodes(grid, dim, &l.values[i * bs..(i + 1) * bs]).map(|s| weyl_quantize(&s))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            Some(ops)
        }
    };
    Ok(SpaceTimeOperator { grid, time, dim, f_slices, lower, hermitian_defect })
}

/// Applies a scalar `n_x × n_x` operator to each component block.
pub fn apply_blockwise(op: &OperatorMatrix, u: &CVec, dim: usize) -> CVec {
    let n = op.dim_x();
    if dim == 1 {
        return op.apply(u);
    }
    let mut out = CVec::zeros(n * dim);
    for a in 0..dim {
        let block = &op.entries * u.rows(a * n, n);
        out.rows_mut(a * n, n).copy_from(&block);
    }
    out
}

/// `−i∂_t` by fourth-order differences; needs `n_t ≥ 5`.
pub fn time_derivative(u: &[CVec], dt: f64) -> SpaceTimeFn {
    let n = u.len();
    assert!(n >= 5, "time derivative needs at least 5 slices");
    let scale = c(0.0, -1.0 / (12.0 * dt));
    let comb = |terms: &[(f64, usize)]| -> CVec {
        let mut acc = CVec::zeros(u[0].len());
        for &(w, i) in terms {
            acc.axpy(c(w, 0.0), &u[i], c(1.0, 0.0));
        }
        acc * scale
    };
    (0..n)
        .map(|i| match i {
            0 => comb(&[(-25.0, 0), (48.0, 1), (-36.0, 2), (16.0, 3), (-3.0, 4)]),
            1 => comb(&[(-3.0, 0), (-10.0, 1), (18.0, 2), (-6.0, 3), (1.0, 4)]),
            i if i == n - 2 => comb(&[(3.0, n - 1), (10.0, n - 2), (-18.0, n - 3), (6.0, n - 4), (-1.0, n - 5)]),
            i if i == n - 1 => comb(&[(25.0, n - 1), (-48.0, n - 2), (36.0, n - 3), (-16.0, n - 4), (3.0, n - 5)]),
            i => comb(&[(1.0, i - 2), (-8.0, i - 1), (8.0, i + 1), (-1.0, i + 2)]),
        })
        .collect()
}

impl SpaceTimeOperator {
    /// `P₀u`.
    pub fn apply(&self, u: &[CVec]) -> Result<SpaceTimeFn> {
        let n = self.grid.n_x * self.dim;
        if u.len() != self.time.n_t || u.iter().any(|v| v.len() != n) {
            return Err(Error::ShapeMismatch(format!("trial must be {} slices of length {n}", self.time.n_t)));
        }
        let mut out = time_derivative(u, self.time.dt());
        for (i, o) in out.iter_mut().enumerate() {
            *o += apply_blockwise(&self.f_slices[i], &u[i], self.dim) * c(0.0, 1.0);
            if let Some(l) = &self.lower {
                *o += l[i].apply(&u[i]);
            }
        }
        Ok(out)
    }
}

/// `⟨u, v⟩ = Σ_i w_i dx Σ_j u_ij conj(v_ij)`.
pub fn inner(time: &TimeGrid, grid: &PhaseGrid, u: &[CVec], v: &[CVec]) -> Complex64 {
    let w = time.trapezoid_weights();
    u.iter().zip(v).zip(&w).map(|((a, b), &wi)| b.dotc(a) * (wi * grid.dx())).sum()
}

pub fn norm(time: &TimeGrid, grid: &PhaseGrid, u: &[CVec]) -> f64 {
    inner(time, grid, u, u).re.max(0.0).sqrt()
}

/// `b_T^w(t_i) = B_T(t_i)^{Wick}` for every slice; zero slices are skipped.
pub fn build_multiplier(ps: &PseudoSign) -> Result<Vec<OperatorMatrix>> {
    let (grid, time) = (ps.b.grid, ps.b.time);
    let ops = Exec::default()
        .map(time.n_t, |i| {
            let slice = ps.b.slice(i);
            if slice.iter().all(|&v| v == 0.0) {
                let n = grid.n_x;
                return OperatorMatrix::new(grid, 1, CMat::zeros(n, n), "wick");
            }
            wick_quantize_real(grid, slice)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    for (i, op) in ops.iter().enumerate() {
        let d = op.hermitian_defect();
        if d > 1e-10 {
            return Err(Error::Violation(format!("multiplier slice {i} not Hermitian (defect {d:.3e})")));
        }
    }
    Ok(ops)
}

fn apply_multiplier(mult: &[OperatorMatrix], u: &[CVec], dim: usize) -> SpaceTimeFn {
    mult.iter().zip(u).map(|(b, v)| apply_blockwise(b, v, dim)).collect()
}

/// A windowed trial function.
#[derive(Debug, Clone)]
pub struct Trial {
    pub name: String,
    pub values: SpaceTimeFn,
}

/// `cos⁴(πs/2)` on `|s| < 1`: vanishes with three derivatives at `|s| = 1`.
pub fn time_window(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (PI * s / 2.0).cos().powi(4)
    }
}

fn hermite(n: usize, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, 2.0 * x);
    if n == 0 {
        return a;
    }
    for k in 1..n {
        let next = 2.0 * x * b - 2.0 * k as f64 * a;
        a = b;
        b = next;
    }
    b
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    coef: Complex64,
    wobble: f64,
    freq: f64,
    phase: f64,
    centre: f64,
    width: f64,
    k: f64,
}

type Profile = Box<dyn Fn(f64, f64) -> Complex64 + Send + Sync>;

/// Scalar trial profiles `(name, u(s, x))`, `s = t/T` in `[−1, 1]`.
fn scalar_profiles(seed: u64) -> Vec<(String, Profile)> {
    let mut out: Vec<(String, Profile)> = Vec::new();
    for x0 in [-3.0, 0.0, 3.0] {
        for k in [0.0, 1.0] {
            out.push((
                format!("gaussian_x{x0}_k{k}"),
                Box::new(move |s, x| Complex64::from_polar(time_window(s) * (-(x - x0).powi(2) / 2.0).exp(), k * x)),
            ));
        }
    }
    for n in 1..=4 {
        out.push((
            format!("hermite_{n}"),
            Box::new(move |s, x| c(time_window(s) * (1.0 + 0.3 * s) * hermite(n, x) * (-x * x / 2.0).exp(), 0.0)),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in 0..20 {
        let packets: Vec<Packet> = (0..3)
            .map(|_| Packet {
                coef: Complex64::from_polar(rng.random_range(0.2..1.0), rng.random_range(0.0..2.0 * PI)),
                wobble: rng.random_range(0.0..0.5),
                freq: rng.random_range(0.0..3.0),
                phase: rng.random_range(0.0..2.0 * PI),
                centre: rng.random_range(-3.5..3.5),
                width: rng.random_range(0.9..1.2),
                k: rng.random_range(-1.5..1.5),
            })
            .collect();
        out.push((
            format!("random_{r}"),
            Box::new(move |s, x| {
                let w = time_window(s);
                packets
                    .iter()
                    .map(|p| {
                        let env = (-(x - p.centre).powi(2) / (2.0 * p.width * p.width)).exp();
                        p.coef * (w * (1.0 + p.wobble * (p.freq * s + p.phase).sin()) * env) * Complex64::from_polar(1.0, p.k * x)
                    })
                    .sum()
            }),
        ));
    }
    out
}

/// The 30-function trial corpus on `time` (window `|t| ≤ T`), normalised to
/// unit space-time norm. For `N > 1`, component `α` of trial `j` reuses
/// profile `(j + 7α) mod 30` scaled by `e^{iα}/2`.
#[allow(non_snake_case)]
pub fn trial_corpus(grid: &PhaseGrid, time: &TimeGrid, T: f64, dim: usize, seed: u64) -> Vec<Trial> {
    let profiles = scalar_profiles(seed);
    let count = profiles.len();
    let n = grid.n_x;
    (0..count)
        .map(|j| {
            let values: SpaceTimeFn = (0..time.n_t)
                .map(|i| {
                    let s = time.t(i) / T;
                    CVec::from_fn(n * dim, |row, _| {
                        let (a, xj) = (row / n, row % n);
                        let (_, prof) = &profiles[(j + 7 * a) % count];
                        let scale = if a == 0 { c(1.0, 0.0) } else { Complex64::from_polar(0.5, a as f64) };
                        prof(s, grid.x(xj)) * scale
                    })
                })
                .collect();
            let nrm = norm(time, grid, &values);
            let values = values.into_iter().map(|v| v / c(nrm, 0.0)).collect();
            Trial { name: profiles[j].0.clone(), values }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / (T·rhs)`; infinite when `rhs ≤ 0`.
    pub ratio: f64,
    pub norm_u: f64,
    pub norm_p0u: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct EstimateReport {
    pub T: f64,
    pub h: f64,
    pub trials: Vec<TrialResult>,
    /// `max lhs / (T·rhs)` over trials with `rhs > 0`.
    pub fitted_C0: Option<f64>,
    pub min_rhs: f64,
    pub verdict: bool,
    /// `‖u‖ ≤ (C₀/2)·T·h^{−1/2}·‖P₀u‖` on every trial.
    pub cauchy_schwarz_ok: bool,
}

impl EstimateReport {
    #[allow(non_snake_case)]
    fn from_trials(trials: Vec<TrialResult>, T: f64, h: f64) -> Self {
        let fitted = trials.iter().filter(|r| r.rhs > 0.0).map(|r| r.ratio).fold(None, |m: Option<f64>, v| {
            Some(m.map_or(v, |m| m.max(v)))
        });
        let min_rhs = trials.iter().map(|r| r.rhs).fold(f64::INFINITY, f64::min);
        let all_positive = trials.iter().all(|r| r.rhs > 0.0);
        let verdict = all_positive && fitted.is_some_and(f64::is_finite);
        let cauchy_schwarz_ok = match fitted {
            Some(c0) if verdict => trials
                .iter()
                .all(|r| r.norm_u <= (c0 / 2.0) * T * r.norm_p0u / h.sqrt() * (1.0 + 1e-9)),
            _ => false,
        };
        Self { T, h, trials, fitted_C0: fitted, min_rhs, verdict, cauchy_schwarz_ok }
    }

    /// `trial,lhs,rhs,ratio` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("trial,lhs,rhs,ratio\n");
        for r in &self.trials {
            s.push_str(&format!("{},{:e},{:e},{:e}\n", r.trial, r.lhs, r.rhs, r.ratio));
        }
        s
    }
}

#[allow(non_snake_case)]
fn check_trial(time: &TimeGrid, grid: &PhaseGrid, trial: &Trial, T: f64) -> Result<f64> {
    for (i, v) in trial.values.iter().enumerate() {
        if time.t(i).abs() > T * (1.0 + 1e-12) && v.iter().any(|z| z.norm() > 0.0) {
            return Err(Error::Precondition(format!("trial {} not supported in |t| ≤ T", trial.name)));
        }
    }
    let nrm = norm(time, grid, &trial.values);
    if nrm < 1e-12 {
        return Err(Error::Precondition(format!("trial {} is degenerate", trial.name)));
    }
    Ok(nrm)
}

/// Evaluates both sides of the estimate on every trial.
#[allow(non_snake_case)]
pub fn verify_propest(
    p0: &SpaceTimeOperator,
    multiplier: &[OperatorMatrix],
    trials: &[Trial],
    T: f64,
    h: f64,
) -> Result<EstimateReport> {
    let (time, grid) = (p0.time, p0.grid);
    if multiplier.len() != time.n_t {
        return Err(Error::ShapeMismatch("multiplier slice count".into()));
    }
    for t in trials {
        check_trial(&time, &grid, t, T)?;
    }
    let results = Exec::default()
        .map(trials.len(), |j| -> Result<TrialResult> {
            let u = &trials[j].values;
            let pu = p0.apply(u)?;
            let bu = apply_multiplier(multiplier, u, p0.dim);
            Ok(trial_result(&trials[j].name, &time, &grid, u, &bu, &pu, &pu, T, h))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimateReport::from_trials(results, T, h))
}

/// `rhs = Im⟨pairing, bu⟩`; `pu` is only used for the Cauchy–Schwarz norm.
#[allow(non_snake_case, clippy::too_many_arguments)]
fn trial_result(
    name: &str,
    time: &TimeGrid,
    grid: &PhaseGrid,
    u: &[CVec],
    bu: &[CVec],
    pairing: &[CVec],
    pu: &[CVec],
    T: f64,
    h: f64,
) -> TrialResult {
    let (nu, nbu) = (norm(time, grid, u), norm(time, grid, bu));
    let lhs = h.sqrt() * (nbu * nbu + nu * nu);
    let rhs = inner(time, grid, pairing, bu).im;
    let ratio = if rhs > 0.0 { lhs / (T * rhs) } else { f64::INFINITY };
    TrialResult { trial: name.to_string(), lhs, rhs, ratio, norm_u: nu, norm_p0u: norm(time, grid, pu) }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct West3Report {
    /// Generalised Rayleigh minimum per slice.
    pub per_slice: Vec<f64>,
    pub c1: f64,
    pub min_wick_eigenvalue: f64,
    pub ok: bool,
}

/// Per slice, the smallest `λ` with `W − λK` singular for `W = m^{Wick}` and
/// `K = h^{1/2}((B^{Wick})*B^{Wick} + Id)`.
pub fn verify_west3(m: &ScalarField, ps: &PseudoSign, h: f64) -> Result<West3Report> {
    if m.grid != ps.b.grid || m.time != ps.b.time {
        return Err(Error::ShapeMismatch("m and B_T on different grids".into()));
    }
    let grid = m.grid;
    let n = grid.n_x;
    let rows = Exec::default()
        .map(m.time.n_t, |i| -> Result<(f64, f64)> {
            let w = wick_quantize_real(grid, m.slice(i))?.entries;
            let b = wick_quantize_real(grid, ps.b.slice(i))?.entries;
            let k = (b.adjoint() * &b + CMat::identity(n, n)) * c(h.sqrt(), 0.0);
            let chol = Cholesky::new(linalg::hermitian_part(&k))
                .ok_or_else(|| Error::Violation(format!("K not positive definite on slice {i}")))?;
            let l_inv = chol
                .l()
                .solve_lower_triangular(&CMat::identity(n, n))
                .ok_or_else(|| Error::Violation("singular Cholesky factor".into()))?;
            let reduced = &l_inv * &w * l_inv.adjoint();
            Ok((linalg::hermitian_eigenvalues(&reduced)[0], linalg::hermitian_eigenvalues(&w)[0]))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let min_wick = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    if !(min_wick > 0.0) {
        return Err(Error::Violation(format!("m^Wick not positive: smallest eigenvalue {min_wick:.3e}")));
    }
    let per_slice: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let c1 = per_slice.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(West3Report { per_slice, c1, min_wick_eigenvalue: min_wick, ok: c1 > 0.0 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivativeTermReport {
    /// `min over vectors and interior steps of Δ⟨b u, u⟩/Δt − ⟨(min m)^{Wick}u,u⟩/2T`.
    pub min_margin: f64,
    pub tolerance: f64,
    pub ok: bool,
}

/// Checks the time derivative of `⟨b_T^w u, u⟩` against `⟨m^{Wick}u,u⟩/2T` for
/// fixed spatial vectors.
#[allow(non_snake_case)]
pub fn derivative_term_check(
    multiplier: &[OperatorMatrix],
    m: &ScalarField,
    T: f64,
    vectors: &[CVec],
) -> Result<DerivativeTermReport> {
    let (grid, time) = (m.grid, m.time);
    let dt = time.dt();
    let range = pseudo_sign::support(&time, T);
    let steps: Vec<usize> = (range.start..range.end.saturating_sub(1)).collect();
    let mmax = m.values.iter().copied().fold(0.0, f64::max);
    let margins = Exec::default()
        .map(steps.len(), |p| -> Result<f64> {
            let i = steps[p];
            let lower: Vec<f64> = m.slice(i).iter().zip(m.slice(i + 1)).map(|(a, b)| a.min(*b)).collect();
            let w = wick_quantize_real(grid, &lower)?;
            let mut worst = f64::INFINITY;
            for u in vectors {
                let q = |op: &OperatorMatrix| u.dotc(&op.apply(u)).re * grid.dx();
                let lhs = (q(&multiplier[i + 1]) - q(&multiplier[i])) / dt;
                worst = worst.min(lhs - q(&w) / (2.0 * T));
            }
            Ok(worst)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let min_margin = margins.into_iter().fold(f64::INFINITY, f64::min);
    let tolerance = 1e-9 * mmax / T;
    Ok(DerivativeTermReport { min_margin, tolerance, ok: min_margin >= -tolerance })
}

/// `E` solving `D_t E + F₀ E = 0`, `E(0) = Id`, pointwise in `w`.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub e: MatrixField,
    /// `max ‖D_tE + F₀E‖_F` on the RK4 sub-lattice.
    pub residual: f64,
    pub min_det: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionSummary {
    pub residual: f64,
    pub min_det: f64,
    pub warnings: Vec<String>,
}

impl Reduction {
    pub fn summary(&self) -> ReductionSummary {
        ReductionSummary { residual: self.residual, min_det: self.min_det, warnings: self.warnings.clone() }
    }
}

fn rk4_step(term: &LowerOrderTerm, t: f64, e: &CMat, step: f64, x: f64, xi: f64) -> CMat {
    let rhs = |t: f64, e: &CMat| term.at(t, x, xi) * e * c(0.0, -1.0);
    let k1 = rhs(t, e);
    let k2 = rhs(t + step / 2.0, &(e + &k1 * c(step / 2.0, 0.0)));
    let k3 = rhs(t + step / 2.0, &(e + &k2 * c(step / 2.0, 0.0)));
    let k4 = rhs(t + step, &(e + &k3 * c(step, 0.0)));
    e + (k1 + k2 * c(2.0, 0.0) + k3 * c(2.0, 0.0) + k4) * c(step / 6.0, 0.0)
}

/// Sixth-order central residual of `−iE' + F₀E` along a uniform run.
fn run_residual(term: &LowerOrderTerm, times: &[f64], es: &[CMat], x: f64, xi: f64) -> f64 {
    const W: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
    if times.len() < 7 {
        return 0.0;
    }
    let step = times[1] - times[0];
    let mut worst = 0.0_f64;
    for p in 3..times.len() - 3 {
        let mut d = CMat::zeros(es[p].nrows(), es[p].ncols());
        for (q, w) in W.iter().enumerate() {
            d += (&es[p + q + 1] - &es[p - q - 1]) * c(*w / step, 0.0);
        }
        let r = d * c(0.0, -1.0) + term.at(times[p], x, xi) * &es[p];
        worst = worst.max(r.norm());
    }
    worst
}

/// Integrates from `t = 0` outward with RK4 at `dt / substeps`.
pub fn reduce_lower_order(term: &LowerOrderTerm, time: TimeGrid, grid: PhaseGrid, substeps: usize) -> Result<Reduction> {
    let dim = term.dim;
    let substeps = substeps.max(1);
    let hs = time.dt() / substeps as f64;
    let per_node = Exec::default().map(grid.nodes(), |node| {
        let (x, xi) = grid.coords(node);
        let mut slices = vec![CMat::identity(dim, dim); time.n_t];
        let mut residual = 0.0_f64;
        // forward over nodes with t ≥ 0, backward over t < 0
        for forward in [true, false] {
            let targets: Vec<usize> = if forward {
                (0..time.n_t).filter(|&i| time.t(i) >= 0.0).collect()
            } else {
                (0..time.n_t).rev().filter(|&i| time.t(i) < 0.0).collect()
            };
            let Some(&first) = targets.first() else { continue };
            let (mut t, mut e) = (0.0, CMat::identity(dim, dim));
            // lead-in to the first node, then a uniform run
            let lead = time.t(first);
            if lead != 0.0 {
                let k = ((lead.abs() / hs).ceil() as usize).max(1);
                let step = lead / k as f64;
                for _ in 0..k {
                    e = rk4_step(term, t, &e, step, x, xi);
                    t += step;
                }
            }
            t = lead;
            slices[first] = e.clone();
            let sign = if forward { 1.0 } else { -1.0 };
            let (mut run_t, mut run_e) = (vec![t], vec![e.clone()]);
            for &target in &targets[1..] {
                for s in 0..substeps {
                    e = rk4_step(term, t, &e, sign * hs, x, xi);
                    t = time.t(target) - sign * hs * (substeps - 1 - s) as f64;
                    run_t.push(t);
                    run_e.push(e.clone());
                }
                slices[target] = e.clone();
            }
            residual = residual.max(run_residual(term, &run_t, &run_e, x, xi));
        }
        (slices, residual)
    });
    let g = grid.nodes();
    let bs = dim * dim;
    let mut values = vec![c(0.0, 0.0); time.n_t * g * bs];
    let mut residual = 0.0_f64;
    let mut min_det = f64::INFINITY;
    for (node, (slices, r)) in per_node.into_iter().enumerate() {
        residual = residual.max(r);
        for (i, e) in slices.into_iter().enumerate() {
            min_det = min_det.min(e.determinant().norm());
            let start = (i * g + node) * bs;
            for rr in 0..dim {
                for cc in 0..dim {
                    values[start + rr * dim + cc] = e[(rr, cc)];
                }
            }
        }
    }
    let mut warnings = Vec::new();
    if min_det < 1e-8 {
        warnings.push(format!("conjugation unreliable for this T: min |det E| = {min_det:.3e}"));
    }
    Ok(Reduction { e: MatrixField::from_values(grid, time, dim, values)?, residual, min_det, warnings })
}

/// Estimate for the conjugated operator `(E^w)^{-1} P₀ E^w` with the scalar
/// multiplier, evaluated on the same trials.
#[allow(non_snake_case)]
pub fn verify_conjugated(
    p0: &SpaceTimeOperator,
    multiplier: &[OperatorMatrix],
    reduction: &Reduction,
    trials: &[Trial],
    T: f64,
    h: f64,
) -> Result<EstimateReport> {
    let (time, grid, dim) = (p0.time, p0.grid, p0.dim);
    let e = &reduction.e;
    if e.grid != grid || e.time != time || e.dim != dim {
        return Err(Error::ShapeMismatch("conjugation field does not match P₀".into()));
    }
    for t in trials {
        check_trial(&time, &grid, t, T)?;
    }
    let bs = grid.nodes() * dim * dim;
    let conj = Exec::default()
        .map(time.n_t, |i| -> Result<(CMat, nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>)> {
            let ew = weyl_quantize(&RefinedSymbol::from_nodes(grid, dim, &e.values[i * bs..(i + 1) * bs])?).entries;
            let lu = ew.clone().lu();
            Ok((ew, lu))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let results = Exec::default()
        .map(trials.len(), |j| -> Result<TrialResult> {
            let v = &trials[j].values;
            let u: SpaceTimeFn = v.iter().zip(&conj).map(|(vi, (ew, _))| ew * vi).collect();
            let pu = p0.apply(&u)?;
            let y = pu
                .iter()
                .zip(&conj)
                .map(|(p, (_, lu))| lu.solve(p).ok_or_else(|| Error::Violation("E^w singular".into())))
                .collect::<Result<Vec<_>>>()?;
            let bv = apply_multiplier(multiplier, v, dim);
            Ok(trial_result(&trials[j].name, &time, &grid, v, &bv, &y, &y, T, h))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimateReport::from_trials(results, T, h))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateOptions {
    pub n_t: usize,
    /// `n_x = n_xi`.
    pub n_x: usize,
    pub l_x: f64,
    /// `None` picks the default relative to `max |f|`.
    pub tau_zero: Option<f64>,
    pub skip_gate: bool,
    pub seed: u64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub bisection_steps: usize,
    pub substeps: usize,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            n_t: 33,
            n_x: 48,
            l_x: 24.0,
            tau_zero: None,
            skip_gate: false,
            seed: 0,
            t_lo: 0.05,
            t_hi: 1.0,
            bisection_steps: 6,
            substeps: 16,
        }
    }
}

impl EstimateOptions {
    pub fn grid(&self, h: f64) -> Result<PhaseGrid> {
        PhaseGrid::dft_window(self.n_x, self.l_x, h)
    }
}

/// Gate summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateSummary {
    pub holds: bool,
    pub skipped: bool,
    pub violating_nodes: usize,
    pub tau_zero: f64,
}

/// Everything computed at one `T`.
#[derive(Debug, Clone, Serialize)]
#[allow(non_snake_case)]
pub struct Evaluation {
    pub T: f64,
    pub h: f64,
    pub gate: GateSummary,
    pub direct: EstimateReport,
    pub conjugated: Option<EstimateReport>,
    pub reduction: Option<ReductionSummary>,
    pub west3: West3Report,
    pub derivative_term: DerivativeTermReport,
    pub pseudo_sign: PseudoSignCertificate,
    pub m_min: f64,
    #[serde(skip)]
    pub fields: EvaluationFields,
}

#[derive(Debug, Clone)]
pub struct EvaluationFields {
    pub f: ScalarField,
    pub delta0: ScalarField,
    pub m: ScalarField,
    pub pseudo_sign: PseudoSign,
}

impl Evaluation {
    /// Every trial positive on every path that was run.
    pub fn all_positive(&self) -> bool {
        self.direct.verdict && self.conjugated.as_ref().is_none_or(|r| r.verdict)
    }

    pub fn min_rhs(&self) -> f64 {
        let c = self.conjugated.as_ref().map_or(f64::INFINITY, |r| r.min_rhs);
        self.direct.min_rhs.min(c)
    }
}

pub type SymbolFn<'a> = &'a (dyn Fn(f64, f64, f64) -> f64 + Sync + Send);

/// Runs the whole pipeline on the window `|t| ≤ T`.
#[allow(non_snake_case)]
pub fn evaluate_at(
    symbol: SymbolFn<'_>,
    lower: Option<&LowerOrderTerm>,
    grid: PhaseGrid,
    T: f64,
    opts: &EstimateOptions,
) -> Result<Evaluation> {
    let h = grid.h;
    let time = TimeGrid::symmetric(T, opts.n_t)?;
    let f = sample_scalar(symbol, time, grid)?;
    let tau = opts.tau_zero.unwrap_or_else(|| default_tau_zero(&f));
    let gate = check_psibar(&f, tau);
    if !gate.holds && !opts.skip_gate {
        return Err(Error::Violation(format!(
            "sign-change condition fails at {} nodes; refusing to run the estimate",
            gate.violating_nodes
        )));
    }
    let gate = GateSummary { holds: gate.holds, skipped: opts.skip_gate, violating_nodes: gate.violating_nodes, tau_zero: tau };
    let sd = signed_distance(&sign_partition(&f, tau));
    let norms = DerivativeNorms::of(&f)?;
    let hinv = build_H(&norms.first, &norms.second, &sd.delta0, h)?;
    let m = build_m(&sd.delta0, &hinv)?;
    let ps = build_rho(&sd.delta0, &m, T)?;
    let ps_cert = pseudo_sign::certify(&ps, &sd.delta0, &m);
    let mult = build_multiplier(&ps)?;
    let dim = lower.map_or(1, |l| l.dim);
    let lower_field = lower.map(|l| l.sample(time, grid)).transpose()?;
    let p0 = assemble_P0(&f, lower_field.as_ref())?;
    let trials = trial_corpus(&grid, &time, T, dim, opts.seed);
    let direct = verify_propest(&p0, &mult, &trials, T, h)?;
    let (conjugated, reduction) = match lower {
        Some(l) => {
            let red = reduce_lower_order(l, time, grid, opts.substeps)?;
            let rep = verify_conjugated(&p0, &mult, &red, &trials, T, h)?;
            (Some(rep), Some(red.summary()))
        }
        None => (None, None),
    };
    let west3 = verify_west3(&m, &ps, h)?;
    let mid = time.n_t / 2;
    let vectors: Vec<CVec> = trials
        .iter()
        .take(10)
        .map(|t| t.values[mid].rows(0, grid.n_x).into_owned())
        .collect();
    let derivative_term = derivative_term_check(&mult, &m, T, &vectors)?;
    let m_min = m.values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Evaluation {
        T,
        h,
        gate,
        direct,
        conjugated,
        reduction,
        west3,
        derivative_term,
        pseudo_sign: ps_cert,
        m_min,
        fields: EvaluationFields { f, delta0: sd.delta0, m, pseudo_sign: ps },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BisectionStatus {
    /// Positive already at the largest window.
    PositiveAtMax,
    Bisected,
    /// Fails even at the smallest window: the only acceptance failure.
    FailsAtAllTested,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct BisectionStep {
    pub T: f64,
    pub all_positive: bool,
    pub min_rhs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Bisection {
    pub status: BisectionStatus,
    pub t_corpus: Option<f64>,
    pub steps: Vec<BisectionStep>,
    /// Direct-path trials at `t_hi`, kept even when the search moves lower.
    pub at_max: EstimateReport,
    /// The evaluation at `t_corpus`, or at the smallest window on failure.
    pub evaluation: Evaluation,
}

/// Largest tested `T` in `[t_lo, t_hi]` with every trial positive.
pub fn bisect(symbol: SymbolFn<'_>, lower: Option<&LowerOrderTerm>, grid: PhaseGrid, opts: &EstimateOptions) -> Result<Bisection> {
    let mut steps = Vec::new();
    let mut record = |e: &Evaluation| {
        steps.push(BisectionStep { T: e.T, all_positive: e.all_positive(), min_rhs: e.min_rhs() })
    };
    let top = evaluate_at(symbol, lower, grid, opts.t_hi, opts)?;
    record(&top);
    let at_max = top.direct.clone();
    if top.all_positive() {
        return Ok(Bisection { status: BisectionStatus::PositiveAtMax, t_corpus: Some(opts.t_hi), steps, at_max, evaluation: top });
    }
    let bottom = evaluate_at(symbol, lower, grid, opts.t_lo, opts)?;
    record(&bottom);
    if !bottom.all_positive() {
        return Ok(Bisection { status: BisectionStatus::FailsAtAllTested, t_corpus: None, steps, at_max, evaluation: bottom });
    }
    let (mut lo, mut hi, mut best) = (opts.t_lo, opts.t_hi, bottom);
    for _ in 0..opts.bisection_steps {
        let mid = 0.5 * (lo + hi);
        let e = evaluate_at(symbol, lower, grid, mid, opts)?;
        record(&e);
        if e.all_positive() {
            lo = mid;
            best = e;
        } else {
            hi = mid;
        }
    }
    Ok(Bisection { status: BisectionStatus::Bisected, t_corpus: Some(lo), steps, at_max, evaluation: best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{builtin, lower_order};
    use crate::quantization::CoherentFrame;

    fn small_grid(h: f64) -> PhaseGrid {
        PhaseGrid::dft_window(32, 20.0, h).unwrap()
    }

    fn separable(time: &TimeGrid, grid: &PhaseGrid, phi: impl Fn(f64) -> f64, dim: usize) -> SpaceTimeFn {
        (0..time.n_t)
            .map(|i| {
                CVec::from_fn(grid.n_x * dim, |r, _| {
                    c(phi(time.t(i)) * (-(grid.x(r % grid.n_x)).powi(2) / 2.0).exp(), 0.0)
                })
            })
            .collect()
    }

    #[test]
    fn zero_symbol_gives_pure_time_derivative() {
        let grid = small_grid(0.1);
        let time = TimeGrid::symmetric(1.0, 201).unwrap();
        let f = ScalarField::constant(grid, time, 0.0);
        let p0 = assemble_P0(&f, None).unwrap();
        let sigma = 0.2;
        let u = separable(&time, &grid, |t| (-t * t / (2.0 * sigma * sigma)).exp(), 1);
        let pu = p0.apply(&u).unwrap();
        let mut worst = 0.0_f64;
        for i in 0..time.n_t {
            let t = time.t(i);
            let dphi = -t / (sigma * sigma) * (-t * t / (2.0 * sigma * sigma)).exp();
            for j in 0..grid.n_x {
                let want = c(0.0, -dphi) * (-(grid.x(j)).powi(2) / 2.0).exp();
                worst = worst.max((pu[i][j] - want).norm());
            }
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn constant_symbol_is_multiplication() {
        let grid = small_grid(0.1);
        let time = TimeGrid::symmetric(1.0, 41).unwrap();
        let f = ScalarField::constant(grid, time, 2.5);
        let p0 = assemble_P0(&f, None).unwrap();
        let u = separable(&time, &grid, |t| 1.0 - t * t, 1);
        let pu = p0.apply(&u).unwrap();
        let dtu = time_derivative(&u, time.dt());
        for i in 0..time.n_t {
            let want = &dtu[i] + &u[i] * c(0.0, 2.5);
            assert!((&pu[i] - want).norm() < 1e-10);
        }
        // quadratic in t: every stencil is exact
        for i in 0..time.n_t {
            let want = &u[i] * c(0.0, 2.0 * time.t(i) / (1.0 - time.t(i).powi(2)).max(1e-300));
            if time.t(i).abs() < 0.9 {
                assert!((&dtu[i] - want).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_pauli_lower_order_acts_blockwise() {
        let grid = small_grid(0.1);
        let time = TimeGrid::symmetric(1.0, 9).unwrap();
        let f = ScalarField::constant(grid, time, 0.0);
        let term = lower_order("pauli_x", 0.1).unwrap();
        let lf = term.sample(time, grid).unwrap();
        let p0 = assemble_P0(&f, Some(&lf)).unwrap();
        let n = grid.n_x;
        // constant in t, so D_t vanishes and only σ₁/2 remains
        for j in [0, 7, n - 1] {
            let mut e = CVec::zeros(2 * n);
            e[j] = c(1.0, 0.0);
            let u = vec![e; time.n_t];
            let pu = p0.apply(&u).unwrap();
            for v in &pu {
                assert!((v[n + j] - c(0.5, 0.0)).norm() < 1e-12);
                assert!(v.norm_squared() - 0.25 < 1e-12);
            }
        }
    }

    #[test]
    fn multiplier_examples() {
        let grid = small_grid(0.1);
        let time = TimeGrid::symmetric(1.0, 5).unwrap();
        let zero = ScalarField::constant(grid, time, 0.0);
        let ps = PseudoSign { rho: zero.clone(), b: zero.clone(), T: 1.0 };
        assert!(build_multiplier(&ps).unwrap().iter().all(|op| op.entries.norm() == 0.0));

        let one = ScalarField::constant(grid, time, 1.0);
        let ps = PseudoSign { rho: zero.clone(), b: one, T: 1.0 };
        let ops = build_multiplier(&ps).unwrap();
        let v = crate::quantization::gaussian_vector(&grid, 0.0, 0.5, 1.0);
        assert!((ops[2].apply(&v) - &v).norm() < 1e-6);

        // δ₀ of f = x against the coherent-frame superposition
        let f = builtin("x", 0.1).unwrap().sample(time, grid).unwrap();
        let sd = signed_distance(&sign_partition(&f, 0.0));
        let ps = PseudoSign { rho: zero, b: sd.delta0.clone(), T: 1.0 };
        let ops = build_multiplier(&ps).unwrap();
        let frame = CoherentFrame::new(grid).quantize(sd.delta0.slice(2)).unwrap();
        assert!((&ops[2].entries - &frame.entries).norm() < 1e-8);
        let centre = grid.n_x / 2;
        let near = ops[2].entries[(centre, centre + 1)].norm();
        let far = ops[2].entries[(centre, centre + 8)].norm();
        assert!(far < 1e-3 * near.max(1e-300) || far < 1e-12);
    }

    #[test]
    fn trials_are_windowed_and_normalised() {
        let grid = small_grid(0.1);
        let time = TimeGrid::symmetric(0.5, 17).unwrap();
        let trials = trial_corpus(&grid, &time, 0.5, 2, 3);
        assert_eq!(trials.len(), 30);
        for t in &trials {
            assert!((norm(&time, &grid, &t.values) - 1.0).abs() < 1e-12);
            assert_eq!(t.values[0].norm(), 0.0);
            assert_eq!(t.values[time.n_t - 1].norm(), 0.0);
        }
        let again = trial_corpus(&grid, &time, 0.5, 2, 3);
        assert_eq!(trials[25].values, again[25].values);
        let other = trial_corpus(&grid, &time, 0.5, 2, 4);
        assert_ne!(trials[25].values, other[25].values);
    }

    #[test]
    fn support_and_degenerate_trials_are_rejected() {
        let grid = small_grid(0.1);
        let time = TimeGrid::new(-1.0, 1.0, 9, 0.5).unwrap();
        let f = ScalarField::constant(grid, time, 0.0);
        let p0 = assemble_P0(&f, None).unwrap();
        let mult = vec![OperatorMatrix::identity(grid, 1); 9];
        let wide = Trial { name: "wide".into(), values: vec![CVec::from_element(grid.n_x, c(1.0, 0.0)); 9] };
        assert!(matches!(verify_propest(&p0, &mult, &[wide], 0.5, 0.1), Err(Error::Precondition(_))));
        let empty = Trial { name: "empty".into(), values: vec![CVec::zeros(grid.n_x); 9] };
        assert!(matches!(verify_propest(&p0, &mult, &[empty], 0.5, 0.1), Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_symbol_estimate_holds_with_closed_form_ramp() {
        let opts = EstimateOptions { n_x: 32, l_x: 20.0, n_t: 17, ..Default::default() };
        let zero = builtin("zero", 0.1).unwrap();
        let sym = zero.callback();
        let e = evaluate_at(&*sym, None, opts.grid(0.1).unwrap(), 0.5, &opts).unwrap();
        assert!(e.direct.verdict, "{:?}", e.direct.min_rhs);
        assert!(e.direct.cauchy_schwarz_ok);
        assert!(e.derivative_term.ok);
        // B_T = m (t − T) / 2T with m ≡ 1/2
        let b = &e.fields.pseudo_sign.b;
        for i in 0..b.time.n_t {
            let want = 0.5 * (b.time.t(i) - 0.5) / 1.0;
            assert!((b.at(i, 0) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn west3_zero_symbol_and_homogeneity() {
        let opts = EstimateOptions { n_x: 32, l_x: 20.0, n_t: 9, ..Default::default() };
        let zero = builtin("zero", 1.0).unwrap();
        let e = evaluate_at(&*zero.callback(), None, opts.grid(1.0).unwrap(), 1.0, &opts).unwrap();
        assert!((0.3..=0.7).contains(&e.west3.c1), "{}", e.west3.c1);
        // closed form: min over slices of m / (1 + B²) at h = 1
        let b = &e.fields.pseudo_sign.b;
        let want = (0..b.time.n_t).map(|i| 0.5 / (1.0 + b.at(i, 0).powi(2))).fold(f64::INFINITY, f64::min);
        assert!((e.west3.c1 - want).abs() < 1e-6, "{} vs {want}", e.west3.c1);
        let scaled = e.fields.m.map(|v| 10.0 * v);
        let r = verify_west3(&scaled, &e.fields.pseudo_sign, 1.0).unwrap();
        assert!((r.c1 / e.west3.c1 - 10.0).abs() < 1e-8);
    }

    #[test]
    fn lower_order_constant_matches_exponential() {
        let grid = PhaseGrid::dft_window(4, 4.0, 0.1).unwrap();
        let time = TimeGrid::symmetric(1.0, 17).unwrap();
        let cst = 0.7;
        let term = LowerOrderTerm::new("c", 2, move |_, _, _| CMat::identity(2, 2) * c(cst, 0.0));
        let red = reduce_lower_order(&term, time, grid, 16).unwrap();
        for i in 0..time.n_t {
            let want = Complex64::from_polar(1.0, -cst * time.t(i));
            let e = red.e.block(i, 1, 2);
            assert!((e[(0, 0)] - want).norm() < 1e-10 && (e[(1, 1)] - want).norm() < 1e-10);
            assert!(e[(0, 1)].norm() < 1e-14);
        }
        assert!(red.residual < 1e-8);
        assert!((red.min_det - 1.0).abs() < 1e-10);
        let zero = lower_order("zero", 0.1).unwrap();
        let red = reduce_lower_order(&zero, time, grid, 4).unwrap();
        assert!(red.e.values.chunks(4).all(|b| b == [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]));
    }

    #[test]
    fn lower_order_nilpotent_matches_integral() {
        let grid = PhaseGrid::dft_window(4, 4.0, 0.1).unwrap();
        let time = TimeGrid::new(-1.3, 1.0, 24, 1.0).unwrap();
        let term = lower_order("nilpotent_cos", 0.1).unwrap();
        let red = reduce_lower_order(&term, time, grid, 16).unwrap();
        for i in 0..time.n_t {
            let e = red.e.block(i, 0, 0);
            let want = c(0.0, -time.t(i).sin());
            assert!((e[(0, 1)] - want).norm() < 1e-10, "{i}");
            assert!((e[(0, 0)] - c(1.0, 0.0)).norm() < 1e-12);
        }
        assert!(red.residual < 1e-8, "{}", red.residual);
    }

    #[test]
    fn field_interpolated_term_tracks_callback() {
        let grid = PhaseGrid::dft_window(8, 8.0, 0.1).unwrap();
        let time = TimeGrid::symmetric(1.0, 33).unwrap();
        let term = lower_order("rotating", 0.1).unwrap();
        let interp = LowerOrderTerm::from_field("rotating_field", term.sample(time, grid).unwrap());
        let (x, xi) = grid.coords(5);
        for t in [-0.93, -0.1, 0.37, 0.99] {
            assert!((term.at(t, x, xi) - interp.at(t, x, xi)).norm() < 1e-5);
        }
    }

    #[test]
    fn compliant_symbol_estimate_is_positive_at_small_window() {
        let opts = EstimateOptions { n_x: 32, l_x: 20.0, n_t: 17, ..Default::default() };
        let s = builtin("t_times_g", 0.1).unwrap();
        let e = evaluate_at(&*s.callback(), None, opts.grid(0.1).unwrap(), 0.2, &opts).unwrap();
        assert!(e.direct.verdict, "min rhs {}", e.direct.min_rhs);
        assert!(e.direct.fitted_C0.unwrap().is_finite());
        assert!(e.west3.ok && e.derivative_term.ok);
    }

    #[test]
    fn gate_refuses_violating_symbol_unless_skipped() {
        let opts = EstimateOptions { n_x: 32, l_x: 20.0, n_t: 17, ..Default::default() };
        let s = builtin("minus_t_times_g", 0.1).unwrap();
        let err = evaluate_at(&*s.callback(), None, opts.grid(0.1).unwrap(), 1.0, &opts).unwrap_err();
        assert!(matches!(err, Error::Violation(_)));
        let opts = EstimateOptions { skip_gate: true, ..opts };
        let e = evaluate_at(&*s.callback(), None, opts.grid(0.1).unwrap(), 1.0, &opts).unwrap();
        assert!(!e.gate.holds && e.gate.skipped);
        assert!(e.direct.trials.iter().any(|r| r.rhs <= 0.0));
    }

    #[test]
    fn report_csv_has_one_row_per_trial() {
        let opts = EstimateOptions { n_x: 32, l_x: 20.0, n_t: 9, ..Default::default() };
        let zero = builtin("zero", 0.1).unwrap();
        let e = evaluate_at(&*zero.callback(), None, opts.grid(0.1).unwrap(), 0.5, &opts).unwrap();
        let csv = e.direct.to_csv();
        assert_eq!(csv.lines().count(), 31);
        assert!(csv.starts_with("trial,lhs,rhs,ratio\n"));
    }
}
