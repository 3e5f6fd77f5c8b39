//! Pointwise analysis of matrix-valued symbols `w ↦ P(w) ∈ C^{N×N}`:
//! multiplicities, principal type, constant characteristics, block
//! reduction near an eigenvalue section, companion systems and a gallery of
//! classical examples with known verdicts.
//!
//! All tests are numerical and carry their thresholds. Finite differences use
//! second-order central stencils with one Richardson step, so derivatives up
//! to fourth order are reliable for smooth symbols at the default step.

use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat};

type Eval = dyn Fn(&[f64]) -> CMat + Send + Sync;

/// A named matrix symbol on `R^{n_vars}`.
#[derive(Clone)]
pub struct MatrixSymbol {
    pub name: String,
    pub dim: usize,
    pub n_vars: usize,
    eval: Arc<Eval>,
}

impl std::fmt::Debug for MatrixSymbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MatrixSymbol({}, {}×{}, {} vars)", self.name, self.dim, self.dim, self.n_vars)
    }
}

impl MatrixSymbol {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        n_vars: usize,
        eval: impl Fn(&[f64]) -> CMat + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), dim, n_vars, eval: Arc::new(eval) }
    }

    pub fn at(&self, w: &[f64]) -> CMat {
        (self.eval)(w)
    }

    /// `w ↦ A P(w) B` for constant `A`, `B`.
    pub fn sandwich(&self, a: CMat, b: CMat) -> Self {
        let inner = self.eval.clone();
        Self::new(format!("{}[APB]", self.name), self.dim, self.n_vars, move |w| &a * inner(w) * &b)
    }

    /// `w ↦ P(w)*`.
    pub fn adjoint(&self) -> Self {
        let inner = self.eval.clone();
        Self::new(format!("{}[adj]", self.name), self.dim, self.n_vars, move |w| inner(w).adjoint())
    }
}

/// Builds a symbol from row-major entries.
pub fn matrix(n: usize, entries: &[Complex64]) -> CMat {
    CMat::from_row_slice(n, n, entries)
}

fn re(v: f64) -> Complex64 {
    c(v, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    Indeterminate,
}

impl Verdict {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Verdict::Yes
        } else {
            Verdict::No
        }
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            Verdict::Yes => Some(true),
            Verdict::No => Some(false),
            Verdict::Indeterminate => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyOptions {
    /// Singular values below `rank_tol · max(σ_max, 1)` count as zero.
    pub rank_tol: f64,
    /// Eigenvalues within `cluster_tol · max(‖P‖, 1)` are one cluster.
    pub cluster_tol: f64,
    pub fd_step: f64,
    /// Threshold for a nonzero determinant derivative or bilinear form.
    pub deriv_tol: f64,
    /// Random directions on top of the coordinate axes.
    pub n_directions: usize,
    pub eps_ball: f64,
    pub n_samples: usize,
    pub lambda_window: f64,
    pub seed: u64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            rank_tol: 1e-8,
            cluster_tol: 1e-6,
            fd_step: 0.05,
            deriv_tol: 1e-6,
            n_directions: 8,
            eps_ball: 0.1,
            n_samples: 64,
            lambda_window: 0.5,
            seed: 0,
        }
    }
}

fn scale(p: &CMat) -> f64 {
    linalg::spectral_norm(p).max(1.0)
}

/// Groups indices whose values are chained within `radius`. Also returns the
/// smallest gap between groups that lies in `(radius, 10·radius]`, if any.
fn cluster(values: &[Complex64], radius: f64) -> (Vec<Vec<usize>>, Option<f64>) {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for a in 0..n {
        for b in a + 1..n {
            if (values[a] - values[b]).norm() <= radius {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                parent[ra] = rb;
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    let mut ambiguous: Option<f64> = None;
    for a in 0..n {
        for b in a + 1..n {
            let d = (values[a] - values[b]).norm();
            if root(&mut parent, a) != root(&mut parent, b) && d <= 10.0 * radius {
                ambiguous = Some(ambiguous.map_or(d, |m: f64| m.min(d)));
            }
        }
    }
    (groups, ambiguous)
}

fn mean(values: &[Complex64], idx: &[usize]) -> Complex64 {
    idx.iter().map(|&i| values[i]).sum::<Complex64>() / re(idx.len() as f64)
}

/// Geometric multiplicity of `λ`: `N − rank(P − λ)`.
fn geometric(p: &CMat, lambda: Complex64, rank_tol: f64) -> usize {
    let n = p.nrows();
    let shifted = p - CMat::identity(n, n) * lambda;
    let thr = rank_tol * scale(p);
    n - linalg::singular_values(&shifted).iter().filter(|&&s| s > thr).count()
}

/// `(algebraic, geometric)` multiplicity of `λ` as an eigenvalue of `P`.
/// `tol` is relative to `max(‖P‖, 1)` for both the eigenvalue cluster and
/// the rank threshold.
pub fn multiplicities(p: &CMat, lambda: Complex64, tol: f64) -> Result<(usize, usize)> {
    multiplicities_with(p, lambda, tol, tol)
}

pub fn multiplicities_with(p: &CMat, lambda: Complex64, cluster_tol: f64, rank_tol: f64) -> Result<(usize, usize)> {
    let radius = cluster_tol * scale(p);
    let ev = linalg::eigenvalues(p);
    if ev.len() != p.nrows() {
        return Err(Error::Precondition("eigenvalue iteration did not converge".into()));
    }
    let mut alg = 0;
    for z in &ev {
        let d = (z - lambda).norm();
        if d <= radius {
            alg += 1;
        } else if d <= 10.0 * radius {
            return Err(Error::AmbiguousCluster(format!(
                "eigenvalue {z} at distance {d:.3e} from {lambda}, radius {radius:.3e}"
            )));
        }
    }
    Ok((alg, geometric(p, lambda, rank_tol)))
}

/// `k`-th derivative at 0 of `g` by a central stencil with one Richardson step.
fn derivative(g: &dyn Fn(f64) -> Complex64, k: usize, h: f64) -> Complex64 {
    let stencil = |h: f64| -> Complex64 {
        match k {
            1 => (g(h) - g(-h)) / re(2.0 * h),
            2 => (g(h) - g(0.0) * 2.0 + g(-h)) / re(h * h),
            3 => (g(2.0 * h) - g(h) * 2.0 + g(-h) * 2.0 - g(-2.0 * h)) / re(2.0 * h.powi(3)),
            4 => (g(2.0 * h) - g(h) * 4.0 + g(0.0) * 6.0 - g(-h) * 4.0 + g(-2.0 * h)) / re(h.powi(4)),
            _ => unreachable!("order checked by caller"),
        }
    };
    (stencil(h / 2.0) * 4.0 - stencil(h)) / re(3.0)
}

fn shifted(w0: &[f64], nu: &[f64], s: f64) -> Vec<f64> {
    w0.iter().zip(nu).map(|(a, b)| a + s * b).collect()
}

fn directions(n_vars: usize, n_random: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..n_vars)
        .map(|i| (0..n_vars).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < n_vars + n_random {
        let v: Vec<f64> = (0..n_vars).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 {
            out.push(v.iter().map(|x| x / n).collect());
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrincipalTypeReport {
    pub verdict: Verdict,
    pub elliptic: bool,
    /// `dim ker P(w₀)`.
    pub kernel_dim: usize,
    /// Direction with the largest `|∂_ν^k det P|`.
    pub witness_direction: Option<Vec<f64>>,
    pub det_derivative: f64,
    /// Largest smallest singular value of `V* ∂_ν P U` over the directions.
    pub bilinear_min_singular: f64,
    pub det_test: bool,
    pub bilinear_test: bool,
    pub note: Option<String>,
}

/// Principal type at `w₀` by the determinant test (`∂_ν^k det P ≠ 0` with
/// `k = dim ker P(w₀)`) cross-checked with the bilinear form
/// `(u, v) ↦ ⟨∂_ν P u, v⟩` on `ker P × ker P*`.
pub fn principal_type_test(sym: &MatrixSymbol, w0: &[f64], opts: &ClassifyOptions) -> PrincipalTypeReport {
    let p0 = sym.at(w0);
    let u = linalg::null_space(&p0, opts.rank_tol);
    let k = u.ncols();
    let mut rep = PrincipalTypeReport {
        verdict: Verdict::Yes,
        elliptic: false,
        kernel_dim: k,
        witness_direction: None,
        det_derivative: 0.0,
        bilinear_min_singular: 0.0,
        det_test: true,
        bilinear_test: true,
        note: None,
    };
    if k == 0 {
        rep.elliptic = true;
        rep.note = Some("P(w0) is invertible (elliptic); principal type holds trivially".into());
        return rep;
    }
    if k > 4 {
        rep.verdict = Verdict::Indeterminate;
        rep.note = Some(format!("kernel dimension {k} exceeds the supported derivative order 4"));
        return rep;
    }
    let v = linalg::null_space(&p0.adjoint(), opts.rank_tol);
    let h = opts.fd_step;
    for nu in directions(sym.n_vars, opts.n_directions, opts.seed) {
        let det = |s: f64| sym.at(&shifted(w0, &nu, s)).determinant();
        let dk = derivative(&det, k, h).norm();
        if dk > rep.det_derivative {
            rep.det_derivative = dk;
            rep.witness_direction = Some(nu.clone());
        }
        let dp = {
            let lo = |s: f64| sym.at(&shifted(w0, &nu, s));
            let d = |hh: f64| (lo(hh) - lo(-hh)) / re(2.0 * hh);
            (d(h / 2.0) * re(4.0) - d(h)) / re(3.0)
        };
        let form = v.adjoint() * dp * &u;
        let smin = linalg::singular_values(&form).last().copied().unwrap_or(0.0);
        rep.bilinear_min_singular = rep.bilinear_min_singular.max(smin);
    }
    rep.det_test = rep.det_derivative > opts.deriv_tol;
    rep.bilinear_test = rep.bilinear_min_singular > opts.deriv_tol;
    rep.verdict = if rep.det_test == rep.bilinear_test {
        Verdict::from_bool(rep.det_test)
    } else {
        rep.note = Some("determinant and bilinear-form tests disagree".into());
        Verdict::Indeterminate
    };
    rep
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenCluster {
    /// `[re, im]` of the cluster mean.
    pub center: [f64; 2],
    pub alg: usize,
    pub geo: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantCharReport {
    pub verdict: Verdict,
    pub clusters: Vec<EigenCluster>,
    pub samples: usize,
    /// First sample where a section changed its `(alg, geo)`.
    pub offending_point: Option<Vec<f64>>,
    pub offending_cluster: Option<usize>,
    /// `(alg, geo)` pairs found there.
    pub found: Vec<(usize, usize)>,
    pub note: Option<String>,
    pub eps_ball: f64,
    pub lambda_window: f64,
}

fn clusters_at(p: &CMat, opts: &ClassifyOptions) -> Result<(Vec<Complex64>, Vec<Vec<usize>>)> {
    let ev = linalg::eigenvalues(p);
    if ev.len() != p.nrows() {
        return Err(Error::Precondition("eigenvalue iteration did not converge".into()));
    }
    let (groups, amb) = cluster(&ev, opts.cluster_tol * scale(p));
    if let Some(d) = amb {
        return Err(Error::AmbiguousCluster(format!("two eigenvalues {d:.3e} apart")));
    }
    Ok((ev, groups))
}

/// Tracks every eigenvalue cluster of `P(w₀)` inside `|λ| < λ_window` over
/// random and axis samples in the `ε`-ball and checks that each keeps its
/// `(alg, geo)`.
pub fn constant_characteristics_test(sym: &MatrixSymbol, w0: &[f64], opts: &ClassifyOptions) -> ConstantCharReport {
    let mut rep = ConstantCharReport {
        verdict: Verdict::Yes,
        clusters: Vec::new(),
        samples: 0,
        offending_point: None,
        offending_cluster: None,
        found: Vec::new(),
        note: None,
        eps_ball: opts.eps_ball,
        lambda_window: opts.lambda_window,
    };
    let p0 = sym.at(w0);
    let (ev0, groups0) = match clusters_at(&p0, opts) {
        Ok(x) => x,
        Err(e) => {
            rep.verdict = Verdict::Indeterminate;
            rep.note = Some(e.to_string());
            return rep;
        }
    };
    let centers: Vec<Complex64> = groups0.iter().map(|g| mean(&ev0, g)).collect();
    let tracked: Vec<usize> = (0..groups0.len()).filter(|&i| centers[i].norm() < opts.lambda_window).collect();
    for &i in &tracked {
        rep.clusters.push(EigenCluster {
            center: [centers[i].re, centers[i].im],
            alg: groups0[i].len(),
            geo: geometric(&p0, centers[i], opts.rank_tol),
        });
    }
    if tracked.is_empty() {
        rep.note = Some("no eigenvalue inside the window".into());
        return rep;
    }

    let d = sym.n_vars;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let mut points: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        for s in [-1.0, 1.0] {
            let mut w = w0.to_vec();
            w[i] += s * opts.eps_ball;
            points.push(w);
        }
    }
    while points.len() < 2 * d + opts.n_samples {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(1e-3..=1.0).contains(&n) {
            continue;
        }
        points.push(w0.iter().zip(&v).map(|(a, b)| a + opts.eps_ball * b).collect());
    }

    for w in points {
        rep.samples += 1;
        let p = sym.at(&w);
        let ev = linalg::eigenvalues(&p);
        // assign each eigenvalue to the nearest cluster centre at w₀
        let mut members: Vec<Vec<Complex64>> = vec![Vec::new(); centers.len()];
        for z in &ev {
            let mut dist: Vec<(f64, usize)> = centers.iter().enumerate().map(|(i, c0)| ((z - c0).norm(), i)).collect();
            dist.sort_by(|a, b| a.0.total_cmp(&b.0));
            if dist.len() > 1 && (dist[1].0 - dist[0].0).abs() <= opts.cluster_tol * scale(&p) {
                rep.verdict = Verdict::Indeterminate;
                rep.offending_point = Some(w.clone());
                rep.note = Some(format!(
                    "eigenvalue {z} is equidistant from clusters {} and {}",
                    dist[0].1, dist[1].1
                ));
                return rep;
            }
            members[dist[0].1].push(*z);
        }
        for (slot, &i) in tracked.iter().enumerate() {
            let vals = &members[i];
            let (sub, _) = cluster(vals, opts.cluster_tol * scale(&p));
            let found: Vec<(usize, usize)> = sub
                .iter()
                .map(|g| (g.len(), geometric(&p, mean(vals, g), opts.rank_tol)))
                .collect();
            let want = (rep.clusters[slot].alg, rep.clusters[slot].geo);
            if found.len() != 1 || found[0] != want {
                rep.verdict = Verdict::No;
                rep.offending_point = Some(w.clone());
                rep.offending_cluster = Some(slot);
                rep.found = found;
                return rep;
            }
        }
    }
    rep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiStatus {
    Holds,
    Violated,
    NotChecked,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub symbol: String,
    pub point: Vec<f64>,
    pub principal_type: PrincipalTypeReport,
    pub constant_characteristics: ConstantCharReport,
    /// Constant-characteristics verdict at `ε/2, ε, 2ε`.
    pub eps_sweep: Vec<(f64, Verdict)>,
    pub diagonalizable: bool,
    pub hermitian: bool,
    pub psi_status: PsiStatus,
    pub options: ClassifyOptions,
}

/// Runs the full pointwise suite at `w₀`.
pub fn classify(sym: &MatrixSymbol, w0: &[f64], opts: &ClassifyOptions) -> ClassificationReport {
    let p0 = sym.at(w0);
    let principal_type = principal_type_test(sym, w0, opts);
    let constant_characteristics = constant_characteristics_test(sym, w0, opts);
    let eps_sweep = [0.5, 1.0, 2.0]
        .iter()
        .map(|&f| {
            let o = ClassifyOptions { eps_ball: opts.eps_ball * f, ..*opts };
            (o.eps_ball, constant_characteristics_test(sym, w0, &o).verdict)
        })
        .collect();
    let diagonalizable = match clusters_at(&p0, opts) {
        Ok((ev, groups)) => groups.iter().all(|g| geometric(&p0, mean(&ev, g), opts.rank_tol) == g.len()),
        Err(_) => false,
    };
    let hermitian = linalg::max_abs(&(&p0 - p0.adjoint())) <= opts.rank_tol * scale(&p0);
    ClassificationReport {
        symbol: sym.name.clone(),
        point: w0.to_vec(),
        principal_type,
        constant_characteristics,
        eps_sweep,
        diagonalizable,
        hermitian,
        psi_status: PsiStatus::NotChecked,
        options: *opts,
    }
}

/// One point of a block reduction.
#[derive(Debug, Clone)]
pub struct BlockPoint {
    pub w: Vec<f64>,
    pub lambda: Complex64,
    /// Unitary `[U₁ | U₂]` with `U₁` spanning `ker(P − λ)`.
    pub e: CMat,
    /// Left factor; `A P E = Q`.
    pub a: CMat,
    /// Block-diagonal `diag(Q₁₁, Q₂₂)`.
    pub q: CMat,
    pub q12: f64,
    pub q21: f64,
    /// `‖Q₁₁ − λ Id‖`.
    pub q11_defect: f64,
    /// `‖A P E − Q‖ / ‖P‖`.
    pub round_trip: f64,
}

#[derive(Debug, Clone)]
pub struct BlockReduction {
    pub k: usize,
    pub points: Vec<BlockPoint>,
}

impl BlockReduction {
    pub fn max_round_trip(&self) -> f64 {
        self.points.iter().map(|p| p.round_trip).fold(0.0, f64::max)
    }
}

/// Splits off the `λ`-eigenspace along an ordered list of points. Kernel
/// bases are carried from one point to the next by Procrustes alignment so
/// the frame varies continuously.
pub fn block_reduce(
    sym: &MatrixSymbol,
    lambda: &dyn Fn(&[f64]) -> Complex64,
    points: &[Vec<f64>],
    opts: &ClassifyOptions,
) -> Result<BlockReduction> {
    let n = sym.dim;
    let mut k = None;
    let mut prev: Option<(CMat, CMat)> = None;
    let mut out = Vec::with_capacity(points.len());
    for w in points {
        let p = sym.at(w);
        let lam = lambda(w);
        let (alg, geo) = multiplicities_with(&p, lam, opts.cluster_tol, opts.rank_tol)?;
        if alg != geo || alg == 0 || k.is_some_and(|k| k != alg) {
            return Err(Error::Precondition(format!(
                "section is not of constant multiplicity at w = {w:?}: (alg, geo) = ({alg}, {geo})"
            )));
        }
        let kk = *k.get_or_insert(alg);
        let shifted = &p - CMat::identity(n, n) * lam;
        let mut u1 = linalg::null_space(&shifted, opts.rank_tol);
        let full = linalg::complete_basis(&u1);
        let mut u2 = full.columns(kk, n - kk).into_owned();
        if let Some((p1, p2)) = &prev {
            u1 = &u1 * linalg::procrustes(&u1, p1);
            if n > kk {
                u2 = &u2 * linalg::procrustes(&u2, p2);
            }
        }
        let mut e = CMat::zeros(n, n);
        e.columns_mut(0, kk).copy_from(&u1);
        e.columns_mut(kk, n - kk).copy_from(&u2);
        let m = e.adjoint() * &p * &e;
        let p12 = m.view((0, kk), (kk, n - kk)).into_owned();
        let p22 = m.view((kk, kk), (n - kk, n - kk)).into_owned();
        let mut left = CMat::identity(n, n);
        if n > kk {
            let smin = linalg::singular_values(&p22).last().copied().unwrap_or(0.0);
            if smin <= opts.rank_tol * scale(&p) {
                return Err(Error::NotPrincipalType(format!(
                    "complementary block is singular at w = {w:?} (σ_min = {smin:.3e})"
                )));
            }
            let inv = p22.clone().try_inverse().ok_or_else(|| Error::NotPrincipalType("P22 not invertible".into()))?;
            left.view_mut((0, kk), (kk, n - kk)).copy_from(&(-(&p12 * inv)));
        }
        let a = &left * e.adjoint();
        let apb = &a * &p * &e;
        let mut q = CMat::zeros(n, n);
        q.view_mut((0, 0), (kk, kk)).copy_from(&apb.view((0, 0), (kk, kk)));
        q.view_mut((kk, kk), (n - kk, n - kk)).copy_from(&apb.view((kk, kk), (n - kk, n - kk)));
        let q12 = apb.view((0, kk), (kk, n - kk)).norm();
        let q21 = apb.view((kk, 0), (n - kk, kk)).norm();
        let q11_defect = (apb.view((0, 0), (kk, kk)).into_owned() - CMat::identity(kk, kk) * lam).norm();
        let round_trip = linalg::spectral_norm(&(&apb - &q)) / linalg::spectral_norm(&p).max(f64::MIN_POSITIVE);
        prev = Some((u1, u2));
        out.push(BlockPoint { w: w.clone(), lambda: lam, e, a, q, q12, q21, q11_defect, round_trip });
    }
    Ok(BlockReduction { k: k.unwrap_or(0), points: out })
}

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;

/// `ℙ = [[Q, −1, 0, …], [0, Q, −1, …], …, [A₀, A₁, …, Q + A_{N−1}]]`.
pub fn companion_system(q: ScalarFn, lower: Vec<ScalarFn>) -> Result<MatrixSymbol> {
    let n = lower.len();
    if n == 0 {
        return Err(Error::Precondition("companion system needs N ≥ 1".into()));
    }
    Ok(MatrixSymbol::new(format!("companion_{n}"), n, 0, move |w| {
        let qv = q(w);
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = qv;
            if i + 1 < n {
                m[(i, i + 1)] = re(-1.0);
            }
        }
        for (j, a) in lower.iter().enumerate() {
            m[(n - 1, j)] += a(w);
        }
        m
    }))
}

/// The principal part `Q·Id_N` of a companion system.
pub fn companion_principal(q: ScalarFn, n: usize) -> MatrixSymbol {
    MatrixSymbol::new(format!("companion_principal_{n}"), n, 0, move |w| CMat::identity(n, n) * q(w))
}

/// Expected verdicts for a gallery item.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Expected {
    pub principal_type: Option<bool>,
    pub constant_characteristics: Option<bool>,
    pub diagonalizable: Option<bool>,
    pub hermitian: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub name: String,
    pub description: String,
    pub expected: Expected,
    pub report: ClassificationReport,
    /// Principal-type verdict for `A P B` with random invertible `A`, `B`.
    pub sandwich_verdict: Verdict,
    pub adjoint_verdict: Verdict,
    pub mismatches: Vec<String>,
}

impl GalleryEntry {
    pub fn matches(&self) -> bool {
        self.mismatches.is_empty()
    }
}

pub struct GalleryItem {
    pub name: &'static str,
    pub description: &'static str,
    pub symbol: MatrixSymbol,
    pub point: Vec<f64>,
    pub expected: Expected,
}

fn item(
    name: &'static str,
    description: &'static str,
    point: &[f64],
    expected: Expected,
    eval: impl Fn(&[f64]) -> CMat + Send + Sync + 'static,
) -> GalleryItem {
    GalleryItem {
        name,
        description,
        symbol: MatrixSymbol::new(name, 2, point.len(), eval),
        point: point.to_vec(),
        expected,
    }
}

fn m2(a: Complex64, b: Complex64, cc: Complex64, d: Complex64) -> CMat {
    matrix(2, &[a, b, cc, d])
}

/// Surrogate principal symbol with eigenvalues `ξ₁` and `ξ₁ + ξ₂²/|ξ|` at
/// fixed transversal frequency `rest`.
fn merging_eigenvalues(rest: f64) -> impl Fn(&[f64]) -> CMat + Send + Sync {
    move |w| {
        let (x1, x2) = (w[0], w[1]);
        let r = x2 * x2 / (x1 * x1 + x2 * x2 + rest * rest).sqrt();
        m2(re(x1), re(x2), re(0.0), re(x1 + r))
    }
}

/// The classical examples with their known verdicts.
pub fn gallery_items() -> Vec<GalleryItem> {
    let yes = Some(true);
    let no = Some(false);
    vec![
        // principal part of the reduced scalar equation: p = ξ, subprincipal i·x
        item(
            "reduced_scalar_at_zero",
            "[[ξ, i·x], [0, ξ]] at (x, ξ) = (0, 0): subprincipal part vanishes",
            &[0.0, 0.0],
            Expected { principal_type: yes, ..Default::default() },
            |w| m2(re(w[1]), c(0.0, w[0]), re(0.0), re(w[1])),
        ),
        item(
            "reduced_scalar_off_zero",
            "[[ξ, i·x], [0, ξ]] at (x, ξ) = (1, 0): subprincipal part nonzero",
            &[1.0, 0.0],
            Expected { principal_type: no, constant_characteristics: yes, ..Default::default() },
            |w| m2(re(w[1]), c(0.0, w[0]), re(0.0), re(w[1])),
        ),
        item(
            "merging_real_eigenvalues",
            "[[ξ₁, ξ₂], [0, ξ₁ + ξ₂²/|ξ|]] at ξ₁ = ξ₂ = 0, |ξ''| = 1",
            &[0.0, 0.0],
            Expected { principal_type: yes, constant_characteristics: no, ..Default::default() },
            merging_eigenvalues(1.0),
        ),
        item(
            "merging_real_eigenvalues_scaled",
            "same symbol at |ξ''| = 2",
            &[0.0, 0.0],
            Expected { principal_type: yes, constant_characteristics: no, ..Default::default() },
            merging_eigenvalues(2.0),
        ),
        item(
            "selfadjoint_b1",
            "[[τ + b, t − ib], [t + ib, −τ + b]] with b = 1 at (t, τ) = 0, ξ = 1",
            &[0.0, 0.0],
            Expected { principal_type: no, diagonalizable: yes, hermitian: yes, ..Default::default() },
            |w| {
                let (t, tau, b) = (w[0], w[1], 1.0);
                m2(re(tau + b), c(t, -b), c(t, b), re(-tau + b))
            },
        ),
        item(
            "selfadjoint_b0",
            "[[τ, t], [t, −τ]] (b = 0) at (t, τ) = 0",
            &[0.0, 0.0],
            Expected { principal_type: yes, constant_characteristics: no, ..Default::default() },
            |w| m2(re(w[1]), re(w[0]), re(w[0]), re(-w[1])),
        ),
        item(
            "symmetric_w1_w2",
            "[[w₁, w₂], [w₂, −w₁]] at 0",
            &[0.0, 0.0],
            Expected { principal_type: yes, constant_characteristics: no, ..Default::default() },
            |w| m2(re(w[0]), re(w[1]), re(w[1]), re(-w[0])),
        ),
        item(
            "jordan_geometric_jump",
            "[[w₁ + iw₂², w₂], [0, w₁ + iw₂²]] at 0",
            &[0.0, 0.0],
            Expected { principal_type: yes, constant_characteristics: no, ..Default::default() },
            |w| {
                let d = c(w[0], w[1] * w[1]);
                m2(d, re(w[1]), re(0.0), d)
            },
        ),
        item(
            "jordan_algebraic_jump",
            "[[w₁, 1], [w₂, w₁]] at 0: det = w₁² − w₂",
            &[0.0, 0.0],
            Expected { principal_type: yes, constant_characteristics: no, ..Default::default() },
            |w| m2(re(w[0]), re(1.0), re(w[1]), re(w[0])),
        ),
        item(
            "scalar_identity",
            "w₁·Id₂ at 0",
            &[0.0, 0.0],
            Expected { principal_type: yes, constant_characteristics: yes, diagonalizable: yes, hermitian: yes },
            |w| CMat::identity(2, 2) * re(w[0]),
        ),
        item(
            "scalar_critical",
            "(w₁² + w₂²)·Id₂ at 0: dλ = 0",
            &[0.0, 0.0],
            Expected { principal_type: no, ..Default::default() },
            |w| CMat::identity(2, 2) * re(w[0] * w[0] + w[1] * w[1]),
        ),
        item(
            "identity",
            "Id₂: elliptic",
            &[0.0, 0.0],
            Expected { principal_type: yes, diagonalizable: yes, hermitian: yes, ..Default::default() },
            |_| CMat::identity(2, 2),
        ),
    ]
}

/// Well-conditioned random invertible matrix.
fn random_invertible(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    linalg::random_matrix(rng, n) + CMat::identity(n, n) * re(3.0)
}

/// Classifies a gallery item and compares against its expected verdicts.
pub fn run_item(item: &GalleryItem, opts: &ClassifyOptions) -> GalleryEntry {
    let report = classify(&item.symbol, &item.point, opts);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(17));
    let (a, b) = (random_invertible(&mut rng, item.symbol.dim), random_invertible(&mut rng, item.symbol.dim));
    let sandwich_verdict = principal_type_test(&item.symbol.sandwich(a, b), &item.point, opts).verdict;
    let adjoint_verdict = principal_type_test(&item.symbol.adjoint(), &item.point, opts).verdict;

    let mut mismatches = Vec::new();
    let mut check = |what: &str, want: Option<bool>, got: Option<bool>| {
        if let Some(w) = want {
            if got != Some(w) {
                mismatches.push(format!("{what}: expected {w}, got {got:?}"));
            }
        }
    };
    let e = item.expected;
    check("principal_type", e.principal_type, report.principal_type.verdict.as_bool());
    check("constant_characteristics", e.constant_characteristics, report.constant_characteristics.verdict.as_bool());
    check("diagonalizable", e.diagonalizable, Some(report.diagonalizable));
    check("hermitian", e.hermitian, Some(report.hermitian));
    if report.principal_type.verdict == Verdict::Indeterminate {
        mismatches.push("determinant and bilinear tests disagree".into());
    }
    if sandwich_verdict != report.principal_type.verdict {
        mismatches.push(format!("A·P·B verdict {sandwich_verdict:?} differs"));
    }
    if adjoint_verdict != report.principal_type.verdict {
        mismatches.push(format!("adjoint verdict {adjoint_verdict:?} differs"));
    }
    GalleryEntry {
        name: item.name.to_string(),
        description: item.description.to_string(),
        expected: e,
        report,
        sandwich_verdict,
        adjoint_verdict,
        mismatches,
    }
}

pub fn gallery(opts: &ClassifyOptions) -> Vec<GalleryEntry> {
    gallery_items().iter().map(|it| run_item(it, opts)).collect()
}

/// `P = U diag(λ(w), 1, …) U*` for a fixed unitary `U`: the round-trip case
/// for [`block_reduce`].
pub fn rotated_section(u: CMat, lambda: impl Fn(&[f64]) -> Complex64 + Send + Sync + 'static) -> MatrixSymbol {
    let n = u.nrows();
    MatrixSymbol::new("rotated_section", n, 2, move |w| {
        let mut d = DVector::from_element(n, re(1.0));
        d[0] = lambda(w);
        &u * CMat::from_diagonal(&d) * u.adjoint()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn opts() -> ClassifyOptions {
        ClassifyOptions::default()
    }

    #[test]
    fn multiplicity_examples() {
        let j = matrix(2, &[re(0.0), re(1.0), re(0.0), re(0.0)]);
        assert_eq!(multiplicities(&j, re(0.0), 1e-8).unwrap(), (2, 1));
        assert_eq!(multiplicities(&CMat::identity(2, 2), re(1.0), 1e-8).unwrap(), (2, 2));
        let p = |w1: f64, w2: f64| {
            let d = c(w1, w2 * w2);
            (m2(d, re(w2), re(0.0), d), d)
        };
        let (a, l) = p(0.3, 0.5);
        assert_eq!(multiplicities(&a, l, 1e-8).unwrap(), (2, 1));
        let (a, l) = p(0.3, 0.0);
        assert_eq!(multiplicities(&a, l, 1e-8).unwrap(), (2, 2));
    }

    #[test]
    fn ambiguous_cluster_is_flagged() {
        let p = CMat::from_diagonal(&DVector::from_vec(vec![re(0.0), re(5e-6)]));
        assert!(matches!(multiplicities(&p, re(0.0), 1e-6), Err(Error::AmbiguousCluster(_))));
    }

    #[test]
    fn stencils_are_accurate() {
        let g = |s: f64| c(s.exp(), 0.0);
        for k in 1..=4 {
            assert!((derivative(&g, k, 0.05) - re(1.0)).norm() < 1e-7, "k = {k}");
        }
    }

    #[test]
    fn principal_type_examples() {
        let remark = MatrixSymbol::new("r", 2, 2, |w| m2(re(w[0]), re(1.0), re(w[1]), re(w[0])));
        let r = principal_type_test(&remark, &[0.0, 0.0], &opts());
        assert_eq!(r.kernel_dim, 1);
        assert_eq!(r.verdict, Verdict::Yes);
        // ∂_{w₂} det = −1
        assert!((r.det_derivative - 1.0).abs() < 1e-6 || r.det_derivative > 1.0);

        let sym = MatrixSymbol::new("s", 2, 2, |w| m2(re(w[0]), re(w[1]), re(w[1]), re(-w[0])));
        let r = principal_type_test(&sym, &[0.0, 0.0], &opts());
        assert_eq!(r.kernel_dim, 2);
        assert_eq!(r.verdict, Verdict::Yes);
        // |∂²_ν det| = 2 for every unit ν
        assert!((r.det_derivative - 2.0).abs() < 1e-6);

        let crit = MatrixSymbol::new("c", 3, 2, |w| CMat::identity(3, 3) * re(w[0] * w[0] - w[1] * w[1]));
        let r = principal_type_test(&crit, &[0.0, 0.0], &opts());
        assert_eq!(r.kernel_dim, 3);
        assert_eq!(r.verdict, Verdict::No);
    }

    #[test]
    fn elliptic_point_is_noted() {
        let id = MatrixSymbol::new("id", 2, 1, |_| CMat::identity(2, 2));
        let r = principal_type_test(&id, &[0.0], &opts());
        assert!(r.elliptic && r.verdict == Verdict::Yes && r.note.is_some());
    }

    #[test]
    fn constant_characteristics_examples() {
        let sym = MatrixSymbol::new("s", 2, 2, |w| m2(re(w[0]), re(w[1]), re(w[1]), re(-w[0])));
        let r = constant_characteristics_test(&sym, &[0.0, 0.0], &opts());
        assert_eq!(r.verdict, Verdict::No);
        assert_eq!(r.found.len(), 2);
        let scalar = MatrixSymbol::new("f", 3, 2, |w| CMat::identity(3, 3) * c(w[0], w[1].sin()));
        assert_eq!(constant_characteristics_test(&scalar, &[0.0, 0.0], &opts()).verdict, Verdict::Yes);
        let merging = MatrixSymbol::new("m", 2, 2, merging_eigenvalues(1.0));
        assert_eq!(constant_characteristics_test(&merging, &[0.0, 0.0], &opts()).verdict, Verdict::No);
    }

    #[test]
    fn gallery_matches_expected_verdicts() {
        for e in gallery(&opts()) {
            assert!(e.matches(), "{}: {:?}", e.name, e.mismatches);
        }
    }

    #[test]
    fn gallery_is_stable_across_eps() {
        for e in gallery(&opts()) {
            if let Some(want) = e.expected.constant_characteristics {
                for (eps, v) in &e.report.eps_sweep {
                    assert_eq!(v.as_bool(), Some(want), "{} at ε = {eps}", e.name);
                }
            }
        }
    }

    #[test]
    fn block_reduce_fixed_point() {
        let sym = MatrixSymbol::new("d", 2, 1, |w| m2(re(w[0]), re(0.0), re(0.0), re(1.0)));
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![0.1 * i as f64 - 0.2]).collect();
        let red = block_reduce(&sym, &|w| re(w[0]), &pts, &opts()).unwrap();
        for p in &red.points {
            assert!(p.q12 < 1e-14 && p.q21 < 1e-14 && p.q11_defect < 1e-14);
            // E is a diagonal phase matrix
            assert!((p.e[(0, 0)].norm() - 1.0).abs() < 1e-14 && p.e[(0, 1)].norm() < 1e-14);
        }
    }

    #[test]
    fn block_reduce_recovers_rotated_section() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = linalg::random_unitary(&mut rng, 3);
        let lam = |w: &[f64]| c(w[0], 0.5 * w[1]);
        let sym = rotated_section(u, lam);
        let pts: Vec<Vec<f64>> = (0..9).map(|i| vec![0.05 * i as f64 - 0.2, 0.1 - 0.02 * i as f64]).collect();
        let red = block_reduce(&sym, &lam, &pts, &opts()).unwrap();
        assert_eq!(red.k, 1);
        for p in &red.points {
            assert!(p.q12 < 1e-10 && p.q21 < 1e-10 && p.q11_defect < 1e-10);
            assert!(p.round_trip < 1e-10);
        }
        // consecutive kernel vectors stay close after alignment
        for pair in red.points.windows(2) {
            let d = (pair[0].e.column(0) - pair[1].e.column(0)).norm();
            assert!(d < 0.2, "jump {d}");
        }
    }

    #[test]
    fn block_reduce_symmetric_example() {
        let sym = MatrixSymbol::new("s", 2, 2, |w| m2(re(w[0]), re(w[1]), re(w[1]), re(-w[0])));
        let lam = |w: &[f64]| re(w[0].hypot(w[1]));
        let through: Vec<Vec<f64>> = (-2..=2).map(|i| vec![0.1 * i as f64, 0.0]).collect();
        assert!(block_reduce(&sym, &lam, &through, &opts()).is_err());
        // half circle around the origin
        let arc: Vec<Vec<f64>> = (0..=16)
            .map(|i| {
                let a = std::f64::consts::PI * i as f64 / 16.0;
                vec![0.2 * a.cos(), 0.2 * a.sin()]
            })
            .collect();
        let red = block_reduce(&sym, &lam, &arc, &opts()).unwrap();
        assert!(red.max_round_trip() < 1e-12);
    }

    #[test]
    fn companion_structure() {
        let q: ScalarFn = Arc::new(|w: &[f64]| re(w[0]));
        let one = companion_system(q.clone(), vec![Arc::new(|_: &[f64]| re(2.0))]).unwrap();
        assert_eq!(one.at(&[0.5])[(0, 0)], re(2.5));

        let two = companion_system(q.clone(), vec![Arc::new(|_: &[f64]| re(0.0)), Arc::new(|_: &[f64]| re(0.0))])
            .unwrap();
        let p = two.at(&[0.7]);
        assert_eq!(p, m2(re(0.7), re(-1.0), re(0.0), re(0.7)));
        assert_eq!(multiplicities(&p, re(0.7), 1e-8).unwrap(), (2, 1));

        let a: Vec<ScalarFn> = (0..3).map(|j| Arc::new(move |_: &[f64]| re(10.0 + j as f64)) as ScalarFn).collect();
        let three = companion_system(q.clone(), a).unwrap().at(&[1.0]);
        for i in 0..3 {
            for j in 0..3 {
                let want = match (i, j) {
                    (2, 0) => 10.0,
                    (2, 1) => 11.0,
                    (2, 2) => 13.0,
                    _ if i == j => 1.0,
                    _ if j == i + 1 => -1.0,
                    _ => 0.0,
                };
                assert_eq!(three[(i, j)], re(want), "({i}, {j})");
            }
        }
        assert!(companion_system(q.clone(), vec![]).is_err());

        // principal part Q·Id has constant characteristics
        let principal = companion_principal(Arc::new(|w: &[f64]| re(w[0] + 0.3 * w[1])), 3);
        let principal = MatrixSymbol { n_vars: 2, ..principal };
        assert_eq!(constant_characteristics_test(&principal, &[0.0, 0.0], &opts()).verdict, Verdict::Yes);
        assert_eq!(principal_type_test(&principal, &[0.0, 0.0], &opts()).verdict, Verdict::Yes);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn algebraic_at_least_geometric(seed in 0u64..10_000, n in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // random matrix with a planted double eigenvalue, sometimes defective
            let u = linalg::random_unitary(&mut rng, n);
            let mut t = CMat::zeros(n, n);
            for i in 0..n {
                t[(i, i)] = if i < 2 { re(0.5) } else { c(rng.random_range(2.0..3.0), 0.0) };
            }
            if seed % 2 == 0 {
                t[(0, 1)] = re(1.0);
            }
            let p = &u * t * u.adjoint();
            let (alg, geo) = multiplicities(&p, re(0.5), 1e-6).unwrap();
            prop_assert_eq!(alg, 2);
            prop_assert!(alg >= geo && geo >= 1);
            prop_assert_eq!(geo, if seed % 2 == 0 { 1 } else { 2 });
        }

        #[test]
        fn hermitian_multiplicities_agree(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = linalg::random_unitary(&mut rng, 4);
            let d = DVector::from_vec(vec![re(1.0), re(1.0), re(-2.0), re(3.0)]);
            let p = &u * CMat::from_diagonal(&d) * u.adjoint();
            let p = linalg::hermitian_part(&p);
            for l in [1.0, -2.0, 3.0] {
                let (alg, geo) = multiplicities(&p, re(l), 1e-6).unwrap();
                prop_assert_eq!(alg, geo);
            }
        }
    }
}
