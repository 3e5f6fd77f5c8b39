//! Weyl and Wick quantization of symbol slices on the discrete `x`-line.
//!
//! Vectors are samples `u_j = u(x_j)` and operators act by
//! `(Au)_j = Σ_k A[j,k] u_k`, with `A[j,k] = dx · K(x_j, x_k)` for the kernel
//!
//! ```text
//! K(x_j, x_k) = (dξ / 2π) Σ_l a(x̄_jk, ξ_l) e^{i (x_j − x_k) ξ_l}
//! ```
//!
//! On a lattice with `dx·dξ·n = 2π` the `ξ`-sum is a discrete Fourier
//! transform, so `a ≡ 1` gives the identity and symbols in `x` alone give
//! diagonal matrices. The midpoint `x̄_jk` lives on the half-step lattice
//! `x_min + dx/2 + s·dx/2`, `s ∈ [0, 2n)`, and is taken as the nearest periodic
//! image of `(x_j + x_k)/2`; when both images are equally near, the two
//! samples are averaged.
//!
//! Wick quantization is the Weyl quantization of the Gaussian regularisation
//! `a₀ = π⁻¹ Σ_z a(z) e^{−|w − z|²} dz`, taken periodically in both variables.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grid::PhaseGrid;
use crate::linalg::{self, CMat, CVec};

/// Dense `(n_x·N) × (n_x·N)` operator, component-major: row `α·n_x + j`.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub grid: PhaseGrid,
    pub sys_dim: usize,
    pub entries: CMat,
    pub label: String,
    pub warnings: Vec<String>,
}

impl OperatorMatrix {
    pub fn new(grid: PhaseGrid, sys_dim: usize, entries: CMat, label: impl Into<String>) -> Result<Self> {
        let n = grid.n_x * sys_dim;
        if entries.shape() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "operator must be {n}x{n}, got {:?}",
                entries.shape()
            )));
        }
        if entries.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::Precondition("non-finite operator entry".into()));
        }
        Ok(Self { grid, sys_dim, entries, label: label.into(), warnings: Vec::new() })
    }

    pub fn identity(grid: PhaseGrid, sys_dim: usize) -> Self {
        let n = grid.n_x * sys_dim;
        Self { grid, sys_dim, entries: CMat::identity(n, n), label: "identity".into(), warnings: Vec::new() }
    }

    #[inline]
    pub fn dim_x(&self) -> usize {
        self.grid.n_x
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    /// `max |A − A*| / max(max|A|, tiny)`.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = linalg::max_abs(&self.entries).max(f64::MIN_POSITIVE);
        linalg::max_abs(&(&self.entries - self.entries.adjoint())) / scale
    }

    pub fn spectral_norm(&self) -> f64 {
        linalg::spectral_norm(&self.entries)
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_hermitian_eigenvalue(&self) -> f64 {
        linalg::hermitian_eigenvalues(&self.entries)[0]
    }

    pub fn apply(&self, u: &CVec) -> CVec {
        &self.entries * u
    }
}

/// A symbol slice sampled at half-step `x` positions and `ξ` nodes, with
/// `N × N` complex values: index `((s·n_xi + l)·N + r)·N + c`.
#[derive(Debug, Clone)]
pub struct RefinedSymbol {
    pub grid: PhaseGrid,
    pub dim: usize,
    pub values: Vec<Complex64>,
}

/// `x` coordinate of half-step position `s`.
#[inline]
pub fn half_step_x(grid: &PhaseGrid, s: usize) -> f64 {
    grid.x_min + 0.5 * grid.dx() + 0.5 * s as f64 * grid.dx()
}

impl RefinedSymbol {
    #[inline]
    pub fn n_s(&self) -> usize {
        2 * self.grid.n_x
    }

    #[inline]
    pub fn at(&self, s: usize, l: usize, r: usize, c: usize) -> Complex64 {
        self.values[((s * self.grid.n_xi + l) * self.dim + r) * self.dim + c]
    }

    pub fn from_real_fn(grid: PhaseGrid, a: impl Fn(f64, f64) -> f64) -> Result<Self> {
        Self::from_fn(grid, 1, |x, xi| DMatrix::from_element(1, 1, Complex64::new(a(x, xi), 0.0)))
    }

    pub fn from_fn(grid: PhaseGrid, dim: usize, a: impl Fn(f64, f64) -> CMat) -> Result<Self> {
        let n_s = 2 * grid.n_x;
        let mut values = Vec::with_capacity(n_s * grid.n_xi * dim * dim);
        for s in 0..n_s {
            let x = half_step_x(&grid, s);
            for l in 0..grid.n_xi {
                let m = a(x, grid.xi(l));
                if m.shape() != (dim, dim) {
                    return Err(Error::ShapeMismatch("symbol block has wrong shape".into()));
                }
                for r in 0..dim {
                    for c in 0..dim {
                        let z = m[(r, c)];
                        if !(z.re.is_finite() && z.im.is_finite()) {
                            return Err(Error::NonFinite { t: 0, x: s, xi: l, value: z.re });
                        }
                        values.push(z);
                    }
                }
            }
        }
        Ok(Self { grid, dim, values })
    }

    /// From node samples (`node = j·n_xi + k`): even half-steps are nodes, odd
    /// ones average the two neighbouring columns (periodically).
    pub fn from_nodes(grid: PhaseGrid, dim: usize, nodes: &[Complex64]) -> Result<Self> {
        let bs = dim * dim;
        if nodes.len() != grid.nodes() * bs {
            return Err(Error::ShapeMismatch("node samples do not match grid".into()));
        }
        let n = grid.n_x;
        let mut values = vec![Complex64::new(0.0, 0.0); 2 * n * grid.n_xi * bs];
        for s in 0..2 * n {
            let (j0, j1) = (s / 2, (s / 2 + s % 2) % n);
            for l in 0..grid.n_xi {
                for e in 0..bs {
                    let a = nodes[grid.node(j0, l) * bs + e];
                    let b = nodes[grid.node(j1, l) * bs + e];
                    values[(s * grid.n_xi + l) * bs + e] = (a + b) * 0.5;
                }
            }
        }
        Ok(Self { grid, dim, values })
    }

    pub fn from_real_nodes(grid: PhaseGrid, nodes: &[f64]) -> Result<Self> {
        let z: Vec<Complex64> = nodes.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Self::from_nodes(grid, 1, &z)
    }

    /// Pointwise product (matrix product for systems).
    pub fn product(&self, other: &RefinedSymbol) -> Result<Self> {
        if self.grid != other.grid || self.dim != other.dim {
            return Err(Error::ShapeMismatch("symbols on different grids".into()));
        }
        let n = self.dim;
        let bs = n * n;
        let mut values = vec![Complex64::new(0.0, 0.0); self.values.len()];
        for p in 0..self.values.len() / bs {
            for r in 0..n {
                for c in 0..n {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for q in 0..n {
                        acc += self.values[p * bs + r * n + q] * other.values[p * bs + q * n + c];
                    }
                    values[p * bs + r * n + c] = acc;
                }
            }
        }
        Ok(Self { grid: self.grid, dim: n, values })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m: f64, z| m.max(z.norm()))
    }
}

/// Midpoint half-step indices and weights for the pair `(j, k)`.
#[inline]
fn midpoints(j: usize, k: usize, n: usize) -> [(usize, f64); 2] {
    let d = j.abs_diff(k);
    let direct = j + k;
    let wrapped = (j + k + n) % (2 * n);
    match (2 * d).cmp(&n) {
        std::cmp::Ordering::Less => [(direct, 1.0), (direct, 0.0)],
        std::cmp::Ordering::Greater => [(wrapped, 1.0), (wrapped, 0.0)],
        std::cmp::Ordering::Equal => [(direct, 0.5), (wrapped, 0.5)],
    }
}

/// Assembles `a^w`.
pub fn weyl_quantize(symbol: &RefinedSymbol) -> OperatorMatrix {
    weyl_quantize_with(Exec::default(), symbol)
}

pub fn weyl_quantize_with(exec: Exec, symbol: &RefinedSymbol) -> OperatorMatrix {
    let grid = symbol.grid;
    let (n, n_xi, dim) = (grid.n_x, grid.n_xi, symbol.dim);
    let scale = grid.dx() * grid.dxi() / (2.0 * PI);
    // phase[(d + n − 1)·n_xi + l] = scale · e^{i d dx ξ_l}
    let phase: Vec<Complex64> = (0..2 * n - 1)
        .flat_map(|di| {
            let d = di as f64 - (n as f64 - 1.0);
            (0..n_xi).map(move |l| Complex64::from_polar(scale, d * grid.dx() * grid.xi(l)))
        })
        .collect();
    let rows = exec.map(n, |j| {
        let mut row = vec![Complex64::new(0.0, 0.0); n * dim * dim];
        for k in 0..n {
            let ph = &phase[(j + n - 1 - k) * n_xi..(j + n - k) * n_xi];
            for (s, w) in midpoints(j, k, n) {
                if w == 0.0 {
                    continue;
                }
                for r in 0..dim {
                    for c in 0..dim {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for l in 0..n_xi {
                            acc += symbol.at(s, l, r, c) * ph[l];
                        }
                        row[(k * dim + r) * dim + c] += acc * w;
                    }
                }
            }
        }
        row
    });
    let size = n * dim;
    let mut entries = CMat::zeros(size, size);
    for (j, row) in rows.into_iter().enumerate() {
        for k in 0..n {
            for r in 0..dim {
                for c in 0..dim {
                    entries[(r * n + j, c * n + k)] = row[(k * dim + r) * dim + c];
                }
            }
        }
    }
    OperatorMatrix { grid, sys_dim: dim, entries, label: "weyl".into(), warnings: Vec::new() }
}

/// Sum of `e^{−(u + pL)²}` over periodic images.
fn periodic_gauss(u: f64, period: f64) -> f64 {
    let images = (6.0 / period).ceil() as i64 + 1;
    (-images..=images)
        .map(|p| (-(u + p as f64 * period).powi(2)).exp())
        .sum()
}

/// Result of [`gaussian_regularize`].
#[derive(Debug, Clone)]
pub struct Regularized {
    pub symbol: RefinedSymbol,
    /// `max_z |a(z)| · (share of its Gaussian outside the window)`.
    pub tail_mass: f64,
    /// `|total discrete Gaussian mass − 1|`.
    pub mass_deviation: f64,
}

/// Tail mass above which a warning is attached to Wick matrices, relative to `max|a|`.
pub const TAIL_WARN: f64 = 1e-6;

/// `a₀` at half-step `x` positions and `ξ` nodes, from node samples.
pub fn gaussian_regularize(grid: PhaseGrid, dim: usize, nodes: &[Complex64]) -> Result<Regularized> {
    let bs = dim * dim;
    if nodes.len() != grid.nodes() * bs {
        return Err(Error::ShapeMismatch("node samples do not match grid".into()));
    }
    let (n, n_xi) = (grid.n_x, grid.n_xi);
    let (lx, lxi) = (grid.x_len(), grid.xi_len());
    let gx = DMatrix::from_fn(2 * n, n, |s, j| periodic_gauss(half_step_x(&grid, s) - grid.x(j), lx));
    let gxi = DMatrix::from_fn(n_xi, n_xi, |l, k| periodic_gauss(grid.xi(l) - grid.xi(k), lxi));
    let norm = grid.dx() * grid.dxi() / PI;

    let mut values = vec![Complex64::new(0.0, 0.0); 2 * n * n_xi * bs];
    for e in 0..bs {
        let a_re = DMatrix::from_fn(n, n_xi, |j, k| nodes[grid.node(j, k) * bs + e].re);
        let a_im = DMatrix::from_fn(n, n_xi, |j, k| nodes[grid.node(j, k) * bs + e].im);
        let out_re = &gx * a_re * gxi.transpose() * norm;
        let out_im = &gx * a_im * gxi.transpose() * norm;
        for s in 0..2 * n {
            for l in 0..n_xi {
                values[(s * n_xi + l) * bs + e] = Complex64::new(out_re[(s, l)], out_im[(s, l)]);
            }
        }
    }

    // share of each node's Gaussian that falls outside the window
    let inner = |centre: f64, n: usize, at: &dyn Fn(usize) -> f64, period: f64| {
        let direct: f64 = (0..n).map(|j| (-(at(j) - centre).powi(2)).exp()).sum();
        let all: f64 = (0..n).map(|j| periodic_gauss(at(j) - centre, period)).sum();
        direct / all
    };
    let ix: Vec<f64> = (0..n).map(|j| inner(grid.x(j), n, &|q| grid.x(q), lx)).collect();
    let ixi: Vec<f64> = (0..n_xi).map(|k| inner(grid.xi(k), n_xi, &|q| grid.xi(q), lxi)).collect();
    let mut tail = 0.0_f64;
    for j in 0..n {
        for k in 0..n_xi {
            let amp = (0..bs).fold(0.0_f64, |m, e| m.max(nodes[grid.node(j, k) * bs + e].norm()));
            tail = tail.max(amp * (1.0 - ix[j] * ixi[k]));
        }
    }
    let mx: f64 = (0..n).map(|j| periodic_gauss(grid.x(0) - grid.x(j), lx)).sum::<f64>() * grid.dx();
    let mxi: f64 = (0..n_xi).map(|k| periodic_gauss(grid.xi(0) - grid.xi(k), lxi)).sum::<f64>() * grid.dxi();
    let mass_deviation = (mx * mxi / PI - 1.0).abs();

    Ok(Regularized { symbol: RefinedSymbol { grid, dim, values }, tail_mass: tail, mass_deviation })
}

/// Node-valued regularisation of a real scalar slice (for field-level checks).
pub fn gaussian_regularize_nodes(grid: PhaseGrid, nodes: &[f64]) -> Vec<f64> {
    let (n, n_xi) = (grid.n_x, grid.n_xi);
    let gx = DMatrix::from_fn(n, n, |i, j| periodic_gauss(grid.x(i) - grid.x(j), grid.x_len()));
    let gxi = DMatrix::from_fn(n_xi, n_xi, |l, k| periodic_gauss(grid.xi(l) - grid.xi(k), grid.xi_len()));
    let a = DMatrix::from_fn(n, n_xi, |j, k| nodes[grid.node(j, k)]);
    let out = &gx * a * gxi.transpose() * (grid.dx() * grid.dxi() / PI);
    (0..grid.nodes()).map(|p| out[(p / n_xi, p % n_xi)]).collect()
}

/// `a^{Wick}` from node samples of an `N × N` symbol.
pub fn wick_quantize(grid: PhaseGrid, dim: usize, nodes: &[Complex64]) -> Result<OperatorMatrix> {
    let reg = gaussian_regularize(grid, dim, nodes)?;
    let mut op = weyl_quantize(&reg.symbol);
    op.label = "wick".into();
    let amp = nodes.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    if reg.tail_mass > TAIL_WARN * amp.max(f64::MIN_POSITIVE) {
        op.warnings.push(format!("gaussian tail mass {:.3e} outside window", reg.tail_mass));
        op.label.push_str(" [tail]");
    }
    Ok(op)
}

pub fn wick_quantize_real(grid: PhaseGrid, nodes: &[f64]) -> Result<OperatorMatrix> {
    let z: Vec<Complex64> = nodes.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    wick_quantize(grid, 1, &z)
}

/// Direct superposition of coherent-state projections over the lattice nodes.
#[derive(Debug, Clone, Copy)]
pub struct CoherentFrame {
    pub grid: PhaseGrid,
}

impl CoherentFrame {
    pub fn new(grid: PhaseGrid) -> Self {
        Self { grid }
    }

    /// `dy · dη`.
    pub fn weight(&self) -> f64 {
        self.grid.dx() * self.grid.dxi()
    }

    /// Coherent state centred at `(y, η)`, summed over its translates by the
    /// window length so it lives on the same periodic lattice as the Weyl
    /// kernel: `π^{-1/4} Σ_q e^{−(x_j − y − qL)²/2} e^{iηx_j}`.
    pub fn state(&self, y: f64, eta: f64) -> CVec {
        let g = &self.grid;
        let period = g.x_len();
        let images = (12.0 / period).ceil() as i64 + 1;
        CVec::from_fn(g.n_x, |j, _| {
            let x = g.x(j);
            (-images..=images)
                .map(|q| {
                    let s = x - q as f64 * period;
                    Complex64::from_polar(PI.powf(-0.25) * (-(s - y).powi(2) / 2.0).exp(), eta * x)
                })
                .sum()
        })
    }

    /// `Σ_z a(z) (dy dη dx / 2π) |φ_z⟩⟨φ_z|` for a real scalar symbol.
    pub fn quantize(&self, nodes: &[f64]) -> Result<OperatorMatrix> {
        let g = self.grid;
        if nodes.len() != g.nodes() {
            return Err(Error::ShapeMismatch("node samples do not match grid".into()));
        }
        let n = g.n_x;
        let scale = self.weight() * g.dx() / (2.0 * PI);
        let per_y = Exec::default().map(n, |yj| {
            let mut acc = CMat::zeros(n, n);
            for k in 0..g.n_xi {
                let a = nodes[g.node(yj, k)];
                if a == 0.0 {
                    continue;
                }
                let phi = self.state(g.x(yj), g.xi(k));
                acc += (&phi * phi.adjoint()) * Complex64::new(a * scale, 0.0);
            }
            acc
        });
        let entries = per_y.into_iter().fold(CMat::zeros(n, n), |acc, m| acc + m);
        let mut op = OperatorMatrix::new(g, 1, entries, "coherent-frame")?;
        op.warnings.clear();
        Ok(op)
    }

    /// The frame operator (`a ≡ 1`) and `max |F − I|` over the interior rows
    /// whose Gaussian fits `margin` standard widths inside the window.
    pub fn frame_deviation(&self, margin: f64) -> Result<f64> {
        let g = self.grid;
        let f = self.quantize(&vec![1.0; g.nodes()])?;
        let mut worst = 0.0_f64;
        for j in 0..g.n_x {
            if g.x(j) - g.x_min < margin || g.x_max - g.x(j) < margin {
                continue;
            }
            for k in 0..g.n_x {
                let want = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((f.entries[(j, k)] - want).norm());
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompositionReport {
    pub residual: f64,
    pub predicted_scale: f64,
    pub ratio: f64,
}

/// `‖a^w b^w − (ab)^w‖` against a caller-supplied scale.
pub fn composition_residual(
    a: &RefinedSymbol,
    b: &RefinedSymbol,
    predicted_scale: f64,
) -> Result<CompositionReport> {
    let ab = a.product(b)?;
    let lhs = &weyl_quantize(a).entries * &weyl_quantize(b).entries;
    let residual = linalg::spectral_norm(&(lhs - weyl_quantize(&ab).entries));
    Ok(CompositionReport { residual, predicted_scale, ratio: residual / predicted_scale })
}

/// Normalised Gaussian `π^{-1/4} e^{−(x − x₀)²/2} e^{i k x}` with unit discrete norm.
pub fn gaussian_vector(grid: &PhaseGrid, x0: f64, k: f64, width: f64) -> CVec {
    let v = CVec::from_fn(grid.n_x, |j, _| {
        let x = grid.x(j);
        Complex64::from_polar((-(x - x0).powi(2) / (2.0 * width * width)).exp(), k * x)
    });
    let nrm = (v.norm_squared() * grid.dx()).sqrt();
    v / Complex64::new(nrm, 0.0)
}
