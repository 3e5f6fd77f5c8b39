//! Time and phase-space lattices, sampled fields and finite differences in `w = (x, ξ)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Cell-centred lattice over `[x_min, x_max] × [xi_min, xi_max]` with the flat
/// metric `g♯(w) = |w|²` and semiclassical parameter `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub xi_min: f64,
    pub xi_max: f64,
    pub n_xi: usize,
    pub h: f64,
    dx: f64,
    dxi: f64,
}

impl PhaseGrid {
    pub fn new(
        (x_min, x_max, n_x): (f64, f64, usize),
        (xi_min, xi_max, n_xi): (f64, f64, usize),
        h: f64,
    ) -> Result<Self> {
        if n_x < 2 || n_xi < 2 {
            return Err(Error::InvalidGrid(format!("need n_x, n_xi >= 2, got {n_x}x{n_xi}")));
        }
        if !(x_max > x_min) || !(xi_max > xi_min) {
            return Err(Error::InvalidGrid("empty window".into()));
        }
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::InvalidGrid(format!("h must lie in (0, 1], got {h}")));
        }
        let dx = (x_max - x_min) / n_x as f64;
        let dxi = (xi_max - xi_min) / n_xi as f64;
        Ok(Self { x_min, x_max, n_x, xi_min, xi_max, n_xi, h, dx, dxi })
    }

    /// Square `n × n` lattice centred at the origin with `dx·dξ·n = 2π`, so that
    /// the ξ-sum in the Weyl kernel is an exact discrete Fourier transform.
    /// `aspect` is the ratio of window lengths `L_x / L_ξ`.
    pub fn dft(n: usize, aspect: f64, h: f64) -> Result<Self> {
        if !(aspect > 0.0) {
            return Err(Error::InvalidGrid("aspect must be positive".into()));
        }
        let l_xi = (2.0 * PI * n as f64 / aspect).sqrt();
        let l_x = aspect * l_xi;
        Self::new((-l_x / 2.0, l_x / 2.0, n), (-l_xi / 2.0, l_xi / 2.0, n), h)
    }

    /// DFT-compatible `n × n` lattice with position window length `l_x`.
    pub fn dft_window(n: usize, l_x: f64, h: f64) -> Result<Self> {
        Self::dft(n, l_x * l_x / (2.0 * PI * n as f64), h)
    }

    pub fn with_h(mut self, h: f64) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::InvalidGrid(format!("h must lie in (0, 1], got {h}")));
        }
        self.h = h;
        Ok(self)
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.dx
    }

    #[inline]
    pub fn dxi(&self) -> f64 {
        self.dxi
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        self.x_min + (j as f64 + 0.5) * self.dx
    }

    #[inline]
    pub fn xi(&self, k: usize) -> f64 {
        self.xi_min + (k as f64 + 0.5) * self.dxi
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.n_x * self.n_xi
    }

    /// Flat node index `j·n_xi + k`.
    #[inline]
    pub fn node(&self, j: usize, k: usize) -> usize {
        j * self.n_xi + k
    }

    #[inline]
    pub fn coords(&self, node: usize) -> (f64, f64) {
        (self.x(node / self.n_xi), self.xi(node % self.n_xi))
    }

    pub fn x_len(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn xi_len(&self) -> f64 {
        self.xi_max - self.xi_min
    }

    /// `n_x = n_xi` and `dx·dξ·n = 2π` to relative 1e-9.
    pub fn is_dft_compatible(&self) -> bool {
        self.n_x == self.n_xi
            && ((self.dx * self.dxi * self.n_x as f64) / (2.0 * PI) - 1.0).abs() < 1e-9
    }

    /// Euclidean (g♯) distance between two nodes.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (xa, ea) = self.coords(a);
        let (xb, eb) = self.coords(b);
        ((xa - xb).powi(2) + (ea - eb).powi(2)).sqrt()
    }
}

/// Uniform node-based time grid `t_i = t_min + i·dt`, with the support
/// half-width `T` used by the multiplier estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct TimeGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
    #[serde(rename = "T")]
    pub T: f64,
    dt: f64,
}

#[allow(non_snake_case)]
impl TimeGrid {
    pub fn new(t_min: f64, t_max: f64, n_t: usize, T: f64) -> Result<Self> {
        if n_t < 3 {
            return Err(Error::InvalidGrid(format!("need n_t >= 3, got {n_t}")));
        }
        if !(T > 0.0) {
            return Err(Error::InvalidGrid(format!("T must be positive, got {T}")));
        }
        let slack = 1e-12 * (1.0 + T);
        if !(t_min <= -T + slack && T <= t_max + slack) {
            return Err(Error::InvalidGrid(format!(
                "need t_min <= -T < T <= t_max, got [{t_min}, {t_max}] with T = {T}"
            )));
        }
        let dt = (t_max - t_min) / (n_t - 1) as f64;
        Ok(Self { t_min, t_max, n_t, T, dt })
    }

    /// Grid spanning exactly `[-T, T]`.
    pub fn symmetric(T: f64, n_t: usize) -> Result<Self> {
        Self::new(-T, T, n_t, T)
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn t(&self, i: usize) -> f64 {
        self.t_min + i as f64 * self.dt
    }

    /// Trapezoid weights on the nodes.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = vec![self.dt; self.n_t];
        w[0] *= 0.5;
        w[self.n_t - 1] *= 0.5;
        w
    }
}

/// Real samples `f(t_i, x_j, ξ_k)`, indexed `(i·n_x + j)·n_xi + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: PhaseGrid,
    pub time: TimeGrid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(grid: PhaseGrid, time: TimeGrid, values: Vec<f64>) -> Result<Self> {
        let expected = time.n_t * grid.nodes();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            let (t, x, xi) = split_index(&grid, p);
            return Err(Error::NonFinite { t, x, xi, value: values[p] });
        }
        Ok(Self { grid, time, values })
    }

    pub fn constant(grid: PhaseGrid, time: TimeGrid, c: f64) -> Self {
        Self { grid, time, values: vec![c; time.n_t * grid.nodes()] }
    }

    /// Same grid, new values (length already known to match).
    pub(crate) fn like(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self { grid: self.grid, time: self.time, values }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.grid.n_x + j) * self.grid.n_xi + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    /// The `(x, ξ)` slice at time index `i`, indexed by node.
    pub fn slice(&self, i: usize) -> &[f64] {
        let g = self.grid.nodes();
        &self.values[i * g..(i + 1) * g]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Value at `(t_i, node)`.
    #[inline]
    pub fn at(&self, i: usize, node: usize) -> f64 {
        self.values[i * self.grid.nodes() + node]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.like(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.values.len() != other.values.len() {
            return Err(Error::ShapeMismatch("zip of fields on different grids".into()));
        }
        Ok(self.like(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }
}

fn split_index(grid: &PhaseGrid, p: usize) -> (usize, usize, usize) {
    let k = p % grid.n_xi;
    let j = (p / grid.n_xi) % grid.n_x;
    let i = p / (grid.n_xi * grid.n_x);
    (i, j, k)
}

/// `N × N` complex samples `P(t_i, x_j, ξ_k)`, row-major blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    pub grid: PhaseGrid,
    pub time: TimeGrid,
    pub dim: usize,
    pub values: Vec<Complex64>,
}

impl MatrixField {
    pub fn from_values(
        grid: PhaseGrid,
        time: TimeGrid,
        dim: usize,
        values: Vec<Complex64>,
    ) -> Result<Self> {
        let expected = time.n_t * grid.nodes() * dim * dim;
        if dim == 0 || values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} entries for N = {dim}, got {}",
                values.len()
            )));
        }
        if let Some(p) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            let (t, x, xi) = split_index(&grid, p / (dim * dim));
            return Err(Error::NonFinite { t, x, xi, value: f64::NAN });
        }
        Ok(Self { grid, time, dim, values })
    }

    /// The `N × N` block at `(t_i, x_j, ξ_k)`.
    pub fn block(&self, i: usize, j: usize, k: usize) -> DMatrix<Complex64> {
        let n = self.dim;
        let start = ((i * self.grid.n_x + j) * self.grid.n_xi + k) * n * n;
        DMatrix::from_row_slice(n, n, &self.values[start..start + n * n])
    }
}

/// Samples `callback(t_i, x_j, ξ_k)` at cell centres.
pub fn sample_scalar<F>(callback: F, time: TimeGrid, grid: PhaseGrid) -> Result<ScalarField>
where
    F: Fn(f64, f64, f64) -> f64 + Sync + Send,
{
    sample_scalar_with(Exec::default(), callback, time, grid)
}

pub fn sample_scalar_with<F>(
    exec: Exec,
    callback: F,
    time: TimeGrid,
    grid: PhaseGrid,
) -> Result<ScalarField>
where
    F: Fn(f64, f64, f64) -> f64 + Sync + Send,
{
    let g = grid.nodes();
    let mut values = vec![0.0; time.n_t * g];
    exec.for_each_chunk(&mut values, g, |i, slice| {
        let t = time.t(i);
        for (node, v) in slice.iter_mut().enumerate() {
            let (x, xi) = grid.coords(node);
            *v = callback(t, x, xi);
        }
    });
    ScalarField::from_values(grid, time, values)
}

/// Samples an `N × N` matrix symbol; `callback` returns the row-major block.
pub fn sample_matrix<F>(callback: F, dim: usize, time: TimeGrid, grid: PhaseGrid) -> Result<MatrixField>
where
    F: Fn(f64, f64, f64) -> DMatrix<Complex64> + Sync + Send,
{
    let g = grid.nodes();
    let bs = dim * dim;
    let mut values = vec![Complex64::new(0.0, 0.0); time.n_t * g * bs];
    Exec::default().for_each_chunk(&mut values, g * bs, |i, slice| {
        let t = time.t(i);
        for node in 0..g {
            let (x, xi) = grid.coords(node);
            let m = callback(t, x, xi);
            assert_eq!(m.shape(), (dim, dim), "matrix symbol returned wrong shape");
            for r in 0..dim {
                for c in 0..dim {
                    slice[node * bs + r * dim + c] = m[(r, c)];
                }
            }
        }
    });
    MatrixField::from_values(grid, time, dim, values)
}

/// First derivative along a strided line: central in the interior,
/// second-order one-sided at the ends.
fn d1_line(src: &[f64], stride: usize, n: usize, h: f64, out: &mut [f64]) {
    let v = |i: usize| src[i * stride];
    for i in 0..n {
        out[i * stride] = if i == 0 {
            (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * v(n - 1) - 4.0 * v(n - 2) + v(n - 3)) / (2.0 * h)
        } else {
            (v(i + 1) - v(i - 1)) / (2.0 * h)
        };
    }
}

/// Second derivative along a strided line, second order everywhere.
fn d2_line(src: &[f64], stride: usize, n: usize, h: f64, out: &mut [f64]) {
    let v = |i: usize| src[i * stride];
    let h2 = h * h;
    for i in 0..n {
        out[i * stride] = if i == 0 {
            (2.0 * v(0) - 5.0 * v(1) + 4.0 * v(2) - v(3)) / h2
        } else if i == n - 1 {
            (2.0 * v(n - 1) - 5.0 * v(n - 2) + 4.0 * v(n - 3) - v(n - 4)) / h2
        } else {
            (v(i + 1) - 2.0 * v(i) + v(i - 1)) / h2
        };
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Xi,
}

fn slice_derivative(
    grid: &PhaseGrid,
    src: &[f64],
    axis: Axis,
    second: bool,
    out: &mut [f64],
) {
    let (n_x, n_xi) = (grid.n_x, grid.n_xi);
    match axis {
        Axis::X => {
            for k in 0..n_xi {
                let (s, o) = (&src[k..], &mut out[k..]);
                if second {
                    d2_line(s, n_xi, n_x, grid.dx(), o);
                } else {
                    d1_line(s, n_xi, n_x, grid.dx(), o);
                }
            }
        }
        Axis::Xi => {
            for j in 0..n_x {
                let r = j * n_xi..(j + 1) * n_xi;
                if second {
                    d2_line(&src[r.clone()], 1, n_xi, grid.dxi(), &mut out[r]);
                } else {
                    d1_line(&src[r.clone()], 1, n_xi, grid.dxi(), &mut out[r]);
                }
            }
        }
    }
}

/// Gradient `(∂_x f, ∂_ξ f)` at every node.
pub fn gradient(field: &ScalarField) -> Result<Vec<[f64; 2]>> {
    let g = &field.grid;
    let needed = 3;
    if g.n_x.min(g.n_xi) < needed {
        return Err(Error::StencilTooSmall { needed, got: g.n_x.min(g.n_xi) });
    }
    let nodes = g.nodes();
    let per_slice = Exec::default().map(field.time.n_t, |i| {
        let src = field.slice(i);
        let mut fx = vec![0.0; nodes];
        let mut fxi = vec![0.0; nodes];
        slice_derivative(g, src, Axis::X, false, &mut fx);
        slice_derivative(g, src, Axis::Xi, false, &mut fxi);
        fx.into_iter().zip(fxi).map(|(a, b)| [a, b]).collect::<Vec<_>>()
    });
    Ok(per_slice.concat())
}

/// Hessian `(f_xx, f_xξ, f_ξξ)` at every node.
pub fn hessian(field: &ScalarField) -> Result<Vec<[f64; 3]>> {
    let g = &field.grid;
    let needed = 5;
    if g.n_x.min(g.n_xi) < needed {
        return Err(Error::StencilTooSmall { needed, got: g.n_x.min(g.n_xi) });
    }
    let nodes = g.nodes();
    let per_slice = Exec::default().map(field.time.n_t, |i| {
        let src = field.slice(i);
        let mut fxx = vec![0.0; nodes];
        let mut fee = vec![0.0; nodes];
        let mut fx = vec![0.0; nodes];
        let mut fxe = vec![0.0; nodes];
        slice_derivative(g, src, Axis::X, true, &mut fxx);
        slice_derivative(g, src, Axis::Xi, true, &mut fee);
        slice_derivative(g, src, Axis::X, false, &mut fx);
        slice_derivative(g, &fx, Axis::Xi, false, &mut fxe);
        (0..nodes).map(|p| [fxx[p], fxe[p], fee[p]]).collect::<Vec<_>>()
    });
    Ok(per_slice.concat())
}

/// `|f′|` (Euclidean) and `|f″|` (Frobenius) as scalar fields.
#[derive(Debug, Clone)]
pub struct DerivativeNorms {
    pub first: ScalarField,
    pub second: ScalarField,
}

impl DerivativeNorms {
    pub fn of(field: &ScalarField) -> Result<Self> {
        let grad = gradient(field)?;
        let hess = hessian(field)?;
        let first = field.like(grad.iter().map(|[a, b]| a.hypot(*b)).collect());
        let second = field.like(
            hess.iter()
                .map(|[a, b, c]| (a * a + 2.0 * b * b + c * c).sqrt())
                .collect(),
        );
        Ok(Self { first, second })
    }

    /// `max|f′|·h^{1/2}`; the weight bounds assume this is at most 1.
    pub fn normalisation(&self) -> f64 {
        self.first.max_abs() * self.first.grid.h.sqrt()
    }
}

/// Which derivative [`diff_w`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOrder {
    First,
    Second,
}

/// Norm of the first or second `w`-derivative as a scalar field.
pub fn diff_w(field: &ScalarField, order: DiffOrder) -> Result<ScalarField> {
    match order {
        DiffOrder::First => {
            let grad = gradient(field)?;
            Ok(field.like(grad.iter().map(|[a, b]| a.hypot(*b)).collect()))
        }
        DiffOrder::Second => {
            let hess = hessian(field)?;
            Ok(field.like(
                hess.iter()
                    .map(|[a, b, c]| (a * a + 2.0 * b * b + c * c).sqrt())
                    .collect(),
            ))
        }
    }
}
