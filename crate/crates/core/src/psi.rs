//! Sign partition `X₊ / X₋ / X₀`, the signed distance `δ₀`, the time-sliced
//! sign-change check, and a Hamilton-flow tracer for complex symbols.
//!
//! # Signed distance on a lattice
//!
//! The sign-change set of a slice is taken to be the zero-labelled nodes
//! together with the midpoints of neighbouring (8-neighbourhood) `+`/`−`
//! pairs, so a zero of `f` that falls between cell centres is still seen.
//! For a node labelled `±1`
//!
//! ```text
//! δ₀(w) = sgn · min(dist(w, sign-change set), h^{-1/2})
//! ```
//!
//! followed by a running minimum of `|δ₀|` in time (backward for `+` nodes,
//! forward for `−` nodes), which makes `δ₀` non-decreasing in `t` since the
//! `+` labels only grow and the `−` labels only shrink. Within a slice the
//! field is exactly 1-Lipschitz between same-sign nodes (a distance function)
//! and between neighbouring opposite-sign nodes (their midpoint is in the
//! set); distant opposite-sign pairs can exceed 1 by a grid-size amount. The
//! envelope only shrinks magnitudes, so it keeps these bounds.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grid::{PhaseGrid, ScalarField};

/// `1e-12 · max|f|`, the default threshold for "strictly positive".
pub fn default_tau_zero(f: &ScalarField) -> f64 {
    1e-12 * f.max_abs()
}

/// A node eligible for both `+1` and `−1`, or a `+ → −` change in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub x: f64,
    pub xi: f64,
    pub witness: Witness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// A time at or before `t` where `f > τ`.
    pub s_plus: f64,
    /// A time at or after `t` where `f < −τ`.
    pub s_minus: f64,
}

#[derive(Debug, Clone)]
pub struct SignPartition {
    pub grid: PhaseGrid,
    pub time: crate::grid::TimeGrid,
    pub tau_zero: f64,
    /// `+1 / −1 / 0`, indexed like [`ScalarField::values`]. Nodes eligible for
    /// both signs carry 0 and are listed in `violations`.
    pub labels: Vec<i8>,
    pub violations: Vec<Violation>,
}

impl SignPartition {
    #[inline]
    pub fn label(&self, i: usize, node: usize) -> i8 {
        self.labels[i * self.grid.nodes() + node]
    }

    pub fn slice(&self, i: usize) -> &[i8] {
        let g = self.grid.nodes();
        &self.labels[i * g..(i + 1) * g]
    }

    /// Errors with the first witness if any node was doubly eligible.
    pub fn require_consistent(&self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::Violation(format!(
                "{} nodes eligible for both signs, first at t={}, x={}, xi={} (s+={}, s-={})",
                self.violations.len(),
                v.t,
                v.x,
                v.xi,
                v.witness.s_plus,
                v.witness.s_minus
            ))),
        }
    }
}

/// Labels by running maxima of `[f > τ]` forward in `t` and `[f < −τ]` backward.
pub fn sign_partition(f: &ScalarField, tau_zero: f64) -> SignPartition {
    let grid = f.grid;
    let time = f.time;
    let g = grid.nodes();
    let n_t = time.n_t;

    // per node: (labels along t, violations)
    let per_node = Exec::default().map(g, |node| {
        // first time index with f > τ at or before i, last index with f < −τ at or after i
        let mut first_pos: Option<usize> = None;
        let mut plus_from = vec![None; n_t];
        for (i, slot) in plus_from.iter_mut().enumerate() {
            if first_pos.is_none() && f.at(i, node) > tau_zero {
                first_pos = Some(i);
            }
            *slot = first_pos;
        }
        let mut last_neg: Option<usize> = None;
        let mut minus_until = vec![None; n_t];
        for i in (0..n_t).rev() {
            if last_neg.is_none() && f.at(i, node) < -tau_zero {
                last_neg = Some(i);
            }
            minus_until[i] = last_neg;
        }
        let mut labels = vec![0i8; n_t];
        let mut viol = Vec::new();
        for i in 0..n_t {
            labels[i] = match (plus_from[i], minus_until[i]) {
                (Some(sp), Some(sm)) => {
                    let (x, xi) = grid.coords(node);
                    viol.push((
                        i,
                        Violation {
                            t: time.t(i),
                            x,
                            xi,
                            witness: Witness { s_plus: time.t(sp), s_minus: time.t(sm) },
                        },
                    ));
                    0
                }
                (Some(_), None) => 1,
                (None, Some(_)) => -1,
                (None, None) => 0,
            };
        }
        (labels, viol)
    });

    let mut labels = vec![0i8; n_t * g];
    let mut tagged = Vec::new();
    for (node, (l, v)) in per_node.into_iter().enumerate() {
        for (i, &lab) in l.iter().enumerate() {
            labels[i * g + node] = lab;
        }
        tagged.extend(v.into_iter().map(|(i, viol)| (i, node, viol)));
    }
    tagged.sort_by_key(|&(i, node, _)| (i, node));
    let violations = tagged.into_iter().map(|(_, _, v)| v).collect();
    SignPartition { grid, time, tau_zero, labels, violations }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsiBarReport {
    pub holds: bool,
    pub tau_zero: f64,
    /// Number of `w` nodes with at least one violation.
    pub violating_nodes: usize,
    /// One record per violating node: the first positive time and the first
    /// later negative time.
    pub violations: Vec<Violation>,
}

/// Scans each `w` forward in time: once `f > τ` has been seen, a later
/// `f < −τ` is a violation.
pub fn check_psibar(f: &ScalarField, tau_zero: f64) -> PsiBarReport {
    let grid = f.grid;
    let time = f.time;
    let found = Exec::default().map(grid.nodes(), |node| {
        let mut first_pos = None;
        for i in 0..time.n_t {
            let v = f.at(i, node);
            match first_pos {
                None if v > tau_zero => first_pos = Some(i),
                Some(p) if v < -tau_zero => {
                    let (x, xi) = grid.coords(node);
                    return Some(Violation {
                        t: time.t(p),
                        x,
                        xi,
                        witness: Witness { s_plus: time.t(p), s_minus: time.t(i) },
                    });
                }
                _ => {}
            }
        }
        None
    });
    let violations: Vec<Violation> = found.into_iter().flatten().collect();
    PsiBarReport {
        holds: violations.is_empty(),
        tau_zero,
        violating_nodes: violations.len(),
        violations,
    }
}

#[derive(Debug, Clone)]
pub struct SignedDistanceField {
    pub delta0: ScalarField,
    pub partition: SignPartition,
    pub h: f64,
}

/// For every lattice point and every row `j'`, the column distance to the
/// nearest member of a set in that row (`∞` when the row has none).
struct RowNearest {
    rows: usize,
    cols: usize,
    dx: f64,
    // [j' * cols + k] -> |ξ_k − ξ_{k*}| for the nearest member k* in row j'
    gap: Vec<f64>,
    any: bool,
}

impl RowNearest {
    fn build(rows: usize, cols: usize, (dx, dxi): (f64, f64), member: impl Fn(usize, usize) -> bool) -> Self {
        let mut gap = vec![f64::INFINITY; rows * cols];
        let mut any = false;
        for j in 0..rows {
            let row = &mut gap[j * cols..(j + 1) * cols];
            let mut last: Option<usize> = None;
            for k in 0..cols {
                if member(j, k) {
                    last = Some(k);
                    any = true;
                }
                if let Some(l) = last {
                    row[k] = (k - l) as f64 * dxi;
                }
            }
            last = None;
            for k in (0..cols).rev() {
                if member(j, k) {
                    last = Some(k);
                }
                if let Some(l) = last {
                    row[k] = row[k].min((l - k) as f64 * dxi);
                }
            }
        }
        Self { rows, cols, dx, gap, any }
    }

    /// Exact Euclidean distance from `(j, k)` to the set, or `∞` beyond `cap`.
    fn distance(&self, j: usize, k: usize, cap: f64) -> f64 {
        if !self.any {
            return f64::INFINITY;
        }
        let mut best = f64::INFINITY;
        // rows sorted by |j − j'|; stop once the row offset alone exceeds the best
        for off in 0..self.rows {
            let dxo = off as f64 * self.dx;
            if dxo >= best || dxo > cap {
                break;
            }
            let mut visit = |jj: usize| {
                let g = self.gap[jj * self.cols + k];
                if g.is_finite() {
                    best = best.min(dxo.hypot(g));
                }
            };
            if j >= off {
                visit(j - off);
            }
            if off > 0 && j + off < self.rows {
                visit(j + off);
            }
        }
        best
    }
}

/// Neighbour offsets covering each unordered 8-neighbour pair once.
const HALF_STAR: [(usize, isize); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];

/// Points of the sign-change set on the half-step lattice (`2n − 1` per axis):
/// zero-labelled nodes and midpoints of neighbouring `+`/`−` pairs.
fn boundary_points(grid: &PhaseGrid, labels: &[i8]) -> Vec<bool> {
    let (rows, cols) = (2 * grid.n_x - 1, 2 * grid.n_xi - 1);
    let mut mark = vec![false; rows * cols];
    for j in 0..grid.n_x {
        for k in 0..grid.n_xi {
            let s = labels[grid.node(j, k)];
            if s == 0 {
                mark[2 * j * cols + 2 * k] = true;
                continue;
            }
            for (dj, dk) in HALF_STAR {
                let (jj, kk) = (j + dj, k as isize + dk);
                if jj >= grid.n_x || kk < 0 || kk as usize >= grid.n_xi {
                    continue;
                }
                if labels[grid.node(jj, kk as usize)] == -s {
                    mark[(j + jj) * cols + (2 * k as isize + dk) as usize] = true;
                }
            }
        }
    }
    mark
}

/// Per-slice `|δ₀|` before the time envelope, signed by the label.
fn distance_slice(grid: &PhaseGrid, labels: &[i8], cap: f64) -> Vec<f64> {
    let (rows, cols) = (2 * grid.n_x - 1, 2 * grid.n_xi - 1);
    let mark = boundary_points(grid, labels);
    let near = RowNearest::build(rows, cols, (grid.dx() / 2.0, grid.dxi() / 2.0), |j, k| mark[j * cols + k]);
    let mut out = vec![0.0; grid.nodes()];
    for j in 0..grid.n_x {
        for k in 0..grid.n_xi {
            let node = grid.node(j, k);
            let s = labels[node];
            if s != 0 {
                out[node] = s as f64 * near.distance(2 * j, 2 * k, cap).min(cap);
            }
        }
    }
    out
}

/// Running minimum of `|δ₀|` in time: backward for `+` nodes, forward for
/// `−` nodes. Labels are an up-set / down-set in `t`, so each run stays
/// inside one sign.
fn time_envelope(values: &mut [f64], partition: &SignPartition) {
    let g = partition.grid.nodes();
    let n_t = partition.time.n_t;
    for node in 0..g {
        for i in (0..n_t.saturating_sub(1)).rev() {
            if partition.label(i, node) > 0 {
                values[i * g + node] = values[i * g + node].min(values[(i + 1) * g + node]);
            }
        }
        for i in 1..n_t {
            if partition.label(i, node) < 0 {
                values[i * g + node] = values[i * g + node].max(values[(i - 1) * g + node]);
            }
        }
    }
}

/// Builds `δ₀` slice by slice from the partition.
pub fn signed_distance(partition: &SignPartition) -> SignedDistanceField {
    signed_distance_with(Exec::default(), partition)
}

pub fn signed_distance_with(exec: Exec, partition: &SignPartition) -> SignedDistanceField {
    let grid = partition.grid;
    let h = grid.h;
    let cap = h.powf(-0.5);
    let g = grid.nodes();
    let mut values = vec![0.0; partition.time.n_t * g];
    exec.for_each_chunk(&mut values, g, |i, out| {
        out.copy_from_slice(&distance_slice(&grid, partition.slice(i), cap));
    });
    time_envelope(&mut values, partition);
    SignedDistanceField {
        delta0: ScalarField { grid, time: partition.time, values },
        partition: partition.clone(),
        h,
    }
}

/// O(G²) reference for [`signed_distance`].
pub fn signed_distance_brute(partition: &SignPartition) -> ScalarField {
    let grid = partition.grid;
    let cap = grid.h.powf(-0.5);
    let g = grid.nodes();
    let n_t = partition.time.n_t;
    let mut values = vec![0.0; n_t * g];
    for i in 0..n_t {
        let labels = partition.slice(i);
        let mut points: Vec<(f64, f64)> = Vec::new();
        for a in 0..g {
            let (xa, ea) = grid.coords(a);
            if labels[a] == 0 {
                points.push((xa, ea));
            }
            for b in 0..g {
                let (xb, eb) = grid.coords(b);
                let neighbours = (xa - xb).abs() < 1.5 * grid.dx() && (ea - eb).abs() < 1.5 * grid.dxi();
                if neighbours && labels[a] * labels[b] == -1 {
                    points.push(((xa + xb) / 2.0, (ea + eb) / 2.0));
                }
            }
        }
        for a in 0..g {
            let (xa, ea) = grid.coords(a);
            let d = points.iter().map(|&(x, e)| (xa - x).hypot(ea - e)).fold(cap, f64::min);
            values[i * g + a] = labels[a] as f64 * d;
        }
    }
    let snapshot = values.clone();
    for i in 0..n_t {
        for a in 0..g {
            let s = partition.label(i, a);
            let range = match s {
                1 => i..n_t,
                -1 => 0..i + 1,
                _ => continue,
            };
            let m = range.map(|r| snapshot[r * g + a].abs()).fold(f64::INFINITY, f64::min);
            values[i * g + a] = s as f64 * m;
        }
    }
    ScalarField { grid, time: partition.time, values }
}

impl SignedDistanceField {
    /// Convenience: partition with `τ` then distance.
    pub fn from_symbol(f: &ScalarField, tau_zero: f64) -> Self {
        signed_distance(&sign_partition(f, tau_zero))
    }

    /// Largest `|δ₀(w) − δ₀(z)| / |w − z|` over lattice neighbours (including
    /// diagonals) in every slice.
    pub fn lipschitz_neighbours(&self) -> f64 {
        lipschitz_neighbours(&self.delta0)
    }
}

/// Largest difference quotient over neighbouring nodes (8-neighbourhood).
pub fn lipschitz_neighbours(field: &ScalarField) -> f64 {
    let g = field.grid;
    let per = Exec::default().map(field.time.n_t, |i| {
        let mut best = 0.0_f64;
        for j in 0..g.n_x {
            for k in 0..g.n_xi {
                let a = g.node(j, k);
                for (dj, dk) in [(1usize, 0isize), (0, 1), (1, 1), (1, -1)] {
                    let jj = j + dj;
                    let kk = k as isize + dk;
                    if jj >= g.n_x || kk < 0 || kk as usize >= g.n_xi {
                        continue;
                    }
                    let b = g.node(jj, kk as usize);
                    let q = (field.at(i, a) - field.at(i, b)).abs() / g.distance(a, b);
                    best = best.max(q);
                }
            }
        }
        best
    });
    per.into_iter().fold(0.0, f64::max)
}

/// Largest difference quotient over all node pairs; O(G²) per slice.
pub fn lipschitz_all_pairs(field: &ScalarField) -> f64 {
    let g = field.grid;
    let n = g.nodes();
    let per = Exec::default().map(field.time.n_t, |i| {
        let mut best = 0.0_f64;
        for a in 0..n {
            for b in a + 1..n {
                let q = (field.at(i, a) - field.at(i, b)).abs() / g.distance(a, b);
                best = best.max(q);
            }
        }
        best
    });
    per.into_iter().fold(0.0, f64::max)
}

/// Grid slack for the neighbour Lipschitz check: `2·(dx + dξ)/min(dx, dξ)`.
pub fn eps_grid(grid: &PhaseGrid) -> f64 {
    2.0 * (grid.dx() + grid.dxi()) / grid.dx().min(grid.dxi())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    /// Ran for `max_steps`.
    Completed,
    /// Left the window.
    Exited,
    /// `|∇ Re q|` dropped below `ε_grad`.
    NotPrincipalType,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignEvent {
    pub step: usize,
    pub x: f64,
    pub xi: f64,
    /// Last value below `−τ` before the crossing.
    pub im_before: f64,
    pub im_after: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trace {
    pub path: Vec<[f64; 2]>,
    pub im: Vec<f64>,
    pub re: Vec<f64>,
    pub events: Vec<SignEvent>,
    pub status: TraceStatus,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceOptions {
    pub tau_char: f64,
    pub tau_zero: f64,
    pub eps_grad: f64,
    pub fd_step: f64,
    /// `[x_min, x_max, xi_min, xi_max]`.
    pub window: [f64; 4],
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            tau_char: 1e-6,
            tau_zero: 1e-12,
            eps_grad: 1e-8,
            fd_step: 1e-5,
            window: [-10.0, 10.0, -10.0, 10.0],
        }
    }
}

/// RK4 along `ẋ = ∂_ξ Re q`, `ξ̇ = −∂_x Re q`, recording `Im q` and every
/// `− → +` crossing of it.
pub fn trace_bicharacteristic<Q>(
    q: Q,
    start: (f64, f64),
    step: f64,
    max_steps: usize,
    opts: TraceOptions,
) -> Result<Trace>
where
    Q: Fn(f64, f64) -> Complex64,
{
    let e = opts.fd_step;
    let grad = |x: f64, xi: f64| {
        let dx = (q(x + e, xi).re - q(x - e, xi).re) / (2.0 * e);
        let dxi = (q(x, xi + e).re - q(x, xi - e).re) / (2.0 * e);
        (dx, dxi)
    };
    let field = |x: f64, xi: f64| {
        let (gx, gxi) = grad(x, xi);
        (gxi, -gx)
    };
    let q0 = q(start.0, start.1);
    if q0.re.abs() > opts.tau_char {
        return Err(Error::Precondition(format!(
            "start is off the characteristic set: |Re q| = {}",
            q0.re.abs()
        )));
    }
    let (gx, gxi) = grad(start.0, start.1);
    if gx.hypot(gxi) <= opts.eps_grad {
        return Err(Error::Precondition("Re q has a critical point at start".into()));
    }
    let inside = |x: f64, xi: f64| {
        let [a, b, c, d] = opts.window;
        x >= a && x <= b && xi >= c && xi <= d
    };

    let (mut x, mut xi) = start;
    let mut path = vec![[x, xi]];
    let mut im = vec![q0.im];
    let mut re = vec![q0.re];
    let mut events = Vec::new();
    let mut armed: Option<f64> = (q0.im < -opts.tau_zero).then_some(q0.im);
    let mut status = TraceStatus::Completed;
    for n in 1..=max_steps {
        let (gx, gxi) = grad(x, xi);
        if gx.hypot(gxi) < opts.eps_grad {
            status = TraceStatus::NotPrincipalType;
            break;
        }
        let k1 = field(x, xi);
        let k2 = field(x + 0.5 * step * k1.0, xi + 0.5 * step * k1.1);
        let k3 = field(x + 0.5 * step * k2.0, xi + 0.5 * step * k2.1);
        let k4 = field(x + step * k3.0, xi + step * k3.1);
        x += step / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        xi += step / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        if !inside(x, xi) {
            status = TraceStatus::Exited;
            break;
        }
        let v = q(x, xi);
        if v.im < -opts.tau_zero {
            armed = Some(v.im);
        } else if v.im > opts.tau_zero {
            if let Some(before) = armed.take() {
                events.push(SignEvent { step: n, x, xi, im_before: before, im_after: v.im });
            }
        }
        path.push([x, xi]);
        im.push(v.im);
        re.push(v.re);
    }
    Ok(Trace { path, im, re, events, status })
}
