//! Named test symbols in semiclassical scaling, `f = h^{-1} F(t, h^{1/2}x, h^{1/2}ξ)`
//! with `|∇_W F| ≤ 1`, so `|∂_w f| ≤ h^{-1/2}`.
//!
//! Every compliant symbol is non-decreasing in `t`, which is sufficient for
//! the time-sliced sign-change condition.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::estimate::LowerOrderTerm;
use crate::grid::{sample_scalar, PhaseGrid, ScalarField, TimeGrid};
use crate::linalg::{c, CMat};

type Eval = dyn Fn(f64, f64, f64) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct CorpusSymbol {
    pub name: String,
    /// Whether the symbol satisfies the sign-change condition by construction.
    pub compliant: bool,
    eval: Arc<Eval>,
}

impl std::fmt::Debug for CorpusSymbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CorpusSymbol({}, compliant = {})", self.name, self.compliant)
    }
}

impl CorpusSymbol {
    pub fn new(name: impl Into<String>, compliant: bool, eval: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), compliant, eval: Arc::new(eval) }
    }

    #[inline]
    pub fn at(&self, t: f64, x: f64, xi: f64) -> f64 {
        (self.eval)(t, x, xi)
    }

    pub fn sample(&self, time: TimeGrid, grid: PhaseGrid) -> Result<ScalarField> {
        let e = self.eval.clone();
        sample_scalar(move |t, x, xi| e(t, x, xi), time, grid)
    }

    /// Shared handle to the callback.
    pub fn callback(&self) -> Arc<Eval> {
        self.eval.clone()
    }
}

/// Wraps a profile `F(t, X, Ξ)` into `h^{-1} F(t, h^{1/2}x, h^{1/2}ξ)`.
fn scaled(
    name: &str,
    compliant: bool,
    h: f64,
    profile: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
) -> CorpusSymbol {
    let s = h.sqrt();
    CorpusSymbol::new(name, compliant, move |t, x, xi| profile(t, s * x, s * xi) / h)
}

pub const BUILTINS: &[&str] = &[
    "zero",
    "x",
    "tanh_x",
    "t_times_g",
    "minus_t_times_g",
    "moving_front",
    "bump_times_t",
    "x2_minus_xi_bump",
];

/// A builtin by name, or `random_<seed>` for a random compliant symbol.
pub fn builtin(name: &str, h: f64) -> Option<CorpusSymbol> {
    let sym = match name {
        "zero" => CorpusSymbol::new(name, true, |_, _, _| 0.0),
        "x" => scaled(name, true, h, |_, x, _| x),
        "tanh_x" => scaled(name, true, h, |_, x, _| 0.9 * x.tanh()),
        "t_times_g" => scaled(name, true, h, |t, _, xi| t * (1.0 + xi.tanh()) / 2.0),
        "minus_t_times_g" => scaled(name, false, h, |t, _, xi| -t * (1.0 + xi.tanh()) / 2.0),
        "moving_front" => scaled(name, true, h, |t, x, _| (t - 0.6 * x.tanh()) / 2.0),
        "bump_times_t" => scaled(name, true, h, |t, x, xi| t * (-(x * x + xi * xi) / 2.0).exp()),
        "x2_minus_xi_bump" => scaled(name, true, h, |_, x, xi| (x.tanh().powi(2) - (-xi * xi).exp()) / 2.0),
        _ => {
            let seed: u64 = name.strip_prefix("random_")?.parse().ok()?;
            random_compliant(seed, h)
        }
    };
    Some(sym)
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    amp: f64,
    k: [f64; 2],
    phase: f64,
    centre: [f64; 2],
    width: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, amp: std::ops::Range<f64>) -> Self {
        Self {
            amp: rng.random_range(amp),
            k: [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            centre: [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
            width: rng.random_range(0.8..2.0),
        }
    }

    fn envelope(&self, x: f64, xi: f64) -> f64 {
        let r2 = (x - self.centre[0]).powi(2) + (xi - self.centre[1]).powi(2);
        (-r2 / (2.0 * self.width * self.width)).exp()
    }

    fn arg(&self, x: f64, xi: f64) -> f64 {
        self.k[0] * x + self.k[1] * xi + self.phase
    }
}

/// `F = t·a(W) + b(W)` with `a ≥ 0` built from enveloped plane waves, then
/// scaled so `max |∇F| = 0.9` on `|t| ≤ 1`.
pub fn random_compliant(seed: u64, h: f64) -> CorpusSymbol {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slope: Vec<Wave> = (0..3).map(|_| Wave::random(&mut rng, 0.2..1.0)).collect();
    let offset: Vec<Wave> = (0..3).map(|_| Wave::random(&mut rng, -1.0..1.0)).collect();
    let a = move |x: f64, xi: f64| -> f64 {
        slope.iter().map(|w| w.amp * (1.0 + w.arg(x, xi).cos()) / 2.0 * w.envelope(x, xi)).sum()
    };
    let b = move |x: f64, xi: f64| -> f64 {
        offset.iter().map(|w| w.amp * w.arg(x, xi).sin() * w.envelope(x, xi)).sum()
    };
    // gradient bound by central differences on a fine lattice; the max over
    // |t| ≤ 1 of |t∇a + ∇b| sits at t = ±1
    let (step, half) = (0.05, 6.0);
    let n = (2.0 * half / step) as usize;
    let mut gmax: f64 = 1e-12;
    for p in 0..=n {
        for q in 0..=n {
            let (x, xi) = (-half + p as f64 * step, -half + q as f64 * step);
            let e = 1e-5;
            let ga = [(a(x + e, xi) - a(x - e, xi)) / (2.0 * e), (a(x, xi + e) - a(x, xi - e)) / (2.0 * e)];
            let gb = [(b(x + e, xi) - b(x - e, xi)) / (2.0 * e), (b(x, xi + e) - b(x, xi - e)) / (2.0 * e)];
            for t in [-1.0, 1.0] {
                gmax = gmax.max((t * ga[0] + gb[0]).hypot(t * ga[1] + gb[1]));
            }
        }
    }
    let k = 0.9 / gmax;
    scaled(&format!("random_{seed}"), true, h, move |t, x, xi| k * (t * a(x, xi) + b(x, xi)))
}

/// The default symbol corpus: every builtin plus `n_random` random ones.
pub fn default_corpus(h: f64, n_random: usize) -> Vec<CorpusSymbol> {
    BUILTINS
        .iter()
        .filter_map(|n| builtin(n, h))
        .chain((0..n_random as u64).map(|s| random_compliant(s, h)))
        .collect()
}

pub const LOWER_ORDER: &[&str] = &["zero", "pauli_x", "rotating", "bump_coupled", "nilpotent_cos"];

fn mat2(a: [[num_complex::Complex64; 2]; 2]) -> CMat {
    CMat::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]])
}

/// Named `2 × 2` lower-order terms `F₀(t, h^{1/2}x, h^{1/2}ξ)`, bounded with
/// bounded derivatives.
pub fn lower_order(name: &str, h: f64) -> Option<LowerOrderTerm> {
    let s = h.sqrt();
    let (o, i1) = (c(0.0, 0.0), c(1.0, 0.0));
    let term = match name {
        "zero" => LowerOrderTerm::new(name, 2, move |_, _, _| CMat::zeros(2, 2)),
        "pauli_x" => LowerOrderTerm::new(name, 2, move |_, _, _| mat2([[o, i1], [i1, o]]) * c(0.5, 0.0)),
        "rotating" => LowerOrderTerm::new(name, 2, move |t, _, _| {
            let (a, b) = (0.4 * t.cos(), 0.4 * t.sin());
            mat2([[o, c(a, -b)], [c(a, b), o]])
        }),
        "bump_coupled" => LowerOrderTerm::new(name, 2, move |t, x, xi| {
            let g = 0.3 * (-(s * s) * (x * x + xi * xi) / 2.0).exp();
            mat2([[c(0.2 * t, 0.0), c(g, 0.0)], [c(g, 0.1), c(-0.2 * t, 0.0)]])
        }),
        "nilpotent_cos" => LowerOrderTerm::new(name, 2, move |t, _, _| mat2([[o, c(t.cos(), 0.0)], [o, o]])),
        _ => return None,
    };
    Some(term)
}
