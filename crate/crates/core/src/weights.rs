//! Weight fields built from `f`, its `w`-derivatives and `δ₀`:
//!
//! ```text
//! H^{-1/2} = 1 + |δ₀| + |f′| / (|f″| + h^{1/4}|f′|^{1/2} + h^{1/2})
//! M        = |f| + |f′|H^{-1/2} + |f″|H^{-1} + h^{1/2}H^{-3/2}
//! m(t, w)  = min over t₁ ≤ t ≤ t₂ of  δ₀(t₂) − δ₀(t₁) + max(A(t₁), A(t₂)) / 2,
//!            A = H^{1/2}⟨δ₀⟩²,  ⟨δ₀⟩ = 1 + |δ₀|
//! ```
//!
//! and a certificate for the inequalities between them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grid::{DerivativeNorms, ScalarField};
use crate::psi::SignedDistanceField;

#[derive(Debug, Clone)]
pub struct WeightBundle {
    pub hinv_sqrt: ScalarField,
    /// `M`.
    pub big_m: ScalarField,
    /// `m`.
    pub m: ScalarField,
    /// `⟨δ₀⟩ = 1 + |δ₀|`.
    pub bracket: ScalarField,
    pub f: ScalarField,
    pub delta0: ScalarField,
    pub norms: DerivativeNorms,
    pub h: f64,
}

fn check_aligned(a: &ScalarField, b: &ScalarField) -> Result<()> {
    if a.grid != b.grid || a.time != b.time {
        return Err(Error::ShapeMismatch("fields live on different grids".into()));
    }
    Ok(())
}

#[allow(non_snake_case)]
pub fn build_H(
    first: &ScalarField,
    second: &ScalarField,
    delta0: &ScalarField,
    h: f64,
) -> Result<ScalarField> {
    check_aligned(first, second)?;
    check_aligned(first, delta0)?;
    let (h14, h12) = (h.powf(0.25), h.sqrt());
    let values = (0..first.values.len())
        .map(|p| {
            let (d1, d2, d) = (first.values[p], second.values[p], delta0.values[p]);
            1.0 + d.abs() + d1 / (d2 + h14 * d1.sqrt() + h12)
        })
        .collect();
    Ok(first.like(values))
}

#[allow(non_snake_case)]
pub fn build_M(
    f: &ScalarField,
    first: &ScalarField,
    second: &ScalarField,
    hinv_sqrt: &ScalarField,
    h: f64,
) -> Result<ScalarField> {
    check_aligned(f, first)?;
    check_aligned(f, second)?;
    check_aligned(f, hinv_sqrt)?;
    let h12 = h.sqrt();
    let values = (0..f.values.len())
        .map(|p| {
            let s = hinv_sqrt.values[p];
            f.values[p].abs() + first.values[p] * s + second.values[p] * s * s + h12 * s * s * s
        })
        .collect();
    Ok(f.like(values))
}

/// `A = H^{1/2}⟨δ₀⟩²` at one node.
#[inline]
fn a_term(delta0: f64, hinv_sqrt: f64) -> f64 {
    let b = 1.0 + delta0.abs();
    b * b / hinv_sqrt
}

/// `m` for one node's time series in O(n_t²): for each `t₁`, the best `t₂ ≥ i`
/// is a suffix minimum, and `m(i)` is a prefix minimum of those over `t₁ ≤ i`.
fn m_series(delta0: &[f64], a: &[f64]) -> Vec<f64> {
    let n = delta0.len();
    // s[t1][i] = min_{t2 >= i} δ₀(t₂) − δ₀(t₁) + max(A₁, A₂)/2, only for i >= t1
    let mut best = vec![f64::INFINITY; n];
    let mut suffix = vec![0.0; n];
    for t1 in 0..n {
        let mut run = f64::INFINITY;
        for t2 in (t1..n).rev() {
            let v = delta0[t2] - delta0[t1] + 0.5 * a[t1].max(a[t2]);
            run = run.min(v);
            suffix[t2] = run;
        }
        for i in t1..n {
            best[i] = best[i].min(suffix[i]);
        }
    }
    best
}

pub fn build_m(delta0: &ScalarField, hinv_sqrt: &ScalarField) -> Result<ScalarField> {
    build_m_with(Exec::default(), delta0, hinv_sqrt)
}

pub fn build_m_with(exec: Exec, delta0: &ScalarField, hinv_sqrt: &ScalarField) -> Result<ScalarField> {
    check_aligned(delta0, hinv_sqrt)?;
    let g = delta0.grid.nodes();
    let n_t = delta0.time.n_t;
    let cols = exec.map(g, |node| {
        let d: Vec<f64> = (0..n_t).map(|i| delta0.at(i, node)).collect();
        let a: Vec<f64> = (0..n_t).map(|i| a_term(d[i], hinv_sqrt.at(i, node))).collect();
        m_series(&d, &a)
    });
    let mut values = vec![0.0; n_t * g];
    for (node, col) in cols.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            values[i * g + node] = v;
        }
    }
    Ok(delta0.like(values))
}

/// O(n_t³) enumeration of all pairs, with `|δ₀(t₁) − δ₀(t₂)|` as written.
pub fn build_m_brute(delta0: &ScalarField, hinv_sqrt: &ScalarField) -> ScalarField {
    let g = delta0.grid.nodes();
    let n_t = delta0.time.n_t;
    let mut values = vec![0.0; n_t * g];
    for node in 0..g {
        for i in 0..n_t {
            let mut best = f64::INFINITY;
            for t1 in 0..=i {
                for t2 in i..n_t {
                    let (d1, d2) = (delta0.at(t1, node), delta0.at(t2, node));
                    let a1 = a_term(d1, hinv_sqrt.at(t1, node));
                    let a2 = a_term(d2, hinv_sqrt.at(t2, node));
                    best = best.min((d1 - d2).abs() + 0.5 * a1.max(a2));
                }
            }
            values[i * g + node] = best;
        }
    }
    delta0.like(values)
}

impl WeightBundle {
    /// Differentiates `f` and assembles every weight.
    pub fn build(f: &ScalarField, sd: &SignedDistanceField) -> Result<Self> {
        let norms = DerivativeNorms::of(f)?;
        let h = f.grid.h;
        let hinv_sqrt = build_H(&norms.first, &norms.second, &sd.delta0, h)?;
        let big_m = build_M(f, &norms.first, &norms.second, &hinv_sqrt, h)?;
        let m = build_m(&sd.delta0, &hinv_sqrt)?;
        let bracket = sd.delta0.map(|d| 1.0 + d.abs());
        Ok(Self { hinv_sqrt, big_m, m, bracket, f: f.clone(), delta0: sd.delta0.clone(), norms, h })
    }
}

/// Node where an extremum was attained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub t: f64,
    pub x: f64,
    pub xi: f64,
}

fn locate(field: &ScalarField, p: usize) -> Location {
    let g = field.grid.nodes();
    let (x, xi) = field.grid.coords(p % g);
    Location { t: field.time.t(p / g), x, xi }
}

/// Largest violation of a pointwise inequality `lhs ≤ rhs`, as
/// `max (lhs − rhs) / max(1, |rhs|)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub ok: bool,
    pub max_violation: f64,
    pub at: Option<Location>,
}

impl InequalityCheck {
    fn scan(
        name: &str,
        field: &ScalarField,
        slack: f64,
        pair: impl Fn(usize) -> (f64, f64),
    ) -> Self {
        let mut worst = f64::NEG_INFINITY;
        let mut at = None;
        for p in 0..field.values.len() {
            let (lhs, rhs) = pair(p);
            let v = (lhs - rhs) / rhs.abs().max(1.0);
            if v > worst {
                worst = v;
                at = Some(locate(field, p));
            }
        }
        Self { name: name.into(), ok: worst <= slack, max_violation: worst, at }
    }
}

/// A fitted constant and where it is attained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedConstant {
    pub name: String,
    pub value: f64,
    pub at: Option<Location>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KappaRow {
    pub kappa: f64,
    /// Fraction of nodes with `⟨δ₀⟩ ≤ κ H^{-1/2}`.
    pub fraction: f64,
    /// Smallest `(f/δ₀) / (M H^{1/2})` over those nodes with `δ₀ ≠ 0`.
    pub min_factor_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightCertificate {
    pub h: f64,
    /// `max|f′|·h^{1/2}`; bounds assume ≤ 1.
    pub normalisation: f64,
    pub checks: Vec<InequalityCheck>,
    pub hhhest_ok: bool,
    pub mchain_ok: bool,
    pub qmax_ok: bool,
    pub qmax_triples: u64,
    pub qmax_max_violation: f64,
    /// `max M H^{3/2}⟨δ₀⟩² / m`.
    pub mest0_c0: FittedConstant,
    /// `max M·h`.
    pub c3: FittedConstant,
    pub slowvar_ch: FittedConstant,
    pub temper_cm: FittedConstant,
    pub m_lipschitz: f64,
    pub m_min: f64,
    pub kappa_sweep: Vec<KappaRow>,
    pub warnings: Vec<String>,
}

impl WeightCertificate {
    /// Every exact inequality held.
    pub fn passed(&self) -> bool {
        self.hhhest_ok && self.mchain_ok && self.qmax_ok && self.m_min > 0.0
    }
}

/// Relative slack for the pointwise inequalities.
pub const EPS_FP: f64 = 1e-9;

pub fn certify_inequalities(bundle: &WeightBundle, seed: u64) -> WeightCertificate {
    let h = bundle.h;
    let h12 = h.sqrt();
    let (s, d, m, big_m, br) =
        (&bundle.hinv_sqrt, &bundle.delta0, &bundle.m, &bundle.big_m, &bundle.bracket);
    let d1 = &bundle.norms.first;
    let mut warnings = Vec::new();
    let normalisation = bundle.norms.normalisation();
    if normalisation > 1.0 {
        warnings.push(format!(
            "max|f'|·h^(1/2) = {normalisation:.4} exceeds 1; upper bounds may fail"
        ));
    }

    let checks = vec![
        InequalityCheck::scan("1 <= H^-1/2", s, EPS_FP, |p| (1.0, s.values[p])),
        InequalityCheck::scan("H^-1/2 <= 1 + |d0| + h^-1/4 |f'|^1/2", s, EPS_FP, |p| {
            (s.values[p], 1.0 + d.values[p].abs() + h.powf(-0.25) * d1.values[p].sqrt())
        }),
        InequalityCheck::scan("H^-1/2 <= 3 h^-1/2", s, EPS_FP, |p| (s.values[p], 3.0 / h12)),
        InequalityCheck::scan("h^1/2 <= M", big_m, EPS_FP, |p| (h12, big_m.values[p])),
        InequalityCheck::scan("h^1/2 <d0>^2 / 6 <= m", m, EPS_FP, |p| {
            (h12 * br.values[p].powi(2) / 6.0, m.values[p])
        }),
        InequalityCheck::scan("m <= H^1/2 <d0>^2 / 2", m, EPS_FP, |p| {
            (m.values[p], br.values[p].powi(2) / s.values[p] / 2.0)
        }),
        InequalityCheck::scan("H^1/2 <d0>^2 / 2 <= <d0> / 2", m, EPS_FP, |p| {
            (br.values[p].powi(2) / s.values[p] / 2.0, br.values[p] / 2.0)
        }),
    ];
    let hhhest_ok = checks[..3].iter().all(|c| c.ok);
    let mchain_ok = checks[4..].iter().all(|c| c.ok);

    let (qmax_triples, qmax_max_violation) = qmax_scan(d, m);
    let qmax_ok = qmax_max_violation <= EPS_FP;

    let mut mest = FittedConstant { name: "M H^3/2 <d0>^2 / m".into(), value: 0.0, at: None };
    let mut c3 = FittedConstant { name: "M h".into(), value: 0.0, at: None };
    let mut m_min = f64::INFINITY;
    for p in 0..m.values.len() {
        let hm32 = s.values[p].powi(-3);
        let r = big_m.values[p] * hm32 * br.values[p].powi(2) / m.values[p];
        if r > mest.value || r.is_nan() {
            mest.value = r;
            mest.at = Some(locate(m, p));
        }
        let c = big_m.values[p] * h;
        if c > c3.value {
            c3.value = c;
            c3.at = Some(locate(m, p));
        }
        m_min = m_min.min(m.values[p]);
    }
    if !mest.value.is_finite() {
        warnings.push(format!("M H^3/2 <d0>^2 / m is not finite at {:?}", mest.at));
    }

    let (slowvar_ch, temper_cm) = fit_temperance(bundle, seed);
    let m_lipschitz = crate::psi::lipschitz_neighbours(m);

    let kappa_sweep = [0.25, 0.5, 1.0, 2.0]
        .iter()
        .map(|&kappa| {
            let mut count = 0usize;
            let mut min_ratio: Option<f64> = None;
            for p in 0..m.values.len() {
                if br.values[p] <= kappa * s.values[p] {
                    count += 1;
                    if d.values[p] != 0.0 {
                        let alpha = bundle.f.values[p] / d.values[p];
                        let r = alpha / (big_m.values[p] / s.values[p]);
                        min_ratio = Some(min_ratio.map_or(r, |q: f64| q.min(r)));
                    }
                }
            }
            KappaRow { kappa, fraction: count as f64 / m.values.len() as f64, min_factor_ratio: min_ratio }
        })
        .collect();

    WeightCertificate {
        h,
        normalisation,
        checks,
        hhhest_ok,
        mchain_ok,
        qmax_ok,
        qmax_triples,
        qmax_max_violation,
        mest0_c0: mest,
        c3,
        slowvar_ch,
        temper_cm,
        m_lipschitz,
        m_min,
        kappa_sweep,
        warnings,
    }
}

/// Every triple `t₁ ≤ t ≤ t₂` at every node: returns (count, worst relative
/// violation of `max m ≤ δ₀(t₂) − δ₀(t₁) + m(t₁) + m(t₂)`).
fn qmax_scan(delta0: &ScalarField, m: &ScalarField) -> (u64, f64) {
    let g = m.grid.nodes();
    let n_t = m.time.n_t;
    let per = Exec::default().map(g, |node| {
        let mut worst = f64::NEG_INFINITY;
        for t1 in 0..n_t {
            let mut run = f64::NEG_INFINITY;
            for t2 in t1..n_t {
                run = run.max(m.at(t2, node));
                let rhs = delta0.at(t2, node) - delta0.at(t1, node) + m.at(t1, node) + m.at(t2, node);
                worst = worst.max((run - rhs) / rhs.abs().max(1.0));
            }
        }
        worst
    });
    let triples: u64 = (0..n_t as u64).map(|a| (n_t as u64 - a) * (n_t as u64 - a + 1) / 2).sum();
    (triples * g as u64, per.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Fits `H(w) ≤ C H(w₀)(1 + H(w₀)|w − w₀|²)` and
/// `M(w) ≤ C M(w₀)(1 + H(w₀)|w − w₀|²)^{3/2}` over random same-slice pairs.
fn fit_temperance(bundle: &WeightBundle, seed: u64) -> (FittedConstant, FittedConstant) {
    let grid = bundle.m.grid;
    let g = grid.nodes();
    let n_t = bundle.m.time.n_t;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ch = FittedConstant { name: "H temperance".into(), value: 0.0, at: None };
    let mut cm = FittedConstant { name: "M temperance".into(), value: 0.0, at: None };
    let pairs = 20_000.min(n_t * g * 4);
    for _ in 0..pairs {
        let i = rng.random_range(0..n_t);
        let (a, b) = (rng.random_range(0..g), rng.random_range(0..g));
        let big_h = |p: usize| bundle.hinv_sqrt.at(i, p).powi(-2);
        let (ha, hb) = (big_h(a), big_h(b));
        let gdist = 1.0 + hb * grid.distance(a, b).powi(2);
        let r = ha / (hb * gdist);
        if r > ch.value {
            ch.value = r;
            ch.at = Some(locate(&bundle.m, i * g + a));
        }
        let rm = bundle.big_m.at(i, a) / (bundle.big_m.at(i, b) * gdist.powf(1.5));
        if rm > cm.value {
            cm.value = rm;
            cm.at = Some(locate(&bundle.m, i * g + a));
        }
    }
    (ch, cm)
}
