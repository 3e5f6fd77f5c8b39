//! Run configuration: TOML or JSON, unknown keys rejected, validated before
//! any computation and echoed into every report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use psolv_core::corpus;
use psolv_core::estimate::EstimateOptions;
use psolv_core::system::{gallery_items, ClassifyOptions};
use psolv_core::PhaseGrid;

use crate::expr::Expr;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_t: usize,
    pub n_x: usize,
    pub n_xi: usize,
    /// Position window length; the frequency window follows from `dx·dξ·n_x = 2π`.
    pub l_x: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_t: 33, n_x: 48, n_xi: 48, l_x: 24.0 }
    }
}

/// Exactly one of `builtin`, `expr`, `file`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SymbolConfig {
    pub builtin: Option<String>,
    pub expr: Option<String>,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LowerOrderConfig {
    pub builtin: Option<String>,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    /// Gallery item name.
    pub item: Option<String>,
    /// PSLF matrix field; classified in `(x, ξ)` at time slice `slice`.
    pub file: Option<PathBuf>,
    pub slice: usize,
    /// Base point; defaults to the gallery item's own point.
    pub point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    pub re: String,
    pub im: String,
    pub start: [f64; 2],
    pub step: f64,
    pub max_steps: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self { re: "xi".into(), im: "0".into(), start: [0.0, 0.0], step: 0.01, max_steps: 1000 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// `None` picks `1e-12 · max|f|`.
    pub tau_zero: Option<f64>,
    pub rank: Option<f64>,
    pub cluster: Option<f64>,
    pub deriv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub t_lo: f64,
    pub t_hi: f64,
    pub bisection_steps: usize,
    pub substeps: usize,
    pub skip_gate: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        let d = EstimateOptions::default();
        Self { t_lo: d.t_lo, t_hi: d.t_hi, bisection_steps: d.bisection_steps, substeps: d.substeps, skip_gate: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub h: f64,
    /// Half-width of the time window for `check-psi`, `weights` and `fields`.
    #[serde(rename = "T")]
    pub t_half: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub grid: GridConfig,
    pub symbol: SymbolConfig,
    pub lower_order: Option<LowerOrderConfig>,
    pub classify: ClassifyConfig,
    pub trace: Option<TraceConfig>,
    pub tolerances: Tolerances,
    pub estimate: EstimateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            h: 0.1,
            t_half: 1.0,
            seed: 0,
            out: PathBuf::from("psolv-out"),
            grid: GridConfig::default(),
            symbol: SymbolConfig::default(),
            lower_order: None,
            classify: ClassifyConfig::default(),
            trace: None,
            tolerances: Tolerances::default(),
            estimate: EstimateConfig::default(),
        }
    }
}

/// Parses TOML, or JSON when the file ends in `.json` or starts with `{`.
pub fn parse(text: &str, path: Option<&Path>) -> Result<RunConfig, CliError> {
    let json = path.is_some_and(|p| p.extension().is_some_and(|e| e == "json")) || text.trim_start().starts_with('{');
    if json {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON config: {e}")))
    } else {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid TOML config: {e}")))
    }
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text, Some(path))
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.h > 0.0 && self.h <= 1.0) {
            return Err(bad(format!("h = {} must lie in (0, 1]", self.h)));
        }
        if !(self.t_half > 0.0 && self.t_half.is_finite()) {
            return Err(bad("T must be positive"));
        }
        let g = &self.grid;
        if g.n_t < 5 || g.n_x < 5 || g.n_xi < 5 {
            return Err(bad("grid needs n_t, n_x, n_xi ≥ 5"));
        }
        if !(g.l_x > 0.0 && g.l_x.is_finite()) {
            return Err(bad("grid.l_x must be positive"));
        }
        let s = &self.symbol;
        let sources = [s.builtin.is_some(), s.expr.is_some(), s.file.is_some()].iter().filter(|&&b| b).count();
        if sources > 1 {
            return Err(bad("symbol: give exactly one of builtin, expr, file"));
        }
        if let Some(b) = &s.builtin {
            if corpus::builtin(b, self.h).is_none() {
                return Err(bad(format!(
                    "unknown builtin symbol '{b}' (known: {}, random_<seed>)",
                    corpus::BUILTINS.join(", ")
                )));
            }
        }
        if let Some(e) = &s.expr {
            Expr::parse(e).map_err(|err| bad(format!("symbol expression: {err}")))?;
        }
        if let Some(l) = &self.lower_order {
            match (&l.builtin, &l.file) {
                (Some(b), None) => {
                    if corpus::lower_order(b, self.h).is_none() {
                        return Err(bad(format!(
                            "unknown lower-order term '{b}' (known: {})",
                            corpus::LOWER_ORDER.join(", ")
                        )));
                    }
                }
                (None, Some(_)) => {}
                _ => return Err(bad("lower_order: give exactly one of builtin, file")),
            }
        }
        let c = &self.classify;
        if c.item.is_some() && c.file.is_some() {
            return Err(bad("classify: give either item or file"));
        }
        if let Some(name) = &c.item {
            if !gallery_items().iter().any(|it| it.name == name) {
                return Err(bad(format!("unknown gallery item '{name}'")));
            }
        }
        if let Some(t) = &self.trace {
            Expr::parse(&t.re).map_err(|err| bad(format!("trace.re: {err}")))?;
            Expr::parse(&t.im).map_err(|err| bad(format!("trace.im: {err}")))?;
            if !(t.step > 0.0) || t.max_steps == 0 {
                return Err(bad("trace needs step > 0 and max_steps > 0"));
            }
        }
        for (name, v) in [
            ("tau_zero", self.tolerances.tau_zero),
            ("rank", self.tolerances.rank),
            ("cluster", self.tolerances.cluster),
            ("deriv", self.tolerances.deriv),
        ] {
            if v.is_some_and(|v| !(v >= 0.0 && v.is_finite())) {
                return Err(bad(format!("tolerance {name} must be finite and ≥ 0")));
            }
        }
        let e = &self.estimate;
        if !(e.t_lo > 0.0 && e.t_lo < e.t_hi) {
            return Err(bad("estimate needs 0 < t_lo < t_hi"));
        }
        if e.substeps == 0 {
            return Err(bad("estimate.substeps must be ≥ 1"));
        }
        Ok(())
    }

    pub fn phase_grid(&self) -> Result<PhaseGrid, CliError> {
        let g = &self.grid;
        if g.n_x == g.n_xi {
            return PhaseGrid::dft_window(g.n_x, g.l_x, self.h).map_err(|e| bad(e.to_string()));
        }
        let dx = g.l_x / g.n_x as f64;
        let l_xi = 2.0 * std::f64::consts::PI / dx * g.n_xi as f64 / g.n_x as f64;
        PhaseGrid::new((-g.l_x / 2.0, g.l_x / 2.0, g.n_x), (-l_xi / 2.0, l_xi / 2.0, g.n_xi), self.h)
            .map_err(|e| bad(e.to_string()))
    }

    pub fn classify_options(&self) -> ClassifyOptions {
        let d = ClassifyOptions::default();
        ClassifyOptions {
            rank_tol: self.tolerances.rank.unwrap_or(d.rank_tol),
            cluster_tol: self.tolerances.cluster.unwrap_or(d.cluster_tol),
            deriv_tol: self.tolerances.deriv.unwrap_or(d.deriv_tol),
            seed: self.seed,
            ..d
        }
    }

    pub fn estimate_options(&self) -> EstimateOptions {
        EstimateOptions {
            n_t: self.grid.n_t,
            n_x: self.grid.n_x,
            l_x: self.grid.l_x,
            tau_zero: self.tolerances.tau_zero,
            skip_gate: self.estimate.skip_gate,
            seed: self.seed,
            t_lo: self.estimate.t_lo,
            t_hi: self.estimate.t_hi,
            bisection_steps: self.estimate.bisection_steps,
            substeps: self.estimate.substeps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let toml = r#"
            h = 0.05
            T = 0.5
            seed = 9
            [symbol]
            builtin = "t_times_g"
            [grid]
            n_x = 32
        "#;
        let json = r#"{"h": 0.05, "T": 0.5, "seed": 9, "symbol": {"builtin": "t_times_g"}, "grid": {"n_x": 32}}"#;
        let a = parse(toml, None).unwrap();
        let b = parse(json, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.grid.n_xi, 48);
        a.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse("hh = 1", None).is_err());
        assert!(parse("[grid]\nnx = 3", None).is_err());
        assert!(parse(r#"{"symbol": {"name": "x"}}"#, None).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig { h: 2.0, ..Default::default() };
        assert!(c.validate().is_err());
        c.h = 0.1;
        c.symbol.expr = Some("t * (".into());
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("column"), "{err}");
        c.symbol.expr = Some("t".into());
        c.symbol.builtin = Some("x".into());
        assert!(c.validate().is_err());
        c.symbol.expr = None;
        c.classify.item = Some("nope".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_grid_is_dft_compatible() {
        let g = RunConfig::default().phase_grid().unwrap();
        assert!(g.is_dft_compatible());
        assert_eq!(g, PhaseGrid::dft_window(48, 24.0, 0.1).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn json_and_toml_round_trip(h in 0.01f64..1.0, t in 0.1f64..4.0, seed in 0u64..1_000_000, n in 5usize..80, skip in proptest::bool::ANY) {
            let mut cfg = RunConfig { h, t_half: t, seed, ..Default::default() };
            cfg.grid.n_x = n;
            cfg.symbol.builtin = Some("moving_front".into());
            cfg.estimate.skip_gate = skip;
            cfg.lower_order = Some(LowerOrderConfig { builtin: Some("rotating".into()), file: None });
            let json = serde_json::to_string(&cfg).unwrap();
            proptest::prop_assert_eq!(&parse(&json, None).unwrap(), &cfg);
            let toml = toml::to_string(&cfg).unwrap();
            proptest::prop_assert_eq!(&parse(&toml, None).unwrap(), &cfg);
        }
    }
}
