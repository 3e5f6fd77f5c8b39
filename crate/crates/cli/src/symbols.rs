//! Turns the `symbol` / `lower_order` config sections into callbacks and
//! sampled fields.

use std::path::Path;
use std::sync::Arc;

use psolv_core::corpus;
use psolv_core::estimate::LowerOrderTerm;
use psolv_core::io::{read_field, Field};
use psolv_core::{MatrixField, PhaseGrid, ScalarField, TimeGrid};

use crate::expr::Expr;
use crate::{CliError, RunConfig};

pub type Callback = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ResolvedSymbol {
    pub name: String,
    pub eval: Callback,
    /// Present when the symbol came from a PSLF file.
    pub field: Option<ScalarField>,
}

fn read_scalar(path: &Path) -> Result<ScalarField, CliError> {
    match read_field(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))? {
        Field::Scalar(f) => Ok(f),
        _ => Err(CliError::Config(format!("{}: expected a scalar field", path.display()))),
    }
}

pub fn read_matrix(path: &Path) -> Result<MatrixField, CliError> {
    match read_field(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))? {
        Field::Matrix(f) => Ok(f),
        _ => Err(CliError::Config(format!("{}: expected a matrix field", path.display()))),
    }
}

/// Linear in `t`, nearest node in `(x, ξ)`, clamped at the edges.
fn interpolate(field: ScalarField) -> Callback {
    let field = Arc::new(field);
    Arc::new(move |t, x, xi| {
        let g = &field.grid;
        let j = (((x - g.x_min) / g.dx() - 0.5).round().max(0.0) as usize).min(g.n_x - 1);
        let k = (((xi - g.xi_min) / g.dxi() - 0.5).round().max(0.0) as usize).min(g.n_xi - 1);
        let time = &field.time;
        let s = ((t - time.t_min) / time.dt()).clamp(0.0, (time.n_t - 1) as f64);
        let i = (s.floor() as usize).min(time.n_t - 2);
        let w = s - i as f64;
        (1.0 - w) * field.get(i, j, k) + w * field.get(i + 1, j, k)
    })
}

impl ResolvedSymbol {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        let s = &cfg.symbol;
        if let Some(path) = &s.file {
            let field = read_scalar(path)?;
            return Ok(Self { name: path.display().to_string(), eval: interpolate(field.clone()), field: Some(field) });
        }
        if let Some(src) = &s.expr {
            let expr = Expr::parse(src).map_err(|e| CliError::Config(format!("symbol expression: {e}")))?;
            let h = cfg.h;
            return Ok(Self { name: src.clone(), eval: Arc::new(move |t, x, xi| expr.eval(t, x, xi, h)), field: None });
        }
        let name = s.builtin.as_deref().unwrap_or("zero");
        let sym = corpus::builtin(name, cfg.h).ok_or_else(|| CliError::Config(format!("unknown builtin symbol '{name}'")))?;
        Ok(Self { name: name.to_string(), eval: sym.callback(), field: None })
    }

    /// The file's own lattice, or the configured one.
    pub fn grid(&self, cfg: &RunConfig) -> Result<PhaseGrid, CliError> {
        match &self.field {
            Some(f) => Ok(f.grid),
            None => cfg.phase_grid(),
        }
    }

    /// A file symbol as stored; otherwise sampled on `|t| ≤ T`.
    pub fn sampled(&self, cfg: &RunConfig, t_half: f64) -> Result<ScalarField, CliError> {
        if let Some(f) = &self.field {
            return Ok(f.clone());
        }
        let time = TimeGrid::symmetric(t_half, cfg.grid.n_t)?;
        let e = self.eval.clone();
        Ok(psolv_core::grid::sample_scalar(move |t, x, xi| e(t, x, xi), time, cfg.phase_grid()?)?)
    }
}

pub fn lower_order(cfg: &RunConfig) -> Result<Option<LowerOrderTerm>, CliError> {
    let Some(l) = &cfg.lower_order else { return Ok(None) };
    if let Some(path) = &l.file {
        let field = read_matrix(path)?;
        return Ok(Some(LowerOrderTerm::from_field(path.display().to_string(), field)));
    }
    let name = l.builtin.as_deref().unwrap_or("zero");
    corpus::lower_order(name, cfg.h)
        .map(Some)
        .ok_or_else(|| CliError::Config(format!("unknown lower-order term '{name}'")))
}
