//! `psolv`: configuration, subcommands and JSON/CSV reports around
//! `psolv-core`.
//!
//! Exit codes: 0 pass, 1 assertion or verdict failure, 2 configuration
//! error, 3 runtime error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod expr;
pub mod symbols;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<psolv_core::Error> for CliError {
    fn from(e: psolv_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "psolv", version, about = "Phase-space checks for pseudodifferential model operators")]
pub struct Cli {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for reports.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Semiclassical parameter.
    #[arg(long, global = true)]
    pub h: Option<f64>,
    /// Builtin symbol name (overrides the config).
    #[arg(long, global = true, conflicts_with = "expr")]
    pub symbol: Option<String>,
    /// Symbol expression over t, x, xi, h (overrides the config).
    #[arg(long, global = true)]
    pub expr: Option<String>,
    #[arg(long = "tol-tau-zero", global = true)]
    pub tol_tau_zero: Option<f64>,
    #[arg(long = "tol-rank", global = true)]
    pub tol_rank: Option<f64>,
    #[arg(long = "tol-cluster", global = true)]
    pub tol_cluster: Option<f64>,
    #[arg(long = "tol-deriv", global = true)]
    pub tol_deriv: Option<f64>,
    /// Run the estimate even when the sign-change condition fails.
    #[arg(long, global = true)]
    pub skip_gate: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the time-sliced sign-change condition (and trace a bicharacteristic if configured).
    CheckPsi,
    /// Classify a matrix symbol: principal type, constant characteristics.
    Classify {
        /// Gallery item name (overrides the config).
        #[arg(long)]
        item: Option<String>,
    },
    /// Full pipeline: signed distance, weights, pseudo-sign, multiplier estimate.
    Verify,
    /// Run every gallery example against its expected verdicts.
    Gallery,
    /// Build and certify the weight bundle.
    Weights,
    /// Inspect, convert or sample PSLF field files.
    Fields {
        #[command(subcommand)]
        action: FieldsAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum FieldsAction {
    /// Print a header summary.
    Inspect { file: PathBuf },
    /// Export to CSV.
    Convert { file: PathBuf, csv: PathBuf },
    /// Write the configured symbol (and lower-order term) as PSLF files.
    Sample,
}

impl Cli {
    /// Loads the config file (or defaults) and applies flag overrides.
    pub fn resolve_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => config::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(h) = self.h {
            cfg.h = h;
        }
        if let Some(s) = &self.symbol {
            cfg.symbol = config::SymbolConfig { builtin: Some(s.clone()), ..Default::default() };
        }
        if let Some(e) = &self.expr {
            cfg.symbol = config::SymbolConfig { expr: Some(e.clone()), ..Default::default() };
        }
        let t = &mut cfg.tolerances;
        t.tau_zero = self.tol_tau_zero.or(t.tau_zero);
        t.rank = self.tol_rank.or(t.rank);
        t.cluster = self.tol_cluster.or(t.cluster);
        t.deriv = self.tol_deriv.or(t.deriv);
        if self.skip_gate {
            cfg.estimate.skip_gate = true;
        }
        if let Command::Classify { item: Some(item) } = &self.command {
            cfg.classify.item = Some(item.clone());
            cfg.classify.file = None;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Caps the global rayon pool from `PSOLV_THREADS`.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("PSOLV_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("PSOLV_THREADS must be a positive integer, got '{v}'")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let outcome = configure_threads().and_then(|_| {
        let cfg = cli.resolve_config()?;
        commands::dispatch(&cli.command, &cfg)
    });
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("psolv: {e}");
            e.exit_code()
        }
    }
}
