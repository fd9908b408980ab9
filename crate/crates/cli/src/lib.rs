//! The `depfusion` command-line front end.
//!
//! Exit codes: 0 when the command succeeds and every check passes, 1 when a
//! check fails, 2 for usage, format and input errors.

pub mod args;
pub mod commands;
pub mod netpbm;
pub mod output;

use std::process::ExitCode;

use depfusion_core::{DType, Result, RunConfig};

pub use args::{Cli, Command};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

/// File values, then global flags, then subcommand flags.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(d) = cli.dtype {
        cfg.dtype = d;
    }
    match &cli.command {
        Command::Enhance(a) => {
            if a.params.is_some() {
                cfg.params = a.params.clone();
            }
            if let Some(v) = a.init {
                cfg.init = v;
            }
            if let Some(v) = a.levels {
                cfg.levels = v;
            }
            if let Some(v) = a.basis {
                cfg.basis = v;
            }
            if let Some(v) = &a.kernel_sizes {
                cfg.kernel_sizes = v.clone();
            }
            if let Some(v) = a.discretization {
                cfg.discretization = v;
            }
        }
        Command::Fuse(a) => {
            if a.params.is_some() {
                cfg.params = a.params.clone();
            }
            if let Some(v) = a.variant {
                cfg.variant = v;
            }
            if let Some(v) = a.dropout {
                cfg.dropout = v;
            }
            if let Some(v) = a.discretization {
                cfg.discretization = v;
            }
        }
        Command::Verify(_) | Command::Bench(_) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a parsed command; `Ok(false)` means a check failed.
pub fn execute(cli: &Cli) -> Result<bool> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Enhance(a) => match cfg.dtype {
            DType::F32 => commands::enhance::<f32>(&cfg, &a.input),
            DType::F64 => commands::enhance::<f64>(&cfg, &a.input),
        },
        Command::Fuse(a) => match cfg.dtype {
            DType::F32 => commands::fuse::<f32>(&cfg, &a.rgb, &a.ir),
            DType::F64 => commands::fuse::<f64>(&cfg, &a.rgb, &a.ir),
        },
        Command::Verify(a) => commands::verify(&cfg, a.suite, a.mutate_haar),
        Command::Bench(a) => commands::bench(&cfg, &a.sizes, a.repeats),
    }
}

pub fn run(cli: &Cli) -> ExitCode {
    match execute(cli) {
        Ok(true) => ExitCode::from(EXIT_OK),
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
