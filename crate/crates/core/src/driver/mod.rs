//! Configuration-driven runs: parse, build, solve, write.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use log::info;

use crate::collocation::CollocationGrid;
use crate::error::Result;
use crate::interface::{run_method, Method, RunOutput};
use crate::problem::Problem;

pub use config::{parse_config, parse_config_str, RunConfig};

/// Command-line overrides of config values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub method: Option<Method>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub no_timing: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(m) = self.method {
            cfg.solver.method = m;
        }
        if let Some(w) = self.workers {
            cfg.solver.workers = w;
        }
        if let Some(d) = &self.out_dir {
            cfg.output.dir = d.clone();
        }
        if self.no_timing {
            cfg.output.timing = false;
        }
    }
}

pub struct Prepared {
    pub problem: Problem,
    pub grid: CollocationGrid,
}

/// Builds the problem and collocation grid of a validated config.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let problem = cfg.build_problem()?;
    let grid = cfg.collocation.build(&problem.field.region_dims())?;
    Ok(Prepared { problem, grid })
}

/// Solves without writing files.
pub fn solve(cfg: &RunConfig) -> Result<(Prepared, RunOutput)> {
    let prep = prepare(cfg)?;
    info!(
        "{} subdomains, {} mortar dofs, {} realizations, method {}",
        prep.problem.n_subdomains(),
        prep.problem.mortar.n_dofs,
        prep.grid.n_real(),
        cfg.solver.method
    );
    let out = run_method(&prep.problem, &prep.grid, &cfg.solver_options())?;
    Ok((prep, out))
}

/// Full run of a config file; returns the output directory.
pub fn run(path: &Path, overrides: &Overrides) -> Result<PathBuf> {
    let mut cfg = parse_config(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    let (prep, out) = solve(&cfg)?;
    output::write_all(&cfg.output.dir, &cfg, &prep.problem, &out)?;
    Ok(cfg.output.dir.clone())
}
