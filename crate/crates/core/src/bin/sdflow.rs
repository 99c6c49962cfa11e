use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use sdflow::collocation::CollocationGrid;
use sdflow::driver::config::{CollocationConfig, Counts};
use sdflow::driver::{self, Overrides};
use sdflow::geometry::Rect;
use sdflow::interface::{s3_basis_bytes, Method};
use sdflow::random_field::{build_kl_region, CovarianceSpec, ModeSelection};
use sdflow::{Error, Result};

#[derive(Parser)]
#[command(name = "sdflow", version, about = "Stochastic Stokes-Darcy flow by mortar domain decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every realization and write statistics.
    Run {
        config: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Write zero wall times so reruns are byte-identical.
        #[arg(long)]
        no_timing: bool,
    },
    /// Check a config, build meshes and mortar space, report sizes.
    Validate {
        config: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print the KL eigenvalues of one region (JSON file or inline JSON).
    Eig { region_spec: String },
    /// Print collocation points, weights and local indices (JSON file or inline JSON).
    Grid { colloc_spec: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionSpec {
    variance: f64,
    eta: [f64; 2],
    rect: Rect,
    n_term: Counts,
    #[serde(default)]
    selection: ModeSelection,
}

fn read_spec<T: for<'de> Deserialize<'de>>(arg: &str) -> Result<T> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| Error::config(format!("cannot read {arg}: {e}")))?
    };
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(format!("at '{path}': {}", e.into_inner()))
    })
}

fn eig(arg: &str) -> Result<String> {
    let spec: RegionSpec = read_spec(arg)?;
    let (n, shape) = match spec.n_term {
        Counts::One(n) => (n, None),
        Counts::Many(v) if v.len() == 2 => (v[0] * v[1], Some([v[0], v[1]])),
        Counts::Many(_) => return Err(Error::config("n_term must be a number or [nx, ny]")),
    };
    let region = build_kl_region(
        0,
        CovarianceSpec {
            variance: spec.variance,
            eta: spec.eta,
            rect: spec.rect,
        },
        n,
        spec.selection,
        shape,
        vec![spec.rect],
    )?;
    let mut s = String::from("j,lambda,p,q,lambda_x,lambda_y\n");
    for (j, m) in region.modes.iter().enumerate() {
        writeln!(s, "{j},{},{},{},{},{}", m.lambda, m.p, m.q, m.fx.lambda, m.fy.lambda).unwrap();
    }
    Ok(s)
}

/// A collocation config plus `region_dims`; split by hand because flattened
/// fields do not combine with unknown-field rejection.
fn grid(arg: &str) -> Result<String> {
    let mut spec: serde_json::Map<String, serde_json::Value> = read_spec(arg)?;
    let dims = spec
        .remove("region_dims")
        .ok_or_else(|| Error::config("grid spec needs region_dims"))?;
    let dims: Vec<usize> = serde_json::from_value(dims).map_err(|e| Error::config(format!("at 'region_dims': {e}")))?;
    let kind: CollocationConfig = read_spec(&serde_json::Value::Object(spec).to_string())?;
    let g: CollocationGrid = kind.build(&dims)?;
    let mut s = String::new();
    let locals: Vec<String> = (0..g.n_regions())
        .map(|r| g.count_local_realizations(r).map(|c| c.to_string()))
        .collect::<Result<_>>()?;
    writeln!(s, "# n_real {} local {}", g.n_real(), locals.join(" ")).unwrap();
    let mut header = vec!["k".to_string(), "weight".to_string()];
    header.extend((0..g.n_term()).map(|d| format!("y{d}")));
    header.extend((0..g.n_regions()).map(|r| format!("local{r}")));
    writeln!(s, "{}", header.join(",")).unwrap();
    for k in 0..g.n_real() {
        let mut row = vec![k.to_string(), g.weights[k].to_string()];
        row.extend(g.points[k].iter().map(|y| y.to_string()));
        for r in 0..g.n_regions() {
            row.push(g.global_to_local_index(k, r)?.to_string());
        }
        writeln!(s, "{}", row.join(",")).unwrap();
    }
    Ok(s)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            method,
            workers,
            out_dir,
            no_timing,
        } => {
            let o = Overrides {
                method,
                workers,
                out_dir,
                no_timing,
            };
            let dir = driver::run(&config, &o)?;
            println!("results written to {}", dir.display());
        }
        Command::Validate {
            config,
            method,
            workers,
            out_dir,
        } => {
            let mut cfg = driver::parse_config(&config)?;
            Overrides {
                method,
                workers,
                out_dir,
                no_timing: false,
            }
            .apply(&mut cfg);
            cfg.validate()?;
            let prep = driver::prepare(&cfg)?;
            let p = &prep.problem;
            println!("config ok");
            println!("subdomains {}", p.n_subdomains());
            println!("interfaces {}", p.layout.interfaces.len());
            println!("mortar dofs {}", p.mortar.n_dofs);
            println!("n_term {} (regions {:?})", p.field.n_term(), p.field.region_dims());
            println!("n_real {}", prep.grid.n_real());
            for r in 0..prep.grid.n_regions() {
                println!("n_real region {r}: {}", prep.grid.count_local_realizations(r)?);
            }
            if cfg.solver.method == Method::S3 {
                let mb = s3_basis_bytes(p, &prep.grid)? as f64 / (1024.0 * 1024.0);
                println!("s3 basis memory {mb:.3} MiB");
            }
        }
        Command::Eig { region_spec } => print!("{}", eig(&region_spec)?),
        Command::Grid { colloc_spec } => print!("{}", grid(&colloc_spec)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
