//! Result files: solve statistics, merged field CSV, legacy VTK per
//! subdomain, mortar moments, config echo and manifest.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! results give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::geometry::Physics;
use crate::interface::RunOutput;
use crate::problem::Problem;

use super::config::RunConfig;

pub const STATS_FILE: &str = "solve_stats.csv";
pub const FIELDS_FILE: &str = "fields.csv";
pub const MORTAR_FILE: &str = "mortar.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

pub fn stats_csv(out: &RunOutput, timing: bool) -> String {
    let mut s = String::from("method,subdomain,factorizations,backsolves,cg_iters_total,wall_seconds\n");
    for (id, st) in out.stats.iter().enumerate() {
        let wall = if timing { st.wall_seconds } else { 0.0 };
        writeln!(
            s,
            "{},{id},{},{},{},{wall}",
            out.method, st.factorizations, st.backsolves, st.cg_iters_total
        )
        .unwrap();
    }
    s
}

pub fn fields_csv(problem: &Problem, out: &RunOutput) -> String {
    let mut s = String::from("x,y,mean_u,mean_v,mean_p,var_u,var_v,var_p\n");
    for id in 0..problem.n_subdomains() {
        let (mean, var) = (&out.moments.mean[id], &out.moments.variance[id]);
        for (k, x) in problem.output_points(id).iter().enumerate() {
            let m = &mean[3 * k..3 * k + 3];
            let v = &var[3 * k..3 * k + 3];
            writeln!(s, "{},{},{},{},{},{},{},{}", x[0], x[1], m[0], m[1], m[2], v[0], v[1], v[2]).unwrap();
        }
    }
    s
}

pub fn mortar_csv(out: &RunOutput) -> String {
    let n = out.moments.mean.len() - 1;
    let mut s = String::from("dof,mean,var\n");
    for (k, (m, v)) in out.moments.mean[n].iter().zip(&out.moments.variance[n]).enumerate() {
        writeln!(s, "{k},{m},{v}").unwrap();
    }
    s
}

/// Legacy ASCII VTK of one subdomain: quads with cell data for Darcy,
/// triangles with point data for Stokes.
pub fn subdomain_vtk(problem: &Problem, out: &RunOutput, id: usize) -> String {
    let mesh = &problem.meshes[id];
    let mut s = String::new();
    writeln!(s, "# vtk DataFile Version 3.0\nsubdomain {id} mean and variance\nASCII\nDATASET UNSTRUCTURED_GRID").unwrap();
    writeln!(s, "POINTS {} double", mesh.n_vertices()).unwrap();
    for v in 0..mesh.n_vertices() {
        let x = mesh.vertex_point(v);
        writeln!(s, "{} {} 0", x[0], x[1]).unwrap();
    }
    let (cells, ctype, data): (Vec<Vec<usize>>, u8, &str) = match mesh.physics {
        Physics::Darcy => (
            (0..mesh.n_cells())
                .map(|c| {
                    let (i, j) = (c % mesh.nx, c / mesh.nx);
                    vec![
                        mesh.vertex_index(i, j),
                        mesh.vertex_index(i + 1, j),
                        mesh.vertex_index(i + 1, j + 1),
                        mesh.vertex_index(i, j + 1),
                    ]
                })
                .collect(),
            9,
            "CELL_DATA",
        ),
        Physics::Stokes => (mesh.triangles().into_iter().map(|t| t.to_vec()).collect(), 5, "POINT_DATA"),
    };
    let size: usize = cells.iter().map(|c| c.len() + 1).sum();
    writeln!(s, "CELLS {} {size}", cells.len()).unwrap();
    for c in &cells {
        let ids: Vec<String> = c.iter().map(|v| v.to_string()).collect();
        writeln!(s, "{} {}", c.len(), ids.join(" ")).unwrap();
    }
    writeln!(s, "CELL_TYPES {}", cells.len()).unwrap();
    for _ in &cells {
        writeln!(s, "{ctype}").unwrap();
    }
    let n = problem.output_points(id).len();
    writeln!(s, "{data} {n}").unwrap();
    for (name, f) in [("mean", &out.moments.mean[id]), ("variance", &out.moments.variance[id])] {
        writeln!(s, "VECTORS {name}_velocity double").unwrap();
        for k in 0..n {
            writeln!(s, "{} {} 0", f[3 * k], f[3 * k + 1]).unwrap();
        }
        writeln!(s, "SCALARS {name}_pressure double 1\nLOOKUP_TABLE default").unwrap();
        for k in 0..n {
            writeln!(s, "{}", f[3 * k + 2]).unwrap();
        }
    }
    s
}

#[derive(Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub method: String,
    pub n_subdomains: usize,
    pub mesh_sizes: Vec<[usize; 2]>,
    pub n_term: usize,
    pub region_dims: Vec<usize>,
    pub n_real: usize,
    /// Local realization count of each KL region.
    pub n_real_local: Vec<usize>,
    pub mortar_dofs: usize,
    pub subdomain_mortar_dofs: Vec<usize>,
    pub cg_iterations: Vec<usize>,
    pub total_weight: f64,
    pub files: Vec<String>,
}

pub fn manifest(problem: &Problem, out: &RunOutput, files: Vec<String>) -> Manifest {
    Manifest {
        version: env!("CARGO_PKG_VERSION"),
        method: out.method.to_string(),
        n_subdomains: problem.n_subdomains(),
        mesh_sizes: problem.meshes.iter().map(|m| [m.nx, m.ny]).collect(),
        n_term: problem.field.n_term(),
        region_dims: problem.field.region_dims(),
        n_real: out.lambdas.len(),
        n_real_local: out.local_counts.clone(),
        mortar_dofs: problem.mortar.n_dofs,
        subdomain_mortar_dofs: (0..problem.n_subdomains())
            .map(|i| problem.mortar.subdomain_dofs(&problem.layout, i).len())
            .collect(),
        cg_iterations: out.iterations.clone(),
        total_weight: out.moments.total_weight,
        files,
    }
}

/// Writes every result file into `dir`.
pub fn write_all(dir: &Path, cfg: &RunConfig, problem: &Problem, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut files = vec![
        STATS_FILE.to_string(),
        FIELDS_FILE.to_string(),
        MORTAR_FILE.to_string(),
        CONFIG_FILE.to_string(),
    ];
    fs::write(dir.join(STATS_FILE), stats_csv(out, cfg.output.timing))?;
    fs::write(dir.join(FIELDS_FILE), fields_csv(problem, out))?;
    fs::write(dir.join(MORTAR_FILE), mortar_csv(out))?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(cfg).expect("config serializes"))?;
    for id in 0..problem.n_subdomains() {
        let name = format!("subdomain_{id}.vtk");
        fs::write(dir.join(&name), subdomain_vtk(problem, out, id))?;
        files.push(name);
    }
    let m = manifest(problem, out, files);
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&m).expect("manifest serializes"))?;
    Ok(())
}
