//! JSON run configuration and its translation into a [`Problem`].
//!
//! Unknown keys are rejected everywhere. Parsing reports the key path of a
//! malformed value; semantic validation collects every violated constraint
//! before failing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::collocation::{build_sparse_grid, build_tensor_grid, CollocationGrid};
use crate::darcy::{DarcyBoundary, DarcyOuter};
use crate::error::{Error, Result};
use crate::geometry::{
    build_layout, build_subdomain_mesh, BlockSpec, DomainLayout, InterfaceKind, LayoutConfig, Physics, Point, Rect,
    SegmentKind, Side,
};
use crate::interface::{Method, SolverOptions};
use crate::mortar::{build_mortar_space, MortarDegree};
use crate::problem::{FlowParams, Problem, SubdomainData};
use crate::random_field::{build_kl_region, CovarianceSpec, LogPermField, MeanLogPerm, ModeSelection};
use crate::stokes::{StokesBoundary, StokesOuter};

/// Largest collocation grid the driver will build.
pub const MAX_REALIZATIONS: usize = 1 << 22;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub rect: Rect,
    pub physics: Physics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<usize>,
    /// Cells per axis.
    pub mesh: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementCounts {
    pub dd: usize,
    pub sd: usize,
    pub ss: usize,
}

impl Default for ElementCounts {
    fn default() -> Self {
        ElementCounts { dd: 2, sd: 2, ss: 2 }
    }
}

fn default_coarse_factor() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MortarConfig {
    #[serde(default)]
    pub degree: MortarDegree,
    #[serde(default)]
    pub elements: ElementCounts,
    /// Element counts by interface id.
    #[serde(default)]
    pub overrides: BTreeMap<usize, usize>,
    #[serde(default = "default_coarse_factor")]
    pub coarse_factor: f64,
}

impl Default for MortarConfig {
    fn default() -> Self {
        MortarConfig {
            degree: MortarDegree::default(),
            elements: ElementCounts::default(),
            overrides: BTreeMap::new(),
            coarse_factor: default_coarse_factor(),
        }
    }
}

/// A count given either as a number or per axis / per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Counts {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlRegionConfig {
    pub variance: f64,
    /// Correlation length per axis.
    pub eta: [f64; 2],
    /// Total modes, or `[nx, ny]` for box selection.
    pub n_term: Counts,
    #[serde(default)]
    pub selection: ModeSelection,
}

impl KlRegionConfig {
    fn n_term_and_shape(&self) -> std::result::Result<(usize, Option<[usize; 2]>), String> {
        match &self.n_term {
            Counts::One(n) => Ok((*n, None)),
            Counts::Many(v) if v.len() == 2 => Ok((v[0] * v[1], Some([v[0], v[1]]))),
            Counts::Many(v) => Err(format!("n_term must be a number or [nx, ny], got {} entries", v.len())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CollocationConfig {
    /// Gauss-Hermite points per dimension, uniform or listed.
    Tensor { m: Counts },
    Sparse { level: usize },
}

impl CollocationConfig {
    pub fn build(&self, region_dims: &[usize]) -> Result<CollocationGrid> {
        let n: usize = region_dims.iter().sum();
        match self {
            CollocationConfig::Tensor { m } => {
                let m = match m {
                    Counts::One(k) => vec![*k; n],
                    Counts::Many(v) => v.clone(),
                };
                build_tensor_grid(&m, region_dims, MAX_REALIZATIONS)
            }
            CollocationConfig::Sparse { level } => build_sparse_grid(*level, region_dims, MAX_REALIZATIONS),
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    #[serde(default = "one")]
    pub nu_s: f64,
    #[serde(default = "one")]
    pub nu_d: f64,
    #[serde(default = "one")]
    pub alpha: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            nu_s: 1.0,
            nu_d: 1.0,
            alpha: 1.0,
        }
    }
}

/// Velocity profile along the Stokes part of an outer side, parametrized by
/// `s` in `[0, 1]` in increasing coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Zero,
    /// `4 peak s (1 - s)` along the inward normal.
    Parabolic { peak: f64 },
    /// Tangential velocity varying linearly from `start` to `end`.
    LinearSlip { start: f64, end: f64 },
    Uniform { value: [f64; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum StokesSideConfig {
    Velocity { profile: Profile },
    /// Constant normal stress vector.
    Stress {
        #[serde(default)]
        value: [f64; 2],
    },
}

impl Default for StokesSideConfig {
    fn default() -> Self {
        StokesSideConfig::Velocity { profile: Profile::Zero }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DarcySideConfig {
    #[default]
    NoFlow,
    Pressure { value: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    #[serde(default)]
    pub stokes: BTreeMap<Side, StokesSideConfig>,
    #[serde(default)]
    pub darcy: BTreeMap<Side, DarcySideConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcesConfig {
    #[serde(default)]
    pub stokes_force: [f64; 2],
    #[serde(default)]
    pub darcy_force: [f64; 2],
    #[serde(default)]
    pub darcy_source: f64,
}

fn default_tol() -> f64 {
    1e-9
}

fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_memory_cap_mb: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::S1,
            tol: default_tol(),
            max_iter: None,
            workers: default_workers(),
            basis_memory_cap_mb: None,
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Record wall-clock seconds; disable for byte-identical reruns.
    #[serde(default = "yes")]
    pub timing: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out_dir(),
            timing: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub blocks: Vec<BlockConfig>,
    #[serde(default)]
    pub mortar: MortarConfig,
    #[serde(default)]
    pub kl_regions: Vec<KlRegionConfig>,
    pub mean_log_perm: MeanLogPerm,
    pub collocation: CollocationConfig,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub sources: SourcesConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Parses JSON text, reporting the key path of the first malformed value.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(format!("at '{path}': {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_str(&text)
}

impl RunConfig {
    /// Value-level checks that do not need meshes, all reported together.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.blocks.is_empty() {
            errs.push("blocks: at least one block is required".to_string());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.mesh[0] == 0 || b.mesh[1] == 0 {
                errs.push(format!("blocks[{i}].mesh: cell counts must be positive"));
            }
        }
        let n_regions = self
            .blocks
            .iter()
            .filter_map(|b| b.region)
            .max()
            .map_or(0, |r| r + 1);
        if n_regions != self.kl_regions.len() {
            errs.push(format!(
                "kl_regions: blocks reference {n_regions} regions but {} are configured",
                self.kl_regions.len()
            ));
        }
        for (r, k) in self.kl_regions.iter().enumerate() {
            if !(k.variance > 0.0) {
                errs.push(format!("kl_regions[{r}].variance must be positive"));
            }
            if !(k.eta[0] > 0.0 && k.eta[1] > 0.0) {
                errs.push(format!("kl_regions[{r}].eta must be positive"));
            }
            match k.n_term_and_shape() {
                Err(e) => errs.push(format!("kl_regions[{r}].{e}")),
                Ok((_, None)) if k.selection == ModeSelection::Box => {
                    errs.push(format!("kl_regions[{r}].n_term must be [nx, ny] for box selection"))
                }
                Ok(_) => {}
            }
        }
        if let Err(e) = self.mean_log_perm.validate(self.kl_regions.len()) {
            errs.push(format!("mean_log_perm: {e}"));
        }
        for (name, v) in [("nu_s", self.physics.nu_s), ("nu_d", self.physics.nu_d)] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("physics.{name} must be positive"));
            }
        }
        if !(self.physics.alpha >= 0.0) {
            errs.push("physics.alpha must be non-negative".into());
        }
        if !(self.solver.tol > 0.0) {
            errs.push("solver.tol must be positive".into());
        }
        if self.solver.workers == 0 {
            errs.push("solver.workers must be at least 1".into());
        }
        if !(self.mortar.coarse_factor > 0.0) {
            errs.push("mortar.coarse_factor must be positive".into());
        }
        let e = &self.mortar.elements;
        if e.dd == 0 || e.sd == 0 || e.ss == 0 {
            errs.push("mortar.elements: counts must be positive".into());
        }
        if let CollocationConfig::Tensor { m: Counts::Many(v) } = &self.collocation {
            let total: usize = self
                .kl_regions
                .iter()
                .filter_map(|k| k.n_term_and_shape().ok())
                .map(|(n, _)| n)
                .sum();
            if v.len() != total {
                errs.push(format!("collocation.m lists {} counts for {total} stochastic dimensions", v.len()));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn layout_config(&self) -> LayoutConfig {
        LayoutConfig {
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockSpec {
                    rect: b.rect,
                    physics: b.physics,
                    region: b.region,
                })
                .collect(),
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            method: self.solver.method,
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            workers: self.solver.workers,
            basis_memory_cap_mb: self.solver.basis_memory_cap_mb,
        }
    }

    /// Mortar element count of every interface.
    pub fn mortar_elements(&self, layout: &DomainLayout) -> Vec<usize> {
        layout
            .interfaces
            .iter()
            .map(|i| {
                self.mortar.overrides.get(&i.id).copied().unwrap_or(match i.kind {
                    InterfaceKind::DarcyDarcy => self.mortar.elements.dd,
                    InterfaceKind::StokesDarcy => self.mortar.elements.sd,
                    InterfaceKind::StokesStokes => self.mortar.elements.ss,
                })
            })
            .collect()
    }

    pub fn build_field(&self, layout: &DomainLayout) -> Result<LogPermField> {
        let regions = self
            .kl_regions
            .iter()
            .enumerate()
            .map(|(r, k)| {
                let support: Vec<Rect> = layout.regions[r].iter().map(|&b| layout.blocks[b].rect).collect();
                // non-rectangular regions use their bounding rectangle
                let rect = support.iter().skip(1).fold(support[0], |a, b| a.union(b));
                let (n, shape) = k.n_term_and_shape().map_err(Error::config)?;
                build_kl_region(
                    r,
                    CovarianceSpec {
                        variance: k.variance,
                        eta: k.eta,
                        rect,
                    },
                    n,
                    k.selection,
                    shape,
                    support,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        LogPermField::new(self.mean_log_perm.clone(), regions, layout.tol)
    }

    /// Builds layout, meshes, mortar space, field and boundary data.
    pub fn build_problem(&self) -> Result<Problem> {
        self.validate()?;
        let layout = build_layout(&self.layout_config())?;
        if layout.regions.len() != self.kl_regions.len() {
            return Err(Error::config(format!(
                "kl_regions: layout has {} regions but {} are configured",
                layout.regions.len(),
                self.kl_regions.len()
            )));
        }
        let meshes = self
            .blocks
            .iter()
            .enumerate()
            .map(|(id, b)| build_subdomain_mesh(&layout, id, b.mesh[0], b.mesh[1]))
            .collect::<Result<Vec<_>>>()?;
        let mortar = build_mortar_space(
            &layout,
            &meshes,
            self.mortar.degree,
            &self.mortar_elements(&layout),
            self.mortar.coarse_factor,
        )?;
        let field = self.build_field(&layout)?;
        let data = meshes
            .iter()
            .map(|mesh| match mesh.physics {
                Physics::Stokes => SubdomainData::Stokes {
                    boundary: self.stokes_boundary(&layout, mesh),
                    force: {
                        let f = self.sources.stokes_force;
                        Arc::new(move |_| f)
                    },
                },
                Physics::Darcy => {
                    let boundary = DarcyBoundary::from_fn(mesh, |e, _| match (e.kind, self.boundary.darcy.get(&e.side)) {
                        (SegmentKind::Outer, Some(DarcySideConfig::Pressure { value })) => DarcyOuter::Pressure(*value),
                        _ => DarcyOuter::NoFlow,
                    });
                    let f = self.sources.darcy_force;
                    let q = self.sources.darcy_source;
                    SubdomainData::darcy(mesh, boundary, Arc::new(move |_| f), Arc::new(move |_| q))
                }
            })
            .collect();
        Problem::new(
            layout,
            meshes,
            mortar,
            field,
            FlowParams {
                nu_s: self.physics.nu_s,
                nu_d: self.physics.nu_d,
                alpha: self.physics.alpha,
            },
            data,
        )
    }

    fn stokes_boundary(&self, layout: &DomainLayout, mesh: &crate::geometry::SubdomainMesh) -> StokesBoundary {
        StokesBoundary::from_fn(mesh, |e| {
            let spec = self.boundary.stokes.get(&e.side).cloned().unwrap_or_default();
            match spec {
                StokesSideConfig::Stress { value } => StokesOuter::Traction(Arc::new(move |_| value)),
                StokesSideConfig::Velocity { profile } => {
                    let (a, b) = stokes_extent(layout, e.side);
                    let side = e.side;
                    StokesOuter::Velocity(Arc::new(move |x: Point| {
                        let t = match side.orientation() {
                            crate::geometry::Orientation::Vertical => x[1],
                            crate::geometry::Orientation::Horizontal => x[0],
                        };
                        let s = ((t - a) / (b - a)).clamp(0.0, 1.0);
                        let n = side.outward_normal();
                        let tangent = [n[1].abs(), n[0].abs()];
                        match profile {
                            Profile::Zero => [0.0, 0.0],
                            Profile::Parabolic { peak } => {
                                let v = 4.0 * peak * s * (1.0 - s);
                                [-v * n[0], -v * n[1]]
                            }
                            Profile::LinearSlip { start, end } => {
                                let v = start + (end - start) * s;
                                [v * tangent[0], v * tangent[1]]
                            }
                            Profile::Uniform { value } => value,
                        }
                    }))
                }
            }
        })
    }
}

/// Extent of the Stokes part of an outer side of the domain.
fn stokes_extent(layout: &DomainLayout, side: Side) -> (f64, f64) {
    let (mut a, mut b) = (f64::INFINITY, f64::NEG_INFINITY);
    for (id, segs) in layout.boundary.iter().enumerate() {
        if layout.physics(id) != Physics::Stokes {
            continue;
        }
        for s in segs.iter().filter(|s| s.side == side && s.kind == SegmentKind::Outer) {
            a = a.min(s.start);
            b = b.max(s.end);
        }
    }
    (a, b)
}
