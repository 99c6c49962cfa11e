//! A fully specified stochastic Stokes-Darcy problem: layout, meshes,
//! mortar space, log-permeability field, coefficients and per-subdomain
//! data. Everything here is independent of the realization.

use std::sync::Arc;

use crate::darcy::{darcy_load_vector, interface_permeability, DarcyBoundary};
use crate::error::{Error, Result};
use crate::geometry::{DomainLayout, InterfaceKind, Physics, Point, SubdomainMesh};
use crate::mortar::MortarSpace;
use crate::random_field::LogPermField;
use crate::stokes::{BjsData, StokesBoundary};

pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    /// Stokes viscosity.
    pub nu_s: f64,
    /// Darcy viscosity.
    pub nu_d: f64,
    /// Slip friction parameter.
    pub alpha: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            nu_s: 1.0,
            nu_d: 1.0,
            alpha: 1.0,
        }
    }
}

#[derive(Clone)]
pub enum SubdomainData {
    Stokes {
        boundary: StokesBoundary,
        force: VectorFn,
    },
    Darcy {
        boundary: DarcyBoundary,
        /// Bar load vector; independent of the permeability.
        load: Vec<f64>,
        /// Cell integrals of the source.
        source_cells: Vec<f64>,
    },
}

impl SubdomainData {
    pub fn darcy(mesh: &SubdomainMesh, boundary: DarcyBoundary, force: VectorFn, source: ScalarFn) -> Self {
        let load = darcy_load_vector(mesh, &boundary, &*force, &*source);
        let source_cells = crate::darcy::cell_integrals(mesh, &*source);
        SubdomainData::Darcy {
            boundary,
            load,
            source_cells,
        }
    }
}

#[derive(Clone)]
pub struct Problem {
    pub layout: DomainLayout,
    pub meshes: Vec<SubdomainMesh>,
    pub mortar: MortarSpace,
    pub field: LogPermField,
    pub params: FlowParams,
    pub data: Vec<SubdomainData>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("subdomains", &self.n_subdomains())
            .field("mortar_dofs", &self.mortar.n_dofs)
            .field("n_term", &self.field.n_term())
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn new(
        layout: DomainLayout,
        meshes: Vec<SubdomainMesh>,
        mortar: MortarSpace,
        field: LogPermField,
        params: FlowParams,
        data: Vec<SubdomainData>,
    ) -> Result<Self> {
        let n = layout.n_subdomains();
        if meshes.len() != n || data.len() != n {
            return Err(Error::State(format!(
                "{n} subdomains but {} meshes and {} data entries",
                meshes.len(),
                data.len()
            )));
        }
        for (id, d) in data.iter().enumerate() {
            let ok = matches!(
                (layout.physics(id), d),
                (Physics::Stokes, SubdomainData::Stokes { .. }) | (Physics::Darcy, SubdomainData::Darcy { .. })
            );
            if !ok || meshes[id].subdomain != id {
                return Err(Error::State(format!("subdomain {id}: mesh or data does not match the layout")));
            }
        }
        for (name, v) in [("nu_s", params.nu_s), ("nu_d", params.nu_d)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(params.alpha >= 0.0 && params.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be non-negative, got {}", params.alpha)));
        }
        Ok(Problem {
            layout,
            meshes,
            mortar,
            field,
            params,
            data,
        })
    }

    pub fn n_subdomains(&self) -> usize {
        self.layout.n_subdomains()
    }

    /// Cell permeability of every Darcy subdomain for stochastic point `y`.
    pub fn permeability(&self, y: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
        crate::random_field::realize_permeability(&self.layout, &self.field, &self.meshes, y)
    }

    /// Friction data of a Stokes subdomain from the Darcy-side cell values.
    pub fn bjs_data(&self, id: usize, perms: &[Option<Vec<f64>>]) -> Vec<BjsData> {
        self.layout
            .interfaces_of(id)
            .filter(|i| i.kind == InterfaceKind::StokesDarcy)
            .map(|i| {
                let other = i.other(id).expect("interface touches subdomain");
                let perm = perms[other].as_deref().expect("Darcy neighbour has a permeability");
                BjsData {
                    interface: i.id,
                    pieces: interface_permeability(&self.meshes[other], perm, i.id),
                }
            })
            .collect()
    }

    /// Points at which subdomain fields are sampled for statistics: cell
    /// centroids in Darcy subdomains, mesh vertices in Stokes subdomains.
    pub fn output_points(&self, id: usize) -> Vec<Point> {
        let m = &self.meshes[id];
        match self.layout.physics(id) {
            Physics::Darcy => (0..m.n_cells()).map(|c| m.cell_centroid(c)).collect(),
            Physics::Stokes => (0..m.n_vertices()).map(|v| m.vertex_point(v)).collect(),
        }
    }
}
