//! Lowest-order Raviart-Thomas / piecewise-constant mixed elements on a
//! uniform rectangular subdomain grid.
//!
//! Unknowns: the normal velocity on every edge (x-component on vertical
//! edges, y-component on horizontal edges), then one pressure per cell.
//! Vertical edge `(i, j)` is `j (nx+1) + i`, horizontal edge `(i, j)` is
//! `nV + j nx + i`, cell `(i, j)` is `nE + j nx + i`.
//!
//! The saddle-point system is
//! `(nu K^-1 u, v) - (p, div v) = (f, v) - <p_D, v.n>` and
//! `-(div u, w) = -(q, w)`; no-flow edges are eliminated.

use crate::error::{Error, Result};
use crate::geometry::{BoundaryEdge, DomainLayout, Point, SegmentKind, Side, SubdomainMesh};
use crate::linalg::{ConstrainedSystem, TripletMatrix};
use crate::quadrature::gauss_legendre;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DarcyOuter {
    NoFlow,
    /// Edge average of the prescribed pressure.
    Pressure(f64),
}

/// Outer boundary data aligned with `mesh.boundary_edges`; entries for
/// interface edges are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct DarcyBoundary(pub Vec<DarcyOuter>);

impl DarcyBoundary {
    pub fn from_fn(mesh: &SubdomainMesh, f: impl Fn(&BoundaryEdge, Point) -> DarcyOuter) -> Self {
        DarcyBoundary(
            mesh.boundary_edges
                .iter()
                .map(|e| f(e, e.side.point(&mesh.rect, 0.5 * (e.start + e.end))))
                .collect(),
        )
    }
}

/// Interface edges of one subdomain side of an interface, in increasing
/// parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct DarcySlot {
    pub interface: usize,
    /// `+1` on the lower-id side, `-1` on the higher-id side.
    pub sign: f64,
    pub dofs: Vec<usize>,
    /// Global normal dotted with the edge dof direction.
    pub normal_dir: Vec<f64>,
    pub breaks: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DarcySolution {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
}

impl DarcySolution {
    pub fn add(&self, other: &DarcySolution) -> DarcySolution {
        DarcySolution {
            velocity: self.velocity.iter().zip(&other.velocity).map(|(a, b)| a + b).collect(),
            pressure: self.pressure.iter().zip(&other.pressure).map(|(a, b)| a + b).collect(),
        }
    }
}

pub(crate) struct DofMap {
    pub nx: usize,
    pub ny: usize,
    pub nv: usize,
    pub ne: usize,
}

impl DofMap {
    pub fn new(mesh: &SubdomainMesh) -> Self {
        let nv = (mesh.nx + 1) * mesh.ny;
        DofMap {
            nx: mesh.nx,
            ny: mesh.ny,
            nv,
            ne: nv + mesh.nx * (mesh.ny + 1),
        }
    }

    pub fn n(&self) -> usize {
        self.ne + self.nx * self.ny
    }

    /// Left, right, bottom and top edge dofs of cell `(i, j)`.
    pub fn cell_edges(&self, i: usize, j: usize) -> [usize; 4] {
        let l = j * (self.nx + 1) + i;
        [l, l + 1, self.nv + j * self.nx + i, self.nv + (j + 1) * self.nx + i]
    }

    pub fn boundary_dof(&self, e: &BoundaryEdge) -> usize {
        let k = e.index;
        match e.side {
            Side::Left => k * (self.nx + 1),
            Side::Right => k * (self.nx + 1) + self.nx,
            Side::Bottom => self.nv + k,
            Side::Top => self.nv + self.ny * self.nx + k,
        }
    }

    /// Cell adjacent to a boundary edge.
    pub fn boundary_cell(&self, e: &BoundaryEdge) -> usize {
        let k = e.index;
        match e.side {
            Side::Left => k * self.nx,
            Side::Right => k * self.nx + self.nx - 1,
            Side::Bottom => k,
            Side::Top => (self.ny - 1) * self.nx + k,
        }
    }
}

/// Edge dof direction dotted with the outward normal of `side`.
fn outward_dir(side: Side) -> f64 {
    match side {
        Side::Left | Side::Bottom => -1.0,
        Side::Right | Side::Top => 1.0,
    }
}

fn normal_component(side: Side, n: [f64; 2]) -> f64 {
    match side.orientation() {
        crate::geometry::Orientation::Vertical => n[0],
        crate::geometry::Orientation::Horizontal => n[1],
    }
}

pub struct DarcyOperator {
    pub mesh: SubdomainMesh,
    pub nu: f64,
    pub perm: Vec<f64>,
    pub slots: Vec<DarcySlot>,
    dofs: DofMap,
    system: ConstrainedSystem,
}

impl DarcyOperator {
    /// Assembles and factorizes the subdomain system for the per-cell
    /// permeability `perm`.
    pub fn assemble(
        layout: &DomainLayout,
        mesh: &SubdomainMesh,
        perm: &[f64],
        nu: f64,
        boundary: &DarcyBoundary,
    ) -> Result<Self> {
        let dofs = DofMap::new(mesh);
        if perm.len() != mesh.n_cells() || perm.iter().any(|&k| !(k > 0.0)) {
            return Err(Error::Assembly(format!(
                "subdomain {}: permeability must be positive on all {} cells",
                mesh.subdomain,
                mesh.n_cells()
            )));
        }
        let matrix = assemble_matrix(mesh, &dofs, perm, nu);
        let mut fixed = vec![false; dofs.n()];
        let mut natural = false;
        for (e, bc) in mesh.boundary_edges.iter().zip(&boundary.0) {
            match (e.kind, bc) {
                (SegmentKind::Interface(_), _) | (SegmentKind::Outer, DarcyOuter::Pressure(_)) => natural = true,
                (SegmentKind::Outer, DarcyOuter::NoFlow) => fixed[dofs.boundary_dof(e)] = true,
            }
        }
        if !natural {
            return Err(Error::Assembly(format!(
                "subdomain {}: no pressure or interface edge, pressure is undetermined",
                mesh.subdomain
            )));
        }
        let slots = layout
            .interfaces_of(mesh.subdomain)
            .map(|iface| {
                let edges = mesh.interface_edges(iface.id);
                DarcySlot {
                    interface: iface.id,
                    sign: iface.sign(mesh.subdomain).expect("interface touches subdomain"),
                    dofs: edges.iter().map(|e| dofs.boundary_dof(e)).collect(),
                    normal_dir: edges.iter().map(|e| normal_component(e.side, iface.normal)).collect(),
                    breaks: mesh.interface_vertices(iface.id),
                }
            })
            .collect();
        let system = ConstrainedSystem::factorize(matrix, fixed)?;
        Ok(DarcyOperator {
            mesh: mesh.clone(),
            nu,
            perm: perm.to_vec(),
            slots,
            dofs,
            system,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.n()
    }

    pub fn matrix(&self) -> &TripletMatrix {
        self.system.matrix()
    }

    fn split(&self, x: Vec<f64>) -> DarcySolution {
        let ne = self.dofs.ne;
        DarcySolution {
            pressure: x[ne..].to_vec(),
            velocity: x[..ne].to_vec(),
        }
    }

    /// Star problem: zero sources and outer data, interface pressure entering
    /// as `-<lambda, v.n_i>`. `moments[s][e]` is the integral of the projected
    /// interface datum over edge `e` of slot `s`.
    pub fn solve_star(&self, moments: &[Vec<f64>]) -> Result<DarcySolution> {
        let mut rhs = vec![0.0; self.dofs.n()];
        for (slot, m) in self.slots.iter().zip(moments) {
            for ((&d, &nd), &v) in slot.dofs.iter().zip(&slot.normal_dir).zip(m) {
                rhs[d] -= slot.sign * nd * v;
            }
        }
        Ok(self.split(self.system.solve(&rhs, None)?))
    }

    /// Bar problem with a load vector from [`darcy_load_vector`].
    pub fn solve_bar(&self, load: &[f64]) -> Result<DarcySolution> {
        Ok(self.split(self.system.solve(load, None)?))
    }

    /// Normal velocity `u.n` (global interface normal) on every edge of a slot.
    pub fn normal_trace(&self, sol: &DarcySolution, slot: usize) -> Vec<f64> {
        let s = &self.slots[slot];
        s.dofs.iter().zip(&s.normal_dir).map(|(&d, &nd)| sol.velocity[d] * nd).collect()
    }

    /// `u.n` on the edges of `interface`, global orientation.
    pub fn extract_normal_flux(&self, sol: &DarcySolution, interface: usize) -> Option<Vec<f64>> {
        self.slots
            .iter()
            .position(|s| s.interface == interface)
            .map(|k| self.normal_trace(sol, k))
    }

    /// Cell-centred velocity (average of opposite edge values).
    pub fn cell_velocity(&self, sol: &DarcySolution, cell: usize) -> [f64; 2] {
        let [l, r, b, t] = self.dofs.cell_edges(cell % self.mesh.nx, cell / self.mesh.nx);
        [
            0.5 * (sol.velocity[l] + sol.velocity[r]),
            0.5 * (sol.velocity[b] + sol.velocity[t]),
        ]
    }

    /// Outward flux through every boundary edge, aligned with `mesh.boundary_edges`.
    pub fn boundary_fluxes(&self, sol: &DarcySolution) -> Vec<f64> {
        self.mesh
            .boundary_edges
            .iter()
            .map(|e| sol.velocity[self.dofs.boundary_dof(e)] * outward_dir(e.side) * (e.end - e.start))
            .collect()
    }

    /// Max over cells of `|int_cell div u - int_cell q|`.
    pub fn mass_balance_residual(&self, sol: &DarcySolution, q_cells: &[f64]) -> f64 {
        let (hx, hy) = (self.mesh.hx(), self.mesh.hy());
        (0..self.mesh.n_cells())
            .map(|c| {
                let [l, r, b, t] = self.dofs.cell_edges(c % self.mesh.nx, c / self.mesh.nx);
                let div = hy * (sol.velocity[r] - sol.velocity[l]) + hx * (sol.velocity[t] - sol.velocity[b]);
                (div - q_cells[c]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Permeability of the cells adjacent to an interface as `(t0, t1, K)`
    /// pieces along the interface.
    pub fn interface_permeability(&self, interface: usize) -> Vec<(f64, f64, f64)> {
        interface_permeability(&self.mesh, &self.perm, interface)
    }

    /// L2 errors of velocity and pressure against exact fields.
    pub fn l2_errors(
        &self,
        sol: &DarcySolution,
        u_exact: impl Fn(Point) -> [f64; 2],
        p_exact: impl Fn(Point) -> f64,
    ) -> (f64, f64) {
        let g = gauss_legendre(4, 0.0, 1.0);
        let (mut eu, mut ep) = (0.0, 0.0);
        for j in 0..self.mesh.ny {
            for i in 0..self.mesh.nx {
                let rect = self.mesh.cell_rect(i, j);
                let [l, r, b, t] = self.dofs.cell_edges(i, j);
                let p = sol.pressure[j * self.mesh.nx + i];
                for &(sx, wx) in &g {
                    for &(sy, wy) in &g {
                        let x = [rect.x0 + sx * rect.width(), rect.y0 + sy * rect.height()];
                        let w = wx * wy * rect.area();
                        let uh = [
                            sol.velocity[l] * (1.0 - sx) + sol.velocity[r] * sx,
                            sol.velocity[b] * (1.0 - sy) + sol.velocity[t] * sy,
                        ];
                        let ue = u_exact(x);
                        eu += w * ((uh[0] - ue[0]).powi(2) + (uh[1] - ue[1]).powi(2));
                        ep += w * (p - p_exact(x)).powi(2);
                    }
                }
            }
        }
        (eu.sqrt(), ep.sqrt())
    }
}

fn assemble_matrix(mesh: &SubdomainMesh, dofs: &DofMap, perm: &[f64], nu: f64) -> TripletMatrix {
    let (hx, hy) = (mesh.hx(), mesh.hy());
    let mut m = TripletMatrix::new(dofs.n());
    for j in 0..mesh.ny {
        for i in 0..mesh.nx {
            let c = j * mesh.nx + i;
            let s = nu / perm[c] * hx * hy;
            let [l, r, b, t] = dofs.cell_edges(i, j);
            for (a, bb) in [(l, r), (b, t)] {
                m.add(a, a, s / 3.0);
                m.add(bb, bb, s / 3.0);
                m.add_sym(a, bb, s / 6.0);
            }
            let p = dofs.ne + c;
            m.add_sym(p, l, hy);
            m.add_sym(p, r, -hy);
            m.add_sym(p, b, hx);
            m.add_sym(p, t, -hx);
        }
    }
    m
}

/// Load vector of the bar problem: body force, pressure boundary data and
/// source. Independent of the permeability.
pub fn darcy_load_vector(
    mesh: &SubdomainMesh,
    boundary: &DarcyBoundary,
    f: impl Fn(Point) -> [f64; 2],
    q: impl Fn(Point) -> f64,
) -> Vec<f64> {
    let dofs = DofMap::new(mesh);
    let mut rhs = vec![0.0; dofs.n()];
    let g = gauss_legendre(3, 0.0, 1.0);
    for j in 0..mesh.ny {
        for i in 0..mesh.nx {
            let rect = mesh.cell_rect(i, j);
            let [l, r, b, t] = dofs.cell_edges(i, j);
            let mut qi = 0.0;
            for &(sx, wx) in &g {
                for &(sy, wy) in &g {
                    let x = [rect.x0 + sx * rect.width(), rect.y0 + sy * rect.height()];
                    let w = wx * wy * rect.area();
                    let fv = f(x);
                    rhs[l] += w * fv[0] * (1.0 - sx);
                    rhs[r] += w * fv[0] * sx;
                    rhs[b] += w * fv[1] * (1.0 - sy);
                    rhs[t] += w * fv[1] * sy;
                    qi += w * q(x);
                }
            }
            rhs[dofs.ne + j * mesh.nx + i] = -qi;
        }
    }
    for (e, bc) in mesh.boundary_edges.iter().zip(&boundary.0) {
        if let (SegmentKind::Outer, DarcyOuter::Pressure(pd)) = (e.kind, bc) {
            rhs[dofs.boundary_dof(e)] -= pd * (e.end - e.start) * outward_dir(e.side);
        }
    }
    rhs
}

/// Per-cell permeability `perm` of the cells adjacent to an interface as
/// `(t0, t1, K)` pieces, without assembling an operator.
pub fn interface_permeability(mesh: &SubdomainMesh, perm: &[f64], interface: usize) -> Vec<(f64, f64, f64)> {
    let dofs = DofMap::new(mesh);
    mesh.interface_edges(interface)
        .iter()
        .map(|e| (e.start, e.end, perm[dofs.boundary_cell(e)]))
        .collect()
}

/// Cell integrals of a source, for mass-balance checks.
pub fn cell_integrals(mesh: &SubdomainMesh, q: impl Fn(Point) -> f64) -> Vec<f64> {
    let g = gauss_legendre(3, 0.0, 1.0);
    (0..mesh.n_cells())
        .map(|c| {
            let rect = mesh.cell_rect(c % mesh.nx, c / mesh.nx);
            g.iter()
                .flat_map(|&(sx, wx)| g.iter().map(move |&(sy, wy)| (sx, sy, wx * wy)))
                .map(|(sx, sy, w)| w * rect.area() * q([rect.x0 + sx * rect.width(), rect.y0 + sy * rect.height()]))
                .sum()
        })
        .collect()
}
