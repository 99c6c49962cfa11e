//! Taylor-Hood (P2 velocity, P1 pressure) elements on triangulated Stokes
//! subdomains, with the Beavers-Joseph-Saffman friction term on
//! Stokes-Darcy interfaces.
//!
//! P2 nodes form the `(2nx+1) x (2ny+1)` lattice of vertices and edge
//! midpoints; node `(a, b)` has index `b (2nx+1) + a`. Velocity unknowns are
//! interleaved (`2 node + component`), followed by one pressure per vertex,
//! followed by constraint multipliers.
//!
//! Rigid motions left free by the boundary conditions are removed with
//! constraint rows that make the velocity orthogonal to them in the nodal
//! Euclidean product. If no boundary is natural, the pressure mean is fixed
//! as well.

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{BoundaryEdge, DomainLayout, InterfaceKind, Point, SegmentKind, Side, SubdomainMesh};
use crate::linalg::{ConstrainedSystem, TripletMatrix};
use crate::problem::VectorFn;
use crate::quadrature::{gauss_legendre, triangle_rule};

#[derive(Clone)]
pub enum StokesOuter {
    Velocity(VectorFn),
    /// Prescribed normal stress `T(u, p) n`.
    Traction(VectorFn),
}

/// Outer boundary data aligned with `mesh.boundary_edges`; entries for
/// interface edges are ignored.
#[derive(Clone)]
pub struct StokesBoundary(pub Vec<StokesOuter>);

impl StokesBoundary {
    pub fn from_fn(mesh: &SubdomainMesh, f: impl Fn(&BoundaryEdge) -> StokesOuter) -> Self {
        StokesBoundary(mesh.boundary_edges.iter().map(f).collect())
    }
}

/// Friction coefficient pieces `(t0, t1, K)` along one Stokes-Darcy interface.
#[derive(Clone, Debug, PartialEq)]
pub struct BjsData {
    pub interface: usize,
    pub pieces: Vec<(f64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StokesSlot {
    pub interface: usize,
    pub kind: InterfaceKind,
    pub sign: f64,
    /// Trace nodes along the interface, increasing parameter.
    pub nodes: Vec<usize>,
    pub normal: [f64; 2],
    pub tangent: [f64; 2],
    pub breaks: Vec<f64>,
}

impl StokesSlot {
    /// Mortar components acting on this slot: normal only on Stokes-Darcy
    /// interfaces, normal and tangential on Stokes-Stokes ones.
    pub fn components(&self) -> usize {
        self.kind.components()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StokesSolution {
    /// Interleaved nodal velocity.
    pub velocity: Vec<f64>,
    /// Vertex pressures.
    pub pressure: Vec<f64>,
}

impl StokesSolution {
    pub fn add(&self, other: &StokesSolution) -> StokesSolution {
        StokesSolution {
            velocity: self.velocity.iter().zip(&other.velocity).map(|(a, b)| a + b).collect(),
            pressure: self.pressure.iter().zip(&other.pressure).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Lattice bookkeeping shared by assembly and post-processing.
#[derive(Clone, Debug)]
pub(crate) struct Lattice {
    pub nx: usize,
    pub ny: usize,
    pub na: usize,
    pub nb: usize,
}

impl Lattice {
    pub fn new(mesh: &SubdomainMesh) -> Self {
        Lattice {
            nx: mesh.nx,
            ny: mesh.ny,
            na: 2 * mesh.nx + 1,
            nb: 2 * mesh.ny + 1,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.na * self.nb
    }

    pub fn n_vertices(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn node(&self, a: usize, b: usize) -> usize {
        b * self.na + a
    }

    pub fn vertex_node(&self, v: usize) -> usize {
        let (i, j) = (v % (self.nx + 1), v / (self.nx + 1));
        self.node(2 * i, 2 * j)
    }

    /// Lattice node `k` (in half steps) along a side.
    pub fn side_node(&self, side: Side, k: usize) -> usize {
        match side {
            Side::Left => self.node(0, k),
            Side::Right => self.node(self.na - 1, k),
            Side::Bottom => self.node(k, 0),
            Side::Top => self.node(k, self.nb - 1),
        }
    }
}

pub(crate) fn node_point(mesh: &SubdomainMesh, lat: &Lattice, n: usize) -> Point {
    let (a, b) = (n % lat.na, n / lat.na);
    [
        crate::geometry::grid_coord(mesh.rect.x0, mesh.rect.x1, a, lat.na - 1),
        crate::geometry::grid_coord(mesh.rect.y0, mesh.rect.y1, b, lat.nb - 1),
    ]
}

/// Local P2 element: six lattice nodes (three vertices then the midpoints
/// of edges 01, 12, 20), three pressure vertices, and the vertex coordinates.
pub(crate) struct Element {
    pub nodes: [usize; 6],
    pub vertices: [usize; 3],
    pub pts: [Point; 3],
    pub area: f64,
    pub grad_l: [[f64; 2]; 3],
}

pub(crate) fn elements(mesh: &SubdomainMesh, lat: &Lattice) -> Vec<Element> {
    let lattice_of = |v: usize| (2 * (v % (mesh.nx + 1)), 2 * (v / (mesh.nx + 1)));
    mesh.triangles()
        .into_iter()
        .map(|tri| {
            let l = tri.map(lattice_of);
            let mid = |p: (usize, usize), q: (usize, usize)| lat.node((p.0 + q.0) / 2, (p.1 + q.1) / 2);
            let nodes = [
                lat.node(l[0].0, l[0].1),
                lat.node(l[1].0, l[1].1),
                lat.node(l[2].0, l[2].1),
                mid(l[0], l[1]),
                mid(l[1], l[2]),
                mid(l[2], l[0]),
            ];
            let pts = tri.map(|v| mesh.vertex_point(v));
            let det = (pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1]) - (pts[2][0] - pts[0][0]) * (pts[1][1] - pts[0][1]);
            let g = |a: usize, b: usize| [(pts[a][1] - pts[b][1]) / det, (pts[b][0] - pts[a][0]) / det];
            Element {
                nodes,
                vertices: tri,
                pts,
                area: 0.5 * det,
                grad_l: [g(1, 2), g(2, 0), g(0, 1)],
            }
        })
        .collect()
}

/// P2 basis values and gradients at barycentric point `l`.
pub(crate) fn p2_basis(l: [f64; 3], gl: &[[f64; 2]; 3]) -> ([f64; 6], [[f64; 2]; 6]) {
    let mut v = [0.0; 6];
    let mut g = [[0.0; 2]; 6];
    for k in 0..3 {
        v[k] = l[k] * (2.0 * l[k] - 1.0);
        g[k] = [(4.0 * l[k] - 1.0) * gl[k][0], (4.0 * l[k] - 1.0) * gl[k][1]];
    }
    for (m, (a, b)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
        v[3 + m] = 4.0 * l[a] * l[b];
        g[3 + m] = [
            4.0 * (l[a] * gl[b][0] + l[b] * gl[a][0]),
            4.0 * (l[a] * gl[b][1] + l[b] * gl[a][1]),
        ];
    }
    (v, g)
}

/// 1D quadratic Lagrange basis on `[0, 1]` with nodes 0, 1/2, 1.
pub(crate) fn p2_1d(s: f64) -> [f64; 3] {
    [(1.0 - s) * (1.0 - 2.0 * s), 4.0 * s * (1.0 - s), s * (2.0 * s - 1.0)]
}

/// Element velocity and divergence blocks: `(A (12x12), B (3x12))`, velocity
/// local index `2 k + d`.
pub(crate) fn element_matrices(el: &Element, nu: f64) -> ([[f64; 12]; 12], [[f64; 12]; 3]) {
    let mut a = [[0.0; 12]; 12];
    let mut b = [[0.0; 12]; 3];
    for (l, w) in triangle_rule() {
        let w = w * el.area;
        let (_, g) = p2_basis(l, &el.grad_l);
        for i in 0..6 {
            for j in 0..6 {
                let dot = g[i][0] * g[j][0] + g[i][1] * g[j][1];
                for c in 0..2 {
                    for d in 0..2 {
                        // 2 D(phi_j e_c) : D(phi_i e_d)
                        let mut v = g[j][d] * g[i][c];
                        if c == d {
                            v += dot;
                        }
                        a[2 * i + d][2 * j + c] += w * nu * v;
                    }
                }
            }
            for p in 0..3 {
                for d in 0..2 {
                    b[p][2 * i + d] -= w * l[p] * g[i][d];
                }
            }
        }
    }
    (a, b)
}

pub struct StokesOperator {
    pub mesh: SubdomainMesh,
    pub nu: f64,
    pub slots: Vec<StokesSlot>,
    pub kernel_dim: usize,
    pub pressure_mean_fixed: bool,
    lat: Lattice,
    system: ConstrainedSystem,
    bar_rhs: Vec<f64>,
    bar_values: Vec<f64>,
}

impl StokesOperator {
    /// Assembles and factorizes the subdomain system. `bjs` carries the
    /// Darcy-side permeability along each Stokes-Darcy interface; the friction
    /// coefficient is `nu alpha / sqrt(K)`.
    pub fn assemble(
        layout: &DomainLayout,
        mesh: &SubdomainMesh,
        nu: f64,
        alpha: f64,
        bjs: &[BjsData],
        boundary: &StokesBoundary,
        body_force: &(dyn Fn(Point) -> [f64; 2] + Sync),
    ) -> Result<Self> {
        let lat = Lattice::new(mesh);
        let nvel = 2 * lat.n_nodes();
        let np = lat.n_vertices();
        let els = elements(mesh, &lat);

        let mut m = TripletMatrix::new(nvel + np);
        for el in &els {
            let (a, b) = element_matrices(el, nu);
            for i in 0..12 {
                let gi = 2 * el.nodes[i / 2] + i % 2;
                for j in 0..12 {
                    m.add(gi, 2 * el.nodes[j / 2] + j % 2, a[i][j]);
                }
                for p in 0..3 {
                    m.add_sym(nvel + el.vertices[p], gi, b[p][i]);
                }
            }
        }

        let slots: Vec<StokesSlot> = layout
            .interfaces_of(mesh.subdomain)
            .map(|iface| {
                let edges = mesh.interface_edges(iface.id);
                let side = edges[0].side;
                let first = 2 * edges[0].index;
                let nodes = (first..=first + 2 * edges.len()).map(|k| lat.side_node(side, k)).collect();
                StokesSlot {
                    interface: iface.id,
                    kind: iface.kind,
                    sign: iface.sign(mesh.subdomain).expect("interface touches subdomain"),
                    nodes,
                    normal: iface.normal,
                    tangent: iface.tangent,
                    breaks: mesh.interface_vertices(iface.id),
                }
            })
            .collect();

        if alpha != 0.0 {
            for data in bjs {
                let slot = slots.iter().find(|s| s.interface == data.interface).ok_or_else(|| {
                    Error::Assembly(format!(
                        "subdomain {}: friction data for foreign interface {}",
                        mesh.subdomain, data.interface
                    ))
                })?;
                add_bjs(&mut m, mesh, slot, &data.pieces, nu * alpha)?;
            }
        }

        // Dirichlet nodes and natural boundary detection
        let mut fixed = vec![false; nvel + np];
        let mut values = vec![0.0; nvel + np];
        let mut natural = !slots.is_empty();
        let mut rhs = vec![0.0; nvel + np];
        for (e, bc) in mesh.boundary_edges.iter().zip(&boundary.0) {
            if e.kind != SegmentKind::Outer {
                continue;
            }
            let nodes = [0, 1, 2].map(|k| lat.side_node(e.side, 2 * e.index + k));
            match bc {
                StokesOuter::Velocity(g) => {
                    for n in nodes {
                        let u = g(node_point(mesh, &lat, n));
                        for d in 0..2 {
                            fixed[2 * n + d] = true;
                            values[2 * n + d] = u[d];
                        }
                    }
                }
                StokesOuter::Traction(g) => {
                    natural = true;
                    for (t, w) in gauss_legendre(3, e.start, e.end) {
                        let s = (t - e.start) / (e.end - e.start);
                        let gv = g(e.side.point(&mesh.rect, t));
                        for (k, phi) in p2_1d(s).into_iter().enumerate() {
                            for d in 0..2 {
                                rhs[2 * nodes[k] + d] += w * phi * gv[d];
                            }
                        }
                    }
                }
            }
        }
        for el in &els {
            for (l, w) in triangle_rule() {
                let (v, _) = p2_basis(l, &el.grad_l);
                let x = [
                    l[0] * el.pts[0][0] + l[1] * el.pts[1][0] + l[2] * el.pts[2][0],
                    l[0] * el.pts[0][1] + l[1] * el.pts[1][1] + l[2] * el.pts[2][1],
                ];
                let f = body_force(x);
                for k in 0..6 {
                    for d in 0..2 {
                        rhs[2 * el.nodes[k] + d] += w * el.area * v[k] * f[d];
                    }
                }
            }
        }

        let kernel = rigid_kernel(mesh, &lat, &m, &fixed, nu);
        let kernel_dim = kernel.len();
        let n_total = nvel + np + kernel_dim + usize::from(!natural);
        let mut m = TripletMatrix { n: n_total, entries: m.entries };
        for (r, k) in kernel.iter().enumerate() {
            for (i, &v) in k.iter().enumerate() {
                m.add_sym(nvel + np + r, i, v);
            }
        }
        if !natural {
            let row = nvel + np + kernel_dim;
            for el in &els {
                for &v in &el.vertices {
                    m.add_sym(row, nvel + v, el.area / 3.0);
                }
            }
        }
        fixed.resize(n_total, false);
        values.resize(n_total, 0.0);
        rhs.resize(n_total, 0.0);
        let system = ConstrainedSystem::factorize(m, fixed)?;
        Ok(StokesOperator {
            mesh: mesh.clone(),
            nu,
            slots,
            kernel_dim,
            pressure_mean_fixed: !natural,
            lat,
            system,
            bar_rhs: rhs,
            bar_values: values,
        })
    }

    pub fn matrix(&self) -> &TripletMatrix {
        self.system.matrix()
    }

    pub fn n_velocity(&self) -> usize {
        2 * self.lat.n_nodes()
    }

    pub fn n_pressure(&self) -> usize {
        self.lat.n_vertices()
    }

    /// Constraint rows appended after velocity and pressure.
    pub fn constraint_rows(&self) -> std::ops::Range<usize> {
        self.n_velocity() + self.n_pressure()..self.system.n()
    }

    fn split(&self, x: Vec<f64>) -> StokesSolution {
        let nv = self.n_velocity();
        StokesSolution {
            pressure: x[nv..nv + self.n_pressure()].to_vec(),
            velocity: x[..nv].to_vec(),
        }
    }

    /// Star problem: `moments[s][c][a]` is the integral of mortar component
    /// `c` (normal, then tangential) against trace basis function `a` of slot
    /// `s`. Enters as `-<lambda_n, v.n_i> - <lambda_t, v.t_i>`.
    pub fn solve_star(&self, moments: &[Vec<Vec<f64>>]) -> Result<StokesSolution> {
        let mut rhs = vec![0.0; self.system.n()];
        for (slot, m) in self.slots.iter().zip(moments) {
            for (c, mc) in m.iter().enumerate() {
                let dir = if c == 0 { slot.normal } else { slot.tangent };
                for (&n, &v) in slot.nodes.iter().zip(mc) {
                    for d in 0..2 {
                        rhs[2 * n + d] -= slot.sign * v * dir[d];
                    }
                }
            }
        }
        Ok(self.split(self.system.solve(&rhs, None)?))
    }

    /// Bar problem: body force, tractions and Dirichlet data.
    pub fn solve_bar(&self) -> Result<StokesSolution> {
        Ok(self.split(self.system.solve(&self.bar_rhs, Some(&self.bar_values))?))
    }

    /// Nodal trace on a slot: `u.n`, and `u.t` on Stokes-Stokes interfaces,
    /// global orientation.
    pub fn velocity_trace(&self, sol: &StokesSolution, slot: usize) -> Vec<Vec<f64>> {
        let s = &self.slots[slot];
        (0..s.components())
            .map(|c| {
                let dir = if c == 0 { s.normal } else { s.tangent };
                s.nodes
                    .iter()
                    .map(|&n| sol.velocity[2 * n] * dir[0] + sol.velocity[2 * n + 1] * dir[1])
                    .collect()
            })
            .collect()
    }

    pub fn extract_velocity_trace(&self, sol: &StokesSolution, interface: usize) -> Option<Vec<Vec<f64>>> {
        self.slots
            .iter()
            .position(|s| s.interface == interface)
            .map(|k| self.velocity_trace(sol, k))
    }

    /// Velocity at every mesh vertex.
    pub fn vertex_velocity(&self, sol: &StokesSolution) -> Vec<[f64; 2]> {
        (0..self.lat.n_vertices())
            .map(|v| {
                let n = self.lat.vertex_node(v);
                [sol.velocity[2 * n], sol.velocity[2 * n + 1]]
            })
            .collect()
    }

    /// Nodal velocity of the kernel constraint rows, one vector per rigid mode.
    pub fn kernel_rows(&self) -> Vec<Vec<f64>> {
        let nv = self.n_velocity();
        let base = self.n_velocity() + self.n_pressure();
        (0..self.kernel_dim)
            .map(|r| {
                let mut v = vec![0.0; nv];
                for &(i, j, x) in &self.system.matrix().entries {
                    if i == base + r && j < nv {
                        v[j] += x;
                    }
                }
                v
            })
            .collect()
    }

    /// Max over vertices of `|(div u, psi_v)|`.
    pub fn incompressibility_residual(&self, sol: &StokesSolution) -> f64 {
        let nv = self.n_velocity();
        let mut r = vec![0.0; self.n_pressure()];
        for &(i, j, x) in &self.system.matrix().entries {
            if i >= nv && i < nv + self.n_pressure() && j < nv {
                r[i - nv] += x * sol.velocity[j];
            }
        }
        r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Net outward flux through the outer boundary.
    pub fn outer_flux(&self, sol: &StokesSolution) -> f64 {
        let mut total = 0.0;
        for e in self.mesh.boundary_edges.iter() {
            let nodes = [0, 1, 2].map(|k| self.lat.side_node(e.side, 2 * e.index + k));
            let n = e.side.outward_normal();
            let h = e.end - e.start;
            // Simpson is exact for the quadratic normal trace
            for (k, w) in [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0].into_iter().enumerate() {
                let u = [sol.velocity[2 * nodes[k]], sol.velocity[2 * nodes[k] + 1]];
                total += h * w * (u[0] * n[0] + u[1] * n[1]);
            }
        }
        total
    }

    /// Quadratic form `u^T A u` of the velocity block.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let nv = self.n_velocity();
        self.system
            .matrix()
            .entries
            .iter()
            .filter(|&&(i, j, _)| i < nv && j < nv)
            .map(|&(i, j, v)| u[i] * v * u[j])
            .sum()
    }

    pub fn l2_errors(
        &self,
        sol: &StokesSolution,
        u_exact: impl Fn(Point) -> [f64; 2],
        p_exact: impl Fn(Point) -> f64,
    ) -> (f64, f64) {
        let (mut eu, mut ep) = (0.0, 0.0);
        for el in elements(&self.mesh, &self.lat) {
            for (l, w) in triangle_rule() {
                let w = w * el.area;
                let (v, _) = p2_basis(l, &el.grad_l);
                let x = [
                    l[0] * el.pts[0][0] + l[1] * el.pts[1][0] + l[2] * el.pts[2][0],
                    l[0] * el.pts[0][1] + l[1] * el.pts[1][1] + l[2] * el.pts[2][1],
                ];
                let mut uh = [0.0; 2];
                for k in 0..6 {
                    uh[0] += v[k] * sol.velocity[2 * el.nodes[k]];
                    uh[1] += v[k] * sol.velocity[2 * el.nodes[k] + 1];
                }
                let ph: f64 = (0..3).map(|k| l[k] * sol.pressure[el.vertices[k]]).sum();
                let ue = u_exact(x);
                eu += w * ((uh[0] - ue[0]).powi(2) + (uh[1] - ue[1]).powi(2));
                ep += w * (ph - p_exact(x)).powi(2);
            }
        }
        (eu.sqrt(), ep.sqrt())
    }
}

fn add_bjs(m: &mut TripletMatrix, mesh: &SubdomainMesh, slot: &StokesSlot, pieces: &[(f64, f64, f64)], scale: f64) -> Result<()> {
    let tau = slot.tangent;
    for (e, w) in slot.breaks.windows(2).enumerate() {
        let (t0, t1) = (w[0], w[1]);
        let nodes = [slot.nodes[2 * e], slot.nodes[2 * e + 1], slot.nodes[2 * e + 2]];
        let mut local = [[0.0; 3]; 3];
        for &(p0, p1, k) in pieces {
            let (a, b) = (p0.max(t0), p1.min(t1));
            if b - a <= 1e-14 * (t1 - t0) {
                continue;
            }
            if !(k > 0.0) {
                return Err(Error::Assembly(format!(
                    "subdomain {}: non-positive permeability on interface {}",
                    mesh.subdomain, slot.interface
                )));
            }
            let coef = scale / k.sqrt();
            for (t, wq) in gauss_legendre(3, a, b) {
                let phi = p2_1d((t - t0) / (t1 - t0));
                for i in 0..3 {
                    for j in 0..3 {
                        local[i][j] += wq * coef * phi[i] * phi[j];
                    }
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                for c in 0..2 {
                    for d in 0..2 {
                        m.add(2 * nodes[i] + c, 2 * nodes[j] + d, local[i][j] * tau[c] * tau[d]);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Rigid motions (two translations and a rotation) that vanish on the fixed
/// velocity unknowns and carry zero energy, orthonormal in the nodal
/// Euclidean product.
fn rigid_kernel(mesh: &SubdomainMesh, lat: &Lattice, m: &TripletMatrix, fixed: &[bool], nu: f64) -> Vec<Vec<f64>> {
    let nvel = 2 * lat.n_nodes();
    let c = mesh.rect.centroid();
    let diam = mesh.rect.diameter();
    let mut cand = vec![vec![0.0; nvel]; 3];
    for n in 0..lat.n_nodes() {
        let x = node_point(mesh, lat, n);
        cand[0][2 * n] = 1.0;
        cand[1][2 * n + 1] = 1.0;
        cand[2][2 * n] = -(x[1] - c[1]) / diam;
        cand[2][2 * n + 1] = (x[0] - c[0]) / diam;
    }
    for v in &mut cand {
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= s);
    }
    let mut g = Matrix3::<f64>::zeros();
    let av: Vec<Vec<f64>> = cand
        .iter()
        .map(|v| {
            let mut y = vec![0.0; nvel];
            for &(i, j, x) in &m.entries {
                if i < nvel && j < nvel {
                    y[i] += x * v[j];
                }
            }
            y
        })
        .collect();
    for a in 0..3 {
        for b in 0..3 {
            let energy: f64 = cand[a].iter().zip(&av[b]).map(|(x, y)| x * y).sum();
            let pinned: f64 = (0..nvel).filter(|&i| fixed[i]).map(|i| cand[a][i] * cand[b][i]).sum();
            g[(a, b)] = energy / nu + pinned;
        }
    }
    let g = 0.5 * (g + g.transpose());
    let eig = SymmetricEigen::new(g);
    let mut out = Vec::new();
    for k in 0..3 {
        if eig.eigenvalues[k].abs() <= 1e-9 {
            let coef = eig.eigenvectors.column(k);
            let v: Vec<f64> = (0..nvel).map(|i| (0..3).map(|a| coef[a] * cand[a][i]).sum()).collect();
            out.push(v);
        }
    }
    // fixed order for determinism: sort by the dominant candidate
    out.sort_by_key(|v| {
        (0..3)
            .map(|a| (cand[a].iter().zip(v).map(|(x, y)| x * y).sum::<f64>().abs() * 1e12) as i64)
            .enumerate()
            .max_by_key(|&(_, w)| w)
            .map(|(a, _)| a)
            .unwrap_or(0)
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_layout, build_subdomain_mesh, LayoutConfig, Physics, Rect};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn zero_force() -> impl Fn(Point) -> [f64; 2] + Sync {
        |_| [0.0, 0.0]
    }

    fn single(n: usize) -> (DomainLayout, SubdomainMesh) {
        let cfg = LayoutConfig::uniform_grid(Rect::new(0.0, 1.0, 0.0, 1.0), 1, 1, |_, _| (Physics::Stokes, None));
        let layout = build_layout(&cfg).unwrap();
        let mesh = build_subdomain_mesh(&layout, 0, n, n).unwrap();
        (layout, mesh)
    }

    fn stress() -> StokesOuter {
        StokesOuter::Traction(Arc::new(|_| [0.0, 0.0]))
    }

    fn wall() -> StokesOuter {
        StokesOuter::Velocity(Arc::new(|_| [0.0, 0.0]))
    }

    #[test]
    fn element_energy_of_quadratic_fields() {
        // element 0 of a 1x1 unit mesh is (0,0), (1,0), (1,1); for quadratic
        // u the P2 interpolant is exact, so u^T A u equals
        // int |grad u|^2 + grad u : grad u^T in closed form
        let mesh = single(1).1;
        let lat = Lattice::new(&mesh);
        let el = &elements(&mesh, &lat)[0];
        let (a, b) = element_matrices(el, 1.0);
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.5, 0.0], [1.0, 0.5], [0.5, 0.5]];
        let energy = |f: &dyn Fn([f64; 2]) -> [f64; 2]| {
            let u: Vec<f64> = pts.iter().flat_map(|&x| f(x)).collect();
            (0..12).map(|i| (0..12).map(|j| u[i] * a[i][j] * u[j]).sum::<f64>()).sum::<f64>()
        };
        // u = (y^2, 0): int 4 y^2 over {0 <= y <= x <= 1} = 1/3
        assert!((energy(&|x| [x[1] * x[1], 0.0]) - 1.0 / 3.0).abs() < 1e-13);
        // u = (xy, x^2): integrand 2 y^2 + 9 x^2, integral 29/12
        assert!((energy(&|x| [x[0] * x[1], x[0] * x[0]]) - 29.0 / 12.0).abs() < 1e-13);
        assert!(energy(&|x| [-x[1], x[0]]).abs() < 1e-13);
        for i in 0..12 {
            for j in 0..12 {
                assert!((a[i][j] - a[j][i]).abs() < 1e-14);
            }
        }
        // divergence rows: -int psi_p div u; u = (x, 0) has div 1, int psi_p = area / 3
        let u: Vec<f64> = pts.iter().flat_map(|&x| [x[0], 0.0]).collect();
        for row in b {
            let v: f64 = row.iter().zip(&u).map(|(r, x)| r * x).sum();
            assert!((v + 0.5 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn all_stress_box_has_three_rigid_modes() {
        let (layout, mesh) = single(2);
        let bc = StokesBoundary::from_fn(&mesh, |_| stress());
        let op = StokesOperator::assemble(&layout, &mesh, 1.0, 1.0, &[], &bc, &zero_force()).unwrap();
        assert_eq!(op.kernel_dim, 3);
        assert_eq!(op.constraint_rows().len(), 3);
        let bc = StokesBoundary::from_fn(&mesh, |e| if e.side == Side::Left { wall() } else { stress() });
        let op = StokesOperator::assemble(&layout, &mesh, 1.0, 1.0, &[], &bc, &zero_force()).unwrap();
        assert_eq!(op.kernel_dim, 0);
    }

    /// 3x3 blocks with a Stokes centre whose boundary is entirely interface.
    fn centre_layout(kind: Physics) -> DomainLayout {
        build_layout(&LayoutConfig::uniform_grid(Rect::new(0.0, 3.0, 0.0, 3.0), 3, 3, |c, r| {
            if (c, r) == (1, 1) {
                (Physics::Stokes, None)
            } else if kind == Physics::Darcy {
                (Physics::Darcy, Some(0))
            } else {
                (Physics::Stokes, None)
            }
        }))
        .unwrap()
    }

    fn constant_moments(op: &StokesOperator, cn: f64, ct: f64) -> Vec<Vec<Vec<f64>>> {
        op.slots
            .iter()
            .map(|s| {
                let mut m = vec![0.0; s.nodes.len()];
                for e in s.breaks.windows(2).enumerate() {
                    let h = e.1[1] - e.1[0];
                    m[2 * e.0] += h / 6.0;
                    m[2 * e.0 + 1] += 2.0 * h / 3.0;
                    m[2 * e.0 + 2] += h / 6.0;
                }
                (0..s.components())
                    .map(|c| m.iter().map(|v| v * if c == 0 { cn } else { ct }).collect())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn hydrostatic_star() {
        let layout = centre_layout(Physics::Stokes);
        let mesh = build_subdomain_mesh(&layout, 4, 3, 3).unwrap();
        let op = StokesOperator::assemble(&layout, &mesh, 1.0, 0.0, &[], &StokesBoundary::from_fn(&mesh, |_| stress()), &zero_force())
            .unwrap();
        assert_eq!(op.kernel_dim, 3);
        let c = 1.7;
        let sol = op.solve_star(&constant_moments(&op, c, 0.0)).unwrap();
        assert!(sol.velocity.iter().all(|v| v.abs() < 1e-10));
        assert!(sol.pressure.iter().all(|p| (p - c).abs() < 1e-10));
        for s in 0..op.slots.len() {
            assert!(op.velocity_trace(&sol, s).iter().flatten().all(|v| v.abs() < 1e-10));
        }
        let zero = op.solve_star(&constant_moments(&op, 0.0, 0.0)).unwrap();
        assert!(zero.velocity.iter().chain(&zero.pressure).all(|&v| v == 0.0));
    }

    #[test]
    fn star_removes_rigid_component() {
        let layout = centre_layout(Physics::Stokes);
        let mesh = build_subdomain_mesh(&layout, 4, 2, 2).unwrap();
        let op = StokesOperator::assemble(&layout, &mesh, 1.0, 0.0, &[], &StokesBoundary::from_fn(&mesh, |_| stress()), &zero_force())
            .unwrap();
        let mut moments = constant_moments(&op, 0.3, -0.7);
        moments[0][0][1] += 0.4;
        moments[2][0][3] -= 0.9;
        let sol = op.solve_star(&moments).unwrap();
        for k in op.kernel_rows() {
            let dot: f64 = k.iter().zip(&sol.velocity).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-10);
        }
        assert!(op.incompressibility_residual(&sol) < 1e-10);
    }

    #[test]
    fn star_linearity() {
        let layout = centre_layout(Physics::Darcy);
        let mesh = build_subdomain_mesh(&layout, 4, 3, 3).unwrap();
        let bjs: Vec<BjsData> = layout
            .interfaces_of(4)
            .map(|i| BjsData { interface: i.id, pieces: vec![(i.start, i.end, 2.0)] })
            .collect();
        let op = StokesOperator::assemble(&layout, &mesh, 1.0, 1.0, &bjs, &StokesBoundary::from_fn(&mesh, |_| stress()), &zero_force())
            .unwrap();
        assert_eq!(op.kernel_dim, 0);
        let mut m1 = constant_moments(&op, 1.0, 0.0);
        m1[1][0][2] += 3.0;
        let m2 = constant_moments(&op, -0.5, 0.0);
        let m12: Vec<Vec<Vec<f64>>> = m1
            .iter()
            .zip(&m2)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect())
            .collect();
        let s = op.solve_star(&m1).unwrap().add(&op.solve_star(&m2).unwrap());
        let s12 = op.solve_star(&m12).unwrap();
        for (a, b) in s.velocity.iter().zip(&s12.velocity) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bjs_term() {
        let layout = centre_layout(Physics::Darcy);
        let mesh = build_subdomain_mesh(&layout, 4, 2, 2).unwrap();
        let bjs: Vec<BjsData> = layout
            .interfaces_of(4)
            .map(|i| BjsData { interface: i.id, pieces: vec![(i.start, i.end, 4.0)] })
            .collect();
        let bc = StokesBoundary::from_fn(&mesh, |_| stress());
        let plain = StokesOperator::assemble(&layout, &mesh, 1.0, 0.0, &[], &bc, &zero_force()).unwrap();
        let zero_alpha = StokesOperator::assemble(&layout, &mesh, 1.0, 0.0, &bjs, &bc, &zero_force()).unwrap();
        assert_eq!(plain.matrix().entries, zero_alpha.matrix().entries);
        let with = StokesOperator::assemble(&layout, &mesh, 1.0, 1.0, &bjs, &bc, &zero_force()).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let u: Vec<f64> = (0..with.n_velocity()).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!(with.energy(&u) > plain.energy(&u));
        }
        // a uniform tangential slip on the bottom edge (length 1, K = 4, nu alpha = 1)
        // dissipates int 1/sqrt(K) = 0.5 plus contributions of the other sides
        let mut u = vec![0.0; with.n_velocity()];
        for k in 0..u.len() / 2 {
            u[2 * k] = 1.0;
        }
        // translation along x: tangential on top and bottom only
        assert!((with.energy(&u) - 2.0 * 0.5).abs() < 1e-12);
    }

    fn manufactured(n: usize) -> (f64, f64, f64) {
        let (layout, mesh) = single(n);
        let nu = 1.0;
        let u = |x: Point| [PI * (PI * x[0]).sin() * (PI * x[1]).cos(), -PI * (PI * x[0]).cos() * (PI * x[1]).sin()];
        let p = |x: Point| (PI * x[0]).cos() * (PI * x[1]).cos();
        let f = move |x: Point| {
            let uu = u(x);
            [
                2.0 * nu * PI * PI * uu[0] - PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
                2.0 * nu * PI * PI * uu[1] - PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
            ]
        };
        let bc = StokesBoundary::from_fn(&mesh, |e| {
            if e.side == Side::Right {
                StokesOuter::Traction(Arc::new(move |x: Point| {
                    [2.0 * nu * PI * PI * (PI * x[0]).cos() * (PI * x[1]).cos() - p(x), 0.0]
                }))
            } else {
                StokesOuter::Velocity(Arc::new(u))
            }
        });
        let op = StokesOperator::assemble(&layout, &mesh, nu, 0.0, &[], &bc, &f).unwrap();
        let sol = op.solve_bar().unwrap();
        let (eu, ep) = op.l2_errors(&sol, u, p);
        (eu, ep, op.incompressibility_residual(&sol))
    }

    #[test]
    fn manufactured_taylor_hood_rates() {
        let errs: Vec<_> = [2, 4, 8, 16].iter().map(|&n| manufactured(n)).collect();
        for w in errs.windows(2) {
            assert!(w[0].0 / w[1].0 >= 3.5, "velocity ratio {}", w[0].0 / w[1].0);
            assert!(w[0].1 / w[1].1 >= 1.8, "pressure ratio {}", w[0].1 / w[1].1);
        }
        assert!(errs.iter().all(|e| e.2 < 1e-10));
    }

    #[test]
    fn channel_mass_balance() {
        let (layout, mesh) = single(4);
        let bc = StokesBoundary::from_fn(&mesh, |e| match e.side {
            Side::Left => StokesOuter::Velocity(Arc::new(|x: Point| [4.0 * x[1] * (1.0 - x[1]), 0.0])),
            Side::Right => stress(),
            _ => wall(),
        });
        let op = StokesOperator::assemble(&layout, &mesh, 1.0, 0.0, &[], &bc, &zero_force()).unwrap();
        let sol = op.solve_bar().unwrap();
        assert!(op.outer_flux(&sol).abs() < 1e-10);
        let zero = StokesOperator::assemble(&layout, &mesh, 1.0, 0.0, &[], &StokesBoundary::from_fn(&mesh, |e| if e.side == Side::Right { stress() } else { wall() }), &zero_force())
            .unwrap()
            .solve_bar()
            .unwrap();
        assert!(zero.velocity.iter().chain(&zero.pressure).all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn enclosed_cavity_fixes_pressure_mean() {
        let (layout, mesh) = single(3);
        let bc = StokesBoundary::from_fn(&mesh, |e| {
            if e.side == Side::Top {
                StokesOuter::Velocity(Arc::new(|x: Point| [x[0] * (1.0 - x[0]), 0.0]))
            } else {
                wall()
            }
        });
        let op = StokesOperator::assemble(&layout, &mesh, 1.0, 0.0, &[], &bc, &zero_force()).unwrap();
        assert!(op.pressure_mean_fixed);
        let sol = op.solve_bar().unwrap();
        assert!(op.incompressibility_residual(&sol) < 1e-10);
    }
}
