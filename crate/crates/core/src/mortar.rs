//! Coarse mortar spaces on interfaces and the coupling between mortar and
//! fine trace spaces.
//!
//! Mortar functions are discontinuous: piecewise linear (two nodal functions
//! per coarse element) or piecewise constant. Global numbering runs over
//! interfaces, then elements, then local basis functions, then components
//! (normal before tangential on Stokes-Stokes interfaces).
//!
//! All coupling integrals are evaluated on the merged partition of coarse
//! and fine breakpoints with a three-point Gauss rule, exact for the
//! products involved.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainLayout, InterfaceKind, SubdomainMesh};
use crate::quadrature::gauss_legendre;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MortarDegree {
    /// Piecewise constant.
    P0,
    /// Discontinuous piecewise linear.
    #[default]
    P1,
}

impl MortarDegree {
    pub fn basis_per_element(self) -> usize {
        match self {
            MortarDegree::P0 => 1,
            MortarDegree::P1 => 2,
        }
    }

    fn eval(self, s: f64) -> [f64; 2] {
        match self {
            MortarDegree::P0 => [1.0, 0.0],
            MortarDegree::P1 => [1.0 - s, s],
        }
    }
}

/// Fine trace space on one side of an interface.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceSpace {
    /// One value per fine edge (normal flux of lowest-order mixed elements).
    PiecewiseConstant,
    /// Continuous quadratic nodal values at `2E + 1` points.
    ContinuousQuadratic,
}

impl TraceSpace {
    pub fn dim(self, n_edges: usize) -> usize {
        match self {
            TraceSpace::PiecewiseConstant => n_edges,
            TraceSpace::ContinuousQuadratic => 2 * n_edges + 1,
        }
    }

    /// Basis functions nonzero on fine edge `e` at local coordinate `s`,
    /// as `(index, value)` pairs.
    fn eval(self, e: usize, s: f64) -> Vec<(usize, f64)> {
        match self {
            TraceSpace::PiecewiseConstant => vec![(e, 1.0)],
            TraceSpace::ContinuousQuadratic => crate::stokes::p2_1d(s)
                .into_iter()
                .enumerate()
                .map(|(k, v)| (2 * e + k, v))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceMortar {
    pub interface: usize,
    pub kind: InterfaceKind,
    /// Coarse breakpoints in the interface parameter.
    pub breaks: Vec<f64>,
    /// First global dof.
    pub offset: usize,
}

impl InterfaceMortar {
    pub fn n_elements(&self) -> usize {
        self.breaks.len() - 1
    }

    pub fn components(&self) -> usize {
        self.kind.components()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MortarSpace {
    pub degree: MortarDegree,
    /// Indexed by interface id.
    pub interfaces: Vec<InterfaceMortar>,
    pub n_dofs: usize,
}

/// Builds the mortar space with `elements[id]` uniform coarse elements on
/// interface `id`. Each coarse element must be at least `coarse_factor`
/// times the largest adjacent fine edge.
pub fn build_mortar_space(
    layout: &DomainLayout,
    meshes: &[SubdomainMesh],
    degree: MortarDegree,
    elements: &[usize],
    coarse_factor: f64,
) -> Result<MortarSpace> {
    if elements.len() != layout.interfaces.len() {
        return Err(Error::config(format!(
            "mortar: {} element counts for {} interfaces",
            elements.len(),
            layout.interfaces.len()
        )));
    }
    if coarse_factor < 2.0 {
        warn!("mortar coarse factor {coarse_factor} is below 2; the interface problem may be ill-posed");
    }
    let mut errors = Vec::new();
    let mut interfaces = Vec::new();
    let mut offset = 0;
    for (iface, &n) in layout.interfaces.iter().zip(elements) {
        if n == 0 {
            errors.push(format!("interface {}: mortar needs at least one element", iface.id));
            continue;
        }
        let h_coarse = iface.length() / n as f64;
        let h_fine = [iface.lower, iface.higher]
            .iter()
            .filter_map(|&s| meshes.get(s))
            .flat_map(|m| m.interface_vertices(iface.id).windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        if h_coarse < coarse_factor * h_fine * (1.0 - 1e-12) {
            errors.push(format!(
                "interface {}: mortar element size {h_coarse:.4} violates H >= {coarse_factor} h with fine edge h = {h_fine:.4}",
                iface.id
            ));
        }
        let breaks = (0..=n)
            .map(|k| crate::geometry::grid_coord(iface.start, iface.end, k, n))
            .collect();
        let m = InterfaceMortar {
            interface: iface.id,
            kind: iface.kind,
            breaks,
            offset,
        };
        offset += n * degree.basis_per_element() * m.components();
        interfaces.push(m);
    }
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    Ok(MortarSpace {
        degree,
        interfaces,
        n_dofs: offset,
    })
}

impl MortarSpace {
    /// Dofs per component on an interface.
    pub fn scalar_dofs(&self, interface: usize) -> usize {
        self.interfaces[interface].n_elements() * self.degree.basis_per_element()
    }

    pub fn interface_dofs(&self, interface: usize) -> usize {
        self.scalar_dofs(interface) * self.interfaces[interface].components()
    }

    /// Global index of scalar basis function `j` of component `c`.
    pub fn dof(&self, interface: usize, j: usize, c: usize) -> usize {
        let m = &self.interfaces[interface];
        m.offset + j * m.components() + c
    }

    /// Global indices `[c][j]` of the dofs on one interface.
    pub fn component_dofs(&self, interface: usize) -> Vec<Vec<usize>> {
        (0..self.interfaces[interface].components())
            .map(|c| (0..self.scalar_dofs(interface)).map(|j| self.dof(interface, j, c)).collect())
            .collect()
    }

    /// Global dofs living on the interfaces of subdomain `id`, ascending.
    pub fn subdomain_dofs(&self, layout: &DomainLayout, id: usize) -> Vec<usize> {
        layout
            .interfaces_of(id)
            .flat_map(|i| {
                let m = &self.interfaces[i.id];
                m.offset..m.offset + self.interface_dofs(i.id)
            })
            .collect()
    }

    /// `C[a][j] = int phi_a xi_j` between trace basis `phi` on the fine
    /// partition `fine` and scalar mortar basis `xi` of one interface.
    pub fn coupling(&self, interface: usize, trace: TraceSpace, fine: &[f64]) -> DMatrix<f64> {
        let m = &self.interfaces[interface];
        let nb = self.degree.basis_per_element();
        let mut c = DMatrix::zeros(trace.dim(fine.len() - 1), self.scalar_dofs(interface));
        for_merged(&m.breaks, fine, |ce, fe, t, w| {
            let cs = (t - m.breaks[ce]) / (m.breaks[ce + 1] - m.breaks[ce]);
            let fs = (t - fine[fe]) / (fine[fe + 1] - fine[fe]);
            let xi = self.degree.eval(cs);
            for (a, phi) in trace.eval(fe, fs) {
                for b in 0..nb {
                    c[(a, ce * nb + b)] += w * phi * xi[b];
                }
            }
        });
        c
    }

    /// L2 projection of one mortar component onto the trace space:
    /// `M^-1 C lambda`.
    pub fn project_mortar_to_trace(&self, interface: usize, trace: TraceSpace, fine: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
        let c = self.coupling(interface, trace, fine);
        let rhs = &c * DVector::from_column_slice(lambda);
        let m = trace_mass(trace, fine);
        let x = m
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("interface {interface}: trace mass matrix not positive definite")))?
            .solve(&rhs);
        Ok(x.iter().copied().collect())
    }

    /// Functionals `<g, xi_j>` of a trace given by its basis coefficients.
    pub fn project_trace_to_mortar(&self, interface: usize, trace: TraceSpace, fine: &[f64], g: &[f64]) -> Vec<f64> {
        let c = self.coupling(interface, trace, fine);
        (c.transpose() * DVector::from_column_slice(g)).iter().copied().collect()
    }

    /// Jump functional `lower - higher` per interface. `sides[id]` holds the
    /// mortar functionals (global orientation, layout of [`Self::dof`]) of
    /// the lower and higher side.
    pub fn jump(&self, sides: &[[Option<Vec<f64>>; 2]]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_dofs];
        for (m, [lo, hi]) in self.interfaces.iter().zip(sides) {
            let (Some(lo), Some(hi)) = (lo, hi) else {
                return Err(Error::State(format!("interface {}: jump needs both sides", m.interface)));
            };
            for (k, (a, b)) in lo.iter().zip(hi).enumerate() {
                out[m.offset + k] = a - b;
            }
        }
        Ok(out)
    }
}

/// Calls `f(coarse element, fine element, t, weight)` at Gauss points of
/// every interval of the merged partition.
fn for_merged(coarse: &[f64], fine: &[f64], mut f: impl FnMut(usize, usize, f64, f64)) {
    let len = coarse[coarse.len() - 1] - coarse[0];
    let tol = 1e-12 * len.abs().max(1.0);
    let mut pts: Vec<f64> = coarse.iter().chain(fine).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= tol);
    let locate = |br: &[f64], t: f64| br.partition_point(|&x| x <= t).clamp(1, br.len() - 1) - 1;
    for w in pts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let (ce, fe) = (locate(coarse, mid), locate(fine, mid));
        for (t, wq) in gauss_legendre(3, w[0], w[1]) {
            f(ce, fe, t, wq);
        }
    }
}

/// Mass matrix of the trace basis on the fine partition.
pub fn trace_mass(trace: TraceSpace, fine: &[f64]) -> DMatrix<f64> {
    let n = trace.dim(fine.len() - 1);
    let mut m = DMatrix::zeros(n, n);
    for (e, w) in fine.windows(2).enumerate() {
        for (t, wq) in gauss_legendre(3, w[0], w[1]) {
            let vals = trace.eval(e, (t - w[0]) / (w[1] - w[0]));
            for &(a, va) in &vals {
                for &(b, vb) in &vals {
                    m[(a, b)] += wq * va * vb;
                }
            }
        }
    }
    m
}
