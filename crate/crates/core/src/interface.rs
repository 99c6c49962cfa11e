//! The interface problem `S lambda = g` on the mortar space and the three
//! solution strategies.
//!
//! * `S1` applies `S` by one star solve per subdomain per CG iteration.
//! * `S2` first computes a flux basis (the response to every local mortar
//!   basis function) per subdomain and realization, after which applying `S`
//!   is a small dense product.
//! * `S3` computes flux bases once per local realization of each KL region
//!   and reuses them across every global realization that shares the local
//!   coordinates. Stokes subdomains keep a single basis built with the
//!   mean-field permeability in the friction term.
//!
//! Cost is counted in backsolves with an existing factorization. With
//! `N` realizations, subdomain `i` performs `sum_k N_iter(k) + 2N` (S1),
//! `N_dof,i N + 2N` (S2) or `N_dof,i N_i + 2N` (S3) backsolves, the `2N`
//! being the bar solve and the recovery star solve of every realization.
//!
//! Sign conventions: the interface normal points from the lower to the
//! higher subdomain id, and `s = +1` on the lower side, `-1` on the higher.
//! Subdomain `i` contributes `-s C^T tr(u*)` to `S lambda` and `s C^T tr(u_bar)`
//! to `g`, where `C` couples trace and mortar bases.

use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use log::info;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::collocation::CollocationGrid;
use crate::darcy::{DarcyOperator, DarcySolution};
use crate::error::{Error, Result};
use crate::geometry::Physics;
use crate::linalg::{dot, norm};
use crate::moments::{MomentAccumulator, Moments};
use crate::mortar::TraceSpace;
use crate::problem::{Problem, SubdomainData};
use crate::stokes::{BjsData, StokesOperator, StokesSolution};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    S1,
    S2,
    S3,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::S1, Method::S2, Method::S3];

    pub fn tag(self) -> &'static str {
        match self {
            Method::S1 => "s1",
            Method::S2 => "s2",
            Method::S3 => "s3",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Method::S1),
            "s2" => Ok(Method::S2),
            "s3" => Ok(Method::S3),
            _ => Err(Error::config(format!("unknown method '{s}', expected s1, s2 or s3"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SubdomainStats {
    pub factorizations: u64,
    pub backsolves: u64,
    pub cg_iters_total: u64,
    pub wall_seconds: f64,
}

impl SubdomainStats {
    pub fn merge(&mut self, other: &SubdomainStats) {
        self.factorizations += other.factorizations;
        self.backsolves += other.backsolves;
        self.cg_iters_total += other.cg_iters_total;
        self.wall_seconds += other.wall_seconds;
    }
}

pub enum LocalOperator {
    Darcy(DarcyOperator),
    Stokes(StokesOperator),
}

#[derive(Clone, Debug, PartialEq)]
pub enum LocalSolution {
    Darcy(DarcySolution),
    Stokes(StokesSolution),
}

impl LocalSolution {
    fn add(&self, other: &LocalSolution) -> LocalSolution {
        match (self, other) {
            (LocalSolution::Darcy(a), LocalSolution::Darcy(b)) => LocalSolution::Darcy(a.add(b)),
            (LocalSolution::Stokes(a), LocalSolution::Stokes(b)) => LocalSolution::Stokes(a.add(b)),
            _ => unreachable!("solutions of one subdomain share a physics"),
        }
    }
}

/// Coupling of one subdomain side of an interface to the mortar space.
struct SlotCoupling {
    sign: f64,
    /// Trace-by-mortar coupling of one component.
    c: DMatrix<f64>,
    /// Positions in the subdomain's local mortar vector, `[component][j]`.
    local: Vec<Vec<usize>>,
}

/// Responses of one subdomain to each of its mortar basis functions:
/// column `j` is `S_i xi_j` restricted to the subdomain's mortar dofs.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxBasis {
    pub subdomain: usize,
    pub local_index: usize,
    pub phi: DMatrix<f64>,
}

impl FluxBasis {
    pub fn apply(&self, lambda: &[f64]) -> Vec<f64> {
        (&self.phi * DVector::from_column_slice(lambda)).iter().copied().collect()
    }

    pub fn bytes(&self) -> usize {
        self.phi.len() * std::mem::size_of::<f64>()
    }
}

/// A factorized subdomain with its mortar coupling and solve counters.
pub struct SubdomainSolver {
    pub id: usize,
    pub op: LocalOperator,
    /// Global mortar dofs of the subdomain, ascending.
    pub dofs: Vec<usize>,
    pub stats: SubdomainStats,
    slots: Vec<SlotCoupling>,
    /// Darcy bar load.
    load: Option<Vec<f64>>,
    bar: Option<LocalSolution>,
}

impl SubdomainSolver {
    /// Assembles and factorizes subdomain `id`. Darcy subdomains take their
    /// cell permeability, Stokes subdomains the friction data.
    pub fn new(problem: &Problem, id: usize, perm: Option<&[f64]>, bjs: &[BjsData]) -> Result<Self> {
        let start = Instant::now();
        let mesh = &problem.meshes[id];
        let layout = &problem.layout;
        let mortar = &problem.mortar;
        let mut bar_load = None;
        let (op, raw): (LocalOperator, Vec<(usize, f64, Vec<f64>, TraceSpace)>) = match &problem.data[id] {
            SubdomainData::Darcy { boundary, load, .. } => {
                bar_load = Some(load.clone());
                let perm = perm.ok_or_else(|| Error::State(format!("subdomain {id}: missing permeability")))?;
                let op = DarcyOperator::assemble(layout, mesh, perm, problem.params.nu_d, boundary)?;
                let raw = op
                    .slots
                    .iter()
                    .map(|s| (s.interface, s.sign, s.breaks.clone(), TraceSpace::PiecewiseConstant))
                    .collect();
                (LocalOperator::Darcy(op), raw)
            }
            SubdomainData::Stokes { boundary, force } => {
                let op = StokesOperator::assemble(
                    layout,
                    mesh,
                    problem.params.nu_s,
                    problem.params.alpha,
                    bjs,
                    boundary,
                    &**force,
                )?;
                let raw = op
                    .slots
                    .iter()
                    .map(|s| (s.interface, s.sign, s.breaks.clone(), TraceSpace::ContinuousQuadratic))
                    .collect();
                (LocalOperator::Stokes(op), raw)
            }
        };
        let dofs = mortar.subdomain_dofs(layout, id);
        let slots = raw
            .into_iter()
            .map(|(iface, sign, breaks, trace)| SlotCoupling {
                sign,
                c: mortar.coupling(iface, trace, &breaks),
                local: mortar
                    .component_dofs(iface)
                    .iter()
                    .map(|cd| cd.iter().map(|d| dofs.binary_search(d).expect("slot dof is local")).collect())
                    .collect(),
            })
            .collect();
        Ok(SubdomainSolver {
            id,
            op,
            dofs,
            stats: SubdomainStats {
                factorizations: 1,
                wall_seconds: start.elapsed().as_secs_f64(),
                ..Default::default()
            },
            slots,
            load: bar_load,
            bar: None,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.len()
    }

    pub fn physics(&self) -> Physics {
        match self.op {
            LocalOperator::Darcy(_) => Physics::Darcy,
            LocalOperator::Stokes(_) => Physics::Stokes,
        }
    }

    /// Star solve for a local mortar vector; one backsolve.
    fn star(&mut self, lambda: &[f64]) -> Result<LocalSolution> {
        let moments: Vec<Vec<Vec<f64>>> = self
            .slots
            .iter()
            .map(|s| {
                s.local
                    .iter()
                    .map(|loc| {
                        let l = DVector::from_iterator(loc.len(), loc.iter().map(|&k| lambda[k]));
                        (&s.c * l).iter().copied().collect()
                    })
                    .collect()
            })
            .collect();
        self.stats.backsolves += 1;
        Ok(match &self.op {
            LocalOperator::Darcy(op) => {
                let m: Vec<Vec<f64>> = moments.into_iter().map(|mut v| v.swap_remove(0)).collect();
                LocalSolution::Darcy(op.solve_star(&m)?)
            }
            LocalOperator::Stokes(op) => LocalSolution::Stokes(op.solve_star(&moments)?),
        })
    }

    /// `factor * s * C^T tr(sol)` summed over slots, as a local vector.
    fn flux(&self, sol: &LocalSolution, factor: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dofs.len()];
        for (k, s) in self.slots.iter().enumerate() {
            let traces = match (&self.op, sol) {
                (LocalOperator::Darcy(op), LocalSolution::Darcy(sol)) => vec![op.normal_trace(sol, k)],
                (LocalOperator::Stokes(op), LocalSolution::Stokes(sol)) => op.velocity_trace(sol, k),
                _ => unreachable!("solution matches operator"),
            };
            for (tr, loc) in traces.iter().zip(&s.local) {
                let f = s.c.transpose() * DVector::from_column_slice(tr);
                for (&pos, v) in loc.iter().zip(f.iter()) {
                    out[pos] += factor * s.sign * v;
                }
            }
        }
        out
    }

    /// Local contribution `S_i lambda` by a star solve.
    pub fn apply_direct(&mut self, lambda: &[f64]) -> Result<Vec<f64>> {
        let start = Instant::now();
        let sol = self.star(lambda)?;
        let out = self.flux(&sol, -1.0);
        self.stats.wall_seconds += start.elapsed().as_secs_f64();
        Ok(out)
    }

    /// Local contribution through a stored flux basis; no solve.
    pub fn apply_basis(&mut self, basis: &FluxBasis, lambda: &[f64]) -> Result<Vec<f64>> {
        if basis.subdomain != self.id || basis.phi.ncols() != lambda.len() {
            return Err(Error::State(format!("subdomain {}: flux basis does not match", self.id)));
        }
        let start = Instant::now();
        let out = basis.apply(lambda);
        self.stats.wall_seconds += start.elapsed().as_secs_f64();
        Ok(out)
    }

    /// One star solve per local mortar basis function.
    pub fn compute_flux_basis(&mut self, local_index: usize) -> Result<FluxBasis> {
        let n = self.n_dofs();
        let mut phi = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply_direct(&e)?;
            e[j] = 0.0;
            phi.set_column(j, &DVector::from_vec(col));
        }
        Ok(FluxBasis {
            subdomain: self.id,
            local_index,
            phi,
        })
    }

    /// Bar solve (one backsolve); returns the local right-hand side part.
    pub fn solve_bar(&mut self) -> Result<Vec<f64>> {
        let start = Instant::now();
        self.stats.backsolves += 1;
        let bar = match (&self.op, &self.load) {
            (LocalOperator::Darcy(op), Some(load)) => LocalSolution::Darcy(op.solve_bar(load)?),
            (LocalOperator::Stokes(op), None) => LocalSolution::Stokes(op.solve_bar()?),
            _ => unreachable!("bar data matches operator"),
        };
        let out = self.flux(&bar, 1.0);
        self.bar = Some(bar);
        self.stats.wall_seconds += start.elapsed().as_secs_f64();
        Ok(out)
    }

    /// `u*(lambda) + u_bar`; one backsolve.
    pub fn recover(&mut self, lambda: &[f64]) -> Result<LocalSolution> {
        let start = Instant::now();
        let bar = self
            .bar
            .clone()
            .ok_or_else(|| Error::State(format!("subdomain {}: recovery before bar solve", self.id)))?;
        let sol = self.star(lambda)?.add(&bar);
        self.stats.wall_seconds += start.elapsed().as_secs_f64();
        Ok(sol)
    }

    /// Velocity and pressure `(u, v, p)` at the output points, flattened.
    pub fn sample(&self, sol: &LocalSolution) -> Vec<f64> {
        match (&self.op, sol) {
            (LocalOperator::Darcy(op), LocalSolution::Darcy(s)) => (0..op.mesh.n_cells())
                .flat_map(|c| {
                    let u = op.cell_velocity(s, c);
                    [u[0], u[1], s.pressure[c]]
                })
                .collect(),
            (LocalOperator::Stokes(op), LocalSolution::Stokes(s)) => op
                .vertex_velocity(s)
                .into_iter()
                .zip(&s.pressure)
                .flat_map(|(u, &p)| [u[0], u[1], p])
                .collect(),
            _ => unreachable!("solution matches operator"),
        }
    }

    pub fn take_stats(&mut self) -> SubdomainStats {
        std::mem::take(&mut self.stats)
    }
}

fn gather(lambda: &[f64], dofs: &[usize]) -> Vec<f64> {
    dofs.iter().map(|&d| lambda[d]).collect()
}

/// Sums local contributions in subdomain order.
fn scatter(n: usize, parts: &[(Vec<usize>, Vec<f64>)]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (dofs, v) in parts {
        for (&d, &x) in dofs.iter().zip(v) {
            out[d] += x;
        }
    }
    out
}

/// The interface problem of one realization over a set of factorized
/// subdomains.
pub struct InterfaceSystem<'a> {
    pub solvers: &'a mut [SubdomainSolver],
    /// Flux bases per subdomain; `None` applies `S` by star solves.
    pub bases: Option<Vec<Arc<FluxBasis>>>,
    pub n_mortar: usize,
    pool: &'a ThreadPool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgResult {
    pub lambda: Vec<f64>,
    /// Operator applications.
    pub iterations: usize,
    /// Relative residual after each iteration, starting with the initial one.
    pub history: Vec<f64>,
}

impl<'a> InterfaceSystem<'a> {
    pub fn new(solvers: &'a mut [SubdomainSolver], n_mortar: usize, pool: &'a ThreadPool) -> Self {
        InterfaceSystem {
            solvers,
            bases: None,
            n_mortar,
            pool,
        }
    }

    fn par_map<T: Send>(&mut self, f: impl Fn(&mut SubdomainSolver, Option<&FluxBasis>) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        let bases = self.bases.as_deref();
        let solvers = &mut *self.solvers;
        self.pool.install(|| {
            solvers
                .par_iter_mut()
                .enumerate()
                .map(|(i, s)| f(s, bases.map(|b| &*b[i])))
                .collect()
        })
    }

    fn assemble(&mut self, parts: Vec<Vec<f64>>) -> Vec<f64> {
        let parts: Vec<(Vec<usize>, Vec<f64>)> = self.solvers.iter().map(|s| s.dofs.clone()).zip(parts).collect();
        scatter(self.n_mortar, &parts)
    }

    /// `S lambda`.
    pub fn apply(&mut self, lambda: &[f64]) -> Result<Vec<f64>> {
        let parts = self.par_map(|s, b| {
            let l = gather(lambda, &s.dofs);
            match b {
                Some(b) => s.apply_basis(b, &l),
                None => s.apply_direct(&l),
            }
        })?;
        Ok(self.assemble(parts))
    }

    /// Bar solves and the right-hand side `g`.
    pub fn rhs(&mut self) -> Result<Vec<f64>> {
        let parts = self.par_map(|s, _| s.solve_bar())?;
        Ok(self.assemble(parts))
    }

    pub fn compute_bases(&mut self, local_index: usize) -> Result<Vec<Arc<FluxBasis>>> {
        self.par_map(|s, _| s.compute_flux_basis(local_index).map(Arc::new))
    }

    /// Unpreconditioned CG from zero, stopping at `|r| <= tol |g|`.
    pub fn cg(&mut self, g: &[f64], tol: f64, max_iter: usize) -> Result<CgResult> {
        let gn = norm(g);
        let mut x = vec![0.0; g.len()];
        if gn == 0.0 {
            return Ok(CgResult {
                lambda: x,
                iterations: 0,
                history: vec![0.0],
            });
        }
        let mut r = g.to_vec();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let mut history = vec![1.0];
        let mut it = 0;
        while rr.sqrt() > tol * gn {
            if it == max_iter {
                return Err(Error::Convergence {
                    iterations: it,
                    residual: rr.sqrt() / gn,
                    history,
                });
            }
            let ap = self.apply(&p)?;
            it += 1;
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Numerical(format!("interface operator not positive definite (p^T S p = {pap:.3e})")));
            }
            let a = rr / pap;
            for i in 0..x.len() {
                x[i] += a * p[i];
                r[i] -= a * ap[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..p.len() {
                p[i] = r[i] + beta * p[i];
            }
            history.push(rr.sqrt() / gn);
        }
        Ok(CgResult {
            lambda: x,
            iterations: it,
            history,
        })
    }

    pub fn recover(&mut self, lambda: &[f64]) -> Result<Vec<LocalSolution>> {
        self.par_map(|s, _| s.recover(&gather(lambda, &s.dofs)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub method: Method,
    pub tol: f64,
    /// Defaults to ten times the mortar dimension.
    pub max_iter: Option<usize>,
    pub workers: usize,
    /// Cap on stored flux bases for `S3`, in MiB.
    pub basis_memory_cap_mb: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            method: Method::S1,
            tol: 1e-9,
            max_iter: None,
            workers: 1,
            basis_memory_cap_mb: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub method: Method,
    pub stats: Vec<SubdomainStats>,
    /// Fields: one `(u, v, p)` sample vector per subdomain, then the mortar
    /// solution.
    pub moments: Moments,
    pub lambdas: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    /// Local realization counts per KL region.
    pub local_counts: Vec<usize>,
}

pub fn thread_pool(workers: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))
}

/// Estimated bytes of the flux bases stored by `S3`.
pub fn s3_basis_bytes(problem: &Problem, grid: &CollocationGrid) -> Result<usize> {
    let mut total = 0;
    for id in 0..problem.n_subdomains() {
        let n = problem.mortar.subdomain_dofs(&problem.layout, id).len();
        let copies = match problem.layout.region_of(id) {
            Some(r) if problem.layout.physics(id) == Physics::Darcy => grid.count_local_realizations(r)?,
            _ => 1,
        };
        total += n * n * copies * std::mem::size_of::<f64>();
    }
    Ok(total)
}

fn build_solvers(
    problem: &Problem,
    pool: &ThreadPool,
    perms: &[Option<Vec<f64>>],
    reuse: &mut [Option<SubdomainSolver>],
) -> Result<Vec<SubdomainSolver>> {
    let fresh: Vec<Option<SubdomainSolver>> = pool.install(|| {
        (0..problem.n_subdomains())
            .into_par_iter()
            .map(|id| {
                if reuse[id].is_some() {
                    return Ok(None);
                }
                let bjs = match problem.layout.physics(id) {
                    Physics::Stokes => problem.bjs_data(id, perms),
                    Physics::Darcy => Vec::new(),
                };
                SubdomainSolver::new(problem, id, perms[id].as_deref(), &bjs).map(Some)
            })
            .collect::<Result<_>>()
    })?;
    Ok(fresh
        .into_iter()
        .zip(reuse.iter_mut())
        .map(|(f, r)| f.or_else(|| r.take()).expect("solver built or reused"))
        .collect())
}

/// Runs all collocation realizations with the chosen method and returns
/// the statistics and solve counts.
pub fn run_method(problem: &Problem, grid: &CollocationGrid, opts: &SolverOptions) -> Result<RunOutput> {
    if !(opts.tol > 0.0) {
        return Err(Error::config(format!("CG tolerance must be positive, got {}", opts.tol)));
    }
    if grid.n_term() != problem.field.n_term() || grid.region_dims != problem.field.region_dims() {
        return Err(Error::State("collocation grid does not match the KL field dimensions".into()));
    }
    let pool = thread_pool(opts.workers)?;
    let n = problem.n_subdomains();
    let n_mortar = problem.mortar.n_dofs;
    let max_iter = opts.max_iter.unwrap_or(10 * n_mortar);
    let local_counts = (0..grid.n_regions())
        .map(|r| grid.count_local_realizations(r))
        .collect::<Result<Vec<_>>>()?;
    let mut totals = vec![SubdomainStats::default(); n];

    // S3 pre-loop: stored bases per (subdomain, local index), frozen Stokes solvers
    let mut store: Vec<Vec<Arc<FluxBasis>>> = vec![Vec::new(); n];
    let mut frozen: Vec<Option<SubdomainSolver>> = (0..n).map(|_| None).collect();
    if opts.method == Method::S3 {
        let bytes = s3_basis_bytes(problem, grid)?;
        info!("S3 flux bases need about {:.2} MiB", bytes as f64 / (1024.0 * 1024.0));
        if let Some(cap) = opts.basis_memory_cap_mb {
            if bytes as f64 > cap * 1024.0 * 1024.0 {
                return Err(Error::ResourceCap(format!(
                    "S3 flux bases need {:.2} MiB, cap is {cap} MiB",
                    bytes as f64 / (1024.0 * 1024.0)
                )));
            }
        }
        let mean_perms = problem.permeability(&vec![0.0; grid.n_term()])?;
        let built: Vec<(Vec<Arc<FluxBasis>>, Option<SubdomainSolver>, SubdomainStats)> = pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|id| -> Result<_> {
                    let mut stats = SubdomainStats::default();
                    match (problem.layout.physics(id), problem.layout.region_of(id)) {
                        (Physics::Darcy, Some(region)) => {
                            let mut bases = Vec::new();
                            for l in 0..grid.count_local_realizations(region)? {
                                let y = grid.embed_local_point(region, l);
                                let perm = problem.field.realize_cells(&problem.meshes[id], region, &y)?;
                                let mut s = SubdomainSolver::new(problem, id, Some(&perm), &[])?;
                                bases.push(Arc::new(s.compute_flux_basis(l)?));
                                stats.merge(&s.take_stats());
                            }
                            Ok((bases, None, stats))
                        }
                        _ => {
                            let bjs = problem.bjs_data(id, &mean_perms);
                            let mut s = SubdomainSolver::new(problem, id, None, &bjs)?;
                            let basis = Arc::new(s.compute_flux_basis(0)?);
                            stats.merge(&s.take_stats());
                            Ok((vec![basis], Some(s), stats))
                        }
                    }
                })
                .collect::<Result<_>>()
        })?;
        for (id, (bases, solver, stats)) in built.into_iter().enumerate() {
            store[id] = bases;
            frozen[id] = solver;
            totals[id].merge(&stats);
        }
    }

    let mut acc = MomentAccumulator::new();
    let mut lambdas = Vec::with_capacity(grid.n_real());
    let mut iterations = Vec::with_capacity(grid.n_real());
    for k in 0..grid.n_real() {
        let y = &grid.points[k];
        let perms = problem.permeability(y)?;
        let mut solvers = build_solvers(problem, &pool, &perms, &mut frozen)?;
        let mut sys = InterfaceSystem::new(&mut solvers, n_mortar, &pool);
        let g = sys.rhs()?;
        match opts.method {
            Method::S1 => {}
            Method::S2 => sys.bases = Some(sys.compute_bases(k)?),
            Method::S3 => {
                let bases = (0..n)
                    .map(|id| {
                        let l = match (problem.layout.physics(id), problem.layout.region_of(id)) {
                            (Physics::Darcy, Some(r)) => grid.global_to_local_index(k, r)?,
                            _ => 0,
                        };
                        Ok(store[id][l].clone())
                    })
                    .collect::<Result<Vec<_>>>()?;
                sys.bases = Some(bases);
            }
        }
        let cg = sys.cg(&g, opts.tol, max_iter)?;
        let sols = sys.recover(&cg.lambda)?;
        let mut fields: Vec<Vec<f64>> = solvers.iter().zip(&sols).map(|(s, sol)| s.sample(sol)).collect();
        fields.push(cg.lambda.clone());
        acc.accumulate(&fields, grid.weights[k])?;
        for (id, mut s) in solvers.into_iter().enumerate() {
            totals[id].merge(&s.take_stats());
            totals[id].cg_iters_total += cg.iterations as u64;
            if opts.method == Method::S3 && s.physics() == Physics::Stokes {
                frozen[id] = Some(s);
            }
        }
        lambdas.push(cg.lambda);
        iterations.push(cg.iterations);
    }
    Ok(RunOutput {
        method: opts.method,
        stats: totals,
        moments: acc.finalize()?,
        lambdas,
        iterations,
        local_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::config::{parse_config_str, CollocationConfig, Counts, DarcySideConfig, RunConfig};
    use crate::geometry::{SegmentKind, Side};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CASE1: &str = include_str!("../../../configs/case1_mini.json");

    /// Case-1 layout on coarse meshes.
    fn small_config(alpha: f64) -> RunConfig {
        let mut cfg = parse_config_str(CASE1).unwrap();
        for b in &mut cfg.blocks {
            b.mesh = if b.physics == Physics::Stokes { [4, 4] } else { [8, 8] };
        }
        cfg.mortar.elements.dd = 2;
        cfg.mortar.elements.sd = 1;
        cfg.mortar.elements.ss = 1;
        cfg.physics.alpha = alpha;
        cfg.collocation = CollocationConfig::Tensor { m: Counts::One(2) };
        cfg
    }

    fn two_darcy() -> RunConfig {
        parse_config_str(
            r#"{
            "blocks": [
                {"rect": [0, 1, 0, 1], "physics": "darcy", "region": 0, "mesh": [6, 6]},
                {"rect": [1, 2, 0, 1], "physics": "darcy", "region": 0, "mesh": [6, 6]}
            ],
            "mortar": {"degree": "p0", "elements": {"dd": 3, "sd": 1, "ss": 1}},
            "kl_regions": [{"variance": 1.0, "eta": [0.5, 0.5], "n_term": 2}],
            "mean_log_perm": {"type": "constant", "value": 0.0},
            "collocation": {"kind": "tensor", "m": 1},
            "boundary": {"darcy": {
                "left": {"type": "pressure", "value": 1.0},
                "right": {"type": "pressure", "value": 0.0}
            }}
        }"#,
        )
        .unwrap()
    }

    fn solvers_at(problem: &Problem, y: &[f64]) -> Vec<SubdomainSolver> {
        let perms = problem.permeability(y).unwrap();
        (0..problem.n_subdomains())
            .map(|id| {
                let bjs = if problem.layout.physics(id) == Physics::Stokes {
                    problem.bjs_data(id, &perms)
                } else {
                    vec![]
                };
                SubdomainSolver::new(problem, id, perms[id].as_deref(), &bjs).unwrap()
            })
            .collect()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn operator_symmetric_positive_and_basis_consistent() {
        let problem = small_config(1.0).build_problem().unwrap();
        let pool = thread_pool(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = random_vec(&mut rng, problem.field.n_term());
        let mut solvers = solvers_at(&problem, &y);
        let n = problem.mortar.n_dofs;
        let mut sys = InterfaceSystem::new(&mut solvers, n, &pool);
        assert!(sys.apply(&vec![0.0; n]).unwrap().iter().all(|&v| v == 0.0));
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..10)
            .map(|_| (random_vec(&mut rng, n), random_vec(&mut rng, n)))
            .collect();
        let mut direct = Vec::new();
        for (l, m) in &pairs {
            let sl = sys.apply(l).unwrap();
            let sm = sys.apply(m).unwrap();
            let scale = norm(&sl) * norm(m);
            assert!((dot(&sl, m) - dot(&sm, l)).abs() <= 1e-10 * scale);
            assert!(dot(&sl, l) > 0.0);
            direct.push(sl);
        }
        let bases = sys.compute_bases(0).unwrap();
        sys.bases = Some(bases);
        for ((l, _), d) in pairs.iter().zip(&direct) {
            let b = sys.apply(l).unwrap();
            assert!(max_abs_diff(&b, d) <= 1e-12 * norm(d).max(1.0));
        }
    }

    #[test]
    fn basis_costs_one_backsolve_per_dof() {
        let problem = small_config(0.0).build_problem().unwrap();
        let mut solvers = solvers_at(&problem, &vec![0.0; problem.field.n_term()]);
        for s in &mut solvers {
            let before = s.stats.backsolves;
            let b = s.compute_flux_basis(0).unwrap();
            assert_eq!(s.stats.backsolves - before, s.n_dofs() as u64);
            assert_eq!(b.phi.shape(), (s.n_dofs(), s.n_dofs()));
            assert_eq!(s.stats.factorizations, 1);
        }
    }

    #[test]
    fn cg_matches_dense_interface_solve() {
        let problem = two_darcy().build_problem().unwrap();
        let pool = thread_pool(1).unwrap();
        let mut solvers = solvers_at(&problem, &[0.4, -0.9]);
        let n = problem.mortar.n_dofs;
        let mut sys = InterfaceSystem::new(&mut solvers, n, &pool);
        let zero = sys.cg(&vec![0.0; n], 1e-10, 100).unwrap();
        assert_eq!(zero.iterations, 0);
        assert!(zero.lambda.iter().all(|&v| v == 0.0));

        let g = sys.rhs().unwrap();
        let mut s = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            s.set_column(j, &DVector::from_vec(sys.apply(&e).unwrap()));
        }
        let exact = s.lu().solve(&DVector::from_column_slice(&g)).unwrap();
        let cg = sys.cg(&g, 1e-12, 100).unwrap();
        assert!(cg.iterations <= n + 5);
        let err = (DVector::from_column_slice(&cg.lambda) - &exact).norm() / exact.norm();
        assert!(err < 1e-8, "{err}");

        // P0 coefficients summed pair g with the constant mortar function:
        // the bar flux leaving the left subdomain equals its outer inflow,
        // and the right bar problem has no data
        let total: f64 = g.iter().sum();
        let (LocalOperator::Darcy(op), Some(LocalSolution::Darcy(bar))) = (&sys.solvers[0].op, &sys.solvers[0].bar) else {
            panic!("left subdomain is Darcy")
        };
        let inflow: f64 = -op
            .boundary_fluxes(bar)
            .iter()
            .zip(&op.mesh.boundary_edges)
            .filter(|(_, e)| e.kind == SegmentKind::Outer)
            .map(|(f, _)| f)
            .sum::<f64>();
        assert!(inflow > 0.0);
        assert!((total - inflow).abs() < 1e-12 * inflow, "{total} {inflow}");

        let sols = sys.recover(&cg.lambda).unwrap();
        for (s, sol) in sys.solvers.iter().zip(&sols) {
            let (LocalOperator::Darcy(op), LocalSolution::Darcy(sol)) = (&s.op, sol) else {
                panic!("Darcy only")
            };
            assert!(op.mass_balance_residual(sol, &vec![0.0; op.mesh.n_cells()]) < 1e-10);
        }

        match sys.cg(&g, 1e-14, 1) {
            Err(Error::Convergence { iterations, history, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(history.len(), 2);
            }
            other => panic!("expected a convergence error, got {other:?}"),
        }
    }

    #[test]
    fn mirror_symmetric_problem_has_no_interface_flux() {
        let mut cfg = two_darcy();
        cfg.boundary.darcy.insert(Side::Right, DarcySideConfig::Pressure { value: 1.0 });
        cfg.sources.darcy_source = 1.0;
        let problem = cfg.build_problem().unwrap();
        let pool = thread_pool(1).unwrap();
        let mut solvers = solvers_at(&problem, &[0.0, 0.0]);
        let n = problem.mortar.n_dofs;
        let mut sys = InterfaceSystem::new(&mut solvers, n, &pool);
        let g = sys.rhs().unwrap();
        let lambda = sys.cg(&g, 1e-12, 100).unwrap().lambda;
        let sols = sys.recover(&lambda).unwrap();
        let (LocalOperator::Darcy(op), LocalSolution::Darcy(sol)) = (&sys.solvers[0].op, &sols[0]) else {
            panic!("Darcy only")
        };
        let flux = op.extract_normal_flux(sol, 0).unwrap();
        assert!(flux.iter().all(|f| f.abs() < 1e-10), "{flux:?}");
        // the mortar pressure is uniform along a symmetric interface
        assert!(lambda.iter().all(|l| (l - lambda[0]).abs() < 1e-8), "{lambda:?}");
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let mut cfg = two_darcy();
        cfg.boundary.darcy.insert(Side::Left, DarcySideConfig::Pressure { value: 0.0 });
        let problem = cfg.build_problem().unwrap();
        let grid = cfg.collocation.build(&problem.field.region_dims()).unwrap();
        let out = run_method(&problem, &grid, &SolverOptions::default()).unwrap();
        assert_eq!(out.iterations, vec![0]);
        assert!(out.moments.mean.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn s3_respects_memory_cap() {
        let mut cfg = small_config(0.0);
        cfg.solver.basis_memory_cap_mb = Some(1e-6);
        cfg.solver.method = Method::S3;
        let problem = cfg.build_problem().unwrap();
        let grid = cfg.collocation.build(&problem.field.region_dims()).unwrap();
        let err = run_method(&problem, &grid, &cfg.solver_options()).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("s4".parse::<Method>().is_err());
    }
}
