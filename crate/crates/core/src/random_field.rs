//! Truncated Karhunen-Loève expansions of the log permeability.
//!
//! Each KL region carries an independent separable exponential covariance
//! `s^2 exp(-|x1 - x1'| / eta1 - |x2 - x2'| / eta2)`. Its eigenpairs are
//! products of one-dimensional eigenpairs computed on the region's bounding
//! rectangle, and the eigenfunctions are extended by zero outside the
//! region's blocks.
//!
//! The permeability of a realization `y` is
//! `K(x) = exp(E[Y](x) + sum_j y_j sqrt(lambda_j) f_j(x))`, where the sum runs
//! over the modes of the region containing `x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainLayout, Physics, Point, Rect, SubdomainMesh};

/// One eigenpair of the 1D exponential kernel on `[0, a]`.
///
/// The eigenfunction is `(w cos(w t) + c sin(w t)) / norm` with `c = 1/eta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eigen1D {
    pub lambda: f64,
    pub w: f64,
    pub c: f64,
    pub norm: f64,
}

impl Eigen1D {
    /// Eigenfunction value at local coordinate `t` in `[0, a]`.
    pub fn eval(&self, t: f64) -> f64 {
        (self.w * (self.w * t).cos() + self.c * (self.w * t).sin()) / self.norm
    }
}

/// `F(w) = (w^2 - c^2) sin(w a) - 2 c w cos(w a)`, whose positive roots give
/// the eigenvalues `2 c s^2 / (w^2 + c^2)`.
fn characteristic(w: f64, a: f64, c: f64) -> f64 {
    (w * w - c * c) * (w * a).sin() - 2.0 * c * w * (w * a).cos()
}

/// The `n` largest eigenpairs of `s^2 exp(-|t - t'| / eta)` on `[0, a]`,
/// in decreasing order.
///
/// The k-th root lies in `((k-1) pi / a, k pi / a)` and is isolated by
/// bisection.
pub fn solve_1d_eigenpairs(a: f64, sigma2: f64, eta: f64, n: usize) -> Result<Vec<Eigen1D>> {
    if !(a > 0.0 && sigma2 > 0.0 && eta > 0.0) {
        return Err(Error::Domain(format!(
            "KL kernel needs positive length, variance and correlation length (got {a}, {sigma2}, {eta})"
        )));
    }
    let c = 1.0 / eta;
    let step = std::f64::consts::PI / a;
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        let (mut lo, mut hi) = ((k - 1) as f64 * step, k as f64 * step);
        // sign of F just right of the lower end
        let s_lo = if k % 2 == 0 { 1.0 } else { -1.0 };
        let mut iters = 0;
        while hi - lo > 4.0 * f64::EPSILON * hi && iters < 200 {
            let mid = 0.5 * (lo + hi);
            let f = characteristic(mid, a, c);
            if !f.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite characteristic value while bracketing root {k} in [{lo}, {hi}]"
                )));
            }
            if f == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if f.signum() == s_lo {
                lo = mid;
            } else {
                hi = mid;
            }
            iters += 1;
        }
        if hi - lo > 1e-10 * hi {
            return Err(Error::Numerical(format!(
                "KL root {k} did not converge; bracket [{lo}, {hi}]"
            )));
        }
        let w = 0.5 * (lo + hi);
        let norm2 = (w * w + c * c) * a / 2.0
            + (w * w - c * c) * (2.0 * w * a).sin() / (4.0 * w)
            + c * (1.0 - (2.0 * w * a).cos()) / 2.0;
        out.push(Eigen1D {
            lambda: 2.0 * c * sigma2 / (w * w + c * c),
            w,
            c,
            norm: norm2.sqrt(),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    /// The largest products of 1D eigenvalues.
    #[default]
    Largest,
    /// The index box `p < nx`, `q < ny`.
    Box,
}

/// Stationary separable exponential covariance on one region.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceSpec {
    pub variance: f64,
    pub eta: [f64; 2],
    pub rect: Rect,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlMode {
    /// Product eigenvalue, variance included once.
    pub lambda: f64,
    pub p: usize,
    pub q: usize,
    pub fx: Eigen1D,
    pub fy: Eigen1D,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KlRegionExpansion {
    pub region: usize,
    pub spec: CovarianceSpec,
    pub modes: Vec<KlMode>,
    /// Blocks on which the expansion is supported.
    pub support: Vec<Rect>,
}

impl KlRegionExpansion {
    pub fn n_term(&self) -> usize {
        self.modes.len()
    }

    pub fn contains(&self, x: Point, tol: f64) -> bool {
        self.support.iter().any(|r| r.contains(x, tol))
    }

    /// Value of mode `j` at `x`, assuming `x` lies in the support.
    pub fn mode_value(&self, j: usize, x: Point) -> f64 {
        let m = &self.modes[j];
        m.fx.eval(x[0] - self.spec.rect.x0) * m.fy.eval(x[1] - self.spec.rect.y0)
    }

    /// `sum_j y_j sqrt(lambda_j) f_j(x)` for the region's own coordinates.
    pub fn fluctuation(&self, x: Point, y: &[f64]) -> f64 {
        let tx = x[0] - self.spec.rect.x0;
        let ty = x[1] - self.spec.rect.y0;
        self.modes
            .iter()
            .zip(y)
            .map(|(m, &yj)| yj * m.lambda.sqrt() * m.fx.eval(tx) * m.fy.eval(ty))
            .sum()
    }

    /// Truncated covariance `sum_j lambda_j f_j(x) f_j(x')`.
    pub fn covariance(&self, x: Point, xp: Point) -> f64 {
        (0..self.modes.len())
            .map(|j| self.modes[j].lambda * self.mode_value(j, x) * self.mode_value(j, xp))
            .sum()
    }
}

/// Builds the expansion of one region with `n_term` modes.
///
/// `shape` is required for [`ModeSelection::Box`] and gives the number of 1D
/// modes per axis.
pub fn build_kl_region(
    region: usize,
    spec: CovarianceSpec,
    n_term: usize,
    selection: ModeSelection,
    shape: Option<[usize; 2]>,
    support: Vec<Rect>,
) -> Result<KlRegionExpansion> {
    if !(spec.variance > 0.0 && spec.eta[0] > 0.0 && spec.eta[1] > 0.0) {
        return Err(Error::config(format!(
            "KL region {region}: variance and correlation lengths must be positive"
        )));
    }
    let (a, b) = (spec.rect.width(), spec.rect.height());
    let modes = match selection {
        ModeSelection::Box => {
            let [nx, ny] = shape.ok_or_else(|| {
                Error::config(format!("KL region {region}: box selection needs n_term given as [nx, ny]"))
            })?;
            let ex = solve_1d_eigenpairs(a, 1.0, spec.eta[0], nx)?;
            let ey = solve_1d_eigenpairs(b, 1.0, spec.eta[1], ny)?;
            let mut modes: Vec<KlMode> = (0..nx)
                .flat_map(|p| (0..ny).map(move |q| (p, q)))
                .map(|(p, q)| KlMode {
                    lambda: spec.variance * ex[p].lambda * ey[q].lambda,
                    p,
                    q,
                    fx: ex[p],
                    fy: ey[q],
                })
                .collect();
            sort_modes(&mut modes);
            modes
        }
        ModeSelection::Largest => largest_products(&spec, n_term)?,
    };
    Ok(KlRegionExpansion {
        region,
        spec,
        modes,
        support,
    })
}

fn sort_modes(modes: &mut [KlMode]) {
    modes.sort_by(|u, v| v.lambda.total_cmp(&u.lambda).then((u.p, u.q).cmp(&(v.p, v.q))));
}

fn largest_products(spec: &CovarianceSpec, n_term: usize) -> Result<Vec<KlMode>> {
    if n_term == 0 {
        return Ok(Vec::new());
    }
    let (a, b) = (spec.rect.width(), spec.rect.height());
    let mut m = (2.0 * (n_term as f64).sqrt()).ceil() as usize;
    loop {
        // one extra mode per axis bounds everything that was not computed
        let ex = solve_1d_eigenpairs(a, 1.0, spec.eta[0], m + 1)?;
        let ey = solve_1d_eigenpairs(b, 1.0, spec.eta[1], m + 1)?;
        let mut modes: Vec<KlMode> = (0..m)
            .flat_map(|p| (0..m).map(move |q| (p, q)))
            .map(|(p, q)| KlMode {
                lambda: spec.variance * ex[p].lambda * ey[q].lambda,
                p,
                q,
                fx: ex[p],
                fy: ey[q],
            })
            .collect();
        sort_modes(&mut modes);
        let bound = spec.variance * (ex[m].lambda * ey[0].lambda).max(ex[0].lambda * ey[m].lambda);
        if modes.len() >= n_term && modes[n_term - 1].lambda > bound {
            modes.truncate(n_term);
            return Ok(modes);
        }
        if m > 4096 {
            return Err(Error::Numerical(format!(
                "could not certify the {n_term} largest KL modes with {m} 1D modes per axis"
            )));
        }
        m *= 2;
    }
}

/// Mean of the log permeability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanLogPerm {
    Constant {
        value: f64,
    },
    /// One value per KL region.
    PerRegion {
        values: Vec<f64>,
    },
    /// `offset + amplitude sin(pi kx x) sin(pi ky y)`.
    Sinusoid {
        offset: f64,
        amplitude: f64,
        k: [f64; 2],
    },
    /// Piecewise-constant raster over `rect`, row-major from the bottom row.
    Raster {
        rect: Rect,
        nx: usize,
        ny: usize,
        values: Vec<f64>,
    },
}

impl MeanLogPerm {
    pub fn validate(&self, n_regions: usize) -> Result<(), String> {
        match self {
            MeanLogPerm::PerRegion { values } if values.len() != n_regions => Err(format!(
                "per_region mean has {} values but the layout has {n_regions} KL regions",
                values.len()
            )),
            MeanLogPerm::Raster { nx, ny, values, .. } if nx * ny != values.len() || *nx == 0 || *ny == 0 => {
                Err(format!("raster mean has {} values, expected {nx} x {ny}", values.len()))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: Point, region: usize) -> f64 {
        match self {
            MeanLogPerm::Constant { value } => *value,
            MeanLogPerm::PerRegion { values } => values[region],
            MeanLogPerm::Sinusoid { offset, amplitude, k } => {
                use std::f64::consts::PI;
                offset + amplitude * (PI * k[0] * x[0]).sin() * (PI * k[1] * x[1]).sin()
            }
            MeanLogPerm::Raster { rect, nx, ny, values } => {
                let fi = ((x[0] - rect.x0) / rect.width() * *nx as f64).floor();
                let fj = ((x[1] - rect.y0) / rect.height() * *ny as f64).floor();
                let i = (fi.max(0.0) as usize).min(nx - 1);
                let j = (fj.max(0.0) as usize).min(ny - 1);
                values[j * nx + i]
            }
        }
    }
}

/// Log permeability over the porous part of the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct LogPermField {
    pub mean: MeanLogPerm,
    pub regions: Vec<KlRegionExpansion>,
    pub tol: f64,
}

impl LogPermField {
    pub fn new(mean: MeanLogPerm, regions: Vec<KlRegionExpansion>, tol: f64) -> Result<Self> {
        mean.validate(regions.len()).map_err(Error::config)?;
        Ok(LogPermField { mean, regions, tol })
    }

    pub fn n_term(&self) -> usize {
        self.regions.iter().map(|r| r.n_term()).sum()
    }

    pub fn region_dims(&self) -> Vec<usize> {
        self.regions.iter().map(|r| r.n_term()).collect()
    }

    /// Slot of `(region, j)` in the global realization vector.
    pub fn kappa(&self, region: usize, j: usize) -> usize {
        self.regions[..region].iter().map(|r| r.n_term()).sum::<usize>() + j
    }

    pub fn region_at(&self, x: Point) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(x, self.tol))
    }

    fn check_len(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.n_term() {
            return Err(Error::Domain(format!(
                "realization has {} coordinates, the field has {}",
                y.len(),
                self.n_term()
            )));
        }
        Ok(())
    }

    pub fn evaluate_fluctuation(&self, x: Point, y: &[f64]) -> Result<f64> {
        self.check_len(y)?;
        let r = self
            .region_at(x)
            .ok_or_else(|| Error::Domain(format!("point ({}, {}) is outside the porous domain", x[0], x[1])))?;
        let off = self.kappa(r, 0);
        Ok(self.regions[r].fluctuation(x, &y[off..off + self.regions[r].n_term()]))
    }

    pub fn log_perm(&self, x: Point, region: usize, y: &[f64]) -> f64 {
        let off = self.kappa(region, 0);
        self.mean.eval(x, region) + self.regions[region].fluctuation(x, &y[off..off + self.regions[region].n_term()])
    }

    /// Per-cell permeability of one Darcy subdomain in `region`, sampled at
    /// cell centroids.
    pub fn realize_cells(&self, mesh: &SubdomainMesh, region: usize, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        (0..mesh.n_cells())
            .map(|c| {
                let x = mesh.cell_centroid(c);
                let k = self.log_perm(x, region, y).exp();
                if k > 0.0 && k.is_finite() {
                    Ok(k)
                } else {
                    Err(Error::Numerical(format!(
                        "permeability {k} at ({}, {}) is not a positive finite number",
                        x[0], x[1]
                    )))
                }
            })
            .collect()
    }
}

/// Permeability of every Darcy subdomain (`None` for Stokes subdomains).
pub fn realize_permeability(
    layout: &DomainLayout,
    field: &LogPermField,
    meshes: &[SubdomainMesh],
    y: &[f64],
) -> Result<Vec<Option<Vec<f64>>>> {
    meshes
        .iter()
        .map(|m| match layout.physics(m.subdomain) {
            Physics::Stokes => Ok(None),
            Physics::Darcy => {
                let region = layout.region_of(m.subdomain).expect("Darcy blocks carry a region");
                field.realize_cells(m, region, y).map(Some)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_layout, build_subdomain_mesh, LayoutConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Midpoint Nyström eigenvalues of `s^2 exp(-|t-t'|/eta)` on `[0, a]`.
    ///
    /// The midpoint matrix is `h s^2 rho^|i-j|` with `rho = exp(-h/eta)`; its
    /// inverse is tridiagonal, so the largest eigenvalues follow from the
    /// smallest eigenvalues of that tridiagonal, found by Sturm bisection.
    pub(crate) fn nystrom_eigenvalues(a: f64, sigma2: f64, eta: f64, n_pts: usize, k: usize) -> Vec<f64> {
        let h = a / n_pts as f64;
        let rho = (-h / eta).exp();
        let diag: Vec<f64> = (0..n_pts)
            .map(|i| if i == 0 || i == n_pts - 1 { 1.0 } else { 1.0 + rho * rho })
            .collect();
        let off = -rho;
        // number of eigenvalues of the tridiagonal below mu
        let count = |mu: f64| {
            let mut c = 0;
            let mut d = diag[0] - mu;
            if d < 0.0 {
                c += 1;
            }
            for &di in &diag[1..] {
                let prev = if d == 0.0 { f64::EPSILON } else { d };
                d = di - mu - off * off / prev;
                if d < 0.0 {
                    c += 1;
                }
            }
            c
        };
        let upper = (1.0 + rho).powi(2) + 1.0;
        (0..k)
            .map(|j| {
                let (mut lo, mut hi) = (0.0, upper);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if count(mid) > j {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let mu = 0.5 * (lo + hi);
                h * sigma2 * (1.0 - rho * rho) / mu
            })
            .collect()
    }

    #[test]
    fn nystrom_oracle_matches_dense_eigen() {
        let n = 64;
        let h = 1.0 / n as f64;
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| h * (-((i as f64 - j as f64).abs() * h) / 0.1).exp());
        let mut dense: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        dense.sort_by(|a, b| b.total_cmp(a));
        let tri = nystrom_eigenvalues(1.0, 1.0, 0.1, n, 5);
        for j in 0..5 {
            assert!((dense[j] - tri[j]).abs() < 1e-12, "{} vs {}", dense[j], tri[j]);
        }
    }

    #[test]
    fn eigenvalues_match_extrapolated_nystrom() {
        let an = solve_1d_eigenpairs(1.0, 1.0, 0.1, 5).unwrap();
        let e2 = nystrom_eigenvalues(1.0, 1.0, 0.1, 2048, 5);
        let e1 = nystrom_eigenvalues(1.0, 1.0, 0.1, 1024, 5);
        for j in 0..5 {
            let rich = (4.0 * e2[j] - e1[j]) / 3.0;
            assert!(((an[j].lambda - rich) / rich).abs() <= 1e-6);
            // raw midpoint discretization error is of order 1e-6 itself
            assert!(((an[j].lambda - e2[j]) / e2[j]).abs() <= 1e-5);
        }
        let reference = [0.18708255, 0.15604556, 0.12115435, 0.09132424, 0.0687356];
        for j in 0..5 {
            assert!((an[j].lambda - reference[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn trace_identity_and_decay() {
        let e = solve_1d_eigenpairs(1.0, 1.0, 0.1, 50).unwrap();
        let mut sum = 0.0;
        for (j, p) in e.iter().enumerate() {
            sum += p.lambda;
            assert!(sum <= 1.0);
            if j > 0 {
                assert!(p.lambda <= e[j - 1].lambda);
            }
        }
        assert!(sum >= 0.95);
    }

    #[test]
    fn nearly_constant_kernel() {
        let e = solve_1d_eigenpairs(1.0, 1.0, 1e6, 2).unwrap();
        assert!((e[0].lambda - 1.0).abs() < 1e-5);
        assert!(e[1].lambda / e[0].lambda <= 1e-6);
    }

    #[test]
    fn eigenfunctions_orthonormal() {
        let e = solve_1d_eigenpairs(1.3, 2.0, 0.2, 8).unwrap();
        let rule = crate::quadrature::gauss_legendre(12, 0.0, 1.0);
        let n_panels = 200;
        for j in 0..8 {
            for k in 0..8 {
                let mut s = 0.0;
                for p in 0..n_panels {
                    let (a, b) = (1.3 * p as f64 / n_panels as f64, 1.3 * (p + 1) as f64 / n_panels as f64);
                    for (t, w) in &rule {
                        let x = a + (b - a) * t;
                        s += w * (b - a) * e[j].eval(x) * e[k].eval(x);
                    }
                }
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-10, "{j} {k}: {s}");
            }
        }
    }

    #[test]
    fn eigenfunction_satisfies_fredholm_equation() {
        // int_0^a exp(-|t-s|/eta) f(s) ds = lambda f(t), checked by quadrature
        let (a, eta) = (1.0, 0.3);
        let e = solve_1d_eigenpairs(a, 1.0, eta, 3).unwrap();
        let rule = crate::quadrature::gauss_legendre(10, 0.0, 1.0);
        for pair in &e {
            for t in [0.0, 0.37, 0.81, 1.0] {
                let mut s = 0.0;
                let n_panels = 400;
                for p in 0..n_panels {
                    let (lo, hi) = (a * p as f64 / n_panels as f64, a * (p + 1) as f64 / n_panels as f64);
                    for (u, w) in &rule {
                        let x = lo + (hi - lo) * u;
                        s += w * (hi - lo) * (-(t - x).abs() / eta).exp() * pair.eval(x);
                    }
                }
                assert!((s - pair.lambda * pair.eval(t)).abs() < 1e-8);
            }
        }
    }

    fn unit_spec() -> CovarianceSpec {
        CovarianceSpec {
            variance: 1.0,
            eta: [0.1, 0.1],
            rect: Rect::new(0.0, 1.0, 0.0, 1.0),
        }
    }

    #[test]
    fn region_modes() {
        let r = build_kl_region(0, unit_spec(), 1, ModeSelection::Largest, None, vec![unit_spec().rect]).unwrap();
        assert_eq!((r.modes[0].p, r.modes[0].q), (0, 0));
        let r = build_kl_region(0, unit_spec(), 2, ModeSelection::Box, Some([2, 1]), vec![unit_spec().rect]).unwrap();
        assert_eq!(r.n_term(), 2);
        assert_eq!((r.modes[1].p, r.modes[1].q), (1, 0));
        let r = build_kl_region(0, unit_spec(), 30, ModeSelection::Largest, None, vec![unit_spec().rect]).unwrap();
        for w in r.modes.windows(2) {
            assert!(w[0].lambda >= w[1].lambda);
        }
        // brute force over a generous box
        let ex = solve_1d_eigenpairs(1.0, 1.0, 0.1, 40).unwrap();
        let mut all: Vec<f64> = ex.iter().flat_map(|a| ex.iter().map(move |b| a.lambda * b.lambda)).collect();
        all.sort_by(|a, b| b.total_cmp(a));
        for j in 0..30 {
            assert!((r.modes[j].lambda - all[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn covariance_reconstruction_improves() {
        let spec = CovarianceSpec {
            variance: 1.0,
            eta: [0.5, 0.5],
            rect: Rect::new(0.0, 1.0, 0.0, 1.0),
        };
        let r9 = build_kl_region(0, spec.clone(), 9, ModeSelection::Largest, None, vec![spec.rect]).unwrap();
        let r100 = build_kl_region(0, spec.clone(), 100, ModeSelection::Largest, None, vec![spec.rect]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let xp = [rng.random::<f64>(), rng.random::<f64>()];
            let exact = (-(x[0] - xp[0]).abs() / 0.5 - (x[1] - xp[1]).abs() / 0.5).exp();
            let e9 = (r9.covariance(x, xp) - exact).abs();
            let e100 = (r100.covariance(x, xp) - exact).abs();
            assert!(e100 <= e9, "{e100} > {e9}");
        }
    }

    fn two_region_field() -> (DomainLayout, LogPermField, Vec<SubdomainMesh>) {
        let cfg = LayoutConfig::uniform_grid(Rect::new(0.0, 1.0, 0.0, 1.0), 2, 2, |_, row| {
            (Physics::Darcy, Some(1 - row))
        });
        let layout = build_layout(&cfg).unwrap();
        let regions = (0..2)
            .map(|r| {
                let rects: Vec<Rect> = layout.regions[r].iter().map(|&b| layout.blocks[b].rect).collect();
                let bbox = rects[1..].iter().fold(rects[0], |a, b| a.union(b));
                let spec = CovarianceSpec { variance: 0.5, eta: [0.2, 0.3], rect: bbox };
                build_kl_region(r, spec, 2 + r, ModeSelection::Largest, None, rects).unwrap()
            })
            .collect();
        let field = LogPermField::new(MeanLogPerm::Constant { value: 0.0 }, regions, 1e-12).unwrap();
        let meshes = (0..4).map(|i| build_subdomain_mesh(&layout, i, 4, 4).unwrap()).collect();
        (layout, field, meshes)
    }

    #[test]
    fn fluctuation_cases() {
        let (_, field, _) = two_region_field();
        assert_eq!(field.n_term(), 5);
        let x_low = [0.3, 0.2];
        assert_eq!(field.evaluate_fluctuation(x_low, &[0.0; 5]).unwrap(), 0.0);
        // region 0 is the bottom row; only region-1 slots are nonzero
        assert_eq!(field.evaluate_fluctuation(x_low, &[0.0, 0.0, 1.0, -2.0, 0.5]).unwrap(), 0.0);
        assert!(field.evaluate_fluctuation([1.5, 0.5], &[0.0; 5]).is_err());
        // single mode against the closed-form eigenfunction
        let r0 = &field.regions[0];
        let m = r0.modes[0];
        let x = [0.7, 0.35];
        let fx = |t: f64| (m.fx.w * (m.fx.w * t).cos() + m.fx.c * (m.fx.w * t).sin()) / m.fx.norm;
        let fy = |t: f64| (m.fy.w * (m.fy.w * t).cos() + m.fy.c * (m.fy.w * t).sin()) / m.fy.norm;
        let v = field.evaluate_fluctuation(x, &[1.3, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((v - 1.3 * m.lambda.sqrt() * fx(0.7) * fy(0.35)).abs() < 1e-14);
    }

    #[test]
    fn permeability_cases() {
        let (layout, field, meshes) = two_region_field();
        let k = realize_permeability(&layout, &field, &meshes, &[0.0; 5]).unwrap();
        assert!(k.iter().flatten().flatten().all(|&v| v == 1.0));
        let mut f1 = field.clone();
        f1.mean = MeanLogPerm::Constant { value: 1.0 };
        let k = realize_permeability(&layout, &f1, &meshes, &[0.0; 5]).unwrap();
        assert!(k.iter().flatten().flatten().all(|&v| v == std::f64::consts::E));
        let kp = realize_permeability(&layout, &f1, &meshes, &[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let km = realize_permeability(&layout, &f1, &meshes, &[-1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        for (a, b) in kp.iter().flatten().flatten().zip(km.iter().flatten().flatten()) {
            assert!((a * b - 2f64.exp()).abs() < 1e-13);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn positivity_and_region_independence(
            y in proptest::collection::vec(-10.0f64..10.0, 5),
            dz in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let (layout, field, meshes) = two_region_field();
            let k = realize_permeability(&layout, &field, &meshes, &y).unwrap();
            for v in k.iter().flatten().flatten() {
                prop_assert!(*v > 0.0 && v.is_finite());
            }
            // perturb region-1 slots only
            let mut y2 = y.clone();
            for (s, d) in y2[2..].iter_mut().zip(&dz) {
                *s += d;
            }
            let k2 = realize_permeability(&layout, &field, &meshes, &y2).unwrap();
            for &b in &layout.regions[0] {
                prop_assert_eq!(&k[b], &k2[b]);
            }
        }
    }
}
