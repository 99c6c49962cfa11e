//! Gauss-Hermite collocation grids over the global stochastic space.
//!
//! Stochastic dimensions are ordered region by region: the dimensions of
//! region 0 come first, then those of region 1, and so on. Grid points use
//! probabilists' Hermite rules, so weights are probability weights that sum
//! to one.
//!
//! Every grid also records, for each region, which *local* realization each
//! global point maps to. Two points share a local index exactly when their
//! coordinates restricted to that region coincide bitwise.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::golub_welsch;

/// One-dimensional Gauss-Hermite rule against the standard normal density.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadRule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule1D {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// The `m`-point rule, exact for polynomials of degree `2m - 1`.
///
/// Nodes and weights are symmetrized so that `nodes[i] == -nodes[m-1-i]`
/// holds bitwise.
///
/// ```
/// let rule = sdflow::collocation::gauss_hermite_rule(3).unwrap();
/// assert!((rule.nodes[2] - 3f64.sqrt()).abs() < 1e-14);
/// assert!((rule.integrate(|y| y.powi(4)) - 3.0).abs() < 1e-12);
/// ```
pub fn gauss_hermite_rule(m: usize) -> Result<QuadRule1D> {
    if m == 0 {
        return Err(Error::Domain("Gauss-Hermite rule needs at least one point".into()));
    }
    let alpha = vec![0.0; m];
    let beta: Vec<f64> = (1..m).map(|k| (k as f64).sqrt()).collect();
    let (mut n, _) = golub_welsch(&alpha, &beta, 1.0)?;
    // Newton polish on the orthonormal polynomial, whose derivative is
    // sqrt(m) times the previous one; weights are 1 / sum_k p_k(x)^2.
    let mut w = vec![0.0; m];
    for (x, wi) in n.iter_mut().zip(w.iter_mut()) {
        for _ in 0..2 {
            let (pm, pm1, _) = orthonormal_hermite(m, *x);
            *x -= pm / ((m as f64).sqrt() * pm1);
        }
        *wi = 1.0 / orthonormal_hermite(m, *x).2;
    }
    let nodes = (0..m).map(|i| 0.5 * (n[i] - n[m - 1 - i])).collect();
    let weights = (0..m).map(|i| 0.5 * (w[i] + w[m - 1 - i])).collect();
    Ok(QuadRule1D { nodes, weights })
}

/// `(p_m(x), p_{m-1}(x), sum_{k<m} p_k(x)^2)` for the orthonormal
/// probabilists' Hermite polynomials.
fn orthonormal_hermite(m: usize, x: f64) -> (f64, f64, f64) {
    let (mut prev, mut cur) = (0.0, 1.0);
    let mut sum = 0.0;
    for k in 0..m {
        sum += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev, sum)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GridKind {
    Tensor { m: Vec<usize> },
    Sparse { level: usize },
}

#[derive(Clone, Debug)]
pub struct CollocationGrid {
    pub kind: GridKind,
    /// Number of stochastic dimensions of every region.
    pub region_dims: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// `local_index[region][k]`: local realization of global point `k`.
    local_index: Vec<Vec<usize>>,
    /// `local_points[region][l]`: region coordinates of local realization `l`.
    local_points: Vec<Vec<Vec<f64>>>,
}

impl CollocationGrid {
    pub fn n_term(&self) -> usize {
        self.region_dims.iter().sum()
    }

    pub fn n_real(&self) -> usize {
        self.points.len()
    }

    pub fn n_regions(&self) -> usize {
        self.region_dims.len()
    }

    /// First global dimension of every region.
    pub fn region_offset(&self, region: usize) -> usize {
        self.region_dims[..region].iter().sum()
    }

    pub fn global_to_local_index(&self, k: usize, region: usize) -> Result<usize> {
        let table = self
            .local_index
            .get(region)
            .ok_or_else(|| Error::Domain(format!("unknown KL region {region}")))?;
        table
            .get(k)
            .copied()
            .ok_or_else(|| Error::Domain(format!("global realization {k} out of range")))
    }

    pub fn count_local_realizations(&self, region: usize) -> Result<usize> {
        self.local_points
            .get(region)
            .map(Vec::len)
            .ok_or_else(|| Error::Domain(format!("unknown KL region {region}")))
    }

    /// Region coordinates of a local realization.
    pub fn local_point(&self, region: usize, local: usize) -> &[f64] {
        &self.local_points[region][local]
    }

    /// Full-length point carrying the region coordinates of a local
    /// realization and zeros elsewhere.
    pub fn embed_local_point(&self, region: usize, local: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.n_term()];
        let off = self.region_offset(region);
        y[off..off + self.region_dims[region]].copy_from_slice(self.local_point(region, local));
        y
    }

    fn from_points(kind: GridKind, region_dims: Vec<usize>, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Self {
        let mut local_index = Vec::with_capacity(region_dims.len());
        let mut local_points = Vec::with_capacity(region_dims.len());
        let mut off = 0;
        for &d in &region_dims {
            let mut dict: HashMap<Vec<u64>, usize> = HashMap::new();
            let mut table = Vec::with_capacity(points.len());
            let mut reps = Vec::new();
            for p in &points {
                let coords = &p[off..off + d];
                let key: Vec<u64> = coords.iter().map(|c| c.to_bits()).collect();
                let next = dict.len();
                let id = *dict.entry(key).or_insert_with(|| {
                    reps.push(coords.to_vec());
                    next
                });
                table.push(id);
            }
            local_index.push(table);
            local_points.push(reps);
            off += d;
        }
        CollocationGrid {
            kind,
            region_dims,
            points,
            weights,
            local_index,
            local_points,
        }
    }
}

fn checked_product(m: &[usize], cap: usize) -> Result<usize> {
    let mut n: usize = 1;
    for &k in m {
        n = n
            .checked_mul(k)
            .filter(|&n| n <= cap)
            .ok_or_else(|| Error::ResourceCap(format!("collocation grid exceeds the cap of {cap} points")))?;
    }
    Ok(n)
}

/// Mixed-radix digits of `k`, most significant (slowest) first.
pub fn mixed_radix_digits(mut k: usize, radices: &[usize]) -> Vec<usize> {
    let mut d = vec![0; radices.len()];
    for i in (0..radices.len()).rev() {
        d[i] = k % radices[i];
        k /= radices[i];
    }
    d
}

/// Anisotropic tensor grid with `m[d]` points in dimension `d`; the first
/// dimension varies slowest.
///
/// ```
/// use sdflow::collocation::build_tensor_grid;
/// let g = build_tensor_grid(&[2, 2, 2], &[2, 1], 1 << 20).unwrap();
/// assert_eq!(g.n_real(), 8);
/// assert_eq!(g.global_to_local_index(5, 0).unwrap(), 2);
/// assert_eq!(g.global_to_local_index(5, 1).unwrap(), 1);
/// ```
pub fn build_tensor_grid(m: &[usize], region_dims: &[usize], cap: usize) -> Result<CollocationGrid> {
    if m.len() != region_dims.iter().sum::<usize>() {
        return Err(Error::config(format!(
            "tensor grid has {} point counts but the KL regions carry {} dimensions",
            m.len(),
            region_dims.iter().sum::<usize>()
        )));
    }
    if let Some(d) = m.iter().position(|&k| k == 0) {
        return Err(Error::config(format!("tensor grid dimension {d} has zero points")));
    }
    let n = checked_product(m, cap)?;
    let rules = m.iter().map(|&k| gauss_hermite_rule(k)).collect::<Result<Vec<_>>>()?;
    let mut points = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for k in 0..n {
        let digits = mixed_radix_digits(k, m);
        points.push(digits.iter().zip(&rules).map(|(&i, r)| r.nodes[i]).collect());
        weights.push(digits.iter().zip(&rules).map(|(&i, r)| r.weights[i]).product());
    }
    let grid = CollocationGrid::from_points(
        GridKind::Tensor { m: m.to_vec() },
        region_dims.to_vec(),
        points,
        weights,
    );
    debug_assert!(tensor_local_matches(&grid, m));
    Ok(grid)
}

/// Mixed-radix re-encoding of the region digits; coincides with the
/// first-appearance numbering for tensor grids.
pub fn tensor_local_index(k: usize, m: &[usize], region_dims: &[usize], region: usize) -> usize {
    let digits = mixed_radix_digits(k, m);
    let off: usize = region_dims[..region].iter().sum();
    let range = off..off + region_dims[region];
    digits[range.clone()]
        .iter()
        .zip(&m[range])
        .fold(0, |acc, (&d, &r)| acc * r + d)
}

fn tensor_local_matches(grid: &CollocationGrid, m: &[usize]) -> bool {
    (0..grid.n_regions()).all(|r| {
        (0..grid.n_real()).all(|k| grid.local_index[r][k] == tensor_local_index(k, m, &grid.region_dims, r))
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All multi-indices of length `n` with entry sum in `[lo, hi]`.
fn multi_indices(n: usize, lo: usize, hi: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, budget: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for v in 0..=budget {
            cur.push(v);
            rec(n, budget - v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, hi, &mut Vec::with_capacity(n), &mut out);
    out.retain(|p| p.iter().sum::<usize>() >= lo);
    out
}

/// Isotropic Smolyak grid of level `level`; 1D level `p` uses the
/// `2^(p+1) - 1` point rule. Duplicate points are merged and the result is
/// sorted lexicographically.
///
/// ```
/// let g = sdflow::collocation::build_sparse_grid(1, &[25, 25], 1 << 20).unwrap();
/// assert_eq!(g.n_real(), 101);
/// ```
pub fn build_sparse_grid(level: usize, region_dims: &[usize], cap: usize) -> Result<CollocationGrid> {
    let n: usize = region_dims.iter().sum();
    let kind = GridKind::Sparse { level };
    if n == 0 {
        return Ok(CollocationGrid::from_points(kind, region_dims.to_vec(), vec![vec![]], vec![1.0]));
    }
    let lmin = (level + 1).saturating_sub(n);
    let mut rules = Vec::new();
    for p in 0..=level {
        let m = u32::try_from(p + 1)
            .ok()
            .and_then(|e| 2usize.checked_pow(e))
            .ok_or_else(|| Error::ResourceCap(format!("sparse level {level} is too deep")))?
            - 1;
        rules.push(gauss_hermite_rule(m)?);
    }
    let mut merged: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for p in multi_indices(n, lmin, level) {
        let s: usize = p.iter().sum();
        let mut coef = binomial(n - 1, level - s);
        if (level - s) % 2 == 1 {
            coef = -coef;
        }
        let radices: Vec<usize> = p.iter().map(|&pi| rules[pi].len()).collect();
        let count = checked_product(&radices, cap)?;
        for k in 0..count {
            let digits = mixed_radix_digits(k, &radices);
            let point: Vec<f64> = digits.iter().zip(&p).map(|(&i, &pi)| rules[pi].nodes[i]).collect();
            let w: f64 = digits.iter().zip(&p).map(|(&i, &pi)| rules[pi].weights[i]).product();
            let key: Vec<u64> = point.iter().map(|c| c.to_bits()).collect();
            match merged.get(&key) {
                Some(&idx) => weights[idx] += coef * w,
                None => {
                    if points.len() >= cap {
                        return Err(Error::ResourceCap(format!(
                            "collocation grid exceeds the cap of {cap} points"
                        )));
                    }
                    merged.insert(key, points.len());
                    points.push(point);
                    weights.push(coef * w);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let points = order.iter().map(|&i| points[i].clone()).collect();
    let weights = order.iter().map(|&i| weights[i]).collect();
    Ok(CollocationGrid::from_points(kind, region_dims.to_vec(), points, weights))
}
