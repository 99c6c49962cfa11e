//! Sparse assembly and factorized solves with fixed (eliminated) unknowns.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

/// Coordinate-format matrix; duplicate entries are summed.
#[derive(Clone, Debug, Default)]
pub struct TripletMatrix {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl TripletMatrix {
    pub fn new(n: usize) -> Self {
        TripletMatrix { n, entries: Vec::new() }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    /// Adds `v` at `(i, j)` and `(j, i)`.
    pub fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        self.add(i, j, v);
        self.add(j, i, v);
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    /// Rows and columns restricted to `idx` (in that order).
    pub fn submatrix_dense(&self, idx: &[usize]) -> nalgebra::DMatrix<f64> {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &i) in idx.iter().enumerate() {
            pos[i] = k;
        }
        let mut m = nalgebra::DMatrix::zeros(idx.len(), idx.len());
        for &(i, j, v) in &self.entries {
            if pos[i] != usize::MAX && pos[j] != usize::MAX {
                m[(pos[i], pos[j])] += v;
            }
        }
        m
    }
}

/// LU-factorized square system in which a subset of unknowns has prescribed
/// values. Only the free-free block is factorized; prescribed values are
/// lifted through the full matrix.
pub struct ConstrainedSystem {
    matrix: TripletMatrix,
    fixed: Vec<bool>,
    free: Vec<usize>,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl ConstrainedSystem {
    pub fn factorize(matrix: TripletMatrix, fixed: Vec<bool>) -> Result<Self> {
        // subdomain-level parallelism only; keeps factorizations independent
        // of the worker count
        static SEQUENTIAL: std::sync::Once = std::sync::Once::new();
        SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
        assert_eq!(fixed.len(), matrix.n);
        let free: Vec<usize> = (0..matrix.n).filter(|&i| !fixed[i]).collect();
        let mut pos = vec![usize::MAX; matrix.n];
        for (k, &i) in free.iter().enumerate() {
            pos[i] = k;
        }
        let trips: Vec<Triplet<usize, usize, f64>> = matrix
            .entries
            .iter()
            .filter(|&&(i, j, _)| !fixed[i] && !fixed[j])
            .map(|&(i, j, v)| Triplet::new(pos[i], pos[j], v))
            .collect();
        let nf = free.len();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(nf, nf, &trips)
            .map_err(|e| Error::Assembly(format!("sparse matrix creation failed: {e:?}")))?;
        let lu = a
            .sp_lu()
            .map_err(|e| Error::Assembly(format!("sparse LU failed: {e:?}")))?;
        Ok(ConstrainedSystem { matrix, fixed, free, lu })
    }

    pub fn n(&self) -> usize {
        self.matrix.n
    }

    pub fn matrix(&self) -> &TripletMatrix {
        &self.matrix
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        self.fixed[i]
    }

    /// Solves `A x = rhs` on the free rows with `x = values` on the fixed
    /// unknowns. `values` is a full-length vector whose free entries are ignored.
    pub fn solve(&self, rhs: &[f64], values: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.matrix.n;
        let mut x = vec![0.0; n];
        let mut b = rhs.to_vec();
        if let Some(values) = values {
            for i in 0..n {
                if self.fixed[i] {
                    x[i] = values[i];
                }
            }
            for &(i, j, v) in &self.matrix.entries {
                if !self.fixed[i] && self.fixed[j] {
                    b[i] -= v * x[j];
                }
            }
        }
        let mut col = Mat::<f64>::zeros(self.free.len(), 1);
        for (k, &i) in self.free.iter().enumerate() {
            col[(k, 0)] = b[i];
        }
        self.lu.solve_in_place(col.as_mut());
        for (k, &i) in self.free.iter().enumerate() {
            let v = col[(k, 0)];
            if !v.is_finite() {
                return Err(Error::Numerical("non-finite value in factorized solve".into()));
            }
            x[i] = v;
        }
        Ok(x)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
