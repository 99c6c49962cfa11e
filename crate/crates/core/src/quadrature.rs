//! Gauss rules built from Jacobi matrices, plus a fixed triangle rule.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Nodes and weights of the Gauss rule whose three-term recurrence has
/// diagonal `alpha` and off-diagonal `beta` (the square roots of the
/// recurrence coefficients). `mu0` is the total mass of the measure.
/// Nodes are returned in ascending order.
pub fn golub_welsch(alpha: &[f64], beta: &[f64], mu0: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = alpha.len();
    assert_eq!(beta.len() + 1, m.max(1));
    let mut j = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        j[(i, i)] = alpha[i];
    }
    for (i, &b) in beta.iter().enumerate() {
        j[(i, i + 1)] = b;
        j[(i + 1, i)] = b;
    }
    let eig = SymmetricEigen::try_new(j, 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical(format!("Jacobi eigen-decomposition of size {m} did not converge")))?;
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

/// Gauss-Legendre rule with `n` points mapped to `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = if n == 3 {
        let s = (0.6f64).sqrt();
        (vec![-s, 0.0, s], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
    } else {
        let alpha = vec![0.0; n];
        let beta: Vec<f64> = (1..n)
            .map(|k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            })
            .collect();
        golub_welsch(&alpha, &beta, 2.0).expect("Legendre Jacobi matrix is well conditioned")
    };
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    x.iter().zip(&w).map(|(&xi, &wi)| (c + h * xi, h * wi)).collect()
}

/// Degree-5 seven-point rule on the reference triangle as barycentric
/// coordinates and weights summing to 1 (multiply by the area).
pub fn triangle_rule() -> [([f64; 3], f64); 7] {
    let s15 = 15f64.sqrt();
    let a1 = (6.0 - s15) / 21.0;
    let a2 = (6.0 + s15) / 21.0;
    let w1 = (155.0 - s15) / 1200.0;
    let w2 = (155.0 + s15) / 1200.0;
    let c = 1.0 / 3.0;
    [
        ([c, c, c], 9.0 / 40.0),
        ([a1, a1, 1.0 - 2.0 * a1], w1),
        ([a1, 1.0 - 2.0 * a1, a1], w1),
        ([1.0 - 2.0 * a1, a1, a1], w1),
        ([a2, a2, 1.0 - 2.0 * a2], w2),
        ([a2, 1.0 - 2.0 * a2, a2], w2),
        ([1.0 - 2.0 * a2, a2, a2], w2),
    ]
}
