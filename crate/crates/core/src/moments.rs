//! Weighted first and second moments over collocation realizations.
//!
//! Fields are flat `f64` vectors whose shapes are fixed by the first
//! accumulation. Weights may be negative (sparse grids), so the variance
//! `E[x^2] - E[x]^2` can come out slightly negative through cancellation;
//! such values are clamped to zero when tiny and reported otherwise.

use log::warn;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct MomentAccumulator {
    sum: Vec<Vec<f64>>,
    sum_sq: Vec<Vec<f64>>,
    /// Running `sum |w| x^2`, the scale for the clamping test.
    abs_sq: Vec<Vec<f64>>,
    pub total_weight: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: Vec<Vec<f64>>,
    pub variance: Vec<Vec<f64>>,
    pub total_weight: f64,
    pub count: usize,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, fields: &[Vec<f64>], w: f64) -> Result<()> {
        if self.count == 0 {
            self.sum = fields.iter().map(|f| vec![0.0; f.len()]).collect();
            self.sum_sq = self.sum.clone();
            self.abs_sq = self.sum.clone();
        } else if fields.len() != self.sum.len() || fields.iter().zip(&self.sum).any(|(f, s)| f.len() != s.len()) {
            return Err(Error::State("field shapes changed between accumulations".into()));
        }
        for (k, f) in fields.iter().enumerate() {
            for (i, &x) in f.iter().enumerate() {
                self.sum[k][i] += w * x;
                self.sum_sq[k][i] += w * x * x;
                self.abs_sq[k][i] += w.abs() * x * x;
            }
        }
        self.total_weight += w;
        self.count += 1;
        Ok(())
    }

    /// Mean `sum w x` and variance `sum w x^2 - mean^2`. Weights are assumed
    /// to be normalized; they are not rescaled by the total.
    pub fn finalize(&self) -> Result<Moments> {
        if self.count == 0 {
            return Err(Error::State("no realizations accumulated".into()));
        }
        let mut variance = Vec::with_capacity(self.sum.len());
        for k in 0..self.sum.len() {
            let v: Vec<f64> = (0..self.sum[k].len())
                .map(|i| {
                    let m = self.sum[k][i];
                    let v = self.sum_sq[k][i] - m * m;
                    if v >= 0.0 {
                        v
                    } else if -v <= 1e-12 * self.abs_sq[k][i] {
                        0.0
                    } else {
                        warn!("field {k} entry {i}: variance {v:.3e} is negative beyond round-off");
                        v
                    }
                })
                .collect();
            variance.push(v);
        }
        Ok(Moments {
            mean: self.sum.clone(),
            variance,
            total_weight: self.total_weight,
            count: self.count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collocation::{build_sparse_grid, build_tensor_grid, gauss_hermite_rule};
    use proptest::prelude::*;

    #[test]
    fn single_and_pair() {
        let mut acc = MomentAccumulator::new();
        assert!(acc.finalize().is_err());
        acc.accumulate(&[vec![2.0, -1.0]], 1.0).unwrap();
        let m = acc.finalize().unwrap();
        assert_eq!(m.mean, vec![vec![2.0, -1.0]]);
        assert_eq!(m.variance, vec![vec![0.0, 0.0]]);
        let mut acc = MomentAccumulator::new();
        acc.accumulate(&[vec![1.0]], 0.5).unwrap();
        acc.accumulate(&[vec![4.0]], 0.5).unwrap();
        let m = acc.finalize().unwrap();
        assert_eq!(m.mean[0][0], 2.5);
        assert!((m.variance[0][0] - 2.25).abs() < 1e-15);
        assert!(matches!(acc.accumulate(&[vec![1.0, 2.0]], 1.0), Err(Error::State(_))));
    }

    #[test]
    fn lognormal_moment() {
        // E[exp(s xi)] = exp(s^2/2); the two-point rule gives cosh(s), and
        // the error of the m-point rule is bounded by the first omitted
        // Taylor term s^{2m} / (2m)! times the Gaussian moment (2m-1)!!
        let s: f64 = 0.5;
        let exact = (s * s / 2.0).exp();
        for m in 1..=6 {
            let rule = gauss_hermite_rule(m).unwrap();
            let mut acc = MomentAccumulator::new();
            for (&y, &w) in rule.nodes.iter().zip(&rule.weights) {
                acc.accumulate(&[vec![(s * y).exp()]], w).unwrap();
            }
            let mean = acc.finalize().unwrap().mean[0][0];
            if m == 2 {
                assert!((mean - s.cosh()).abs() < 1e-15);
            }
            let n = 2 * m as i32;
            let dfact: f64 = (1..n).step_by(2).map(|k| k as f64).product();
            let fact: f64 = (1..=n).map(|k| k as f64).product();
            let bound = s.powi(n) / fact * dfact * exact;
            assert!((exact - mean).abs() <= bound, "m={m}");
        }
    }

    #[test]
    fn sparse_weights_reproduce_linear_mean() {
        let g = build_sparse_grid(2, &[2, 2], 10_000).unwrap();
        let mut acc = MomentAccumulator::new();
        for (p, &w) in g.points.iter().zip(&g.weights) {
            acc.accumulate(&[vec![1.0, 3.0 + p[0] - 2.0 * p[3]]], w).unwrap();
        }
        let m = acc.finalize().unwrap();
        assert!((m.total_weight - 1.0).abs() < 1e-12);
        assert!((m.mean[0][0] - 1.0).abs() < 1e-12 && m.variance[0][0] <= 1e-12);
        assert!((m.mean[0][1] - 3.0).abs() < 1e-12);
        // Var(3 + y0 - 2 y3) = 5, exact at level 2
        assert!((m.variance[0][1] - 5.0).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn permutation_insensitive(vals in prop::collection::vec(-10.0f64..10.0, 8), seed in 0u64..100) {
            let g = build_tensor_grid(&[2, 2, 2], &[3], 100).unwrap();
            let mut order: Vec<usize> = (0..8).collect();
            let mut s = seed;
            for i in (1..8).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (s >> 33) as usize % (i + 1));
            }
            let run = |ord: &[usize]| {
                let mut acc = MomentAccumulator::new();
                for &k in ord {
                    acc.accumulate(&[vec![vals[k]]], g.weights[k]).unwrap();
                }
                acc.finalize().unwrap()
            };
            let a = run(&(0..8).collect::<Vec<_>>());
            let b = run(&order);
            let scale = vals.iter().map(|v| v * v).sum::<f64>().max(1.0);
            prop_assert!((a.mean[0][0] - b.mean[0][0]).abs() <= 1e-12 * scale.sqrt());
            prop_assert!((a.variance[0][0] - b.variance[0][0]).abs() <= 1e-12 * scale);
        }

        #[test]
        fn identical_points_have_zero_variance(x in -1e3f64..1e3) {
            let g = build_sparse_grid(1, &[4], 100).unwrap();
            let mut acc = MomentAccumulator::new();
            for &w in &g.weights {
                acc.accumulate(&[vec![x]], w).unwrap();
            }
            let m = acc.finalize().unwrap();
            prop_assert!(m.variance[0][0].abs() <= 1e-12 * x * x);
        }
    }
}
