//! Small dense helpers for the discriminant.

use crate::error::{Error, Result};

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }
}

pub fn mean(samples: &[Vec<f64>]) -> Vec<f64> {
    let n = samples[0].len();
    let mut m = vec![0.0; n];
    for s in samples {
        m.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
    let k = samples.len() as f64;
    m.iter_mut().for_each(|a| *a /= k);
    m
}

/// Unbiased sample covariance.
pub fn covariance(samples: &[Vec<f64>], mean: &[f64]) -> Matrix {
    let n = mean.len();
    let mut c = Matrix::zeros(n);
    for s in samples {
        for i in 0..n {
            let di = s[i] - mean[i];
            for j in i..n {
                *c.get_mut(i, j) += di * (s[j] - mean[j]);
            }
        }
    }
    let denom = (samples.len() - 1) as f64;
    for i in 0..n {
        for j in i..n {
            let v = c.get(i, j) / denom;
            *c.get_mut(i, j) = v;
            *c.get_mut(j, i) = v;
        }
    }
    c
}

/// Solve `A x = b` for symmetric positive-definite `A` by Cholesky.
pub fn cholesky_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.n;
    let mut l = Matrix::zeros(n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k).powi(2);
        }
        if d.is_nan() || d <= 0.0 || !d.is_finite() {
            return Err(Error::Data(format!(
                "pooled covariance is not positive definite (pivot {j} = {d})"
            )));
        }
        let d = d.sqrt();
        *l.get_mut(j, j) = d;
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            *l.get_mut(i, j) = s / d;
        }
    }
    // forward: L y = b
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l.get(i, k) * y[k]).sum();
        y[i] = (b[i] - s) / l.get(i, i);
    }
    // back: Lᵀ x = y
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l.get(k, i) * x[k]).sum();
        x[i] = (y[i] - s) / l.get(i, i);
    }
    Ok(x)
}
