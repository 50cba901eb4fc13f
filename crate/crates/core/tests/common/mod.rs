//! Naive reference implementations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use anthro_observer::complexity::train_hotelling;
use anthro_observer::roc::wilcoxon_auc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Gauss–Jordan elimination with partial pivoting.
pub fn gauss_jordan(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, p);
        b.swap(col, p);
        let d = a[col][col];
        for k in 0..n {
            a[col][k] /= d;
        }
        b[col] /= d;
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for k in 0..n {
                        a[r][k] -= f * a[col][k];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    b
}

pub fn naive_cov(x: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = x[0].len();
    let m: Vec<f64> = (0..n).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / x.len() as f64).collect();
    let mut c = vec![vec![0.0; n]; n];
    for r in x {
        for i in 0..n {
            for j in 0..n {
                c[i][j] += (r[i] - m[i]) * (r[j] - m[j]);
            }
        }
    }
    let k = (x.len() - 1) as f64;
    c.iter_mut().flatten().for_each(|v| *v /= k);
    (m, c)
}

fn gaussian_class(rng: &mut ChaCha8Rng, n: usize, dim: usize, shift: f64, mix: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            (0..dim)
                .map(|i| shift * (i as f64 + 1.0) / dim as f64 + (0..dim).map(|j| mix[i][j] * z[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Train on random correlated Gaussian classes of every dimension in `dims`
/// and compare the weights with a Gauss–Jordan solve of the same ridge
/// system. Returns the worst relative weight error and the worst relative
/// residual of the library weights in the oracle system.
pub fn hotelling_vs_gauss_jordan(seed: u64, dims: std::ops::RangeInclusive<usize>) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut residual) = (0.0f64, 0.0f64);
    for dim in dims {
        let mix: Vec<Vec<f64>> = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.3 * rng.random::<f64>() }).collect())
            .collect();
        let n = 3 * dim + 10;
        let c0 = gaussian_class(&mut rng, n, dim, 0.0, &mix);
        let c1 = gaussian_class(&mut rng, n + 3, dim, 1.0, &mix);
        let model = train_hotelling(&c0, &c1, Vec::new()).unwrap();

        let (m0, s0) = naive_cov(&c0);
        let (m1, s1) = naive_cov(&c1);
        let mut a: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| s0[i][j] + s1[i][j]).collect()).collect();
        let trace: f64 = (0..dim).map(|i| a[i][i]).sum();
        let ridge = 1e-6 * trace / dim as f64;
        (0..dim).for_each(|i| a[i][i] += ridge);
        let diff: Vec<f64> = m1.iter().zip(&m0).map(|(x, y)| x - y).collect();
        let w = gauss_jordan(a.clone(), diff.clone());

        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (got, want) in model.w.iter().zip(&w) {
            worst = worst.max((got - want).abs() / norm);
        }
        // Residual of the library solution in the oracle system.
        for i in 0..dim {
            let lhs: f64 = (0..dim).map(|j| a[i][j] * model.w[j]).sum();
            residual = residual.max((lhs - diff[i]).abs() / (1.0 + diff[i].abs()));
        }
    }
    (worst, residual)
}

pub fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for p in pos {
        for n in neg {
            s += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

/// Number of random instances (up to 200 + 200 scores, many ties) on which
/// the library AUC differs from pair counting.
pub fn wilcoxon_mismatches(seed: u64, instances: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .filter(|i| {
            let np = rng.random_range(1..=200);
            let nn = rng.random_range(1..=200);
            // Coarse integer values force many ties.
            let levels = if i % 2 == 0 { 5 } else { 1000 };
            let pos: Vec<f64> = (0..np).map(|_| rng.random_range(1..=levels) as f64).collect();
            let neg: Vec<f64> = (0..nn).map(|_| rng.random_range(0..levels) as f64).collect();
            wilcoxon_auc(&pos, &neg).unwrap() != brute_auc(&pos, &neg)
        })
        .count()
}

pub const DPRIME_PAIRS: [(f64, f64); 6] = [
    (0.97, 2.66),
    (0.92, 1.99),
    (0.986, 3.11),
    (0.675, 0.64),
    (0.926, 2.05),
    (0.606, 0.38),
];
