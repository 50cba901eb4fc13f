//! Separable Gaussian filtering on 3-D volumes stored slice-major.

use serde::{Deserialize, Serialize};

/// Volume extent: slices × rows × cols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Dims {
    pub const fn new(slices: usize, rows: usize, cols: usize) -> Self {
        Self { slices, rows, cols }
    }

    pub const fn len(&self) -> usize {
        self.slices * self.rows * self.cols
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn slice_len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub const fn index(&self, s: usize, r: usize, c: usize) -> usize {
        (s * self.rows + r) * self.cols + c
    }
}

impl Default for Dims {
    fn default() -> Self {
        Self::new(32, 64, 64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Slice,
    Row,
    Col,
}

/// Sampled Gaussian truncated at `ceil(4σ)` and normalized to unit sum.
/// `sigma == 0` yields the identity kernel.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Sampled Gaussian with an explicit radius, normalized to unit sum.
pub fn gaussian_kernel_with_radius(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

#[inline]
pub fn radius(kernel: &[f64]) -> usize {
    kernel.len() / 2
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    if m < n {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Convolve along one axis with symmetric boundary extension. Output has
/// the same extent as the input.
pub fn convolve_axis_reflect(data: &[f64], dims: Dims, axis: Axis, kernel: &[f64]) -> Vec<f64> {
    if kernel.len() == 1 {
        return data.iter().map(|v| v * kernel[0]).collect();
    }
    let r = radius(kernel) as isize;
    let mut out = vec![0.0; data.len()];
    let (n, stride) = match axis {
        Axis::Slice => (dims.slices, dims.rows * dims.cols),
        Axis::Row => (dims.rows, dims.cols),
        Axis::Col => (dims.cols, 1),
    };
    for_each_line(dims, axis, |base| {
        for i in 0..n {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let j = reflect(i as isize + t as isize - r, n);
                acc += kv * data[base + j * stride];
            }
            out[base + i * stride] = acc;
        }
    });
    out
}

/// Visit the base offset of every 1-D line running along `axis`.
fn for_each_line(dims: Dims, axis: Axis, mut f: impl FnMut(usize)) {
    match axis {
        Axis::Slice => {
            for r in 0..dims.rows {
                for c in 0..dims.cols {
                    f(dims.index(0, r, c));
                }
            }
        }
        Axis::Row => {
            for s in 0..dims.slices {
                for c in 0..dims.cols {
                    f(dims.index(s, 0, c));
                }
            }
        }
        Axis::Col => {
            for s in 0..dims.slices {
                for r in 0..dims.rows {
                    f(dims.index(s, r, 0));
                }
            }
        }
    }
}

/// Separable 3-D filtering with symmetric boundaries.
pub fn smooth_reflect(
    data: &[f64],
    dims: Dims,
    slice_kernel: &[f64],
    row_kernel: &[f64],
    col_kernel: &[f64],
) -> Vec<f64> {
    let a = convolve_axis_reflect(data, dims, Axis::Col, col_kernel);
    let b = convolve_axis_reflect(&a, dims, Axis::Row, row_kernel);
    convolve_axis_reflect(&b, dims, Axis::Slice, slice_kernel)
}

/// "Valid" separable 3-D convolution: output extent shrinks by twice each
/// kernel radius along the matching axis.
pub fn convolve_valid(
    data: &[f64],
    dims: Dims,
    slice_kernel: &[f64],
    row_kernel: &[f64],
    col_kernel: &[f64],
) -> (Vec<f64>, Dims) {
    let (rs, rr, rc) = (radius(slice_kernel), radius(row_kernel), radius(col_kernel));
    assert!(dims.slices > 2 * rs && dims.rows > 2 * rr && dims.cols > 2 * rc);

    // cols
    let d1 = Dims::new(dims.slices, dims.rows, dims.cols - 2 * rc);
    let mut a = vec![0.0; d1.len()];
    for s in 0..dims.slices {
        for r in 0..dims.rows {
            let src = &data[dims.index(s, r, 0)..dims.index(s, r, 0) + dims.cols];
            let dst = &mut a[d1.index(s, r, 0)..d1.index(s, r, 0) + d1.cols];
            for (c, out) in dst.iter_mut().enumerate() {
                *out = dot(&src[c..c + col_kernel.len()], col_kernel);
            }
        }
    }
    // rows
    let d2 = Dims::new(dims.slices, dims.rows - 2 * rr, d1.cols);
    let mut b = vec![0.0; d2.len()];
    for s in 0..d2.slices {
        for r in 0..d2.rows {
            for (t, &kv) in row_kernel.iter().enumerate() {
                let src = &a[d1.index(s, r + t, 0)..d1.index(s, r + t, 0) + d1.cols];
                let dst = &mut b[d2.index(s, r, 0)..d2.index(s, r, 0) + d2.cols];
                dst.iter_mut().zip(src).for_each(|(o, v)| *o += kv * v);
            }
        }
    }
    // slices
    let d3 = Dims::new(dims.slices - 2 * rs, d2.rows, d2.cols);
    let plane = d2.slice_len();
    let mut out = vec![0.0; d3.len()];
    for s in 0..d3.slices {
        let dst = &mut out[s * plane..(s + 1) * plane];
        for (t, &kv) in slice_kernel.iter().enumerate() {
            let src = &b[(s + t) * plane..(s + t + 1) * plane];
            dst.iter_mut().zip(src).for_each(|(o, v)| *o += kv * v);
        }
    }
    (out, d3)
}

/// Valid-mode separable 2-D filtering of a single `rows × cols` image.
pub fn filter2_valid(img: &[f64], rows: usize, cols: usize, kernel: &[f64]) -> (Vec<f64>, usize, usize) {
    let r = radius(kernel);
    let (or, oc) = (rows - 2 * r, cols - 2 * r);
    let mut tmp = vec![0.0; rows * oc];
    for y in 0..rows {
        let src = &img[y * cols..(y + 1) * cols];
        for x in 0..oc {
            tmp[y * oc + x] = dot(&src[x..x + kernel.len()], kernel);
        }
    }
    let mut out = vec![0.0; or * oc];
    for y in 0..or {
        let dst = &mut out[y * oc..(y + 1) * oc];
        for (t, &kv) in kernel.iter().enumerate() {
            let src = &tmp[(y + t) * oc..(y + t + 1) * oc];
            dst.iter_mut().zip(src).for_each(|(o, v)| *o += kv * v);
        }
    }
    (out, or, oc)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for sigma in [0.5, 1.0, 1.5, 4.0] {
            let k = gaussian_kernel(sigma);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(k.len() % 2, 1);
            let n = k.len();
            for i in 0..n / 2 {
                assert_eq!(k[i], k[n - 1 - i]);
            }
        }
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
    }

    #[test]
    fn reflect_wraps_symmetrically() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        // kernel wider than the signal
        assert_eq!(reflect(-9, 4), 0);
    }

    #[test]
    fn reflect_filter_preserves_constants() {
        let dims = Dims::new(3, 5, 6);
        let data = vec![2.5; dims.len()];
        let k = gaussian_kernel(1.2);
        let out = smooth_reflect(&data, dims, &k, &k, &k);
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn valid_convolution_matches_direct_sum() {
        let dims = Dims::new(5, 6, 7);
        let data: Vec<f64> = (0..dims.len()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let ks = vec![0.25, 0.5, 0.25];
        let kr = vec![0.2, 0.6, 0.2];
        let kc = vec![0.1, 0.3, 0.2, 0.3, 0.1];
        let (out, od) = convolve_valid(&data, dims, &ks, &kr, &kc);
        assert_eq!(od, Dims::new(3, 4, 3));
        for s in 0..od.slices {
            for r in 0..od.rows {
                for c in 0..od.cols {
                    let mut acc = 0.0;
                    for (a, wa) in ks.iter().enumerate() {
                        for (b, wb) in kr.iter().enumerate() {
                            for (d, wd) in kc.iter().enumerate() {
                                acc += wa * wb * wd * data[dims.index(s + a, r + b, c + d)];
                            }
                        }
                    }
                    assert!((out[od.index(s, r, c)] - acc).abs() < 1e-12);
                }
            }
        }
    }
}
