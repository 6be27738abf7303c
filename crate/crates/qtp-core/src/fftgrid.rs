//! FFT-based grid operations: linear convolution with padding and the
//! Fourier ("Wigner-type") transform of relative-coordinate correlators.
//!
//! Sign conventions follow the (+,-,-,-) metric: the transform of a
//! relative-coordinate function G(y) is
//!     W(xi) = integral d^D y exp(i xi.y) G(y),
//! with xi.y = xi0 y0 - xi_vec . y_vec, so the time axis carries e^{+i w t}
//! and each spatial axis e^{-i k x}.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{QtpError, Result};

/// Uniform grid geometry: per-axis starting coordinate, step, and count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec<f64>,
    pub step: Vec<f64>,
    pub shape: Vec<usize>,
}

impl GridSpec {
    /// Symmetric grid [-half, half) with n points per axis (n even keeps
    /// zero on a node).
    pub fn symmetric(half_extents: &[f64], counts: &[usize]) -> Result<Self> {
        if half_extents.len() != counts.len() {
            return Err(QtpError::Grid("extent/count length mismatch".into()));
        }
        let mut origin = Vec::new();
        let mut step = Vec::new();
        for (&h, &n) in half_extents.iter().zip(counts) {
            if n < 8 {
                return Err(QtpError::Grid(format!("grid axis needs >= 8 points, got {n}")));
            }
            let dx = 2.0 * h / n as f64;
            origin.push(-(n as f64 / 2.0) * dx);
            step.push(dx);
        }
        Ok(GridSpec { origin, step, shape: counts.to_vec() })
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.step.iter().product()
    }

    /// Coordinate of axis `ax` at index `i`.
    pub fn coord(&self, ax: usize, i: usize) -> f64 {
        self.origin[ax] + self.step[ax] * i as f64
    }

    /// Row-major linear index from a multi-index.
    pub fn index(&self, idx: &[usize]) -> usize {
        let mut lin = 0usize;
        for (d, &i) in idx.iter().enumerate() {
            lin = lin * self.shape[d] + i;
        }
        lin
    }

    /// Multi-index from a row-major linear index.
    pub fn unindex(&self, mut lin: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.ndim()];
        for d in (0..self.ndim()).rev() {
            idx[d] = lin % self.shape[d];
            lin /= self.shape[d];
        }
        idx
    }

    pub fn point(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().enumerate().map(|(d, &i)| self.coord(d, i)).collect()
    }
}

/// Dense row-major complex grid.
#[derive(Clone, Debug)]
pub struct ComplexGrid {
    pub spec: GridSpec,
    pub data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.len();
        ComplexGrid { spec, data: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let mut g = ComplexGrid::zeros(spec);
        for lin in 0..g.data.len() {
            let idx = g.spec.unindex(lin);
            let pt = g.spec.point(&idx);
            g.data[lin] = f(&pt);
        }
        g
    }

    /// Largest |value| on the outer boundary relative to the grid maximum.
    pub fn edge_tail_fraction(&self) -> f64 {
        let peak = self.data.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for lin in 0..self.data.len() {
            let idx = self.spec.unindex(lin);
            let on_edge = idx
                .iter()
                .zip(&self.spec.shape)
                .any(|(&i, &n)| i == 0 || i + 1 == n);
            if on_edge {
                worst = worst.max(self.data[lin].norm() / peak);
            }
        }
        worst
    }
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// In-place FFT along one axis of a row-major nd array. `sign` +1 applies
/// e^{+i 2 pi jk/N} (inverse-convention, unnormalized), -1 the forward one.
fn fft_axis(data: &mut [Complex64], shape: &[usize], axis: usize, sign: i32) {
    let n = shape[axis];
    let mut planner = FftPlanner::new();
    let fft = if sign < 0 { planner.plan_fft_forward(n) } else { planner.plan_fft_inverse(n) };
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            for j in 0..n {
                buf[j] = data[base + j * inner];
            }
            fft.process(&mut buf);
            for j in 0..n {
                data[base + j * inner] = buf[j];
            }
        }
    }
}

/// Discrete linear convolution of two nd arrays via zero-padded FFT.
/// Output shape per axis is `na + nb - 1`; entries match the direct sum
/// c[k] = sum_j a[j] b[k-j].
pub fn fft_convolve_raw(
    a: &[Complex64],
    sa: &[usize],
    b: &[Complex64],
    sb: &[usize],
) -> Result<(Vec<Complex64>, Vec<usize>)> {
    if sa.len() != sb.len() {
        return Err(QtpError::Grid("convolution rank mismatch".into()));
    }
    let rank = sa.len();
    let out_shape: Vec<usize> = sa.iter().zip(sb).map(|(&x, &y)| x + y - 1).collect();
    let pad: Vec<usize> = out_shape.iter().map(|&n| next_pow2(n)).collect();
    let padded_len: usize = pad.iter().product();

    let embed = |src: &[Complex64], ss: &[usize]| -> Vec<Complex64> {
        let mut dst = vec![Complex64::new(0.0, 0.0); padded_len];
        let n = src.len();
        for lin in 0..n {
            // unindex in src shape
            let mut rem = lin;
            let mut plin = 0usize;
            for d in 0..rank {
                let stride: usize = ss[d + 1..].iter().product();
                let i = rem / stride;
                rem %= stride;
                plin = plin * pad[d] + i;
            }
            dst[plin] = src[lin];
        }
        dst
    };

    let mut fa = embed(a, sa);
    let mut fb = embed(b, sb);
    for ax in 0..rank {
        fft_axis(&mut fa, &pad, ax, -1);
        fft_axis(&mut fb, &pad, ax, -1);
    }
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    for ax in 0..rank {
        fft_axis(&mut fa, &pad, ax, 1);
    }
    let norm = 1.0 / padded_len as f64;

    // Crop to the linear-convolution support.
    let out_len: usize = out_shape.iter().product();
    let mut out = vec![Complex64::new(0.0, 0.0); out_len];
    for lin in 0..out_len {
        let mut rem = lin;
        let mut plin = 0usize;
        for d in 0..rank {
            let stride: usize = out_shape[d + 1..].iter().product();
            let i = rem / stride;
            rem %= stride;
            plin = plin * pad[d] + i;
        }
        out[lin] = fa[plin] * norm;
    }
    Ok((out, out_shape))
}

/// Direct O(N^2) convolution; the verification oracle for the FFT path.
pub fn direct_convolve_raw(
    a: &[Complex64],
    sa: &[usize],
    b: &[Complex64],
    sb: &[usize],
) -> Result<(Vec<Complex64>, Vec<usize>)> {
    if sa.len() != sb.len() {
        return Err(QtpError::Grid("convolution rank mismatch".into()));
    }
    let rank = sa.len();
    let out_shape: Vec<usize> = sa.iter().zip(sb).map(|(&x, &y)| x + y - 1).collect();
    let out_len: usize = out_shape.iter().product();
    let mut out = vec![Complex64::new(0.0, 0.0); out_len];
    let unidx = |mut lin: usize, shape: &[usize]| -> Vec<usize> {
        let mut idx = vec![0usize; rank];
        for d in (0..rank).rev() {
            idx[d] = lin % shape[d];
            lin /= shape[d];
        }
        idx
    };
    for la in 0..a.len() {
        let ia = unidx(la, sa);
        for lb in 0..b.len() {
            let ib = unidx(lb, sb);
            let mut lo = 0usize;
            for d in 0..rank {
                lo = lo * out_shape[d] + (ia[d] + ib[d]);
            }
            out[lo] += a[la] * b[lb];
        }
    }
    Ok((out, out_shape))
}

/// Result of a Wigner-type transform: values over a frequency grid.
pub struct SpectralGrid {
    /// Per-axis frequency values (length = shape of the input axis).
    pub freqs: Vec<Vec<f64>>,
    pub shape: Vec<usize>,
    pub data: Vec<Complex64>,
}

impl SpectralGrid {
    pub fn index(&self, idx: &[usize]) -> usize {
        let mut lin = 0usize;
        for (d, &i) in idx.iter().enumerate() {
            lin = lin * self.shape[d] + i;
        }
        lin
    }
}

/// W(xi) = sum_j G(y_j) exp(i xi.y_j) dV, with xi.y the Minkowski product:
/// axis 0 is time (e^{+i xi0 y0}), the rest spatial (e^{-i xi_m y_m}).
/// Frequencies are returned centered on zero.
///
/// The caller must sample G with decay toward the grid edge; a tail mass
/// above `tail_tol` is rejected.
pub fn wigner_transform(grid: &ComplexGrid, tail_tol: f64) -> Result<SpectralGrid> {
    let tail = grid.edge_tail_fraction();
    if tail > tail_tol {
        return Err(QtpError::Grid(format!(
            "relative edge tail {tail:e} exceeds {tail_tol:e}; enlarge the window"
        )));
    }
    let spec = &grid.spec;
    let rank = spec.ndim();
    let mut data = grid.data.clone();
    // Unnormalized DFTs: time axis inverse-sign, spatial axes forward-sign.
    for ax in 0..rank {
        let sign = if ax == 0 { 1 } else { -1 };
        fft_axis(&mut data, &spec.shape, ax, sign);
    }
    // Frequency axes (fftshifted) and phase correction for the grid origin:
    //   sum_j G_j e^{+/-i 2pi m j / N} -> multiply by e^{+/-i xi * origin} dV.
    let mut freqs = Vec::with_capacity(rank);
    for ax in 0..rank {
        let n = spec.shape[ax];
        let dxi = 2.0 * std::f64::consts::PI / (n as f64 * spec.step[ax]);
        let f: Vec<f64> = (0..n).map(|m| (m as isize - (n / 2) as isize) as f64 * dxi).collect();
        freqs.push(f);
    }
    let dv = spec.cell_volume();
    let len = data.len();
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for lin in 0..len {
        let idx = spec.unindex(lin);
        // fftshift: map centered index to FFT bin.
        let mut src = 0usize;
        let mut phase = 0.0f64;
        for ax in 0..rank {
            let n = spec.shape[ax];
            let centered = idx[ax] as isize - (n / 2) as isize;
            let bin = centered.rem_euclid(n as isize) as usize;
            src = src * n + bin;
            let xi = freqs[ax][idx[ax]];
            let sgn = if ax == 0 { 1.0 } else { -1.0 };
            phase += sgn * xi * spec.origin[ax];
        }
        out[lin] = data[src] * Complex64::new(0.0, phase).exp() * dv;
    }
    Ok(SpectralGrid { freqs, shape: spec.shape.clone(), data: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn convolution_with_delta_is_identity() {
        let a: Vec<Complex64> = (0..9).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        let mut d = vec![Complex64::new(0.0, 0.0); 3];
        d[0] = Complex64::new(1.0, 0.0);
        let (c, shape) = fft_convolve_raw(&a, &[9], &d, &[3]).unwrap();
        assert_eq!(shape, vec![11]);
        for i in 0..9 {
            assert_relative_eq!(c[i].re, a[i].re, epsilon = 1e-12);
            assert_relative_eq!(c[i].im, a[i].im, epsilon = 1e-12);
        }
        assert!(c[9].norm() < 1e-12 && c[10].norm() < 1e-12);
    }

    #[test]
    fn fft_matches_direct_on_random_grids() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let sa = [7usize, 6];
            let sb = [5usize, 4];
            let a: Vec<Complex64> = (0..sa.iter().product::<usize>())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let b: Vec<Complex64> = (0..sb.iter().product::<usize>())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let (cf, _) = fft_convolve_raw(&a, &sa, &b, &sb).unwrap();
            let (cd, _) = direct_convolve_raw(&a, &sa, &b, &sb).unwrap();
            let peak = cd.iter().map(|c| c.norm()).fold(0.0, f64::max);
            for (x, y) in cf.iter().zip(&cd) {
                assert!((x - y).norm() <= 1e-10 * peak.max(1.0));
            }
        }
    }

    #[test]
    fn gaussian_convolves_to_wider_gaussian() {
        // Continuous convolution needs a cell-volume factor on the discrete one.
        let n = 256usize;
        let h = 16.0 / n as f64;
        let (s1, s2) = (0.7f64, 1.1f64);
        let gauss = |s: f64| -> Vec<Complex64> {
            (0..n)
                .map(|i| {
                    let x = -8.0 + h * i as f64;
                    Complex64::new((-x * x / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt()), 0.0)
                })
                .collect()
        };
        let (c, _) = fft_convolve_raw(&gauss(s1), &[n], &gauss(s2), &[n]).unwrap();
        let s3 = (s1 * s1 + s2 * s2).sqrt();
        // Output grid starts at -16 with the same step.
        for i in (0..2 * n - 1).step_by(17) {
            let x = -16.0 + h * i as f64;
            let expect = (-x * x / (2.0 * s3 * s3)).exp() / (s3 * (2.0 * std::f64::consts::PI).sqrt());
            assert!(((c[i].re * h) - expect).abs() < 1e-8, "at {x}");
        }
    }

    #[test]
    fn wigner_of_gaussian_matches_closed_form() {
        let spec = GridSpec::symmetric(&[12.0], &[256]).unwrap();
        let g = ComplexGrid::from_fn(spec, |y| Complex64::new((-y[0] * y[0] / 2.0).exp(), 0.0));
        let w = wigner_transform(&g, 1e-6).unwrap();
        for (m, &xi) in w.freqs[0].iter().enumerate() {
            if xi.abs() > 6.0 {
                continue;
            }
            let expect = (2.0 * std::f64::consts::PI).sqrt() * (-xi * xi / 2.0).exp();
            assert!((w.data[m].re - expect).abs() < 1e-8, "xi={xi}");
            assert!(w.data[m].im.abs() < 1e-10);
        }
    }

    #[test]
    fn wigner_modulation_shifts_center() {
        // Time axis carries e^{+i xi y}: modulation e^{-i k0 y} moves the
        // peak to xi0 = +k0 (integrand e^{i(xi-k0)y}). Use k0 on a bin.
        let n = 256usize;
        let spec = GridSpec::symmetric(&[16.0], &[n]).unwrap();
        let dxi = 2.0 * std::f64::consts::PI / (n as f64 * spec.step[0]);
        let k0 = 10.0 * dxi;
        let g = ComplexGrid::from_fn(spec, |y| {
            Complex64::new(0.0, -k0 * y[0]).exp() * (-y[0] * y[0] / 2.0).exp()
        });
        let w = wigner_transform(&g, 1e-6).unwrap();
        let (mut best, mut best_v) = (0usize, 0.0);
        for m in 0..n {
            let v = w.data[m].norm();
            if v > best_v {
                best_v = v;
                best = m;
            }
        }
        assert!((w.freqs[0][best] - k0).abs() < dxi / 2.0, "peak at {}", w.freqs[0][best]);
    }

    #[test]
    fn hermitian_input_gives_real_transform() {
        // G(-y) = conj G(y) on a symmetric grid.
        let spec = GridSpec::symmetric(&[10.0], &[128]).unwrap();
        let g = ComplexGrid::from_fn(spec, |y| {
            (-y[0] * y[0] / 2.0).exp() * Complex64::new((0.7 * y[0]).cos(), (1.3 * y[0]).sin())
        });
        let w = wigner_transform(&g, 1e-6).unwrap();
        let peak = w.data.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for c in &w.data {
            assert!(c.im.abs() <= 1e-10 * peak.max(1.0));
        }
    }

    #[test]
    fn tail_mass_violation_detected() {
        let spec = GridSpec::symmetric(&[1.0], &[32]).unwrap();
        let g = ComplexGrid::from_fn(spec, |y| Complex64::new((-y[0] * y[0] / 2.0).exp(), 0.0));
        assert!(wigner_transform(&g, 1e-6).is_err());
    }
}
