//! Detection probability densities.
//!
//! A single detection density is
//!     P(x) = integral d^D y R(y) G(x - y/2, x + y/2),
//! with R the detector kernel in the relative coordinate, G the state
//! two-point function, the backward (left) field argument at x - y/2 and the
//! forward one at x + y/2. Routes:
//!
//! * spectral: P = (2pi)^{-D} integral R~(xi) W(xi) dxi with W the
//!   relative-coordinate transform of G (FFT on a shared grid);
//! * direct: the same grid summed in position space — discretely identical
//!   to the spectral route up to roundoff (discrete Parseval);
//! * exact-sampled: the additional sqrt(f) factor of the finite sampling
//!   accuracy kept inside the integral;
//! * plane-wave: for lattice field models G is a finite sum of plane waves
//!   in y, so P reduces exactly to a weighted sum of kernel Fourier values.
//!
//! Multi-detector joint densities contract the contour-ordered 2n-point
//! function. Plans are compiled once into per-detector local factors and
//! inter-detector propagator pairs; for two detectors every plan's inter
//! pairs depend on a single reduced variable (y1 - y2 or y1 + y2), so the
//! local factors fold by FFT convolution. An independent tensor-sum route
//! evaluates the same discrete sums in a different order for verification.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::detector::{scale_separation_check, DetectorKernel, DetectorModel};
use crate::error::{QtpError, Result};
use crate::fftgrid::{
    direct_convolve_raw, fft_convolve_raw, wigner_transform, ComplexGrid, GridSpec,
};
use crate::field::{permanent, FieldModel, FieldState, WavePacket};
use crate::geometry::{Dim, FourVector, SamplingFunction};
use crate::grid::{
    Hierarchy, JointDistribution, Normalization, OutcomeSpace, ProbabilityGrid,
};
use crate::wick::{enumerate_plans, CorrelatorSpec, PropagatorTag};

const PI: f64 = std::f64::consts::PI;
/// Hard per-axis cap on relative-coordinate grid sizes.
const MAX_AXIS_POINTS: usize = 8192;
/// Relative imaginary residue allowed on assembled probabilities, measured
/// against the absolute-value bound of the defining sum.
const IM_TOL: f64 = 1e-8;
/// Operation budget for the tensor-sum joint route.
const TENSOR_BUDGET: f64 = 2e8;
/// Operation budget for level-2 hierarchy grids.
const LEVEL2_BUDGET: f64 = 2e9;

/// No-detection bookkeeping convention tag stored on raw hierarchies.
pub const CONVENTION_RAW: &str =
    "no-detection sectors by subtraction from lower levels; negative remainders clamped and recorded";
const CONVENTION_CONDITIONED_SUFFIX: &str = "; conditioned on detection per level";

/// Accept a complex accumulation as a real probability, comparing the
/// imaginary residue against the absolute-value bound of the sum rather
/// than the (possibly cancelling) value itself.
fn realize(v: Complex64, ref_scale: f64) -> Result<f64> {
    let s = ref_scale.max(v.norm()).max(f64::MIN_POSITIVE);
    if v.im.abs() > IM_TOL * s {
        return Err(QtpError::ImaginaryResidue { residue: v.im.abs() / s });
    }
    Ok(v.re)
}

fn fv_component(v: &FourVector, ax: usize) -> f64 {
    if ax == 0 {
        v.t
    } else {
        v.spatial()[ax - 1]
    }
}

// ---------------------------------------------------------------------------
// Spectral bandwidth of the state and discretization planning
// ---------------------------------------------------------------------------

/// Spectral half-widths of the state's two-point content, added to the
/// kernel acceptance when choosing grid steps.
#[derive(Clone, Copy, Debug)]
pub struct SpectralBandwidth {
    pub time: f64,
    pub space: f64,
}

/// Band limit of the relative-coordinate correlator. Lattice models are
/// band-limited exactly; for the continuum the packet content sets the
/// scale and the vacuum gets a heuristic floor (route-identity checks are
/// unaffected by residual aliasing, absolute convergence is validated on
/// band-limited models).
pub fn spectral_bandwidth(model: &FieldModel, state: &FieldState) -> SpectralBandwidth {
    match model {
        FieldModel::Lattice(l) => {
            let dk = 2.0 * PI / l.box_length;
            let kax = l.max_mode as f64 * dk;
            let kr = kax * (l.dim.spatial() as f64).sqrt();
            SpectralBandwidth { time: (kr * kr + l.mass * l.mass).sqrt(), space: kax }
        }
        FieldModel::Continuum { spec, .. } => {
            let packets: Vec<&WavePacket> = match state {
                FieldState::Particles(ps) => ps.iter().collect(),
                FieldState::Coherent { packet, .. } => vec![packet],
                FieldState::Vacuum => vec![],
            };
            let mut kmax = 0.0f64;
            for p in packets {
                let k0: f64 = p.center_momentum.iter().map(|v| v * v).sum::<f64>().sqrt();
                kmax = kmax.max(k0 + 8.0 * p.width);
            }
            let space = kmax.max(4.0 * (spec.mass + 1.0));
            SpectralBandwidth { time: (space * space + spec.mass * spec.mass).sqrt(), space }
        }
    }
}

/// Discretization of the relative-coordinate integral for one or more
/// kernels: the window covers the kernel correlation decay (12 scales of
/// the slowest feature), the steps resolve the kernel acceptance plus the
/// state's spectral content with a wide Nyquist margin.
#[derive(Clone, Debug)]
pub struct DensityPlan {
    pub spec: GridSpec,
}

impl DensityPlan {
    pub fn for_kernel(kernel: &DetectorKernel, bw: &SpectralBandwidth) -> Result<Self> {
        DensityPlan::for_kernels(&[kernel], bw)
    }

    /// Shared grid covering several kernels (e.g. different pointer bins or
    /// different detectors): per axis the largest window and smallest step.
    pub fn for_kernels(kernels: &[&DetectorKernel], bw: &SpectralBandwidth) -> Result<Self> {
        if kernels.is_empty() {
            return Err(QtpError::InvalidModel("density plan needs at least one kernel".into()));
        }
        let dim = kernels[0].dim;
        let rank = dim.d();
        let mut half = vec![0.0f64; rank];
        let mut ximax = vec![0.0f64; rank];
        for k in kernels {
            if k.dim != dim {
                return Err(QtpError::DimensionMismatch(k.dim.d(), rank));
            }
            // The positive-energy step can be the slowest-decaying feature
            // of R in position space when it is narrower than the Gaussian.
            let decay = k.sigma_e.min(k.step_width);
            half[0] = half[0].max(12.0 / decay);
            ximax[0] = ximax[0].max(k.gap.abs() + 14.0 * k.sigma_e + bw.time);
            for ax in 0..dim.spatial() {
                half[ax + 1] = half[ax + 1].max(12.0 / k.sigma_p);
                ximax[ax + 1] =
                    ximax[ax + 1].max(k.q_center[ax].abs() + 14.0 * k.sigma_p + bw.space);
            }
        }
        let mut counts = Vec::with_capacity(rank);
        for (&h, &xm) in half.iter().zip(&ximax) {
            let step = PI / xm;
            let n = ((2.0 * h / step).ceil() as usize).next_power_of_two().max(8);
            if n > MAX_AXIS_POINTS {
                return Err(QtpError::ResourceCap(format!(
                    "relative-coordinate grid needs {n} points on one axis (cap {MAX_AXIS_POINTS}); \
                     kernel scales too disparate for the grid routes"
                )));
            }
            counts.push(n);
        }
        Ok(DensityPlan { spec: GridSpec::symmetric(&half, &counts)? })
    }
}

// ---------------------------------------------------------------------------
// State cache
// ---------------------------------------------------------------------------

/// Precomputed state data shared by every density evaluation: packet norms,
/// the overlap Gram matrix, its permanent, and the contraction weights.
struct StateCache {
    state: FieldState,
    norms: Vec<f64>,
    gram: Vec<Vec<Complex64>>,
    denom: Complex64,
    /// weights[i][j] = permanent(gram minor i,j) / denom: weight of the
    /// contraction attaching bra leg i and ket leg j to field insertions.
    weights: Vec<Vec<Complex64>>,
    coherent_norm: f64,
}

impl StateCache {
    fn new(model: &FieldModel, state: &FieldState) -> Result<Self> {
        state.validate()?;
        let one = Complex64::new(1.0, 0.0);
        match state {
            FieldState::Vacuum => Ok(StateCache {
                state: state.clone(),
                norms: vec![],
                gram: vec![],
                denom: one,
                weights: vec![],
                coherent_norm: 0.0,
            }),
            FieldState::Coherent { packet, .. } => Ok(StateCache {
                state: state.clone(),
                norms: vec![],
                gram: vec![],
                denom: one,
                weights: vec![],
                coherent_norm: model.packet_norm(packet)?,
            }),
            FieldState::Particles(ps) => {
                let norms: Vec<f64> =
                    ps.iter().map(|p| model.packet_norm(p)).collect::<Result<_>>()?;
                let n = ps.len();
                let mut gram = vec![vec![Complex64::new(0.0, 0.0); n]; n];
                for i in 0..n {
                    for j in 0..n {
                        gram[i][j] =
                            model.packet_overlap(&ps[i], norms[i], &ps[j], norms[j])?;
                    }
                }
                let denom = permanent(&gram);
                if denom.norm() == 0.0 {
                    return Err(QtpError::InvalidModel("singular packet Gram matrix".into()));
                }
                let mut weights = vec![vec![Complex64::new(0.0, 0.0); n]; n];
                for i in 0..n {
                    for j in 0..n {
                        weights[i][j] = permanent(&matrix_minor(&gram, i, j)) / denom;
                    }
                }
                Ok(StateCache {
                    state: state.clone(),
                    norms,
                    gram,
                    denom,
                    weights,
                    coherent_norm: 0.0,
                })
            }
        }
    }

    fn n_packets(&self) -> usize {
        match &self.state {
            FieldState::Particles(ps) => ps.len(),
            _ => 0,
        }
    }

    fn mode(&self, model: &FieldModel, j: usize, x: &FourVector) -> Result<Complex64> {
        match &self.state {
            FieldState::Particles(ps) => model.mode_function(&ps[j], self.norms[j], x),
            _ => Err(QtpError::InvalidModel("mode factors need a particle state".into())),
        }
    }

    fn classical(&self, model: &FieldModel, x: &FourVector) -> Result<Complex64> {
        match &self.state {
            FieldState::Coherent { packet, amplitude } => {
                let u = model.mode_function(packet, self.coherent_norm, x)? * amplitude;
                Ok(u + u.conj())
            }
            _ => Ok(Complex64::new(0.0, 0.0)),
        }
    }
}

fn matrix_minor(m: &[Vec<Complex64>], row: usize, col: usize) -> Vec<Vec<Complex64>> {
    let n = m.len();
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for r in 0..n {
        if r == row {
            continue;
        }
        let mut line = Vec::with_capacity(n - 1);
        for c in 0..n {
            if c == col {
                continue;
            }
            line.push(m[r][c]);
        }
        out.push(line);
    }
    out
}

// ---------------------------------------------------------------------------
// Single-detector evaluator
// ---------------------------------------------------------------------------

/// Single-detector density evaluator with frozen kernel tables on a
/// relative-coordinate grid.
pub struct DensityEvaluator {
    model: FieldModel,
    cache: StateCache,
    spec: GridSpec,
    /// R(y) on the grid.
    r_vals: Vec<Complex64>,
    /// R~(xi) on the matching centered frequency grid.
    r_fourier: Vec<f64>,
    /// Vacuum pair G_vac(x - y/2, x + y/2) = G+(-y), independent of x.
    vac_rel: Vec<Complex64>,
}

impl DensityEvaluator {
    pub fn new(
        model: &FieldModel,
        state: &FieldState,
        kernel: DetectorKernel,
        spec: GridSpec,
    ) -> Result<Self> {
        if spec.ndim() != kernel.dim.d() {
            return Err(QtpError::DimensionMismatch(spec.ndim(), kernel.dim.d()));
        }
        if model.dim() != kernel.dim {
            return Err(QtpError::DimensionMismatch(model.dim().d(), kernel.dim.d()));
        }
        let cache = StateCache::new(model, state)?;
        let r_vals = kernel.position_on_grid(&spec)?;
        let rank = spec.ndim();
        let freqs: Vec<Vec<f64>> = (0..rank)
            .map(|ax| {
                let n = spec.shape[ax];
                let dxi = 2.0 * PI / (n as f64 * spec.step[ax]);
                (0..n).map(|m| (m as isize - (n / 2) as isize) as f64 * dxi).collect()
            })
            .collect();
        let len = spec.len();
        let mut r_fourier = vec![0.0; len];
        let mut vac_rel = vec![Complex64::new(0.0, 0.0); len];
        for lin in 0..len {
            let idx = spec.unindex(lin);
            let xi_coords: Vec<f64> = (0..rank).map(|ax| freqs[ax][idx[ax]]).collect();
            let xi = FourVector::from_components(&xi_coords)?;
            r_fourier[lin] = kernel.fourier(&xi);
            let y = FourVector::from_components(&spec.point(&idx))?;
            vac_rel[lin] = model.wightman_displacement(&y.scale(-1.0))?;
        }
        Ok(DensityEvaluator {
            model: model.clone(),
            cache,
            spec,
            r_vals,
            r_fourier,
            vac_rel,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.spec
    }

    fn offset_point(&self, x: &FourVector, lin: usize, forward: bool) -> Result<FourVector> {
        let y = FourVector::from_components(&self.spec.point(&self.spec.unindex(lin)))?;
        let half = y.scale(0.5);
        Ok(if forward { x.add(&half) } else { x.sub(&half) })
    }

    /// G(x - y/2, x + y/2) over the grid for the cached state.
    fn g_values(&self, x: &FourVector) -> Result<Vec<Complex64>> {
        let len = self.spec.len();
        let mut g = self.vac_rel.clone();
        match &self.cache.state {
            FieldState::Vacuum => {}
            FieldState::Particles(_) => {
                let np = self.cache.n_packets();
                for lin in 0..len {
                    let b = self.offset_point(x, lin, false)?;
                    let f = self.offset_point(x, lin, true)?;
                    let mut ub = vec![Complex64::new(0.0, 0.0); np];
                    let mut uf = vec![Complex64::new(0.0, 0.0); np];
                    for j in 0..np {
                        ub[j] = self.cache.mode(&self.model, j, &b)?;
                        uf[j] = self.cache.mode(&self.model, j, &f)?;
                    }
                    let mut add = Complex64::new(0.0, 0.0);
                    for i in 0..np {
                        for j in 0..np {
                            add += self.cache.weights[i][j]
                                * (ub[i].conj() * uf[j] + uf[i].conj() * ub[j]);
                        }
                    }
                    g[lin] += add;
                }
            }
            FieldState::Coherent { .. } => {
                for (lin, gv) in g.iter_mut().enumerate() {
                    let b = self.offset_point(x, lin, false)?;
                    let f = self.offset_point(x, lin, true)?;
                    *gv += self.cache.classical(&self.model, &b)?
                        * self.cache.classical(&self.model, &f)?;
                }
            }
        }
        Ok(g)
    }

    /// Spectral route: (2pi)^{-D} sum R~(xi) W(xi) dxi. The edge-tail check
    /// of the transform is disabled because the integrand's decay comes from
    /// R, not from G.
    pub fn density(&self, x: &FourVector) -> Result<f64> {
        let g = ComplexGrid { spec: self.spec.clone(), data: self.g_values(x)? };
        let w = wigner_transform(&g, f64::INFINITY)?;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut aref = 0.0;
        for (rv, wv) in self.r_fourier.iter().zip(&w.data) {
            acc += rv * wv;
            aref += rv * wv.norm();
        }
        let mut meas = 1.0;
        for ax in 0..self.spec.ndim() {
            meas /= self.spec.shape[ax] as f64 * self.spec.step[ax];
        }
        realize(acc * meas, aref * meas)
    }

    /// Direct route: sum R(y) G(..) dV on the same grid.
    pub fn density_direct(&self, x: &FourVector) -> Result<f64> {
        let g = self.g_values(x)?;
        let dv = self.spec.cell_volume();
        let mut acc = Complex64::new(0.0, 0.0);
        let mut aref = 0.0;
        for (rv, gv) in self.r_vals.iter().zip(&g) {
            acc += rv * gv;
            aref += rv.norm() * gv.norm();
        }
        realize(acc * dv, aref * dv)
    }

    /// Exact-sampled route: the sqrt(f) factor of the finite sampling
    /// accuracy stays inside the relative-coordinate integral.
    pub fn density_exact(&self, x: &FourVector, sampling: &SamplingFunction) -> Result<f64> {
        if sampling.dim() != self.model.dim() {
            return Err(QtpError::DimensionMismatch(
                sampling.dim().d(),
                self.model.dim().d(),
            ));
        }
        let g = self.g_values(x)?;
        let dv = self.spec.cell_volume();
        let mut acc = Complex64::new(0.0, 0.0);
        let mut aref = 0.0;
        for lin in 0..self.spec.len() {
            let y = FourVector::from_components(&self.spec.point(&self.spec.unindex(lin)))?;
            let wgt = sampling.value_at_offset(&y).sqrt();
            acc += self.r_vals[lin] * g[lin] * wgt;
            aref += self.r_vals[lin].norm() * g[lin].norm() * wgt;
        }
        realize(acc * dv, aref * dv)
    }
}

// ---------------------------------------------------------------------------
// Single-detector entry points
// ---------------------------------------------------------------------------

/// Leading-order density at one event; spectral route when the kernel
/// correlation scales are well below the sampling accuracy, exact-sampled
/// route otherwise.
pub fn single_density(
    det: &DetectorModel,
    model: &FieldModel,
    state: &FieldState,
    x: &FourVector,
    q: usize,
) -> Result<f64> {
    let kernel = det.kernel(q)?;
    let bw = spectral_bandwidth(model, state);
    let spec = DensityPlan::for_kernel(&kernel, &bw)?.spec;
    let ev = DensityEvaluator::new(model, state, kernel, spec)?;
    if scale_separation_check(det).ok {
        ev.density(x)
    } else {
        ev.density_exact(x, &det.sampling)
    }
}

/// Exact-sampled density regardless of scale separation.
pub fn exact_sampled_density(
    det: &DetectorModel,
    model: &FieldModel,
    state: &FieldState,
    x: &FourVector,
    q: usize,
) -> Result<f64> {
    let kernel = det.kernel(q)?;
    let bw = spectral_bandwidth(model, state);
    let spec = DensityPlan::for_kernel(&kernel, &bw)?.spec;
    let ev = DensityEvaluator::new(model, state, kernel, spec)?;
    ev.density_exact(x, &det.sampling)
}

/// Exact single-detector density for lattice field models: the two-point
/// function along the relative coordinate is a finite sum of plane waves,
/// so the kernel integral collapses to kernel Fourier values,
///     P(x) = sum_terms c_term(x) R~(xi_term),
/// with no grids or quadrature. Works for arbitrary kernels, including
/// broadband ones whose position-space tails defeat the grid routes.
pub fn lattice_density_exact(
    kernel: &DetectorKernel,
    model: &FieldModel,
    state: &FieldState,
    x: &FourVector,
) -> Result<f64> {
    let l = match model {
        FieldModel::Lattice(l) => l,
        _ => {
            return Err(QtpError::InvalidModel(
                "the plane-wave route needs a lattice field model".into(),
            ))
        }
    };
    if kernel.dim != l.dim() {
        return Err(QtpError::DimensionMismatch(kernel.dim.d(), l.dim().d()));
    }
    let cache = StateCache::new(model, state)?;
    let nm = l.n_modes();
    let sd = l.dim().spatial();
    let modes: Vec<(f64, Vec<f64>)> = (0..nm).map(|m| (l.omega(m), l.momentum(m))).collect();

    let mut acc = Complex64::new(0.0, 0.0);
    let mut aref = 0.0;

    // Vacuum: G+(-y) = sum_m e^{+i(w y0 - k.y)} / (2 w V), a plane wave at
    // xi = (-w, -k).
    for (w, k) in &modes {
        let mut xi = vec![-w];
        xi.extend(k.iter().map(|v| -v));
        let r = kernel.fourier(&FourVector::from_components(&xi)?);
        let c = r / (2.0 * w * l.volume());
        acc += c;
        aref += c.abs();
    }

    // One plane-wave factor e^{-i s (w p0 - k.p)} at the backward point
    // (s1, amps1) and one at the forward point (s2, amps2):
    //   coeff = amps1[m1] amps2[m2] e^{-i[(s1 w1 + s2 w2) x0 - (s1 k1 + s2 k2).x]}
    //   xi    = ((s2 w2 - s1 w1)/2, (s2 k2 - s1 k1)/2).
    let mut add_block = |amps1: &[Complex64],
                         s1: f64,
                         amps2: &[Complex64],
                         s2: f64,
                         weight: Complex64| {
        for (m1, (w1, k1)) in modes.iter().enumerate() {
            for (m2, (w2, k2)) in modes.iter().enumerate() {
                let mut xi = vec![(s2 * w2 - s1 * w1) / 2.0];
                let mut xphase = -(s1 * w1 + s2 * w2) * x.t;
                for ax in 0..sd {
                    xi.push((s2 * k2[ax] - s1 * k1[ax]) / 2.0);
                    xphase += (s1 * k1[ax] + s2 * k2[ax]) * x.spatial()[ax];
                }
                let xiv = FourVector::from_components(&xi).expect("lattice mode dimension");
                let r = kernel.fourier(&xiv);
                let c = weight
                    * amps1[m1]
                    * amps2[m2]
                    * Complex64::new(0.0, xphase).exp()
                    * r;
                acc += c;
                aref += c.norm();
            }
        }
    };

    match &cache.state {
        FieldState::Vacuum => {}
        FieldState::Particles(ps) => {
            // amplitudes of u_j(p) = sum_m a_j(m) e^{-i(w p0 - k.p)}
            let amps: Vec<Vec<Complex64>> = ps
                .iter()
                .zip(&cache.norms)
                .map(|(p, &c)| {
                    modes
                        .iter()
                        .map(|(w, k)| c * p.profile(k) / (2.0 * w * l.volume()))
                        .collect()
                })
                .collect();
            let conj_amps: Vec<Vec<Complex64>> = amps
                .iter()
                .map(|a| a.iter().map(|v| v.conj()).collect())
                .collect();
            for i in 0..ps.len() {
                for j in 0..ps.len() {
                    let w = cache.weights[i][j];
                    // conj(u_i)(b) u_j(f) and conj(u_i)(f) u_j(b)
                    add_block(&conj_amps[i], -1.0, &amps[j], 1.0, w);
                    add_block(&amps[j], 1.0, &conj_amps[i], -1.0, w);
                }
            }
        }
        FieldState::Coherent { packet, amplitude } => {
            let a_pos: Vec<Complex64> = modes
                .iter()
                .map(|(w, k)| {
                    amplitude * cache.coherent_norm * packet.profile(k)
                        / (2.0 * w * l.volume())
                })
                .collect();
            let a_neg: Vec<Complex64> = a_pos.iter().map(|v| v.conj()).collect();
            let one = Complex64::new(1.0, 0.0);
            // phi_cl(b) phi_cl(f) with phi_cl = A u + conj(A u).
            add_block(&a_pos, 1.0, &a_pos, 1.0, one);
            add_block(&a_pos, 1.0, &a_neg, -1.0, one);
            add_block(&a_neg, -1.0, &a_pos, 1.0, one);
            add_block(&a_neg, -1.0, &a_neg, -1.0, one);
        }
    }
    realize(acc, aref)
}

// ---------------------------------------------------------------------------
// Density grids, smearing, summaries, conditioning
// ---------------------------------------------------------------------------

fn cell_center(window: &GridSpec, cell: usize) -> Result<FourVector> {
    let idx = window.unindex(cell);
    let coords: Vec<f64> = idx
        .iter()
        .enumerate()
        .map(|(d, &i)| window.coord(d, i) + 0.5 * window.step[d])
        .collect();
    FourVector::from_components(&coords)
}

fn bin_density_values(
    det: &DetectorModel,
    q: usize,
    model: &FieldModel,
    state: &FieldState,
    window: &GridSpec,
    rel: Option<&GridSpec>,
    bw: &SpectralBandwidth,
    scale_ok: bool,
) -> Result<Vec<f64>> {
    let kernel = det.kernel(q)?;
    let spec = match rel {
        Some(s) => s.clone(),
        None => DensityPlan::for_kernel(&kernel, bw)?.spec,
    };
    let ev = DensityEvaluator::new(model, state, kernel, spec)?;
    (0..window.len())
        .into_par_iter()
        .map(|c| {
            let x = cell_center(window, c)?;
            if scale_ok {
                ev.density(&x)
            } else {
                ev.density_exact(&x, &det.sampling)
            }
        })
        .collect()
}

/// Leading-order density over the detector's outcome space (all pointer
/// bins), evaluated at cell centers.
pub fn density_grid(
    det: &DetectorModel,
    model: &FieldModel,
    state: &FieldState,
    space: &OutcomeSpace,
) -> Result<ProbabilityGrid> {
    density_grid_with(det, model, state, space, None)
}

/// Like [`density_grid`] with an explicit relative-coordinate grid, so that
/// independent routes can share the same discretization.
pub fn density_grid_with(
    det: &DetectorModel,
    model: &FieldModel,
    state: &FieldState,
    space: &OutcomeSpace,
    rel: Option<&GridSpec>,
) -> Result<ProbabilityGrid> {
    det.validate()?;
    state.validate()?;
    if space.n_bins != det.pointer.n_bins() {
        return Err(QtpError::InvalidModel(format!(
            "outcome space has {} bins, detector pointer has {}",
            space.n_bins,
            det.pointer.n_bins()
        )));
    }
    if space.grid.ndim() != det.dim().d() {
        return Err(QtpError::DimensionMismatch(space.grid.ndim(), det.dim().d()));
    }
    let bw = spectral_bandwidth(model, state);
    let scale_ok = scale_separation_check(det).ok;
    let mut out = ProbabilityGrid::zeros(space.clone(), 2);
    let cells = space.n_cells();
    for q in 0..space.n_bins {
        let vals = bin_density_values(det, q, model, state, &space.grid, rel, &bw, scale_ok)?;
        out.values[q * cells..(q + 1) * cells].copy_from_slice(&vals);
    }
    Ok(out)
}

fn smearing_kernel(
    window: &GridSpec,
    sampling: &SamplingFunction,
) -> Result<(Vec<Complex64>, Vec<usize>, Vec<usize>)> {
    let rank = window.ndim();
    if sampling.dim().d() != rank {
        return Err(QtpError::DimensionMismatch(sampling.dim().d(), rank));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut halves = Vec::with_capacity(rank);
    for ax in 0..rank {
        let width = if ax == 0 { sampling.delta_t } else { sampling.delta_x };
        let h = window.step[ax];
        if h > width / 4.0 * (1.0 + 1e-9) {
            return Err(QtpError::Grid(format!(
                "window step {h} on axis {ax} does not resolve the sampling width {width} \
                 (need >= 4 cells per width)"
            )));
        }
        let m = (5.0 * width / h).ceil() as usize;
        halves.push(m);
        shape.push(2 * m + 1);
    }
    let len: usize = shape.iter().product();
    let mut vals = vec![Complex64::new(0.0, 0.0); len];
    let mut sum = 0.0;
    for (lin, v) in vals.iter_mut().enumerate() {
        let mut rem = lin;
        let mut coords = vec![0.0; rank];
        for ax in (0..rank).rev() {
            let i = rem % shape[ax];
            rem /= shape[ax];
            coords[ax] = (i as isize - halves[ax] as isize) as f64 * window.step[ax];
        }
        let f = sampling.value_at_offset(&FourVector::from_components(&coords)?);
        *v = Complex64::new(f * f, 0.0);
        sum += f * f;
    }
    // Discrete normalization: the smearing distribution integrates to one
    // on the grid exactly.
    let norm = 1.0 / (sum * window.cell_volume());
    for v in &mut vals {
        *v *= norm;
    }
    Ok((vals, shape, halves))
}

fn smear_impl(
    grid: &ProbabilityGrid,
    sampling: &SamplingFunction,
    direct: bool,
) -> Result<ProbabilityGrid> {
    let window = &grid.space.grid;
    let (kvals, kshape, halves) = smearing_kernel(window, sampling)?;
    let rank = window.ndim();
    let cells = grid.space.n_cells();
    let dv = window.cell_volume();
    let mut out = grid.clone();
    for q in 0..grid.space.n_bins {
        let a: Vec<Complex64> = grid.values[q * cells..(q + 1) * cells]
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        let (c, cshape) = if direct {
            direct_convolve_raw(&a, &window.shape, &kvals, &kshape)?
        } else {
            fft_convolve_raw(&a, &window.shape, &kvals, &kshape)?
        };
        for cell in 0..cells {
            let idx = window.unindex(cell);
            let mut lin = 0usize;
            for ax in 0..rank {
                lin = lin * cshape[ax] + idx[ax] + halves[ax];
            }
            out.values[q * cells + cell] = c[lin].re * dv;
        }
    }
    Ok(out)
}

/// Convolve a raw density grid with the normalized sampling-accuracy
/// distribution f^2 / upsilon per pointer bin. Cells within ~5 sampling
/// widths of the window boundary lose mass to the outside.
pub fn smeared_grid(grid: &ProbabilityGrid, sampling: &SamplingFunction) -> Result<ProbabilityGrid> {
    smear_impl(grid, sampling, false)
}

/// Direct-convolution twin of [`smeared_grid`]; the verification oracle.
pub fn smeared_grid_direct(
    grid: &ProbabilityGrid,
    sampling: &SamplingFunction,
) -> Result<ProbabilityGrid> {
    smear_impl(grid, sampling, true)
}

/// Smeared density at one event: a local window around x is evaluated and
/// convolved, and the center cell returned.
pub fn smeared_density(
    det: &DetectorModel,
    model: &FieldModel,
    state: &FieldState,
    x: &FourVector,
    q: usize,
) -> Result<f64> {
    det.validate()?;
    let rank = det.dim().d();
    let mut origin = Vec::with_capacity(rank);
    let mut step = Vec::with_capacity(rank);
    let mut shape = Vec::with_capacity(rank);
    for ax in 0..rank {
        let width = if ax == 0 { det.sampling.delta_t } else { det.sampling.delta_x };
        let h = width / 5.0;
        // Odd count with x at the center cell's midpoint; the window covers
        // the full 5-width support of the smearing distribution around x.
        let n = 2 * ((6.0 * width / h).ceil() as usize) + 1;
        let c = (n - 1) / 2;
        origin.push(fv_component(x, ax) - (c as f64 + 0.5) * h);
        step.push(h);
        shape.push(n);
    }
    let window = GridSpec { origin, step, shape };
    let bw = spectral_bandwidth(model, state);
    let scale_ok = scale_separation_check(det).ok;
    let vals = bin_density_values(det, q, model, state, &window, None, &bw, scale_ok)?;
    let space = OutcomeSpace::new(window.clone(), 1)?;
    let mut raw = ProbabilityGrid::zeros(space, 2);
    raw.values = vals;
    let smeared = smeared_grid(&raw, &det.sampling)?;
    let center: usize = {
        let idx: Vec<usize> = window.shape.iter().map(|&n| (n - 1) / 2).collect();
        window.index(&idx)
    };
    Ok(smeared.values[center])
}

/// Total detection probability and its complement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionSummary {
    pub p_detect: f64,
    pub p_none: f64,
}

/// P(detect) = integral of the raw density over the outcome space;
/// P(no detection) = 1 - P(detect). A total at or above one means the
/// leading perturbative order is no longer a probability.
pub fn detection_summary(grid: &ProbabilityGrid) -> Result<DetectionSummary> {
    if grid.normalization != Normalization::Raw {
        return Err(QtpError::InvalidModel(
            "detection summary needs a raw (unconditioned) density".into(),
        ));
    }
    let p = grid.total_mass().max(0.0);
    if p >= 1.0 {
        return Err(QtpError::PerturbativeBreakdown(p));
    }
    Ok(DetectionSummary { p_detect: p, p_none: 1.0 - p })
}

/// Normalize a raw density to the conditional density given detection.
/// `min_mass` is the caller's tolerance below which the detection
/// probability counts as zero. Idempotent on conditioned input.
pub fn conditioned(grid: &ProbabilityGrid, min_mass: f64) -> Result<ProbabilityGrid> {
    if grid.normalization == Normalization::Conditioned {
        return Ok(grid.clone());
    }
    let mass = grid.total_mass();
    if !mass.is_finite() || mass <= min_mass.max(0.0) {
        return Err(QtpError::NoDetectionMass(mass));
    }
    let mut out = grid.clone();
    for v in &mut out.values {
        *v /= mass;
    }
    out.normalization = Normalization::Conditioned;
    Ok(out)
}

/// Condition every level of a hierarchy on detection: level-1 grids on
/// their own detection probability, the level-2 detection sector on the
/// joint detection probability; no-detection sectors carry zero conditional
/// mass. Small negative joint entries (roundoff) are clamped and recorded.
pub fn conditioned_hierarchy(h: &Hierarchy, min_mass: f64) -> Result<Hierarchy> {
    h.validate()?;
    if h.normalization == Normalization::Conditioned {
        return Ok(h.clone());
    }
    let mut out = h.clone();
    for g in &mut out.level1 {
        *g = conditioned(g, min_mass)?;
    }
    if let Some(l2) = &mut out.level2 {
        let w0 = out.spaces[0].measure();
        let w1 = out.spaces[1].measure();
        let mut clamped = 0.0;
        for v in &mut l2.joint {
            if *v < 0.0 {
                clamped += -*v * w0 * w1;
                *v = 0.0;
            }
        }
        l2.subtraction_deficit += clamped;
        // Sorted summation keeps the normalizer independent of bin order.
        let mut terms = l2.joint.clone();
        terms.sort_by(f64::total_cmp);
        let mass: f64 = terms.iter().sum::<f64>() * w0 * w1;
        if !mass.is_finite() || mass <= min_mass.max(0.0) {
            return Err(QtpError::NoDetectionMass(mass));
        }
        for v in &mut l2.joint {
            *v /= mass;
        }
        for v in &mut l2.only_first {
            *v = 0.0;
        }
        for v in &mut l2.only_second {
            *v = 0.0;
        }
        l2.neither = 0.0;
    }
    if let Some(l3) = &mut out.level3 {
        let w: f64 = out.spaces.iter().map(|s| s.measure()).product();
        let mass: f64 = l3.iter().sum::<f64>() * w;
        if !mass.is_finite() || mass <= min_mass.max(0.0) {
            return Err(QtpError::NoDetectionMass(mass));
        }
        for v in l3.iter_mut() {
            *v /= mass;
        }
    }
    out.normalization = Normalization::Conditioned;
    out.convention.push_str(CONVENTION_CONDITIONED_SUFFIX);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Compiled contraction plans for joint densities
// ---------------------------------------------------------------------------

/// A contraction factor depending on a single detector's relative
/// coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum LocalFactor {
    /// Intra-detector mixed pair: G+ of the backward and forward points,
    /// which depends only on the relative coordinate.
    VacuumPair,
    /// Mode function of one packet at the backward or forward point,
    /// conjugated for bra-side legs.
    Mode { packet: usize, forward: bool, conj: bool },
    /// Classical (coherent) field at the backward or forward point.
    Classical { forward: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum InterKind {
    Feynman,
    Dyson,
    /// Mixed pair: detector `a` holds the backward point.
    Wightman,
}

/// A propagator linking two different detectors' integration variables.
/// The slot position of detector `d` is x_d + sig * y_d / 2 with sig = -1
/// on the backward branch and +1 on the forward branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct InterPair {
    a: usize,
    b: usize,
    sig_a: i32,
    sig_b: i32,
    kind: u8, // 0 Feynman, 1 Dyson, 2 Wightman (backward = a)
}

impl InterPair {
    fn kind(&self) -> InterKind {
        match self.kind {
            0 => InterKind::Feynman,
            1 => InterKind::Dyson,
            _ => InterKind::Wightman,
        }
    }
}

/// One contraction plan with the detector-local and inter-detector factors
/// separated, and every x-independent contraction folded into `constant`.
#[derive(Clone, Debug)]
struct CompiledPlan {
    constant: Complex64,
    locals: Vec<Vec<LocalFactor>>,
    inters: Vec<InterPair>,
}

#[derive(Clone, Copy, Debug)]
enum SlotRole {
    AnnLeg(usize),
    Backward(usize),
    Forward(usize),
    CreLeg(usize),
}

fn slot_role(slot: usize, np: usize, n: usize) -> SlotRole {
    if slot < np {
        SlotRole::AnnLeg(slot)
    } else if slot < np + n {
        SlotRole::Backward(slot - np)
    } else if slot < np + 2 * n {
        SlotRole::Forward(slot - np - n)
    } else {
        SlotRole::CreLeg(slot - np - 2 * n)
    }
}

/// Compile the contraction plans for `n_det` detectors on a state. The plan
/// structure depends only on the slot pattern, so enumeration runs on dummy
/// distinct points; contractions not touching any integration variable
/// (packet overlaps) fold into the plan constant.
fn compile_plans(dim: Dim, state: &FieldState, n_det: usize, gram: &[Vec<Complex64>]) -> Result<Vec<CompiledPlan>> {
    let dummy = |t: f64, x: f64| -> FourVector {
        match dim {
            Dim::Two => FourVector::new2(t, x),
            Dim::Four => FourVector::new4(t, [x, 0.0, 0.0]),
        }
    };
    let fwd: Vec<FourVector> = (0..n_det).map(|i| dummy(1.0 + i as f64, 10.0 + i as f64)).collect();
    let bwd: Vec<FourVector> =
        (0..n_det).map(|i| dummy(-1.0 - i as f64, -10.0 - i as f64)).collect();
    let spec = CorrelatorSpec::new(fwd, bwd, state.clone());
    let plans = enumerate_plans(&spec)?;
    let np = match state {
        FieldState::Particles(ps) => ps.len(),
        _ => 0,
    };
    let mut out = Vec::with_capacity(plans.len());
    for plan in &plans {
        let mut compiled = CompiledPlan {
            constant: Complex64::new(1.0, 0.0),
            locals: vec![Vec::new(); n_det],
            inters: Vec::new(),
        };
        for &c in &plan.classical {
            match slot_role(c, np, n_det) {
                SlotRole::Backward(d) => compiled.locals[d].push(LocalFactor::Classical { forward: false }),
                SlotRole::Forward(d) => compiled.locals[d].push(LocalFactor::Classical { forward: true }),
                _ => {
                    return Err(QtpError::InvalidModel(
                        "classical singleton on a non-field slot".into(),
                    ))
                }
            }
        }
        for &(i, j, tag) in &plan.pairings {
            let ri = slot_role(i, np, n_det);
            let rj = slot_role(j, np, n_det);
            match tag {
                PropagatorTag::Overlap => {
                    if let (SlotRole::AnnLeg(a), SlotRole::CreLeg(b)) = (ri, rj) {
                        compiled.constant *= gram[a][b];
                    } else {
                        return Err(QtpError::InvalidModel("overlap tag off the legs".into()));
                    }
                }
                PropagatorTag::ModeFunctionConjugate => {
                    let p = match ri {
                        SlotRole::AnnLeg(p) => p,
                        _ => return Err(QtpError::InvalidModel("misplaced bra leg".into())),
                    };
                    let (d, forward) = match rj {
                        SlotRole::Backward(d) => (d, false),
                        SlotRole::Forward(d) => (d, true),
                        _ => return Err(QtpError::InvalidModel("leg paired with a leg".into())),
                    };
                    compiled.locals[d].push(LocalFactor::Mode { packet: p, forward, conj: true });
                }
                PropagatorTag::ModeFunction => {
                    let p = match rj {
                        SlotRole::CreLeg(p) => p,
                        _ => return Err(QtpError::InvalidModel("misplaced ket leg".into())),
                    };
                    let (d, forward) = match ri {
                        SlotRole::Backward(d) => (d, false),
                        SlotRole::Forward(d) => (d, true),
                        _ => return Err(QtpError::InvalidModel("leg paired with a leg".into())),
                    };
                    compiled.locals[d].push(LocalFactor::Mode { packet: p, forward, conj: false });
                }
                PropagatorTag::Feynman | PropagatorTag::Dyson | PropagatorTag::WightmanBackwardForward => {
                    let (da, sig_a) = match ri {
                        SlotRole::Backward(d) => (d, -1),
                        SlotRole::Forward(d) => (d, 1),
                        _ => return Err(QtpError::InvalidModel("propagator off the fields".into())),
                    };
                    let (db, sig_b) = match rj {
                        SlotRole::Backward(d) => (d, -1),
                        SlotRole::Forward(d) => (d, 1),
                        _ => return Err(QtpError::InvalidModel("propagator off the fields".into())),
                    };
                    if da == db {
                        // Canonical ordering makes every intra-detector pair
                        // (backward, forward): the x-independent vacuum pair.
                        compiled.locals[da].push(LocalFactor::VacuumPair);
                    } else {
                        let kind = match tag {
                            PropagatorTag::Feynman => 0,
                            PropagatorTag::Dyson => 1,
                            _ => 2,
                        };
                        compiled.inters.push(InterPair { a: da, b: db, sig_a, sig_b, kind });
                    }
                }
            }
        }
        out.push(compiled);
    }
    Ok(out)
}

/// Branch propagator on a displacement d = (left point) - (right point).
fn inter_value(model: &FieldModel, kind: InterKind, d: &FourVector) -> Result<Complex64> {
    match kind {
        InterKind::Wightman => model.wightman_displacement(d),
        InterKind::Feynman => {
            // Later operator leftmost; at equal times the points are
            // spacelike and the two orderings agree.
            if d.t >= 0.0 {
                model.wightman_displacement(d)
            } else {
                model.wightman_displacement(&d.scale(-1.0))
            }
        }
        InterKind::Dyson => Ok(inter_value(model, InterKind::Feynman, d)?.conj()),
    }
}

// ---------------------------------------------------------------------------
// Joint evaluator
// ---------------------------------------------------------------------------

/// Joint detection density for up to three detectors, all sharing one
/// relative-coordinate grid. Two independent contraction orders:
/// [`JointEvaluator::evaluate`] folds the two-detector sums by FFT along the
/// reduced coordinate, [`JointEvaluator::evaluate_tensor`] sums the full
/// tensor product directly (budget-capped).
pub struct JointEvaluator {
    model: FieldModel,
    cache: StateCache,
    spec: GridSpec,
    n_det: usize,
    /// Per-detector kernel values on the shared grid.
    r_vals: Vec<Vec<Complex64>>,
    /// G+(-y): the intra-detector mixed pair, shared by all detectors.
    vac_pair: Vec<Complex64>,
    plans: Vec<CompiledPlan>,
}

impl JointEvaluator {
    pub fn new(
        model: &FieldModel,
        state: &FieldState,
        kernels: &[DetectorKernel],
        spec: GridSpec,
    ) -> Result<Self> {
        let n_det = kernels.len();
        if n_det == 0 || n_det > 3 {
            return Err(QtpError::InvalidModel(format!(
                "joint evaluation supports 1..=3 detectors, got {n_det}"
            )));
        }
        if spec.ndim() != model.dim().d() {
            return Err(QtpError::DimensionMismatch(spec.ndim(), model.dim().d()));
        }
        let cache = StateCache::new(model, state)?;
        let mut r_vals = Vec::with_capacity(n_det);
        for k in kernels {
            if k.dim != model.dim() {
                return Err(QtpError::DimensionMismatch(k.dim.d(), model.dim().d()));
            }
            r_vals.push(k.position_on_grid(&spec)?);
        }
        let mut vac_pair = Vec::with_capacity(spec.len());
        for lin in 0..spec.len() {
            let y = FourVector::from_components(&spec.point(&spec.unindex(lin)))?;
            vac_pair.push(model.wightman_displacement(&y.scale(-1.0))?);
        }
        let plans = compile_plans(model.dim(), state, n_det, &cache.gram)?;
        Ok(JointEvaluator {
            model: model.clone(),
            cache,
            spec,
            n_det,
            r_vals,
            vac_pair,
            plans,
        })
    }

    pub fn n_detectors(&self) -> usize {
        self.n_det
    }

    pub fn grid(&self) -> &GridSpec {
        &self.spec
    }

    fn factor_array(&self, f: LocalFactor, x: &FourVector) -> Result<Vec<Complex64>> {
        let len = self.spec.len();
        if f == LocalFactor::VacuumPair {
            return Ok(self.vac_pair.clone());
        }
        let mut out = Vec::with_capacity(len);
        for lin in 0..len {
            let y = FourVector::from_components(&self.spec.point(&self.spec.unindex(lin)))?;
            let p = match f {
                LocalFactor::Mode { forward: true, .. } | LocalFactor::Classical { forward: true } => {
                    x.add(&y.scale(0.5))
                }
                _ => x.sub(&y.scale(0.5)),
            };
            let v = match f {
                LocalFactor::Mode { packet, conj, .. } => {
                    let u = self.cache.mode(&self.model, packet, &p)?;
                    if conj {
                        u.conj()
                    } else {
                        u
                    }
                }
                LocalFactor::Classical { .. } => self.cache.classical(&self.model, &p)?,
                LocalFactor::VacuumPair => unreachable!(),
            };
            out.push(v);
        }
        Ok(out)
    }

    /// R_d(y) times the plan's detector-local factors, memoized per factor
    /// across plans (all x-dependent arrays are per-call).
    fn local_array(
        &self,
        det: usize,
        factors: &[LocalFactor],
        x: &FourVector,
        memo: &mut HashMap<(usize, LocalFactor), Vec<Complex64>>,
    ) -> Result<Vec<Complex64>> {
        let mut l = self.r_vals[det].clone();
        for &f in factors {
            if !memo.contains_key(&(det, f)) {
                let arr = self.factor_array(f, x)?;
                memo.insert((det, f), arr);
            }
            let arr = &memo[&(det, f)];
            for (lv, fv) in l.iter_mut().zip(arr) {
                *lv *= *fv;
            }
        }
        Ok(l)
    }

    /// FFT-reduced route. Plans without inter-detector propagators factorize
    /// into per-detector sums. For two detectors every plan's inter pairs
    /// depend on a single reduced coordinate: the difference y_0 - y_1 when
    /// the paired branches match (Feynman / Dyson), the sum y_0 + y_1 when
    /// they differ (backward-forward), never both in one plan. Three
    /// detectors fall through to the tensor route.
    pub fn evaluate(&self, xs: &[FourVector]) -> Result<f64> {
        if xs.len() != self.n_det {
            return Err(QtpError::DimensionMismatch(xs.len(), self.n_det));
        }
        if self.n_det == 3 {
            return self.evaluate_tensor(xs);
        }
        let rank = self.spec.ndim();
        let dv = self.spec.cell_volume();
        let mut memo = HashMap::new();
        let mut acc = Complex64::new(0.0, 0.0);
        let mut aref = 0.0f64;
        for plan in &self.plans {
            let locals: Vec<Vec<Complex64>> = (0..self.n_det)
                .map(|d| self.local_array(d, &plan.locals[d], &xs[d], &mut memo))
                .collect::<Result<_>>()?;
            if plan.inters.is_empty() {
                let mut term = plan.constant;
                let mut tref = plan.constant.norm();
                for l in &locals {
                    let s: Complex64 = l.iter().sum();
                    let sref: f64 = l.iter().map(|v| v.norm()).sum();
                    term *= s * dv;
                    tref *= sref * dv;
                }
                acc += term;
                aref += tref;
                continue;
            }
            // n_det == 2 with inter pairs.
            let diff = plan.inters[0].sig_a == plan.inters[0].sig_b;
            if plan.inters.iter().any(|p| (p.sig_a == p.sig_b) != diff) {
                return Err(QtpError::InvalidModel(
                    "mixed difference/sum inter pairs in one plan".into(),
                ));
            }
            let (conv, cshape) = if diff {
                let rev: Vec<Complex64> = locals[1].iter().rev().copied().collect();
                fft_convolve_raw(&locals[0], &self.spec.shape, &rev, &self.spec.shape)?
            } else {
                fft_convolve_raw(&locals[0], &self.spec.shape, &locals[1], &self.spec.shape)?
            };
            let mut plan_acc = Complex64::new(0.0, 0.0);
            let mut plan_ref = 0.0f64;
            for (lin, cv) in conv.iter().enumerate() {
                // Reduced coordinate per axis from the convolution index.
                let mut rem = lin;
                let mut red = vec![0.0f64; rank];
                for ax in (0..rank).rev() {
                    let i = rem % cshape[ax];
                    rem /= cshape[ax];
                    red[ax] = if diff {
                        (i as isize - (self.spec.shape[ax] as isize - 1)) as f64
                            * self.spec.step[ax]
                    } else {
                        2.0 * self.spec.origin[ax] + i as f64 * self.spec.step[ax]
                    };
                }
                let mut prod = Complex64::new(1.0, 0.0);
                for pair in &plan.inters {
                    let mut comps = vec![0.0f64; rank];
                    for ax in 0..rank {
                        let xa = fv_component(&xs[pair.a], ax);
                        let xb = fv_component(&xs[pair.b], ax);
                        let shift = if diff {
                            // y_a - y_b = +/- (y_0 - y_1) depending on which
                            // detector is the pair's left operand.
                            let e = if pair.a == 0 { 1.0 } else { -1.0 };
                            pair.sig_a as f64 * e * red[ax] / 2.0
                        } else {
                            // sig_a = -1, sig_b = +1: the pair displacement
                            // depends on -(y_0 + y_1)/2 symmetrically.
                            -red[ax] / 2.0
                        };
                        comps[ax] = xa - xb + shift;
                    }
                    let d = FourVector::from_components(&comps)?;
                    prod *= inter_value(&self.model, pair.kind(), &d)?;
                }
                plan_acc += cv * prod;
                plan_ref += cv.norm() * prod.norm();
            }
            acc += plan.constant * plan_acc * dv * dv;
            aref += plan.constant.norm() * plan_ref * dv * dv;
        }
        let total = acc / self.cache.denom;
        realize(total, aref / self.cache.denom.norm())
    }

    /// Independent contraction order: the full tensor sum over one grid
    /// index per detector, with inter-detector propagators pre-tabulated
    /// over their reduced index range. Operation count is budget-capped.
    pub fn evaluate_tensor(&self, xs: &[FourVector]) -> Result<f64> {
        if xs.len() != self.n_det {
            return Err(QtpError::DimensionMismatch(xs.len(), self.n_det));
        }
        let len = self.spec.len();
        let ops = self.plans.len() as f64 * (len as f64).powi(self.n_det as i32);
        if ops > TENSOR_BUDGET {
            return Err(QtpError::ResourceCap(format!(
                "tensor joint route needs ~{ops:.1e} operations (budget {TENSOR_BUDGET:.1e}); \
                 supply a coarser shared relative-coordinate grid"
            )));
        }
        let rank = self.spec.ndim();
        let dv = self.spec.cell_volume();
        let idxs: Vec<Vec<usize>> = (0..len).map(|lin| self.spec.unindex(lin)).collect();
        // Reduced-index tables: for a pair the displacement depends on the
        // grid indices only through s_ax = sig_a i_a - sig_b i_b.
        let tdims: Vec<usize> = self.spec.shape.iter().map(|&n| 2 * n - 1).collect();
        let tlen: usize = tdims.iter().product();
        let mut tables: HashMap<InterPair, Vec<Complex64>> = HashMap::new();
        for plan in &self.plans {
            for pair in &plan.inters {
                if tables.contains_key(pair) {
                    continue;
                }
                let mut tab = Vec::with_capacity(tlen);
                for tl in 0..tlen {
                    let mut rem = tl;
                    let mut comps = vec![0.0f64; rank];
                    for ax in (0..rank).rev() {
                        let ti = rem % tdims[ax];
                        rem /= tdims[ax];
                        let lo = (if pair.sig_a > 0 { 0 } else { -(self.spec.shape[ax] as isize - 1) })
                            - (if pair.sig_b > 0 { self.spec.shape[ax] as isize - 1 } else { 0 });
                        let s = lo + ti as isize;
                        comps[ax] = fv_component(&xs[pair.a], ax) - fv_component(&xs[pair.b], ax)
                            + ((pair.sig_a - pair.sig_b) as f64 * self.spec.origin[ax]
                                + s as f64 * self.spec.step[ax])
                                / 2.0;
                    }
                    tab.push(inter_value(&self.model, pair.kind(), &FourVector::from_components(&comps)?)?);
                }
                tables.insert(*pair, tab);
            }
        }
        let table_index = |pair: &InterPair, ia: &[usize], ib: &[usize]| -> usize {
            let mut lin = 0usize;
            for ax in 0..rank {
                let sa = pair.sig_a as isize * ia[ax] as isize;
                let sb = pair.sig_b as isize * ib[ax] as isize;
                let lo = (if pair.sig_a > 0 { 0 } else { -(self.spec.shape[ax] as isize - 1) })
                    - (if pair.sig_b > 0 { self.spec.shape[ax] as isize - 1 } else { 0 });
                lin = lin * tdims[ax] + (sa - sb - lo) as usize;
            }
            lin
        };

        let mut memo = HashMap::new();
        let mut acc = Complex64::new(0.0, 0.0);
        let mut aref = 0.0f64;
        for plan in &self.plans {
            let locals: Vec<Vec<Complex64>> = (0..self.n_det)
                .map(|d| self.local_array(d, &plan.locals[d], &xs[d], &mut memo))
                .collect::<Result<_>>()?;
            let mut plan_acc = Complex64::new(0.0, 0.0);
            let mut plan_ref = 0.0f64;
            match self.n_det {
                1 => {
                    for v in &locals[0] {
                        plan_acc += v;
                        plan_ref += v.norm();
                    }
                }
                2 => {
                    for i0 in 0..len {
                        for i1 in 0..len {
                            let mut v = locals[0][i0] * locals[1][i1];
                            for pair in &plan.inters {
                                let (ia, ib) = if pair.a == 0 {
                                    (&idxs[i0], &idxs[i1])
                                } else {
                                    (&idxs[i1], &idxs[i0])
                                };
                                v *= tables[pair][table_index(pair, ia, ib)];
                            }
                            plan_acc += v;
                            plan_ref += v.norm();
                        }
                    }
                }
                _ => {
                    for i0 in 0..len {
                        for i1 in 0..len {
                            let l01 = locals[0][i0] * locals[1][i1];
                            for i2 in 0..len {
                                let mut v = l01 * locals[2][i2];
                                for pair in &plan.inters {
                                    let lins = [i0, i1, i2];
                                    let ia = &idxs[lins[pair.a]];
                                    let ib = &idxs[lins[pair.b]];
                                    v *= tables[pair][table_index(pair, ia, ib)];
                                }
                                plan_acc += v;
                                plan_ref += v.norm();
                            }
                        }
                    }
                }
            }
            let vol = dv.powi(self.n_det as i32);
            acc += plan.constant * plan_acc * vol;
            aref += plan.constant.norm() * plan_ref * vol;
        }
        let total = acc / self.cache.denom;
        realize(total, aref / self.cache.denom.norm())
    }
}

/// Joint detection density at one event per detector, `events[d]` holding
/// the spacetime point and pointer bin of detector `d`. All detectors share
/// one relative-coordinate grid sized for the union of their kernels.
pub fn joint_density(
    dets: &[DetectorModel],
    model: &FieldModel,
    state: &FieldState,
    events: &[(FourVector, usize)],
) -> Result<f64> {
    if dets.len() != events.len() {
        return Err(QtpError::DimensionMismatch(events.len(), dets.len()));
    }
    let kernels: Vec<DetectorKernel> =
        dets.iter().zip(events).map(|(d, &(_, q))| d.kernel(q)).collect::<Result<_>>()?;
    let bw = spectral_bandwidth(model, state);
    let refs: Vec<&DetectorKernel> = kernels.iter().collect();
    let spec = DensityPlan::for_kernels(&refs, &bw)?.spec;
    let ev = JointEvaluator::new(model, state, &kernels, spec)?;
    let xs: Vec<FourVector> = events.iter().map(|&(x, _)| x).collect();
    ev.evaluate(&xs)
}

/// [`joint_density`] on a caller-supplied shared relative-coordinate grid.
pub fn joint_density_with_grid(
    dets: &[DetectorModel],
    model: &FieldModel,
    state: &FieldState,
    events: &[(FourVector, usize)],
    rel: &GridSpec,
) -> Result<f64> {
    if dets.len() != events.len() {
        return Err(QtpError::DimensionMismatch(events.len(), dets.len()));
    }
    let kernels: Vec<DetectorKernel> =
        dets.iter().zip(events).map(|(d, &(_, q))| d.kernel(q)).collect::<Result<_>>()?;
    let ev = JointEvaluator::new(model, state, &kernels, rel.clone())?;
    let xs: Vec<FourVector> = events.iter().map(|&(x, _)| x).collect();
    ev.evaluate(&xs)
}

// ---------------------------------------------------------------------------
// Hierarchies
// ---------------------------------------------------------------------------

/// Request for a probability hierarchy over detector outcome spaces.
#[derive(Clone, Debug)]
pub struct HierarchyRequest {
    pub detectors: Vec<DetectorModel>,
    pub spaces: Vec<OutcomeSpace>,
    /// Highest correlation level carried as a grid (1 or 2).
    pub levels: usize,
    /// Shared relative-coordinate grid override for every evaluation.
    pub rel_grid: Option<GridSpec>,
}

/// Build the raw hierarchy: level-1 densities per detector and, for two
/// detectors, the level-2 joint over all outcome pairs with the exclusive
/// and no-detection sectors filled in by subtraction. Level-3 grids exceed
/// any reasonable budget and are refused; third-order joints are available
/// pointwise through [`joint_density`].
pub fn build_hierarchy(
    req: &HierarchyRequest,
    model: &FieldModel,
    state: &FieldState,
) -> Result<Hierarchy> {
    let nd = req.detectors.len();
    if nd == 0 || req.spaces.len() != nd {
        return Err(QtpError::InvalidModel(format!(
            "hierarchy needs one outcome space per detector ({} detectors, {} spaces)",
            nd,
            req.spaces.len()
        )));
    }
    if req.levels == 0 || req.levels > 3 {
        return Err(QtpError::InvalidModel(format!("hierarchy levels must be 1..=3, got {}", req.levels)));
    }
    if req.levels >= 3 {
        return Err(QtpError::ResourceCap(
            "level-3 outcome grids exceed the evaluation budget; evaluate third-order joints \
             pointwise via the joint density"
                .into(),
        ));
    }
    let level1: Vec<ProbabilityGrid> = req
        .detectors
        .iter()
        .zip(&req.spaces)
        .map(|(d, s)| density_grid_with(d, model, state, s, req.rel_grid.as_ref()))
        .collect::<Result<_>>()?;

    let mut level2 = None;
    if req.levels >= 2 {
        if nd != 2 {
            return Err(QtpError::InvalidModel(format!(
                "level-2 hierarchies need exactly two detectors, got {nd}"
            )));
        }
        let (s0, s1) = (&req.spaces[0], &req.spaces[1]);
        let bw = spectral_bandwidth(model, state);
        // One shared relative grid covering every pointer bin of both
        // detectors.
        let all_kernels: Vec<DetectorKernel> = (0..s0.n_bins)
            .map(|q| req.detectors[0].kernel(q))
            .chain((0..s1.n_bins).map(|q| req.detectors[1].kernel(q)))
            .collect::<Result<_>>()?;
        let spec = match &req.rel_grid {
            Some(s) => s.clone(),
            None => {
                let refs: Vec<&DetectorKernel> = all_kernels.iter().collect();
                DensityPlan::for_kernels(&refs, &bw)?.spec
            }
        };
        let red_len: f64 = spec.shape.iter().map(|&n| (2 * n - 1) as f64).product();
        let probe = JointEvaluator::new(
            model,
            state,
            &[all_kernels[0].clone(), all_kernels[s0.n_bins].clone()],
            spec.clone(),
        )?;
        let ops = s0.n_outcomes() as f64
            * s1.n_outcomes() as f64
            * red_len
            * probe.plans.len() as f64;
        if ops > LEVEL2_BUDGET {
            return Err(QtpError::ResourceCap(format!(
                "level-2 grid needs ~{ops:.1e} operations (budget {LEVEL2_BUDGET:.1e}); \
                 coarsen the outcome grids or the shared relative grid"
            )));
        }
        let (n0, n1) = (s0.n_outcomes(), s1.n_outcomes());
        let mut joint = vec![0.0f64; n0 * n1];
        for q0 in 0..s0.n_bins {
            for q1 in 0..s1.n_bins {
                let ev = JointEvaluator::new(
                    model,
                    state,
                    &[all_kernels[q0].clone(), all_kernels[s0.n_bins + q1].clone()],
                    spec.clone(),
                )?;
                let pairs: Vec<(usize, usize)> = (0..s0.n_cells())
                    .flat_map(|c0| (0..s1.n_cells()).map(move |c1| (c0, c1)))
                    .collect();
                let vals: Vec<f64> = pairs
                    .par_iter()
                    .map(|&(c0, c1)| {
                        let x0 = FourVector::from_components(&s0.cell_point(c0))?;
                        let x1 = FourVector::from_components(&s1.cell_point(c1))?;
                        ev.evaluate(&[x0, x1])
                    })
                    .collect::<Result<_>>()?;
                for (&(c0, c1), v) in pairs.iter().zip(vals) {
                    joint[s0.outcome(q0, c0) * n1 + s1.outcome(q1, c1)] = v;
                }
            }
        }
        let (w0, w1) = (s0.measure(), s1.measure());
        let m0 = level1[0].total_mass();
        let m1 = level1[1].total_mass();
        let mj: f64 = joint.iter().sum::<f64>() * w0 * w1;
        let mut deficit = 0.0f64;
        let mut only_first = vec![0.0f64; n0];
        for z0 in 0..n0 {
            let v = level1[0].values[z0] - joint[z0 * n1..(z0 + 1) * n1].iter().sum::<f64>() * w1;
            if v < 0.0 {
                deficit += -v * w0;
                only_first[z0] = 0.0;
            } else {
                only_first[z0] = v;
            }
        }
        let mut only_second = vec![0.0f64; n1];
        for z1 in 0..n1 {
            let v = level1[1].values[z1]
                - (0..n0).map(|z0| joint[z0 * n1 + z1]).sum::<f64>() * w0;
            if v < 0.0 {
                deficit += -v * w1;
                only_second[z1] = 0.0;
            } else {
                only_second[z1] = v;
            }
        }
        let neither = 1.0 - m0 - m1 + mj;
        level2 = Some(JointDistribution {
            joint,
            only_first,
            only_second,
            neither,
            subtraction_deficit: deficit,
        });
    }

    let h = Hierarchy {
        spaces: req.spaces.clone(),
        level1,
        level2,
        level3: None,
        normalization: Normalization::Raw,
        convention: CONVENTION_RAW.to_string(),
    };
    h.validate()?;
    Ok(h)
}

// ---------------------------------------------------------------------------
// Generating functional
// ---------------------------------------------------------------------------

/// Generating functional of the detection hierarchy at source strengths
/// `sources[d][z]`:
///   Z[j] = 1 + sum_d sum_z P_d(z) j_d(z) w_d
///            + sum_{z0,z1} P_12(z0,z1) j_0(z0) j_1(z1) w_0 w_1,
/// truncated at the hierarchy's level. Requires raw normalization.
pub fn generating_functional(h: &Hierarchy, sources: &[Vec<f64>]) -> Result<f64> {
    h.validate()?;
    if h.normalization != Normalization::Raw {
        return Err(QtpError::InvalidModel(
            "the generating functional needs the raw hierarchy".into(),
        ));
    }
    if sources.len() != h.spaces.len() {
        return Err(QtpError::DimensionMismatch(sources.len(), h.spaces.len()));
    }
    let mut z = 1.0;
    for (d, g) in h.level1.iter().enumerate() {
        if sources[d].len() != h.spaces[d].n_outcomes() {
            return Err(QtpError::DimensionMismatch(
                sources[d].len(),
                h.spaces[d].n_outcomes(),
            ));
        }
        let w = h.spaces[d].measure();
        for (v, j) in g.values.iter().zip(&sources[d]) {
            z += v * j * w;
        }
    }
    if let Some(l2) = &h.level2 {
        let (n1, w0, w1) = (
            h.spaces[1].n_outcomes(),
            h.spaces[0].measure(),
            h.spaces[1].measure(),
        );
        for (lin, v) in l2.joint.iter().enumerate() {
            let (z0, z1) = (lin / n1, lin % n1);
            z += v * sources[0][z0] * sources[1][z1] * w0 * w1;
        }
    }
    Ok(z)
}

/// Independent route to the same generating functional: every level-1 and
/// level-2 density is re-evaluated through the tensor contraction order on
/// the supplied shared relative grid, touching only outcomes with nonzero
/// sources. Matches [`generating_functional`] of a hierarchy built with the
/// same `rel` grid.
pub fn generating_functional_via_joint(
    detectors: &[DetectorModel],
    model: &FieldModel,
    state: &FieldState,
    spaces: &[OutcomeSpace],
    sources: &[Vec<f64>],
    rel: &GridSpec,
) -> Result<f64> {
    if detectors.len() != spaces.len() || sources.len() != spaces.len() {
        return Err(QtpError::InvalidModel(
            "generating functional needs one space and source set per detector".into(),
        ));
    }
    let mut z = 1.0;
    let mut single_evs: Vec<Vec<JointEvaluator>> = Vec::new();
    for (d, det) in detectors.iter().enumerate() {
        if sources[d].len() != spaces[d].n_outcomes() {
            return Err(QtpError::DimensionMismatch(sources[d].len(), spaces[d].n_outcomes()));
        }
        let mut evs = Vec::new();
        for q in 0..spaces[d].n_bins {
            evs.push(JointEvaluator::new(model, state, &[det.kernel(q)?], rel.clone())?);
        }
        single_evs.push(evs);
    }
    for (d, sp) in spaces.iter().enumerate() {
        let w = sp.measure();
        for (zidx, &j) in sources[d].iter().enumerate() {
            if j == 0.0 {
                continue;
            }
            let (q, cell) = (zidx / sp.n_cells(), zidx % sp.n_cells());
            let x = FourVector::from_components(&sp.cell_point(cell))?;
            z += single_evs[d][q].evaluate_tensor(&[x])? * j * w;
        }
    }
    if detectors.len() == 2 {
        let (s0, s1) = (&spaces[0], &spaces[1]);
        let (w0, w1) = (s0.measure(), s1.measure());
        let mut pair_evs: HashMap<(usize, usize), JointEvaluator> = HashMap::new();
        for (z0, &j0) in sources[0].iter().enumerate() {
            if j0 == 0.0 {
                continue;
            }
            let (q0, c0) = (z0 / s0.n_cells(), z0 % s0.n_cells());
            let x0 = FourVector::from_components(&s0.cell_point(c0))?;
            for (z1, &j1) in sources[1].iter().enumerate() {
                if j1 == 0.0 {
                    continue;
                }
                let (q1, c1) = (z1 / s1.n_cells(), z1 % s1.n_cells());
                let x1 = FourVector::from_components(&s1.cell_point(c1))?;
                if !pair_evs.contains_key(&(q0, q1)) {
                    let ev = JointEvaluator::new(
                        model,
                        state,
                        &[detectors[0].kernel(q0)?, detectors[1].kernel(q1)?],
                        rel.clone(),
                    )?;
                    pair_evs.insert((q0, q1), ev);
                }
                let p = pair_evs[&(q0, q1)].evaluate_tensor(&[x0, x1])?;
                z += p * j0 * j1 * w0 * w1;
            }
        }
    }
    Ok(z)
}
