//! Detector kernel models: Gaussian spectral profiles with a soft
//! positive-energy cutoff, their position-space transforms, correlation
//! scale bookkeeping, and the broadband (photodetection-style) and
//! worldline-response comparators.
//!
//! The kernel Fourier transform used everywhere is
//!   R~(xi, q) = lambda^2 (2pi)^D N exp[-(xi0 - gap)^2 / (2 sigma_e^2)]
//!               g_q(xi_vec) StepSoft(xi0),
//! with g_q a Gaussian momentum acceptance and StepSoft(x) = Phi(x / w) a
//! soft positive-energy step. N normalizes (2pi)^{-D} integral R~ = lambda^2,
//! so R(0) = lambda^2.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{QtpError, Result};
use crate::field::{FieldModel, FieldState};
use crate::geometry::{Dim, FourVector, SamplingFunction, Worldline};
use crate::quadrature::{integrate, integrate_lenient, IntegrationRequest};

const PI: f64 = std::f64::consts::PI;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Pointer observable: either event-only detection or momentum binning of
/// the detected quantum along the first spatial axis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum PointerSpec {
    None,
    /// Strictly increasing bin edges over the first spatial momentum
    /// component; bin q covers [edges[q], edges[q+1]).
    MomentumBins(Vec<f64>),
}

impl PointerSpec {
    pub fn n_bins(&self) -> usize {
        match self {
            PointerSpec::None => 1,
            PointerSpec::MomentumBins(edges) => edges.len().saturating_sub(1),
        }
    }

    /// Acceptance center of bin q (zero vector for event-only detection).
    pub fn bin_center(&self, q: usize, dim: Dim) -> Result<Vec<f64>> {
        let mut c = vec![0.0; dim.spatial()];
        match self {
            PointerSpec::None => {
                if q != 0 {
                    return Err(QtpError::InvalidModel(format!("pointer bin {q} out of range")));
                }
            }
            PointerSpec::MomentumBins(edges) => {
                if q + 1 >= edges.len() {
                    return Err(QtpError::InvalidModel(format!("pointer bin {q} out of range")));
                }
                c[0] = 0.5 * (edges[q] + edges[q + 1]);
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if let PointerSpec::MomentumBins(edges) = self {
            if edges.len() < 2 {
                return Err(QtpError::InvalidModel("momentum bins need >= 2 edges".into()));
            }
            if edges.windows(2).any(|w| w[1] <= w[0]) {
                return Err(QtpError::InvalidModel(
                    "momentum bin edges must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A localized detector: internal gap, spectral acceptance widths, coupling,
/// and the macroscopic sampling accuracy of the recorded event.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectorModel {
    pub ref_point: FourVector,
    /// Internal energy gap (> 0).
    pub gap: f64,
    /// Energy acceptance width (correlation time tau = 1/sigma_e).
    pub sigma_e: f64,
    /// Momentum acceptance width (correlation length ell = 1/sigma_p).
    pub sigma_p: f64,
    pub coupling: f64,
    pub sampling: SamplingFunction,
    pub pointer: PointerSpec,
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap > 0.0) || !(self.sigma_e > 0.0) || !(self.sigma_p > 0.0) {
            return Err(QtpError::InvalidModel(format!(
                "detector needs gap, sigma_e, sigma_p > 0 (got {}, {}, {})",
                self.gap, self.sigma_e, self.sigma_p
            )));
        }
        if !self.coupling.is_finite() {
            return Err(QtpError::InvalidModel("non-finite coupling".into()));
        }
        self.pointer.validate()
    }

    pub fn dim(&self) -> Dim {
        self.ref_point.dim()
    }

    /// The evaluation kernel for pointer value q.
    pub fn kernel(&self, q: usize) -> Result<DetectorKernel> {
        self.validate()?;
        DetectorKernel::new(
            self.dim(),
            self.coupling,
            self.gap,
            self.sigma_e,
            self.sigma_e, // step width tied to the energy width by default
            self.pointer.bin_center(q, self.dim())?,
            self.sigma_p,
        )
    }
}

/// Scale-separation report: microscopic kernel scales vs the macroscopic
/// sampling accuracy.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScaleReport {
    pub tau: f64,
    pub ell: f64,
    pub ok: bool,
}

/// tau = 1/sigma_e, ell = 1/sigma_p; "much smaller" is operationalized as a
/// factor of 5 below the sampling widths.
pub fn scale_separation_check(model: &DetectorModel) -> ScaleReport {
    let tau = 1.0 / model.sigma_e;
    let ell = 1.0 / model.sigma_p;
    ScaleReport {
        tau,
        ell,
        ok: tau <= model.sampling.delta_t / 5.0 && ell <= model.sampling.delta_x / 5.0,
    }
}

/// Concrete kernel: all spectral parameters resolved, normalization frozen.
#[derive(Clone, Debug)]
pub struct DetectorKernel {
    pub dim: Dim,
    pub coupling: f64,
    pub gap: f64,
    pub sigma_e: f64,
    /// Width of the soft positive-energy step (can differ from sigma_e for
    /// broadband kernels).
    pub step_width: f64,
    pub q_center: Vec<f64>,
    pub sigma_p: f64,
    /// N = 1 / (I_E I_g).
    norm: f64,
}

impl DetectorKernel {
    pub fn new(
        dim: Dim,
        coupling: f64,
        gap: f64,
        sigma_e: f64,
        step_width: f64,
        q_center: Vec<f64>,
        sigma_p: f64,
    ) -> Result<Self> {
        if !(sigma_e > 0.0) || !(sigma_p > 0.0) || !(step_width > 0.0) {
            return Err(QtpError::InvalidModel("kernel widths must be positive".into()));
        }
        if q_center.len() != dim.spatial() {
            return Err(QtpError::DimensionMismatch(q_center.len(), dim.spatial()));
        }
        // I_E = integral exp[-(x-gap)^2/(2 s^2)] Phi(x/w) dx
        //     = sqrt(2pi) s Phi(gap / sqrt(s^2 + w^2)).
        let i_e = SQRT_2PI
            * sigma_e
            * normal_cdf(gap / (sigma_e * sigma_e + step_width * step_width).sqrt());
        let i_g = (SQRT_2PI * sigma_p).powi(dim.spatial() as i32);
        if !(i_e > 0.0) {
            return Err(QtpError::InvalidModel("kernel has no positive-energy weight".into()));
        }
        Ok(DetectorKernel {
            dim,
            coupling,
            gap,
            sigma_e,
            step_width,
            q_center,
            sigma_p,
            norm: 1.0 / (i_e * i_g),
        })
    }

    /// The correlation scales (tau, ell) of the kernel.
    pub fn scales(&self) -> (f64, f64) {
        (1.0 / self.sigma_e, 1.0 / self.sigma_p)
    }

    /// Energy profile without the momentum factor.
    fn energy_profile(&self, xi0: f64) -> f64 {
        let d = (xi0 - self.gap) / self.sigma_e;
        (-0.5 * d * d).exp() * normal_cdf(xi0 / self.step_width)
    }

    /// R~(xi) >= 0.
    pub fn fourier(&self, xi: &FourVector) -> f64 {
        let mut g = 0.0;
        for (x, c) in xi.spatial().iter().zip(&self.q_center) {
            let d = x - c;
            g += d * d;
        }
        let g = (-g / (2.0 * self.sigma_p * self.sigma_p)).exp();
        self.coupling * self.coupling
            * (2.0 * PI).powi(self.dim.d() as i32)
            * self.norm
            * self.energy_profile(xi.t)
            * g
    }

    /// R(y) = (2pi)^{-D} integral e^{+i xi.y} R~(xi) d^D xi (Minkowski
    /// phases). The spatial factor is closed-form; the energy factor is a
    /// 1D quadrature.
    pub fn position(&self, y: &FourVector) -> Result<Complex64> {
        let t_part = self.time_transform(y.t)?;
        let mut r2 = 0.0;
        let mut qy = 0.0;
        for (yv, c) in y.spatial().iter().zip(&self.q_center) {
            r2 += yv * yv;
            qy += c * yv;
        }
        let s_part = (SQRT_2PI * self.sigma_p).powi(self.dim.spatial() as i32)
            * (-0.5 * self.sigma_p * self.sigma_p * r2).exp()
            * Complex64::new(0.0, -qy).exp();
        Ok(self.coupling * self.coupling * self.norm * t_part * s_part)
    }

    /// R(y) tabulated on a relative-coordinate grid (time axis 0, row-major):
    /// one energy-transform quadrature per distinct y0, closed-form spatial
    /// factors per cell.
    pub fn position_on_grid(&self, spec: &crate::fftgrid::GridSpec) -> Result<Vec<Complex64>> {
        if spec.ndim() != self.dim.d() {
            return Err(QtpError::DimensionMismatch(spec.ndim(), self.dim.d()));
        }
        let nt = spec.shape[0];
        let mut tvals = Vec::with_capacity(nt);
        for i in 0..nt {
            tvals.push(self.time_transform(spec.coord(0, i))?);
        }
        let amp = self.coupling * self.coupling * self.norm;
        let spatial_amp = (SQRT_2PI * self.sigma_p).powi(self.dim.spatial() as i32);
        let mut out = Vec::with_capacity(spec.len());
        for lin in 0..spec.len() {
            let idx = spec.unindex(lin);
            let mut r2 = 0.0;
            let mut qy = 0.0;
            for ax in 1..spec.ndim() {
                let y = spec.coord(ax, idx[ax]);
                r2 += y * y;
                qy += self.q_center[ax - 1] * y;
            }
            let s_part = spatial_amp
                * (-0.5 * self.sigma_p * self.sigma_p * r2).exp()
                * Complex64::new(0.0, -qy).exp();
            out.push(amp * tvals[idx[0]] * s_part);
        }
        Ok(out)
    }

    /// integral dxi0 e^{i xi0 t} energy_profile(xi0).
    fn time_transform(&self, t: f64) -> Result<Complex64> {
        let lo = (self.gap - 9.0 * self.sigma_e).min(-9.0 * self.step_width);
        let hi = self.gap + 9.0 * self.sigma_e;
        let me = self.clone();
        let f = move |args: &[f64]| {
            let xi0 = args[0];
            Complex64::new(0.0, xi0 * t).exp() * me.energy_profile(xi0)
        };
        let mut req =
            IntegrationRequest::new(&f, vec![(lo, hi)]).with_tol(1e-12).with_abs_tol(1e-14);
        if t.abs() > 1.0 {
            req = req.with_oscillation(t.abs());
        }
        Ok(integrate_lenient(&req)?.value)
    }
}

/// Broadband limit of a detector's kernel: energy acceptance opened far
/// beyond every other scale while the positive-energy step stays at the
/// original microscopic width, and momentum acceptance opened likewise. Its
/// detection density is proportional to the normal-ordered intensity
/// <psi| phi^-(x) phi^+(x) |psi>.
pub fn glauber_kernel(model: &DetectorModel) -> Result<DetectorKernel> {
    model.validate()?;
    let broad_e = 40.0 * (model.gap + 1.0 / model.sampling.delta_t);
    let broad_p = 40.0 / model.sampling.delta_x;
    DetectorKernel::new(
        model.dim(),
        model.coupling,
        broad_e, // center the wide Gaussian well inside xi0 > 0
        broad_e,
        model.sigma_e, // step width stays microscopic: vacuum stays dark
        vec![0.0; model.dim().spatial()],
        broad_p,
    )
}

/// Worldline-response comparator:
///   F(Omega, T) = integral_0^T dtau dtau' e^{-i Omega (tau - tau')}
///                 G(x(tau), x(tau')),
/// the standard excitation probability (per coupling^2) of a point monopole
/// detector switched on for total time T. Real and nonnegative.
pub fn udw_response(
    model: &FieldModel,
    state: &FieldState,
    worldline: &Worldline,
    omega: f64,
    total_time: f64,
) -> Result<f64> {
    state.validate()?;
    if !(total_time > 0.0) {
        return Err(QtpError::InvalidModel("total_time must be positive".into()));
    }
    // Vacuum block: along an inertial worldline G_vac depends on tau - tau'
    // only, so the double integral collapses to
    //   integral_{-T}^{T} (T - |s|) e^{-i Omega s} G_vac(x(s), x(0)) ds.
    let g0 = |s: f64| -> Result<Complex64> {
        let d = worldline.velocity.scale(s);
        model.wightman_displacement(&d)
    };
    let f = |args: &[f64]| -> Complex64 {
        let s = args[0];
        let w = total_time - s.abs();
        Complex64::new(0.0, -omega * s).exp() * g0(s).unwrap_or(Complex64::new(f64::NAN, 0.0)) * w
    };
    let req = IntegrationRequest::new(&f, vec![(-total_time, total_time)])
        .with_tol(1e-8)
        .with_abs_tol(1e-10)
        .with_oscillation(omega.abs() + 1.0);
    let vac = integrate(&req)?.value;

    // State-dependent blocks factorize into 1D worldline integrals of the
    // mode functions / classical field.
    let mut total = vac;
    match state {
        FieldState::Vacuum => {}
        FieldState::Coherent { packet, amplitude } => {
            let c = model.packet_norm(packet)?;
            let phi_cl = |tau: f64| -> Result<Complex64> {
                let u = model.mode_function(packet, c, &worldline.point(tau))? * amplitude;
                Ok(u + u.conj())
            };
            // |integral e^{-i Omega tau} phi_cl(tau) dtau|^2 with phi_cl real.
            let f = |args: &[f64]| {
                Complex64::new(0.0, -omega * args[0]).exp()
                    * phi_cl(args[0]).unwrap_or(Complex64::new(f64::NAN, 0.0))
            };
            let req = IntegrationRequest::new(&f, vec![(0.0, total_time)])
                .with_tol(1e-8)
                .with_abs_tol(1e-10)
                .with_oscillation(omega.abs() + 1.0);
            let a = integrate(&req)?.value;
            total += a.norm_sqr();
        }
        FieldState::Particles(packets) => {
            let norms: Vec<f64> =
                packets.iter().map(|p| model.packet_norm(p)).collect::<Result<_>>()?;
            let n = packets.len();
            let mut gram = vec![vec![Complex64::new(0.0, 0.0); n]; n];
            for i in 0..n {
                for j in 0..n {
                    gram[i][j] =
                        model.packet_overlap(&packets[i], norms[i], &packets[j], norms[j])?;
                }
            }
            let denom = crate::field::permanent(&gram);
            // A_j = integral e^{-i Omega tau} u_j(x(tau)) dtau,
            // B_j = integral e^{+i Omega tau} u_j(x(tau)) dtau.
            let mut a = vec![Complex64::new(0.0, 0.0); n];
            let mut b = vec![Complex64::new(0.0, 0.0); n];
            for j in 0..n {
                for (sign, out) in [(-1.0, &mut a), (1.0, &mut b)] {
                    let f = |args: &[f64]| {
                        let tau = args[0];
                        let u = model
                            .mode_function(&packets[j], norms[j], &worldline.point(tau))
                            .unwrap_or(Complex64::new(f64::NAN, 0.0));
                        Complex64::new(0.0, sign * omega * tau).exp() * u
                    };
                    let req = IntegrationRequest::new(&f, vec![(0.0, total_time)])
                        .with_tol(1e-8)
                        .with_abs_tol(1e-10)
                        .with_oscillation(omega.abs() + 1.0);
                    out[j] = integrate(&req)?.value;
                }
            }
            // Sum over contraction structures: conj(u_i) u_j weighted by the
            // permanent of the complementary overlap minor.
            for i in 0..n {
                for j in 0..n {
                    let rest = crate::field::permanent(&minor(&gram, i, j));
                    // e^{-iO(t - t')} conj(u_i)(t) u_j(t') = conj(A_i) A_j;
                    // e^{-iO(t - t')} conj(u_i)(t') u_j(t) = B_j conj(B_i).
                    total += (a[i].conj() * a[j] + b[j] * b[i].conj()) * rest / denom;
                }
            }
        }
    }
    let scale = total.norm().max(1e-30);
    if total.im.abs() > 1e-6 * scale {
        return Err(QtpError::ImaginaryResidue { residue: total.im.abs() / scale });
    }
    if total.re < -1e-9 * scale {
        return Err(QtpError::InvalidModel(format!("negative response {}", total.re)));
    }
    Ok(total.re.max(0.0))
}

fn minor(m: &[Vec<Complex64>], row: usize, col: usize) -> Vec<Vec<Complex64>> {
    let n = m.len();
    let mut out = Vec::with_capacity(n - 1);
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
