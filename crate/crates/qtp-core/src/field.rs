//! Free scalar field: dispersion, Gaussian wave packets, mode functions,
//! vacuum Wightman functions, and state two-point functions.
//!
//! Momentum-space conventions: relativistic normalization
//! [a(k), a'(k')] = (2pi)^{D-1} 2 w_k delta(k - k'), invariant measure
//! dmu(k) = d^{D-1}k / ((2pi)^{D-1} 2 w_k). Positive-frequency modes are
//! e^{-i k.x} with k.x = w t - k_vec.x_vec.
//!
//! A `FieldModel` is either the continuum field or a periodic momentum
//! lattice; the latter makes every correlator here directly comparable with
//! the exact truncated-Fock evaluation in [`crate::fock`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QtpError, Result};
use crate::fock::LatticeModel;
use crate::geometry::{Dim, FourVector};
use crate::quadrature::{integrate_lenient, IntegrationRequest};
use crate::special::{bessel_k0, bessel_k1};

const PI: f64 = std::f64::consts::PI;

/// Free scalar field on D-dimensional Minkowski spacetime.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FieldSpec {
    pub dim: Dim,
    pub mass: f64,
}

impl FieldSpec {
    pub fn new(dim: Dim, mass: f64) -> Result<Self> {
        if !mass.is_finite() || mass < 0.0 {
            return Err(QtpError::InvalidModel(format!("bad mass {mass}")));
        }
        if dim == Dim::Two && mass == 0.0 {
            return Err(QtpError::InvalidModel(
                "massless field is infrared-divergent in D = 2; require m > 0".into(),
            ));
        }
        Ok(FieldSpec { dim, mass })
    }

    /// Dispersion w(k) = sqrt(|k|^2 + m^2).
    pub fn omega(&self, k: &[f64]) -> f64 {
        let k2: f64 = k.iter().map(|v| v * v).sum();
        (k2 + self.mass * self.mass).sqrt()
    }
}

/// Gaussian wave packet: psi(k) ~ exp[-|k - k0|^2 / (4 sigma_k^2)] with a
/// phase e^{-i k.x0} placing the packet at spatial position x0 at t = 0.
/// The overall normalization is fixed against a concrete field model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WavePacket {
    pub center_momentum: Vec<f64>,
    pub width: f64,
    pub center_position: Vec<f64>,
}

impl WavePacket {
    pub fn new(center_momentum: Vec<f64>, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(QtpError::InvalidModel(format!("packet width must be > 0, got {width}")));
        }
        let center_position = vec![0.0; center_momentum.len()];
        Ok(WavePacket { center_momentum, width, center_position })
    }

    pub fn at_position(mut self, x0: Vec<f64>) -> Self {
        self.center_position = x0;
        self
    }

    /// Unnormalized momentum profile including the position phase.
    pub fn profile(&self, k: &[f64]) -> Complex64 {
        let mut d2 = 0.0;
        let mut phase = 0.0;
        for (i, &ki) in k.iter().enumerate() {
            let d = ki - self.center_momentum[i];
            d2 += d * d;
            phase -= ki * self.center_position[i];
        }
        Complex64::new(0.0, phase).exp() * (-d2 / (4.0 * self.width * self.width)).exp()
    }
}

/// Quantum state of the field.
#[derive(Clone, Debug)]
pub enum FieldState {
    Vacuum,
    /// Up to four packets (contraction-count control).
    Particles(Vec<WavePacket>),
    /// Coherent state generated by displacing the vacuum with the given
    /// packet profile scaled by `amplitude`.
    Coherent { packet: WavePacket, amplitude: Complex64 },
}

impl FieldState {
    pub fn validate(&self) -> Result<()> {
        if let FieldState::Particles(ps) = self {
            if ps.is_empty() || ps.len() > 4 {
                return Err(QtpError::InvalidModel(format!(
                    "particle states support 1..=4 packets, got {}",
                    ps.len()
                )));
            }
        }
        Ok(())
    }
}

/// Where two-point content comes from: the continuum field (closed forms /
/// quadrature) or a finite momentum lattice matched to the Fock oracle.
#[derive(Clone, Debug)]
pub enum FieldModel {
    Continuum {
        spec: FieldSpec,
        /// i-epsilon regulator entering (dt - i eps) in closed forms.
        epsilon: f64,
    },
    Lattice(LatticeModel),
}

impl FieldModel {
    pub fn continuum(spec: FieldSpec, epsilon: f64) -> Self {
        FieldModel::Continuum { spec, epsilon }
    }

    pub fn dim(&self) -> Dim {
        match self {
            FieldModel::Continuum { spec, .. } => spec.dim,
            FieldModel::Lattice(l) => l.dim(),
        }
    }

    pub fn mass(&self) -> f64 {
        match self {
            FieldModel::Continuum { spec, .. } => spec.mass,
            FieldModel::Lattice(l) => l.mass,
        }
    }

    /// Integration box covering the support of a packet profile.
    fn packet_box(&self, p: &WavePacket) -> Vec<(f64, f64)> {
        p.center_momentum
            .iter()
            .map(|&k0| (k0 - 8.0 * p.width, k0 + 8.0 * p.width))
            .collect()
    }

    /// Normalization constant c with integral dmu |c psi|^2 = 1.
    pub fn packet_norm(&self, p: &WavePacket) -> Result<f64> {
        match self {
            FieldModel::Continuum { spec, .. } => {
                let spec = *spec;
                let pp = p.clone();
                let f = move |k: &[f64]| {
                    let w = spec.omega(k);
                    let a = pp.profile(k).norm_sqr();
                    Complex64::new(a / (2.0 * w), 0.0)
                };
                let dm1 = spec.dim.spatial();
                let req = IntegrationRequest::new(&f, self.packet_box(p)).with_tol(1e-10);
                let r = integrate_lenient(&req)?;
                let norm2 = r.value.re / (2.0 * PI).powi(dm1 as i32);
                if !(norm2 > 0.0) {
                    return Err(QtpError::InvalidModel("packet has zero norm".into()));
                }
                Ok(1.0 / norm2.sqrt())
            }
            FieldModel::Lattice(l) => {
                let mut norm2 = 0.0;
                for j in 0..l.n_modes() {
                    let k = l.momentum(j);
                    let w = l.omega(j);
                    norm2 += p.profile(&k).norm_sqr() / (2.0 * w * l.volume());
                }
                if !(norm2 > 0.0) {
                    return Err(QtpError::InvalidModel(
                        "packet has zero norm on the lattice; widen it or move k0".into(),
                    ));
                }
                Ok(1.0 / norm2.sqrt())
            }
        }
    }

    /// Positive-frequency mode function u(x) = integral dmu(k) psi(k) e^{-ik.x}
    /// for the normalized packet (`norm` from [`FieldModel::packet_norm`]).
    pub fn mode_function(&self, p: &WavePacket, norm: f64, x: &FourVector) -> Result<Complex64> {
        match self {
            FieldModel::Continuum { spec, .. } => {
                let spec = *spec;
                let pp = p.clone();
                let (t, xs) = (x.t, x.spatial().to_vec());
                let f = move |k: &[f64]| {
                    let w = spec.omega(k);
                    let mut kx = 0.0;
                    for (ki, xi) in k.iter().zip(&xs) {
                        kx += ki * xi;
                    }
                    pp.profile(k) * Complex64::new(0.0, -(w * t - kx)).exp() / (2.0 * w)
                };
                let dm1 = spec.dim.spatial();
                // Oscillation scale ~ |x| + t sets the panel pre-split.
                let osc = x.t.abs() + x.spatial_norm();
                let mut req = IntegrationRequest::new(&f, self.packet_box(p)).with_tol(1e-9);
                if osc > 1.0 {
                    req = req.with_oscillation(osc);
                }
                let r = integrate_lenient(&req)?;
                Ok(r.value * norm / (2.0 * PI).powi(dm1 as i32))
            }
            FieldModel::Lattice(l) => {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..l.n_modes() {
                    let k = l.momentum(j);
                    let w = l.omega(j);
                    let mut kx = 0.0;
                    for (ki, xi) in k.iter().zip(x.spatial()) {
                        kx += ki * xi;
                    }
                    acc += p.profile(&k) * Complex64::new(0.0, -(w * x.t - kx)).exp()
                        / (2.0 * w * l.volume());
                }
                Ok(acc * norm)
            }
        }
    }

    /// Overlap integral dmu conj(psi1) psi2 of two normalized packets.
    pub fn packet_overlap(
        &self,
        p1: &WavePacket,
        n1: f64,
        p2: &WavePacket,
        n2: f64,
    ) -> Result<Complex64> {
        match self {
            FieldModel::Continuum { spec, .. } => {
                let spec = *spec;
                let (a, b) = (p1.clone(), p2.clone());
                let f = move |k: &[f64]| {
                    let w = spec.omega(k);
                    a.profile(k).conj() * b.profile(k) / (2.0 * w)
                };
                // Cover both packets.
                let mut domain = self.packet_box(p1);
                for (d, (lo, hi)) in self.packet_box(p2).into_iter().enumerate() {
                    domain[d].0 = domain[d].0.min(lo);
                    domain[d].1 = domain[d].1.max(hi);
                }
                let dm1 = spec.dim.spatial();
                let req = IntegrationRequest::new(&f, domain).with_tol(1e-9);
                let r = integrate_lenient(&req)?;
                Ok(r.value * n1 * n2 / (2.0 * PI).powi(dm1 as i32))
            }
            FieldModel::Lattice(l) => {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..l.n_modes() {
                    let k = l.momentum(j);
                    let w = l.omega(j);
                    acc += p1.profile(&k).conj() * p2.profile(&k) / (2.0 * w * l.volume());
                }
                Ok(acc * n1 * n2)
            }
        }
    }

    /// Vacuum Wightman function G+(x, x') = <0| phi(x) phi(x') |0>.
    pub fn wightman(&self, x: &FourVector, xp: &FourVector) -> Result<Complex64> {
        if matches!(self, FieldModel::Continuum { .. }) && x == xp {
            return Err(QtpError::CoincidentPoints);
        }
        self.wightman_displacement(&x.sub(xp))
    }

    /// Vacuum Wightman function of a displacement d = x - x'. Unlike
    /// [`FieldModel::wightman`], d = 0 is allowed: the i-epsilon regulator
    /// (continuum) or the finite mode sum (lattice) keeps it finite, which
    /// worldline-integrated responses rely on.
    pub fn wightman_displacement(&self, d: &FourVector) -> Result<Complex64> {
        match self {
            FieldModel::Continuum { spec, epsilon } => wightman_closed_form(spec, d, *epsilon),
            FieldModel::Lattice(l) => {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..l.n_modes() {
                    let k = l.momentum(j);
                    let w = l.omega(j);
                    let mut kx = 0.0;
                    for (ki, xi) in k.iter().zip(d.spatial()) {
                        kx += ki * xi;
                    }
                    acc += Complex64::new(0.0, -(w * d.t - kx)).exp() / (2.0 * w * l.volume());
                }
                Ok(acc)
            }
        }
    }
}

/// Closed-form vacuum Wightman function of the displacement, with the
/// (dt - i eps) prescription. s = r^2 - (dt - i eps)^2, w = sqrt(s):
///   D = 2, m > 0:  K0(m w) / (2 pi)
///   D = 4, m = 0:  1 / (4 pi^2 s)
///   D = 4, m > 0:  m K1(m w) / (4 pi^2 w)
fn wightman_closed_form(spec: &FieldSpec, d: &FourVector, eps: f64) -> Result<Complex64> {
    let r2: f64 = d.spatial().iter().map(|v| v * v).sum();
    let dt = Complex64::new(d.t, -eps);
    let s = Complex64::new(r2, 0.0) - dt * dt;
    match (spec.dim, spec.mass == 0.0) {
        (Dim::Four, true) => Ok(1.0 / (4.0 * PI * PI * s)),
        (Dim::Four, false) => {
            let w = s.sqrt();
            let z = spec.mass * w;
            Ok(spec.mass * bessel_k1(z) / (4.0 * PI * PI * w))
        }
        (Dim::Two, false) => {
            let z = spec.mass * s.sqrt();
            Ok(bessel_k0(z) / (2.0 * PI))
        }
        (Dim::Two, true) => Err(QtpError::InvalidModel("massless D = 2 field".into())),
    }
}

/// Direct mode-sum evaluation of the vacuum Wightman function; the slow
/// verification path for the closed forms. The regulator supplies the
/// large-k damping e^{-eps w}, so it must not be taken too small here.
pub fn wightman_vacuum_quadrature(
    spec: &FieldSpec,
    x: &FourVector,
    xp: &FourVector,
    eps: f64,
) -> Result<Complex64> {
    let d = x.sub(xp);
    let kmax = (32.0 / eps).max(8.0 * (1.0 + spec.mass));
    match spec.dim {
        Dim::Two => {
            let (m, dt, dx) = (spec.mass, d.t, d.spatial()[0]);
            let f = move |k: f64| {
                let w = (k * k + m * m).sqrt();
                Complex64::new(0.0, -(w * dt) + k * dx).exp() * (-eps * w).exp() / (4.0 * PI * w)
            };
            let g = |args: &[f64]| f(args[0]);
            let req = IntegrationRequest::new(&g, vec![(-kmax, kmax)])
                .with_tol(1e-10)
                .with_oscillation(d.t.abs() + d.spatial_norm().abs() + 1.0);
            Ok(integrate_lenient(&req)?.value)
        }
        Dim::Four => {
            let r = d.spatial_norm();
            let (m, dt) = (spec.mass, d.t);
            if r < 1e-12 {
                let f = move |args: &[f64]| {
                    let k = args[0];
                    let w = (k * k + m * m).sqrt();
                    Complex64::new(0.0, -(w * dt)).exp() * (-eps * w).exp() * k * k
                        / (4.0 * PI * PI * w)
                };
                let req = IntegrationRequest::new(&f, vec![(0.0, kmax)])
                    .with_tol(1e-10)
                    .with_oscillation(dt.abs() + 1.0);
                return Ok(integrate_lenient(&req)?.value);
            }
            let f = move |args: &[f64]| {
                let k = args[0];
                let w = (k * k + m * m).sqrt();
                Complex64::new(0.0, -(w * dt)).exp() * (-eps * w).exp() * k * (k * r).sin()
                    / (4.0 * PI * PI * w * r)
            };
            let req = IntegrationRequest::new(&f, vec![(0.0, kmax)])
                .with_tol(1e-10)
                .with_oscillation(dt.abs() + r + 1.0);
            Ok(integrate_lenient(&req)?.value)
        }
    }
}

/// State two-point function G(x, x') = <psi| phi(x) phi(x') |psi> for the
/// supported states, decomposed by generalized Wick contraction.
pub fn state_two_point(
    state: &FieldState,
    model: &FieldModel,
    x: &FourVector,
    xp: &FourVector,
) -> Result<Complex64> {
    state.validate()?;
    let vac = model.wightman(x, xp)?;
    match state {
        FieldState::Vacuum => Ok(vac),
        FieldState::Particles(packets) => {
            // <psi|psi> and the leg contractions, normalized by the Gram
            // permanent of the packet overlaps.
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
            let denom = permanent(&gram);
            let u_x: Vec<Complex64> = packets
                .iter()
                .zip(&norms)
                .map(|(p, &c)| model.mode_function(p, c, x))
                .collect::<Result<_>>()?;
            let u_xp: Vec<Complex64> = packets
                .iter()
                .zip(&norms)
                .map(|(p, &c)| model.mode_function(p, c, xp))
                .collect::<Result<_>>()?;
            // Pairings: (vacuum contraction of phi phi) x permanent of legs,
            // plus terms where phi(x), phi(x') each absorb one leg.
            let mut num = vac * denom;
            for i in 0..n {
                for j in 0..n {
                    // leg i (bra) contracts phi(x), leg j (ket) feeds phi(x'):
                    // conj(u_i)(x) u_j(x'), times permanent of the rest.
                    let rest = permanent(&minor(&gram, i, j));
                    num += u_x[i].conj() * u_xp[j] * rest;
                    num += u_xp[i].conj() * u_x[j] * rest;
                }
            }
            Ok(num / denom)
        }
        FieldState::Coherent { packet, amplitude } => {
            let c = model.packet_norm(packet)?;
            let u_x = model.mode_function(packet, c, x)? * amplitude;
            let u_xp = model.mode_function(packet, c, xp)? * amplitude;
            let phi_x = u_x + u_x.conj();
            let phi_xp = u_xp + u_xp.conj();
            Ok(vac + phi_x * phi_xp)
        }
    }
}

/// Permanent of a small complex matrix (packet Gram matrices, n <= 4).
pub(crate) fn permanent(m: &[Vec<Complex64>]) -> Complex64 {
    let n = m.len();
    if n == 0 {
        return Complex64::new(1.0, 0.0);
    }
    let mut cols: Vec<usize> = (0..n).collect();
    let mut total = Complex64::new(0.0, 0.0);
    permute(&mut cols, 0, m, &mut total);
    total
}

fn permute(cols: &mut Vec<usize>, k: usize, m: &[Vec<Complex64>], total: &mut Complex64) {
    let n = cols.len();
    if k == n {
        let mut prod = Complex64::new(1.0, 0.0);
        for (r, &c) in cols.iter().enumerate() {
            prod *= m[r][c];
        }
        *total += prod;
        return;
    }
    for i in k..n {
        cols.swap(k, i);
        permute(cols, k + 1, m, total);
        cols.swap(k, i);
    }
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
