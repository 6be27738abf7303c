//! Exact evaluation on a truncated Fock space over a finite momentum
//! lattice.
//!
//! This is the brute-force reference path: states are vectors over the
//! occupation-number basis with bounded total quanta, field operators act
//! explicitly, and branch-ordered correlators are literal operator products.
//! The combinatorial evaluator in [`crate::wick`] must reproduce these
//! numbers when it runs on the same lattice.

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QtpError, Result};
use crate::field::{FieldState, WavePacket};
use crate::geometry::{Dim, FourVector, SamplingFunction};

/// Hard cap on the occupation-basis dimension.
const MAX_BASIS_DIM: usize = 20_000;

/// Periodic momentum lattice: modes k_j = 2 pi j / L componentwise with
/// j in {-max_mode ..= max_mode}^(D-1).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatticeModel {
    pub dim: Dim,
    pub mass: f64,
    pub box_length: f64,
    pub max_mode: i32,
}

impl LatticeModel {
    pub fn new(dim: Dim, mass: f64, box_length: f64, max_mode: i32) -> Result<Self> {
        if !(box_length > 0.0) || max_mode < 0 {
            return Err(QtpError::InvalidModel(format!(
                "lattice needs box_length > 0 and max_mode >= 0 (got {box_length}, {max_mode})"
            )));
        }
        if mass <= 0.0 {
            // The j = 0 mode would have w = 0.
            return Err(QtpError::InvalidModel(
                "lattice model requires m > 0 (zero mode is singular otherwise)".into(),
            ));
        }
        Ok(LatticeModel { dim, mass, box_length, max_mode })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    /// Spatial volume L^(D-1).
    pub fn volume(&self) -> f64 {
        self.box_length.powi(self.dim.spatial() as i32)
    }

    pub fn n_modes(&self) -> usize {
        (2 * self.max_mode as usize + 1).pow(self.dim.spatial() as u32)
    }

    /// Momentum vector of mode `idx` (row-major over the integer cube).
    pub fn momentum(&self, idx: usize) -> Vec<f64> {
        let side = 2 * self.max_mode as usize + 1;
        let dk = 2.0 * std::f64::consts::PI / self.box_length;
        let mut rem = idx;
        let sd = self.dim.spatial();
        let mut k = vec![0.0; sd];
        for d in (0..sd).rev() {
            let j = (rem % side) as i64 - self.max_mode as i64;
            rem /= side;
            k[d] = j as f64 * dk;
        }
        k
    }

    pub fn omega(&self, idx: usize) -> f64 {
        let k = self.momentum(idx);
        let k2: f64 = k.iter().map(|v| v * v).sum();
        (k2 + self.mass * self.mass).sqrt()
    }

    /// Plane-wave phase k.x = w t - k_vec . x_vec for mode `idx`.
    fn phase(&self, idx: usize, x: &FourVector) -> f64 {
        let k = self.momentum(idx);
        let mut kx = 0.0;
        for (ki, xi) in k.iter().zip(x.spatial()) {
            kx += ki * xi;
        }
        self.omega(idx) * x.t - kx
    }
}

/// Occupation-number basis with total quanta <= cutoff.
pub struct FockSpace {
    pub lattice: LatticeModel,
    pub cutoff: u8,
    basis: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    /// 1/sqrt(2 w_j L^(D-1)) per mode, the field-operator mode weight.
    weights: Vec<f64>,
}

impl FockSpace {
    pub fn new(lattice: LatticeModel, cutoff: u8) -> Result<Self> {
        let n_modes = lattice.n_modes();
        let mut basis = Vec::new();
        let mut occ = vec![0u8; n_modes];
        enumerate(&mut basis, &mut occ, 0, cutoff);
        if basis.len() > MAX_BASIS_DIM {
            return Err(QtpError::ResourceCap(format!(
                "occupation basis dimension {} exceeds {MAX_BASIS_DIM}",
                basis.len()
            )));
        }
        let index: HashMap<Vec<u8>, usize> =
            basis.iter().enumerate().map(|(i, b)| (b.clone(), i)).collect();
        let weights = (0..n_modes)
            .map(|j| 1.0 / (2.0 * lattice.omega(j) * lattice.volume()).sqrt())
            .collect();
        Ok(FockSpace { lattice, cutoff, basis, index, weights })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn vacuum(&self) -> Vec<Complex64> {
        let mut v = vec![Complex64::new(0.0, 0.0); self.dim()];
        let idx = self.index[&vec![0u8; self.lattice.n_modes()]];
        v[idx] = Complex64::new(1.0, 0.0);
        v
    }

    /// a_j |v>.
    pub fn annihilate(&self, mode: usize, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim()];
        for (i, amp) in v.iter().enumerate() {
            if amp.norm_sqr() == 0.0 {
                continue;
            }
            let occ = &self.basis[i];
            let n = occ[mode];
            if n == 0 {
                continue;
            }
            let mut tgt = occ.clone();
            tgt[mode] = n - 1;
            out[self.index[&tgt]] += amp * (n as f64).sqrt();
        }
        out
    }

    /// a_j^dag |v>; returns the truncated (leaked) squared norm alongside.
    pub fn create(&self, mode: usize, v: &[Complex64]) -> (Vec<Complex64>, f64) {
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim()];
        let mut leak = 0.0;
        for (i, amp) in v.iter().enumerate() {
            if amp.norm_sqr() == 0.0 {
                continue;
            }
            let occ = &self.basis[i];
            let total: u32 = occ.iter().map(|&n| n as u32).sum();
            let n = occ[mode];
            if total >= self.cutoff as u32 {
                leak += amp.norm_sqr() * (n as f64 + 1.0);
                continue;
            }
            let mut tgt = occ.clone();
            tgt[mode] = n + 1;
            out[self.index[&tgt]] += amp * (n as f64 + 1.0).sqrt();
        }
        (out, leak)
    }

    /// Heisenberg-picture field operator applied to a vector:
    /// phi(x) = sum_j w_j (a_j e^{-i k_j.x} + a_j^dag e^{+i k_j.x}),
    /// w_j = 1/sqrt(2 w_j L^(D-1)). Returns the truncated squared norm of
    /// the creation part alongside; the caller enforces a leakage budget
    /// (coherent states always populate the top sector a little).
    pub fn apply_field(&self, x: &FourVector, v: &[Complex64]) -> (Vec<Complex64>, f64) {
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim()];
        let mut leak_total = 0.0;
        for j in 0..self.lattice.n_modes() {
            let ph = self.lattice.phase(j, x);
            let e_minus = Complex64::new(0.0, -ph).exp() * self.weights[j];
            let e_plus = Complex64::new(0.0, ph).exp() * self.weights[j];
            let ann = self.annihilate(j, v);
            let (cre, leak) = self.create(j, v);
            leak_total += leak * self.weights[j] * self.weights[j];
            for i in 0..out.len() {
                out[i] += ann[i] * e_minus + cre[i] * e_plus;
            }
        }
        (out, leak_total)
    }

    /// Build the state vector for a supported field state. Packet amplitudes
    /// follow the invariant-measure correspondence: a normalized profile psi
    /// enters as sum_j psi(k_j) / sqrt(2 w_j L^(D-1)) a_j^dag |0>.
    pub fn state_vector(&self, state: &FieldState) -> Result<Vec<Complex64>> {
        state.validate()?;
        match state {
            FieldState::Vacuum => Ok(self.vacuum()),
            FieldState::Particles(packets) => {
                let mut v = self.vacuum();
                for p in packets {
                    let coeffs = self.packet_coefficients(p)?;
                    let mut next = vec![Complex64::new(0.0, 0.0); self.dim()];
                    for (j, c) in coeffs.iter().enumerate() {
                        if c.norm_sqr() == 0.0 {
                            continue;
                        }
                        let (cre, leak) = self.create(j, &v);
                        if leak > 1e-20 {
                            return Err(QtpError::CutoffLeakage(leak));
                        }
                        for i in 0..next.len() {
                            next[i] += cre[i] * c;
                        }
                    }
                    v = next;
                }
                normalize(&mut v)?;
                Ok(v)
            }
            FieldState::Coherent { packet, amplitude } => {
                let coeffs = self.packet_coefficients(packet)?;
                let alphas: Vec<Complex64> = coeffs
                    .iter()
                    .zip(&self.weights)
                    // alpha_j = amplitude * psi(k_j) / sqrt(2 w_j L^(D-1)):
                    // the displacement amplitude of mode j.
                    .map(|(c, _)| c * amplitude)
                    .collect();
                let a2: f64 = alphas.iter().map(|a| a.norm_sqr()).sum();
                let pref = (-0.5 * a2).exp();
                let mut v = vec![Complex64::new(0.0, 0.0); self.dim()];
                let mut captured = 0.0;
                for (i, occ) in self.basis.iter().enumerate() {
                    let mut amp = Complex64::new(pref, 0.0);
                    for (j, &n) in occ.iter().enumerate() {
                        for m in 0..n {
                            amp *= alphas[j] / ((m as f64 + 1.0).sqrt());
                        }
                    }
                    captured += amp.norm_sqr();
                    v[i] = amp;
                }
                let leak = 1.0 - captured;
                if leak > 1e-8 {
                    return Err(QtpError::CutoffLeakage(leak));
                }
                Ok(v)
            }
        }
    }

    /// Mode amplitudes psi(k_j)/sqrt(2 w_j L^(D-1)) of a lattice-normalized
    /// packet.
    fn packet_coefficients(&self, p: &WavePacket) -> Result<Vec<Complex64>> {
        let l = &self.lattice;
        let mut norm2 = 0.0;
        let mut raw = Vec::with_capacity(l.n_modes());
        for j in 0..l.n_modes() {
            let k = l.momentum(j);
            let c = p.profile(&k) * self.weights[j];
            norm2 += c.norm_sqr();
            raw.push(c);
        }
        if !(norm2 > 0.0) {
            return Err(QtpError::InvalidModel(
                "packet has zero support on the lattice modes".into(),
            ));
        }
        let scale = 1.0 / norm2.sqrt();
        Ok(raw.into_iter().map(|c| c * scale).collect())
    }

    /// Cutoff needed for an exact correlator: quanta in the state plus one
    /// per field operator.
    pub fn required_cutoff(state: &FieldState, n_operators: usize) -> u8 {
        let base = match state {
            FieldState::Vacuum => 0,
            FieldState::Particles(ps) => ps.len(),
            // Coherent support is unbounded; the caller adds headroom and
            // relies on the leakage monitor.
            FieldState::Coherent { .. } => 6,
        };
        (base + n_operators) as u8
    }
}

/// Dense complex operator over the truncated occupation basis.
#[derive(Clone, Debug)]
pub struct MatrixOperator {
    pub dim: usize,
    /// Row-major: entry (r, c) = data[r * dim + c].
    pub data: Vec<Complex64>,
}

impl MatrixOperator {
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim];
        for r in 0..self.dim {
            let row = &self.data[r * self.dim..(r + 1) * self.dim];
            let mut acc = Complex64::new(0.0, 0.0);
            for (m, x) in row.iter().zip(v) {
                acc += m * x;
            }
            out[r] = acc;
        }
        out
    }

    /// max |M - M^dagger| entry.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.dim {
            for c in 0..self.dim {
                let d = (self.data[r * self.dim + c] - self.data[c * self.dim + r].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }
}

/// Truncated matrix of the field operator phi(x) (see
/// [`FockSpace::apply_field`] for the mode expansion). The creation part is
/// clipped at the cutoff, so the matrix is Hermitian on the retained basis.
pub fn build_field_operator(space: &FockSpace, x: &FourVector) -> MatrixOperator {
    let dim = space.dim();
    let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
    for c in 0..dim {
        let mut e = vec![Complex64::new(0.0, 0.0); dim];
        e[c] = Complex64::new(1.0, 0.0);
        let (col, _) = space.apply_field(x, &e);
        for r in 0..dim {
            data[r * dim + c] = col[r];
        }
    }
    MatrixOperator { dim, data }
}

fn enumerate(basis: &mut Vec<Vec<u8>>, occ: &mut Vec<u8>, mode: usize, budget: u8) {
    if mode == occ.len() {
        basis.push(occ.clone());
        return;
    }
    for n in 0..=budget {
        occ[mode] = n;
        enumerate(basis, occ, mode + 1, budget - n);
    }
    occ[mode] = 0;
}

fn normalize(v: &mut [Complex64]) -> Result<()> {
    let n2: f64 = v.iter().map(|a| a.norm_sqr()).sum();
    if !(n2 > 0.0) {
        return Err(QtpError::InvalidModel("state vector has zero norm".into()));
    }
    let s = 1.0 / n2.sqrt();
    for a in v.iter_mut() {
        *a *= s;
    }
    Ok(())
}

/// Branch-ordered 2n-point correlator, evaluated literally:
/// <psi| Trev[phi(b_1)..phi(b_m)] T[phi(f_1)..phi(f_l)] |psi>,
/// where Trev puts earlier times leftmost and T puts later times leftmost.
/// Equal times keep their given relative order (stable sort).
pub fn oracle_correlator(
    space: &FockSpace,
    psi: &[Complex64],
    backward: &[FourVector],
    forward: &[FourVector],
) -> Result<Complex64> {
    let mut fwd: Vec<FourVector> = forward.to_vec();
    fwd.sort_by(|a, b| b.t.partial_cmp(&a.t).unwrap()); // later leftmost
    let mut bwd: Vec<FourVector> = backward.to_vec();
    bwd.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap()); // earlier leftmost
    let mut ordered = bwd;
    ordered.extend(fwd);

    let mut v = psi.to_vec();
    let mut leak_total = 0.0;
    for x in ordered.iter().rev() {
        let (next, leak) = space.apply_field(x, &v);
        leak_total += leak;
        v = next;
    }
    if leak_total > 1e-8 {
        return Err(QtpError::CutoffLeakage(leak_total));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (a, b) in psi.iter().zip(&v) {
        acc += a.conj() * b;
    }
    Ok(acc)
}

/// Detector level for the literal detection-probability oracle: internal
/// transition carrying four-momentum (energy gap, recoil momentum) with
/// coupling strength g.
#[derive(Clone, Debug)]
pub struct OracleLevel {
    pub energy_gap: f64,
    pub momentum: Vec<f64>,
    pub coupling: f64,
}

/// Literal leading-order detection probability
///   Prob(x) = integral dy1 dy2 f(x-y1) f(x-y2) R(y2-y1) G(y1, y2),
/// with the multi-level kernel R(v) = sum_j g_j^2 e^{i (W_j v^0 - p_j.v)}.
///
/// Evaluated in mean/offset variables u = (y1+y2)/2, v = y2 - y1 (unit
/// Jacobian), where f(x-y1) f(x-y2) = f^2(x-u) sqrt(f)(v); both factors are
/// tabulated on explicit midpoint grids, so this shares no quadrature code
/// with the production path. One spatial dimension only.
#[allow(clippy::too_many_arguments)]
pub fn oracle_detection_probability(
    sampling: &SamplingFunction,
    levels: &[OracleLevel],
    two_point: &dyn Fn(&FourVector, &FourVector) -> Complex64,
    x: &FourVector,
    u_half_extent: (f64, f64),
    u_counts: (usize, usize),
    v_half_extent: (f64, f64),
    v_counts: (usize, usize),
) -> Complex64 {
    let (ut_h, ux_h) = u_half_extent;
    let (vt_h, vx_h) = v_half_extent;
    let (nut, nux) = u_counts;
    let (nvt, nvx) = v_counts;
    let dut = 2.0 * ut_h / nut as f64;
    let dux = 2.0 * ux_h / nux as f64;
    let dvt = 2.0 * vt_h / nvt as f64;
    let dvx = 2.0 * vx_h / nvx as f64;

    let mut total = Complex64::new(0.0, 0.0);
    for iut in 0..nut {
        let ut = x.t - ut_h + (iut as f64 + 0.5) * dut;
        for iux in 0..nux {
            let ux = x.spatial()[0] - ux_h + (iux as f64 + 0.5) * dux;
            let u = FourVector::new2(ut, ux);
            let env = sampling.value(&u.sub(x)).powi(2);
            if env < 1e-300 {
                continue;
            }
            let mut inner = Complex64::new(0.0, 0.0);
            for ivt in 0..nvt {
                let vt = -vt_h + (ivt as f64 + 0.5) * dvt;
                for ivx in 0..nvx {
                    let vx = -vx_h + (ivx as f64 + 0.5) * dvx;
                    let v = FourVector::new2(vt, vx);
                    let root_f = sampling.value_at_offset(&v).sqrt();
                    let mut r = Complex64::new(0.0, 0.0);
                    for lev in levels {
                        let ph = lev.energy_gap * vt - lev.momentum[0] * vx;
                        r += lev.coupling * lev.coupling * Complex64::new(0.0, ph).exp();
                    }
                    let y1 = u.sub(&v.scale(0.5));
                    let y2 = u.add(&v.scale(0.5));
                    inner += root_f * r * two_point(&y1, &y2) * dvt * dvx;
                }
            }
            total += env * inner * dut * dux;
        }
    }
    total
}
