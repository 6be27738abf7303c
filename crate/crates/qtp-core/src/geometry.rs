//! Minkowski geometry, inertial worldlines, and the Gaussian sampling /
//! smearing machinery shared by every other module.
//!
//! Conventions: metric signature (+, -, -, -), natural units hbar = c = 1.
//! Spacetime dimension is 2 or 4; a `FourVector` always carries its dimension.

use serde::{Deserialize, Serialize};

use crate::error::{QtpError, Result};

pub const PI: f64 = std::f64::consts::PI;

/// Spacetime dimension. D = 2 keeps oracle comparisons cheap, D = 4 is the
/// physical case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dim {
    Two,
    Four,
}

impl Dim {
    pub fn d(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Four => 4,
        }
    }

    pub fn spatial(self) -> usize {
        self.d() - 1
    }

    pub fn from_usize(d: usize) -> Result<Self> {
        match d {
            2 => Ok(Dim::Two),
            4 => Ok(Dim::Four),
            _ => Err(QtpError::UnsupportedDimension(d)),
        }
    }
}

/// A spacetime point or displacement. Spatial components beyond the
/// configured dimension are kept at zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourVector {
    pub t: f64,
    x: [f64; 3],
    dim: Dim,
}

impl FourVector {
    pub fn new2(t: f64, x: f64) -> Self {
        FourVector { t, x: [x, 0.0, 0.0], dim: Dim::Two }
    }

    pub fn new4(t: f64, x: [f64; 3]) -> Self {
        FourVector { t, x, dim: Dim::Four }
    }

    pub fn zero(dim: Dim) -> Self {
        FourVector { t: 0.0, x: [0.0; 3], dim }
    }

    /// Build from components `[t, x1, ..]`; length fixes the dimension.
    pub fn from_components(c: &[f64]) -> Result<Self> {
        match c.len() {
            2 => Ok(Self::new2(c[0], c[1])),
            4 => Ok(Self::new4(c[0], [c[1], c[2], c[3]])),
            n => Err(QtpError::UnsupportedDimension(n)),
        }
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn spatial(&self) -> &[f64] {
        &self.x[..self.dim.spatial()]
    }

    pub fn spatial_mut(&mut self) -> &mut [f64] {
        let n = self.dim.spatial();
        &mut self.x[..n]
    }

    /// Euclidean norm of the spatial part.
    pub fn spatial_norm(&self) -> f64 {
        self.spatial().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.spatial().iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &FourVector) -> FourVector {
        assert_eq!(self.dim, other.dim, "dimension mismatch in FourVector::add");
        let mut out = *self;
        out.t += other.t;
        for (a, b) in out.x.iter_mut().zip(other.x.iter()) {
            *a += *b;
        }
        out
    }

    pub fn sub(&self, other: &FourVector) -> FourVector {
        assert_eq!(self.dim, other.dim, "dimension mismatch in FourVector::sub");
        let mut out = *self;
        out.t -= other.t;
        for (a, b) in out.x.iter_mut().zip(other.x.iter()) {
            *a -= *b;
        }
        out
    }

    pub fn scale(&self, s: f64) -> FourVector {
        let mut out = *self;
        out.t *= s;
        for a in out.x.iter_mut() {
            *a *= s;
        }
        out
    }
}

/// Minkowski inner product u.v = u0 v0 - u.v with signature (+,-,-,-).
pub fn minkowski_dot(u: &FourVector, v: &FourVector) -> f64 {
    assert_eq!(u.dim(), v.dim(), "dimension mismatch in minkowski_dot");
    u.t * v.t - u.spatial().iter().zip(v.spatial()).map(|(a, b)| a * b).sum::<f64>()
}

/// Inertial worldline: x(tau) = base + tau * velocity.
#[derive(Clone, Copy, Debug)]
pub struct Worldline {
    pub base: FourVector,
    pub velocity: FourVector,
}

impl Worldline {
    /// A detector at rest at spatial position given by `base`.
    pub fn static_at(base: FourVector) -> Self {
        let mut velocity = FourVector::zero(base.dim());
        velocity.t = 1.0;
        Worldline { base, velocity }
    }

    pub fn new(base: FourVector, velocity: FourVector) -> Result<Self> {
        let norm = minkowski_dot(&velocity, &velocity);
        if (norm - 1.0).abs() > 1e-12 {
            return Err(QtpError::InvalidModel(format!(
                "worldline velocity must be unit timelike, got v.v = {norm}"
            )));
        }
        Ok(Worldline { base, velocity })
    }

    pub fn point(&self, tau: f64) -> FourVector {
        self.base.add(&self.velocity.scale(tau))
    }
}

/// Gaussian sampling (switching) function with temporal accuracy `delta_t`
/// and spatial accuracy `delta_x`, peaked at `center`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SamplingFunction {
    pub delta_t: f64,
    pub delta_x: f64,
    pub center: FourVector,
}

impl SamplingFunction {
    pub fn new(delta_t: f64, delta_x: f64, center: FourVector) -> Result<Self> {
        if !(delta_t > 0.0) || !(delta_x > 0.0) {
            return Err(QtpError::InvalidModel(format!(
                "sampling widths must be positive, got delta_t = {delta_t}, delta_x = {delta_x}"
            )));
        }
        Ok(SamplingFunction { delta_t, delta_x, center })
    }

    pub fn dim(&self) -> Dim {
        self.center.dim()
    }

    /// f(y) = exp[-(y0-c0)^2/(2 dt^2) - |y-c|^2/(2 dx^2)]; f(center) = 1.
    pub fn value(&self, y: &FourVector) -> f64 {
        let d = y.sub(&self.center);
        self.value_at_offset(&d)
    }

    /// f evaluated on a displacement from the center.
    pub fn value_at_offset(&self, d: &FourVector) -> f64 {
        let r2: f64 = d.spatial().iter().map(|v| v * v).sum();
        (-d.t * d.t / (2.0 * self.delta_t * self.delta_t)
            - r2 / (2.0 * self.delta_x * self.delta_x))
            .exp()
    }

    /// Spacetime volume of the interaction region, upsilon = integral of f^2.
    /// D = 4: pi^2 dt dx^3; D = 2: pi dt dx.
    pub fn spacetime_volume(&self) -> f64 {
        match self.dim() {
            Dim::Four => PI * PI * self.delta_t * self.delta_x.powi(3),
            Dim::Two => PI * self.delta_t * self.delta_x,
        }
    }

    pub fn smearing(&self) -> SmearingDensity {
        SmearingDensity { f: *self, volume: self.spacetime_volume() }
    }
}

/// sigma(x) = f^2(x) / upsilon, a normalized probability density on spacetime.
#[derive(Clone, Copy, Debug)]
pub struct SmearingDensity {
    f: SamplingFunction,
    volume: f64,
}

impl SmearingDensity {
    pub fn value(&self, x: &FourVector) -> f64 {
        let f = self.f.value(x);
        f * f / self.volume
    }

    pub fn value_at_offset(&self, d: &FourVector) -> f64 {
        let f = self.f.value_at_offset(d);
        f * f / self.volume
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn sampling(&self) -> &SamplingFunction {
        &self.f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn minkowski_dot_signature() {
        let e0 = FourVector::new4(1.0, [0.0, 0.0, 0.0]);
        let e1 = FourVector::new4(0.0, [1.0, 0.0, 0.0]);
        let null = FourVector::new4(1.0, [1.0, 0.0, 0.0]);
        assert_eq!(minkowski_dot(&e0, &e0), 1.0);
        assert_eq!(minkowski_dot(&e1, &e1), -1.0);
        assert_eq!(minkowski_dot(&null, &null), 0.0);
    }

    #[test]
    fn minkowski_dot_symmetric_bilinear() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let r = |rng: &mut rand_chacha::ChaCha8Rng| {
                FourVector::new4(
                    rng.gen_range(-5.0..5.0),
                    [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
                )
            };
            let (u, v, w) = (r(&mut rng), r(&mut rng), r(&mut rng));
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            assert_relative_eq!(minkowski_dot(&u, &v), minkowski_dot(&v, &u), epsilon = 1e-12);
            let lin = u.scale(a).add(&v.scale(b));
            assert_relative_eq!(
                minkowski_dot(&lin, &w),
                a * minkowski_dot(&u, &w) + b * minkowski_dot(&v, &w),
                epsilon = 1e-10,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn sampling_peak_and_one_sigma() {
        let c = FourVector::new4(0.3, [0.1, -0.2, 0.0]);
        let f = SamplingFunction::new(0.7, 1.3, c).unwrap();
        assert_eq!(f.value(&c), 1.0);
        let mut y = c;
        y.t += f.delta_t;
        assert_relative_eq!(f.value(&y), (-0.5f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn gaussian_factorization_identity() {
        // f(x) f(x') = f^2((x+x')/2) sqrt(f)(x-x'), on offsets from center.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let f = SamplingFunction::new(0.9, 1.7, FourVector::zero(Dim::Four)).unwrap();
        for _ in 0..1000 {
            let p = FourVector::new4(
                rng.gen_range(-3.0..3.0),
                [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
            );
            let q = FourVector::new4(
                rng.gen_range(-3.0..3.0),
                [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
            );
            let lhs = f.value(&p) * f.value(&q);
            let mid = p.add(&q).scale(0.5);
            let rel = p.sub(&q);
            let rhs = f.value(&mid).powi(2) * f.value(&rel).sqrt();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
        }
    }

    #[test]
    fn volume_formulas() {
        let f4 = SamplingFunction::new(1.0, 1.0, FourVector::zero(Dim::Four)).unwrap();
        assert_relative_eq!(f4.spacetime_volume(), PI * PI, epsilon = 1e-14);
        let f4b = SamplingFunction::new(2.0, 1.0, FourVector::zero(Dim::Four)).unwrap();
        assert_relative_eq!(f4b.spacetime_volume(), 2.0 * PI * PI, epsilon = 1e-14);
        let f2 = SamplingFunction::new(1.0, 1.0, FourVector::zero(Dim::Two)).unwrap();
        assert_relative_eq!(f2.spacetime_volume(), PI, epsilon = 1e-14);
    }

    #[test]
    fn smearing_density_peak() {
        let f = SamplingFunction::new(1.0, 1.0, FourVector::zero(Dim::Four)).unwrap();
        let sigma = f.smearing();
        assert_relative_eq!(sigma.value(&FourVector::zero(Dim::Four)), 1.0 / (PI * PI), epsilon = 1e-14);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = FourVector::new4(
                rng.gen_range(-4.0..4.0),
                [rng.gen_range(-4.0..4.0), 0.0, rng.gen_range(-4.0..4.0)],
            );
            assert!(sigma.value(&p) >= 0.0);
        }
    }

    #[test]
    fn static_worldline_is_unit_timelike() {
        let w = Worldline::static_at(FourVector::new2(0.0, 1.5));
        assert_relative_eq!(minkowski_dot(&w.velocity, &w.velocity), 1.0, epsilon = 1e-15);
        let p = w.point(2.0);
        assert_relative_eq!(p.t, 2.0, epsilon = 1e-15);
        assert_relative_eq!(p.spatial()[0], 1.5, epsilon = 1e-15);
    }
}
