//! Limiting-case checks of the detection density: the broadband kernel
//! reduces to intensity detection (density proportional to the squared
//! mode function), and a narrowband point-like detector integrated along
//! its worldline reproduces the two-time worldline response integral.

use num_complex::Complex64;
use qtp_core::detector::{glauber_kernel, udw_response, DetectorKernel, DetectorModel, PointerSpec};
use qtp_core::field::{FieldModel, FieldState, WavePacket};
use qtp_core::fock::LatticeModel;
use qtp_core::geometry::{Dim, FourVector, SamplingFunction, Worldline};
use qtp_core::probability::lattice_density_exact;

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

fn lattice_model() -> (FieldModel, f64) {
    let lat = LatticeModel::new(Dim::Two, 1.0, 8.0, 2).unwrap();
    // First nonzero lattice mode: k = 2 pi / L.
    let k1 = 2.0 * std::f64::consts::PI / 8.0;
    let omega = (k1 * k1 + 1.0f64).sqrt();
    (FieldModel::Lattice(lat), omega)
}

/// Broadband limit: with the energy and momentum acceptance opened far
/// beyond the field's spectral content (positive-energy step kept
/// microscopic), the vacuum-subtracted one-particle density is
/// proportional to |u(x)|^2 to within the residual tilt of the wide
/// acceptance Gaussians across the occupied modes.
#[test]
fn broadband_kernel_density_tracks_squared_mode_function() {
    let (model, omega) = lattice_model();
    let packet = WavePacket::new(vec![0.785], 0.4).unwrap();
    let state = FieldState::Particles(vec![packet.clone()]);

    let det = DetectorModel {
        ref_point: FourVector::zero(Dim::Two),
        gap: omega,
        sigma_e: 0.2,
        sigma_p: 2.0,
        coupling: 0.3,
        sampling: SamplingFunction::new(1.0, 1.0, FourVector::zero(Dim::Two)).unwrap(),
        pointer: PointerSpec::None,
    };
    let kernel = glauber_kernel(&det).unwrap();

    let norm = model.packet_norm(&packet).unwrap();
    let t = 0.3;
    let xs: Vec<f64> = (0..15).map(|i| -3.5 + 0.5 * i as f64).collect();

    let mut intensity = Vec::new();
    let mut density = Vec::new();
    for &x in &xs {
        let p = FourVector::new2(t, x);
        let u = model.mode_function(&packet, norm, &p).unwrap();
        intensity.push(u.norm_sqr());
        let with = lattice_density_exact(&kernel, &model, &state, &p).unwrap();
        let vac = lattice_density_exact(&kernel, &model, &FieldState::Vacuum, &p).unwrap();
        density.push(with - vac);
    }

    // Least-squares proportionality constant, then pointwise check over the
    // packet support.
    let num: f64 = density.iter().zip(&intensity).map(|(p, i)| p * i).sum();
    let den: f64 = intensity.iter().map(|i| i * i).sum();
    let c = num / den;
    assert!(c > 0.0, "proportionality constant must be positive, got {c}");
    let peak = intensity.iter().cloned().fold(0.0f64, f64::max);
    let mut worst = 0.0f64;
    for (p, i) in density.iter().zip(&intensity) {
        if *i >= 0.1 * peak {
            worst = worst.max((p - c * i).abs() / (c * i));
        }
    }
    assert!(worst <= 0.02, "worst relative deviation from intensity law: {worst:.3e}");
}

/// Worldline limit: a narrowband kernel at rest, integrated along its
/// worldline over a window matched to the kernel's coherence time
/// T = sqrt(2 pi) / sigma_e, reproduces
///   coupling^2 (sqrt(2 pi) / sigma_p) integral dtau dtau'
///       e^{-i Omega (tau - tau')} G(x(tau), x(tau'))
/// over [0, T]^2, after subtracting the vacuum pedestal on both sides.
#[test]
fn worldline_integrated_density_matches_response_integral() {
    let (model, omega) = lattice_model();
    // Narrow packet: a single occupied mode keeps both routes on the same
    // resonance with no cross-mode lineshape mismatch.
    let packet = WavePacket::new(vec![0.785], 0.2).unwrap();
    let state = FieldState::Coherent { packet, amplitude: Complex64::new(0.6, -0.4) };

    // T a full number of field half-periods so the sharp-window
    // anti-resonant term of the response vanishes.
    let total_time = 10.0 * std::f64::consts::PI / omega;
    let sigma_e = SQRT_2PI / total_time;
    let sigma_p = 40.0;
    let coupling = 0.3;
    let kernel = DetectorKernel::new(
        Dim::Two,
        coupling,
        omega,
        sigma_e,
        sigma_e,
        vec![0.0],
        sigma_p,
    )
    .unwrap();

    // Simpson integration of the vacuum-subtracted density along the
    // worldline.
    let n = 256usize;
    let h = total_time / n as f64;
    let density_at = |t: f64| -> f64 {
        let x = FourVector::new2(t, 0.0);
        let with = lattice_density_exact(&kernel, &model, &state, &x).unwrap();
        let vac = lattice_density_exact(&kernel, &model, &FieldState::Vacuum, &x).unwrap();
        with - vac
    };
    let mut integral = density_at(0.0) + density_at(total_time);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        integral += w * density_at(i as f64 * h);
    }
    integral *= h / 3.0;

    let wl = Worldline::static_at(FourVector::zero(Dim::Two));
    let resp_state = udw_response(&model, &state, &wl, omega, total_time).unwrap();
    let resp_vac =
        udw_response(&model, &FieldState::Vacuum, &wl, omega, total_time).unwrap();
    let reference = coupling * coupling * (SQRT_2PI / sigma_p) * (resp_state - resp_vac);

    assert!(
        reference > 0.0 && integral > 0.0,
        "both routes must see the excited state (got {integral:.3e} vs {reference:.3e})"
    );
    let rel = (integral - reference).abs() / reference.abs().max(1e-30);
    assert!(
        rel <= 0.05,
        "worldline integral {integral:.6e} vs response {reference:.6e} (rel {rel:.3e})"
    );
}
