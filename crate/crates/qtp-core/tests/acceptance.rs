//! End-to-end acceptance suite. Each test prints one pass/fail line for its
//! criterion and asserts it; every numeric check runs against an
//! independent reference route at the stated tolerance.

use num_complex::Complex64;
use qtp_core::detector::{glauber_kernel, udw_response, DetectorKernel, DetectorModel, PointerSpec};
use qtp_core::diagnostics::{boltzmann_entropy, correlation_entropy, kolmogorov_defect};
use qtp_core::fftgrid::{direct_convolve_raw, fft_convolve_raw, wigner_transform, ComplexGrid, GridSpec};
use qtp_core::field::{FieldModel, FieldState, WavePacket};
use qtp_core::fock::{oracle_correlator, FockSpace, LatticeModel, OracleLevel};
use qtp_core::geometry::{Dim, FourVector, SamplingFunction, Worldline};
use qtp_core::grid::{Hierarchy, JointDistribution, Normalization, OutcomeSpace, ProbabilityGrid};
use qtp_core::probability::{
    build_hierarchy, conditioned_hierarchy, generating_functional, generating_functional_via_joint,
    joint_density_with_grid, lattice_density_exact, spectral_bandwidth, DensityEvaluator,
    DensityPlan, HierarchyRequest,
};
use qtp_core::wick::{enumerate_plans, evaluate_correlator, CorrelatorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {id:02} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} {name} failed: {detail}");
}

fn lattice(max_mode: i32, box_length: f64) -> LatticeModel {
    LatticeModel::new(Dim::Two, 1.0, box_length, max_mode).unwrap()
}

fn resonant_omega(box_length: f64, mode: f64) -> f64 {
    let k = mode * 2.0 * std::f64::consts::PI / box_length;
    (k * k + 1.0f64).sqrt()
}

// -------------------------------------------------------------------------
// 1. Gaussian sampling-function identity on randomized pairs.
// -------------------------------------------------------------------------
#[test]
fn criterion_01_gaussian_sampling_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let (dt, dx) = (rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0));
        let four_d = trial % 2 == 1;
        let rnd = |rng: &mut ChaCha8Rng| rng.gen_range(-2.0..2.0);
        let (c, x, xp) = if four_d {
            (
                FourVector::new4(rnd(&mut rng), [rnd(&mut rng), rnd(&mut rng), rnd(&mut rng)]),
                FourVector::new4(rnd(&mut rng), [rnd(&mut rng), rnd(&mut rng), rnd(&mut rng)]),
                FourVector::new4(rnd(&mut rng), [rnd(&mut rng), rnd(&mut rng), rnd(&mut rng)]),
            )
        } else {
            (
                FourVector::new2(rnd(&mut rng), rnd(&mut rng)),
                FourVector::new2(rnd(&mut rng), rnd(&mut rng)),
                FourVector::new2(rnd(&mut rng), rnd(&mut rng)),
            )
        };
        let f = SamplingFunction::new(dt, dx, c).unwrap();
        let lhs = f.value(&x) * f.value(&xp);
        let mid = x.add(&xp).scale(0.5);
        let rhs = f.value(&mid).powi(2) * f.value_at_offset(&x.sub(&xp)).sqrt();
        worst = worst.max((lhs - rhs).abs() / lhs.max(1e-300));
    }
    report(1, "gaussian-identity", worst <= 1e-12, &format!("max rel dev {worst:.2e}"));
}

// -------------------------------------------------------------------------
// 2. Contraction engine vs literal Fock-space products, with pairing counts.
// -------------------------------------------------------------------------
#[test]
fn criterion_02_contractions_match_fock_oracle() {
    let double_factorial = |n: usize| -> usize {
        let mut v = 1;
        let mut k = n;
        while k > 1 {
            v *= k;
            k -= 2;
        }
        v
    };
    let packet = WavePacket::new(vec![0.8], 0.5).unwrap();
    let cases: Vec<(FieldState, u8, Vec<(f64, f64)>, Vec<(f64, f64)>)> = vec![
        (FieldState::Vacuum, 2, vec![(0.4, 0.7)], vec![(-0.3, -0.2)]),
        (
            FieldState::Vacuum,
            4,
            vec![(0.9, 0.1), (-0.2, 0.6)],
            vec![(0.3, -0.5), (-0.7, 0.4)],
        ),
        (
            FieldState::Particles(vec![packet.clone()]),
            3,
            vec![(0.4, 0.7)],
            vec![(-0.3, -0.2)],
        ),
        (
            FieldState::Particles(vec![packet.clone()]),
            5,
            vec![(0.9, 0.1), (-0.2, 0.6)],
            vec![(0.3, -0.5), (-0.7, 0.4)],
        ),
        (
            FieldState::Coherent { packet: packet.clone(), amplitude: Complex64::new(0.6, -0.4) },
            12,
            vec![(0.4, 0.7)],
            vec![(-0.3, -0.2)],
        ),
        (
            FieldState::Coherent { packet, amplitude: Complex64::new(0.6, -0.4) },
            14,
            vec![(0.9, 0.1), (-0.2, 0.6)],
            vec![(0.3, -0.5), (-0.7, 0.4)],
        ),
    ];
    let mut worst = 0.0f64;
    for (state, cutoff, fwd, bwd) in cases {
        let lat = lattice(2, 8.0);
        let to_pts = |v: &[(f64, f64)]| -> Vec<FourVector> {
            v.iter().map(|&(t, x)| FourVector::new2(t, x)).collect()
        };
        let spec = CorrelatorSpec::new(to_pts(&fwd), to_pts(&bwd), state.clone());
        if matches!(state, FieldState::Vacuum | FieldState::Particles(_)) {
            let n_slots = spec.slots().len();
            let n_plans = enumerate_plans(&spec).unwrap().len();
            assert_eq!(
                n_plans,
                double_factorial(n_slots - 1),
                "pairing count for {n_slots} slots"
            );
        }
        let model = FieldModel::Lattice(lat.clone());
        let wick = evaluate_correlator(&spec, &model).unwrap();
        let space = FockSpace::new(lat, cutoff).unwrap();
        let psi = space.state_vector(&state).unwrap();
        let oracle = oracle_correlator(&space, &psi, &to_pts(&bwd), &to_pts(&fwd)).unwrap();
        worst = worst.max((wick - oracle).norm() / oracle.norm().max(1e-10));
    }
    report(2, "contraction-oracle", worst <= 1e-6, &format!("max rel dev {worst:.2e}"));
}

// -------------------------------------------------------------------------
// 3. Detection probability vs literal Fock-space brute force.
// -------------------------------------------------------------------------
fn detection_rel_dev(state: &FieldState, cutoff: u8) -> f64 {
    let lat = lattice(2, 8.0);
    let model = FieldModel::Lattice(lat.clone());
    let sampling = SamplingFunction::new(1.5, 1.5, FourVector::zero(Dim::Two)).unwrap();
    let kernel = DetectorKernel::new(Dim::Two, 0.3, 1.27, 2.0, 2.0, vec![0.0], 2.0).unwrap();
    let x = FourVector::new2(0.2, 0.3);

    // Discrete plane-wave levels sampled from the kernel spectrum.
    let (n_e, n_p) = (32usize, 32usize);
    let (e_lo, de) = (kernel.gap - 6.5 * kernel.sigma_e, 13.0 * kernel.sigma_e / n_e as f64);
    let (p_lo, dp) = (-6.5 * kernel.sigma_p, 13.0 * kernel.sigma_p / n_p as f64);
    let two_pi_sq = (2.0 * std::f64::consts::PI).powi(2);
    let mut levels = Vec::new();
    for i in 0..n_e {
        let xi0 = e_lo + (i as f64 + 0.5) * de;
        for j in 0..n_p {
            let xi1 = p_lo + (j as f64 + 0.5) * dp;
            let w = kernel.fourier(&FourVector::new2(xi0, xi1)) * de * dp / two_pi_sq;
            if w > 0.0 {
                levels.push(OracleLevel { energy_gap: xi0, momentum: vec![xi1], coupling: w.sqrt() });
            }
        }
    }
    let space = FockSpace::new(lat, cutoff).unwrap();
    let psi = space.state_vector(state).unwrap();
    let two_point = |y1: &FourVector, y2: &FourVector| -> Complex64 {
        oracle_correlator(&space, &psi, &[*y1], &[*y2]).unwrap()
    };
    let oracle = qtp_core::fock::oracle_detection_probability(
        &sampling,
        &levels,
        &two_point,
        &x,
        (3.0, 3.0),
        (6, 6),
        (3.0, 3.0),
        (48, 48),
    );

    let bw = spectral_bandwidth(&model, state);
    let spec = DensityPlan::for_kernel(&kernel, &bw).unwrap().spec;
    let ev = DensityEvaluator::new(&model, state, kernel, spec).unwrap();
    let (dut, dux) = (1.0, 1.0);
    let mut produced = 0.0;
    for iut in 0..6 {
        for iux in 0..6 {
            let u = FourVector::new2(
                x.t - 3.0 + (iut as f64 + 0.5) * dut,
                x.spatial()[0] - 3.0 + (iux as f64 + 0.5) * dux,
            );
            let env = sampling.value(&u.sub(&x)).powi(2);
            produced += env * ev.density_exact(&u, &sampling).unwrap() * dut * dux;
        }
    }
    (produced - oracle.re).abs() / oracle.re.abs().max(1e-12)
}

#[test]
fn criterion_03_detection_probability_oracle() {
    let packet = WavePacket::new(vec![0.785], 0.4).unwrap();
    let mut worst = detection_rel_dev(&FieldState::Vacuum, 2);
    worst = worst.max(detection_rel_dev(&FieldState::Particles(vec![packet.clone()]), 3));
    let coherent = FieldState::Coherent { packet, amplitude: Complex64::new(0.25, -0.15) };
    worst = worst.max(detection_rel_dev(&coherent, 7));
    report(3, "detection-oracle", worst <= 1e-4, &format!("max rel dev {worst:.2e}"));
}

// -------------------------------------------------------------------------
// 4. Vacuum no-click bound for a gapped static detector.
// -------------------------------------------------------------------------
#[test]
fn criterion_04_vacuum_no_click() {
    let model = FieldModel::Lattice(lattice(2, 8.0));
    let omega = resonant_omega(8.0, 1.0);
    let kernel = DetectorKernel::new(Dim::Two, 0.3, omega, 0.4, 0.4, vec![0.0], 2.0).unwrap();
    let packet = WavePacket::new(vec![0.785], 0.4).unwrap();
    let one = FieldState::Particles(vec![packet]);

    let mut vac_max = 0.0f64;
    let mut one_max = 0.0f64;
    for i in 0..17 {
        let x = FourVector::new2(0.2, -4.0 + 0.5 * i as f64);
        vac_max = vac_max
            .max(lattice_density_exact(&kernel, &model, &FieldState::Vacuum, &x).unwrap().abs());
        one_max = one_max.max(lattice_density_exact(&kernel, &model, &one, &x).unwrap());
    }
    let ratio = vac_max / one_max;
    report(4, "vacuum-no-click", ratio <= 1e-6, &format!("vacuum/reference = {ratio:.2e}"));
}

// -------------------------------------------------------------------------
// 5. Broadband (intensity-detection) limit.
// -------------------------------------------------------------------------
#[test]
fn criterion_05_broadband_intensity_limit() {
    let model = FieldModel::Lattice(lattice(2, 8.0));
    let omega = resonant_omega(8.0, 1.0);
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

    let mut intensity = Vec::new();
    let mut density = Vec::new();
    for i in 0..15 {
        let p = FourVector::new2(0.3, -3.5 + 0.5 * i as f64);
        intensity.push(model.mode_function(&packet, norm, &p).unwrap().norm_sqr());
        let with = lattice_density_exact(&kernel, &model, &state, &p).unwrap();
        let vac = lattice_density_exact(&kernel, &model, &FieldState::Vacuum, &p).unwrap();
        density.push(with - vac);
    }
    let c = density.iter().zip(&intensity).map(|(p, i)| p * i).sum::<f64>()
        / intensity.iter().map(|i| i * i).sum::<f64>();
    let peak = intensity.iter().cloned().fold(0.0f64, f64::max);
    let mut worst = 0.0f64;
    for (p, i) in density.iter().zip(&intensity) {
        if *i >= 0.1 * peak {
            worst = worst.max((p - c * i).abs() / (c * i));
        }
    }
    report(5, "broadband-limit", c > 0.0 && worst <= 0.02, &format!("max rel dev {worst:.2e}"));
}

// -------------------------------------------------------------------------
// 6. Worldline-response (point-like narrowband) limit.
// -------------------------------------------------------------------------
#[test]
fn criterion_06_worldline_response_limit() {
    let model = FieldModel::Lattice(lattice(2, 8.0));
    let omega = resonant_omega(8.0, 1.0);
    let packet = WavePacket::new(vec![0.785], 0.2).unwrap();
    let state = FieldState::Coherent { packet, amplitude: Complex64::new(0.6, -0.4) };

    let total_time = 10.0 * std::f64::consts::PI / omega;
    let sigma_e = SQRT_2PI / total_time;
    let (sigma_p, coupling) = (40.0, 0.3);
    let kernel =
        DetectorKernel::new(Dim::Two, coupling, omega, sigma_e, sigma_e, vec![0.0], sigma_p)
            .unwrap();

    let density_at = |t: f64| -> f64 {
        let x = FourVector::new2(t, 0.0);
        lattice_density_exact(&kernel, &model, &state, &x).unwrap()
            - lattice_density_exact(&kernel, &model, &FieldState::Vacuum, &x).unwrap()
    };
    let n = 128usize;
    let h = total_time / n as f64;
    let mut integral = density_at(0.0) + density_at(total_time);
    for i in 1..n {
        integral += if i % 2 == 1 { 4.0 } else { 2.0 } * density_at(i as f64 * h);
    }
    integral *= h / 3.0;

    let wl = Worldline::static_at(FourVector::zero(Dim::Two));
    let reference = coupling
        * coupling
        * (SQRT_2PI / sigma_p)
        * (udw_response(&model, &state, &wl, omega, total_time).unwrap()
            - udw_response(&model, &FieldState::Vacuum, &wl, omega, total_time).unwrap());
    let rel = (integral - reference).abs() / reference.abs().max(1e-30);
    report(
        6,
        "worldline-limit",
        reference > 0.0 && rel <= 0.05,
        &format!("rel dev {rel:.2e}"),
    );
}

// -------------------------------------------------------------------------
// 7. Factorization for well-separated packets and local detectors.
// -------------------------------------------------------------------------
#[test]
fn criterion_07_factorization() {
    // Enough lattice modes that the packets are genuinely localized: a
    // center momentum at the edge of mode space cannot be resolved in
    // position and fakes long-range correlations.
    let model = FieldModel::Lattice(lattice(8, 16.0));
    let omega = resonant_omega(16.0, 4.0);
    let k = 4.0 * 2.0 * std::f64::consts::PI / 16.0;
    let left = WavePacket::new(vec![k], 0.5).unwrap().at_position(vec![-4.0]);
    let right = WavePacket::new(vec![-k], 0.5).unwrap().at_position(vec![4.0]);
    let state = FieldState::Particles(vec![left, right]);

    let det = |x: f64| DetectorModel {
        ref_point: FourVector::new2(0.0, x),
        gap: omega,
        sigma_e: 1.5,
        sigma_p: 2.0,
        coupling: 0.3,
        sampling: SamplingFunction::new(10.0, 10.0, FourVector::new2(0.0, x)).unwrap(),
        pointer: PointerSpec::None,
    };
    let window = |x0: f64| {
        OutcomeSpace::new(
            GridSpec { origin: vec![-0.5, x0], step: vec![0.5, 0.5], shape: vec![2, 2] },
            1,
        )
        .unwrap()
    };
    // The relative window must cover the kernel decay (sigma_e = 1.5 needs
    // reach past 5) while the step keeps the spectrum alias-free.
    let req = HierarchyRequest {
        detectors: vec![det(-4.0), det(4.0)],
        spaces: vec![window(-4.5), window(3.5)],
        levels: 2,
        rel_grid: Some(GridSpec::symmetric(&[5.5, 5.5], &[84, 84]).unwrap()),
    };
    let h = build_hierarchy(&req, &model, &state).unwrap();
    let l2 = h.level2.as_ref().unwrap();
    let (n0, n1) = (h.spaces[0].n_outcomes(), h.spaces[1].n_outcomes());
    let peak = l2.joint.iter().cloned().fold(0.0f64, f64::max);
    let mut worst = 0.0f64;
    for z0 in 0..n0 {
        for z1 in 0..n1 {
            let dev =
                (l2.joint[z0 * n1 + z1] - h.level1[0].values[z0] * h.level1[1].values[z1]).abs();
            worst = worst.max(dev / peak);
        }
    }
    let cond = conditioned_hierarchy(&h, 1e-12).unwrap();
    let s_c = correlation_entropy(&cond).unwrap();
    report(
        7,
        "factorization",
        worst <= 0.02 && s_c <= 0.01,
        &format!("max |P2 - P1 P1|/peak = {worst:.2e}, S_C = {s_c:.2e} nats"),
    );
}

// -------------------------------------------------------------------------
// 8. Generating functional: hierarchy contraction vs direct correlator route.
// -------------------------------------------------------------------------
#[test]
fn criterion_08_generating_functional() {
    let model = FieldModel::Lattice(lattice(2, 8.0));
    let packet = WavePacket::new(vec![0.785], 0.4).unwrap();
    let state = FieldState::Particles(vec![packet]);
    let det = |gap: f64| DetectorModel {
        ref_point: FourVector::zero(Dim::Two),
        gap,
        sigma_e: 2.0,
        sigma_p: 2.0,
        coupling: 0.3,
        // Wide sampling keeps every route in the scale-separated regime, so
        // the hierarchy and the direct-contraction route share the same
        // unsampled densities.
        sampling: SamplingFunction::new(10.0, 10.0, FourVector::zero(Dim::Two)).unwrap(),
        pointer: PointerSpec::None,
    };
    let space = |x0: f64| {
        OutcomeSpace::new(
            GridSpec { origin: vec![-0.5, x0], step: vec![0.5, 0.5], shape: vec![2, 2] },
            1,
        )
        .unwrap()
    };
    let detectors = vec![det(1.27), det(1.5)];
    let spaces = vec![space(-0.5), space(1.5)];
    let rel = GridSpec::symmetric(&[4.0, 4.0], &[60, 60]).unwrap();
    let req = HierarchyRequest {
        detectors: detectors.clone(),
        spaces: spaces.clone(),
        levels: 2,
        rel_grid: Some(rel.clone()),
    };
    let h = build_hierarchy(&req, &model, &state).unwrap();
    let sources = vec![vec![0.7, 0.0, 0.0, -0.3], vec![0.0, 0.4, 0.0, 0.0]];
    let za = generating_functional(&h, &sources).unwrap();
    let zb =
        generating_functional_via_joint(&detectors, &model, &state, &spaces, &sources, &rel)
            .unwrap();
    let dev = (za - zb).abs();
    report(8, "generating-functional", dev <= 1e-8, &format!("|Z_a - Z_b| = {dev:.2e}"));
}

// -------------------------------------------------------------------------
// 9. Classicality diagnostics.
// -------------------------------------------------------------------------
fn unit_space(n_bins: usize) -> OutcomeSpace {
    OutcomeSpace::new(
        GridSpec { origin: vec![0.0, 0.0], step: vec![1.0, 1.0], shape: vec![1, 1] },
        n_bins,
    )
    .unwrap()
}

fn hierarchy_from_table(q: &[[f64; 3]; 3]) -> Hierarchy {
    let (s0, s1) = (unit_space(2), unit_space(2));
    let mut level1 = Vec::new();
    let p10 = vec![q[0].iter().sum::<f64>(), q[1].iter().sum::<f64>()];
    let p11 = vec![q[0][0] + q[1][0] + q[2][0], q[0][1] + q[1][1] + q[2][1]];
    for (s, vals) in [(s0.clone(), p10), (s1.clone(), p11)] {
        let mut g = ProbabilityGrid::zeros(s, 2);
        g.values = vals;
        level1.push(g);
    }
    Hierarchy {
        spaces: vec![s0, s1],
        level1,
        level2: Some(JointDistribution {
            joint: vec![q[0][0], q[0][1], q[1][0], q[1][1]],
            only_first: vec![q[0][2], q[1][2]],
            only_second: vec![q[2][0], q[2][1]],
            neither: q[2][2],
            subtraction_deficit: 0.0,
        }),
        level3: None,
        normalization: Normalization::Raw,
        convention: "classical test table".into(),
    }
}

#[test]
fn criterion_09_classicality_diagnostics() {
    // Hand-built classical process: explicit joint table over outcomes and
    // no-detection sectors of a two-step stochastic chain.
    let classical = hierarchy_from_table(&[
        [0.10, 0.15, 0.05],
        [0.20, 0.10, 0.20],
        [0.05, 0.05, 0.10],
    ]);
    let s_q_classical = kolmogorov_defect(&classical).unwrap().s_q;

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut all_nonnegative = true;
    for _ in 0..100 {
        let mut q = [[0.0f64; 3]; 3];
        let mut total = 0.0;
        for row in &mut q {
            for v in row.iter_mut() {
                *v = rng.gen_range(0.0..1.0);
                total += *v;
            }
        }
        for row in &mut q {
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let h = hierarchy_from_table(&q);
        let s_q = kolmogorov_defect(&h).unwrap().s_q;
        let s_c = correlation_entropy(&conditioned_hierarchy(&h, 1e-12).unwrap()).unwrap();
        all_nonnegative &= s_q >= 0.0 && s_c >= -1e-12;
    }

    let space = OutcomeSpace::new(
        GridSpec { origin: vec![0.0, 0.0], step: vec![1.0, 1.0], shape: vec![2, 2] },
        1,
    )
    .unwrap();
    let mut uniform = ProbabilityGrid::zeros(space, 2);
    uniform.values = vec![0.25; 4];
    uniform.normalization = Normalization::Conditioned;
    let s_b = boltzmann_entropy(&uniform).unwrap();

    report(
        9,
        "classicality-diagnostics",
        s_q_classical <= 1e-10 && all_nonnegative && s_b == 4.0f64.ln(),
        &format!("classical S_Q = {s_q_classical:.2e}, uniform S_B - ln4 = {:.2e}", s_b - 4.0f64.ln()),
    );
}

// -------------------------------------------------------------------------
// 10. FFT convolution / frequency transform vs direct sums; midpoint order.
// -------------------------------------------------------------------------
#[test]
fn criterion_10_numerics() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut cplx =
        |n: usize| -> Vec<Complex64> {
            (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
        };
    // Convolution on randomized 2D arrays.
    let (a, b) = (cplx(20), cplx(18));
    let (fast, shape) = fft_convolve_raw(&a, &[5, 4], &b, &[3, 6]).unwrap();
    let (slow, shape2) = direct_convolve_raw(&a, &[5, 4], &b, &[3, 6]).unwrap();
    assert_eq!(shape, shape2);
    let scale = slow.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    let conv_dev = fast
        .iter()
        .zip(&slow)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0f64, f64::max)
        / scale;

    // Frequency transform vs a literal phase sum on a randomized grid.
    let spec = GridSpec::symmetric(&[2.0, 2.0], &[8, 8]).unwrap();
    let data = cplx(spec.len());
    let grid = ComplexGrid { spec: spec.clone(), data };
    let w = wigner_transform(&grid, f64::INFINITY).unwrap();
    let mut wig_dev = 0.0f64;
    let mut wig_scale = 0.0f64;
    let dv = spec.cell_volume();
    for lin in 0..grid.data.len() {
        let fidx = spec.unindex(lin);
        let mut direct = Complex64::new(0.0, 0.0);
        for src in 0..grid.data.len() {
            let idx = spec.unindex(src);
            let y = spec.point(&idx);
            let phase = w.freqs[0][fidx[0]] * y[0] - w.freqs[1][fidx[1]] * y[1];
            direct += grid.data[src] * Complex64::new(0.0, phase).exp();
        }
        direct *= dv;
        wig_scale = wig_scale.max(direct.norm());
        wig_dev = wig_dev.max((w.data[lin] - direct).norm());
    }
    wig_dev /= wig_scale;

    // Convergence order of the cell-center (midpoint) rule used by all grid
    // binning: nominal order 2 on a smooth non-periodic integrand.
    let midpoint = |n: usize| -> f64 {
        let h = 1.0 / n as f64;
        (0..n).map(|i| ((i as f64 + 0.5) * h).exp() * h).sum()
    };
    let exact = std::f64::consts::E - 1.0;
    let (e8, e16, e32) =
        ((midpoint(8) - exact).abs(), (midpoint(16) - exact).abs(), (midpoint(32) - exact).abs());
    let order_a = (e8 / e16).log2();
    let order_b = (e16 / e32).log2();
    let orders_ok = (order_a - 2.0).abs() <= 0.4 && (order_b - 2.0).abs() <= 0.4;

    report(
        10,
        "numerics",
        conv_dev <= 1e-10 && wig_dev <= 1e-10 && orders_ok,
        &format!(
            "conv dev {conv_dev:.2e}, transform dev {wig_dev:.2e}, orders {order_a:.2}/{order_b:.2}"
        ),
    );
}

// -------------------------------------------------------------------------
// 11. Coupling-scaling law: P_n scales as c^{2n}.
// -------------------------------------------------------------------------
#[test]
fn criterion_11_coupling_scaling() {
    let model = FieldModel::Lattice(lattice(2, 8.0));
    let packet = WavePacket::new(vec![0.785], 0.4).unwrap();
    let state = FieldState::Particles(vec![packet]);
    // Fine enough in step that both contraction orders stay alias-free; a
    // spectrally clean three-detector tensor grid would exceed the
    // evaluation budget, so the scaling law is checked at the orders the
    // grid engine supports (the library refuses level-3 grids for the same
    // reason).
    let rel = GridSpec::symmetric(&[4.0, 4.0], &[60, 60]).unwrap();
    let det = |gap: f64, coupling: f64| DetectorModel {
        ref_point: FourVector::zero(Dim::Two),
        gap,
        sigma_e: 2.0,
        sigma_p: 2.0,
        coupling,
        sampling: SamplingFunction::new(2.0, 2.0, FourVector::zero(Dim::Two)).unwrap(),
        pointer: PointerSpec::None,
    };
    let gaps = [1.27, 1.5];
    let events = [
        (FourVector::new2(0.1, 0.2), 0usize),
        (FourVector::new2(-0.2, 0.5), 0),
    ];
    let c = 1.3f64;
    let mut worst = 0.0f64;
    for n in 1..=2usize {
        let base: Vec<DetectorModel> = gaps[..n].iter().map(|&g| det(g, 0.3)).collect();
        let scaled: Vec<DetectorModel> = gaps[..n].iter().map(|&g| det(g, 0.3 * c)).collect();
        let p0 = joint_density_with_grid(&base, &model, &state, &events[..n], &rel).unwrap();
        let p1 = joint_density_with_grid(&scaled, &model, &state, &events[..n], &rel).unwrap();
        let expected = c.powi(2 * n as i32);
        worst = worst.max((p1 / p0 - expected).abs() / expected);
    }
    report(11, "coupling-scaling", worst <= 1e-10, &format!("max rel dev {worst:.2e}"));
}
