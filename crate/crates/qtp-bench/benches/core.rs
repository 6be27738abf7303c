//! Microbenchmarks of the hot evaluation paths: two-point functions,
//! contraction plans, spectral transforms, and pointwise densities.

use criterion::{criterion_group, criterion_main, Criterion};
use num_complex::Complex64;
use std::hint::black_box;

use qtp_core::detector::{DetectorModel, PointerSpec};
use qtp_core::fftgrid::{wigner_transform, ComplexGrid, GridSpec};
use qtp_core::field::{state_two_point, FieldModel, FieldState, WavePacket};
use qtp_core::fock::LatticeModel;
use qtp_core::geometry::{Dim, FourVector, SamplingFunction};
use qtp_core::probability::{
    spectral_bandwidth, DensityEvaluator, DensityPlan,
};
use qtp_core::wick::{evaluate_correlator, CorrelatorSpec};

fn lattice_model() -> FieldModel {
    FieldModel::Lattice(LatticeModel::new(Dim::Two, 1.0, 8.0, 2).unwrap())
}

fn packet_state() -> FieldState {
    FieldState::Particles(vec![WavePacket::new(vec![0.785], 0.4).unwrap()])
}

fn detector() -> DetectorModel {
    DetectorModel {
        ref_point: FourVector::zero(Dim::Two),
        gap: 1.27,
        sigma_e: 2.0,
        sigma_p: 2.0,
        coupling: 0.3,
        sampling: SamplingFunction::new(10.0, 10.0, FourVector::zero(Dim::Two)).unwrap(),
        pointer: PointerSpec::None,
    }
}

fn bench_two_point(c: &mut Criterion) {
    let model = lattice_model();
    let state = packet_state();
    let a = FourVector::new2(0.1, 0.2);
    let b = FourVector::new2(0.4, -0.3);
    c.bench_function("state_two_point_lattice", |bench| {
        bench.iter(|| state_two_point(black_box(&state), &model, &a, &b).unwrap())
    });
}

fn bench_correlator(c: &mut Criterion) {
    let model = lattice_model();
    let state = packet_state();
    let spec = CorrelatorSpec::new(
        vec![FourVector::new2(0.3, -0.1), FourVector::new2(0.5, 0.4)],
        vec![FourVector::new2(0.1, 0.2), FourVector::new2(0.0, -0.4)],
        state,
    );
    c.bench_function("evaluate_correlator_4_slots", |bench| {
        bench.iter(|| evaluate_correlator(black_box(&spec), &model).unwrap())
    });
}

fn bench_wigner_transform(c: &mut Criterion) {
    let spec = GridSpec::symmetric(&[4.0, 4.0], &[64, 64]).unwrap();
    let grid = ComplexGrid::from_fn(spec, |x| {
        let r2: f64 = x.iter().map(|&v| v * v).sum();
        Complex64::new((-0.5 * r2).exp(), 0.3 * (-0.4 * r2).exp())
    });
    c.bench_function("wigner_transform_64x64", |bench| {
        bench.iter(|| wigner_transform(black_box(&grid), f64::INFINITY).unwrap())
    });
}

fn bench_density(c: &mut Criterion) {
    let model = lattice_model();
    let state = packet_state();
    let det = detector();
    let kernel = det.kernel(0).unwrap();
    let bw = spectral_bandwidth(&model, &state);
    let spec = DensityPlan::for_kernel(&kernel, &bw).unwrap().spec;
    let ev = DensityEvaluator::new(&model, &state, kernel, spec).unwrap();
    let x = FourVector::new2(0.1, 0.2);
    c.bench_function("density_point_resonant", |bench| {
        bench.iter(|| ev.density(black_box(&x)).unwrap())
    });
}

fn configure() -> Criterion {
    Criterion::default().sample_size(10)
}

criterion_group! {
    name = benches;
    config = configure();
    targets = bench_two_point, bench_correlator, bench_wigner_transform, bench_density
}
criterion_main!(benches);
