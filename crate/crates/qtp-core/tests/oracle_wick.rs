//! Lock the combinatorial contour-correlator evaluation against literal
//! operator products on a truncated Fock space. Both sides run on the same
//! momentum lattice, so any disagreement is a contraction-rule bug, not a
//! discretization artifact.

use num_complex::Complex64;
use qtp_core::field::{FieldModel, FieldState, WavePacket};
use qtp_core::fock::{oracle_correlator, FockSpace, LatticeModel};
use qtp_core::geometry::{Dim, FourVector};
use qtp_core::wick::{evaluate_correlator, CorrelatorSpec};

const TOL: f64 = 1e-6;

fn lattice(max_mode: i32) -> LatticeModel {
    LatticeModel::new(Dim::Two, 1.0, 8.0, max_mode).unwrap()
}

fn pts(coords: &[(f64, f64)]) -> Vec<FourVector> {
    coords.iter().map(|&(t, x)| FourVector::new2(t, x)).collect()
}

fn check(
    lat: LatticeModel,
    cutoff: u8,
    state: FieldState,
    forward: &[(f64, f64)],
    backward: &[(f64, f64)],
) {
    let space = FockSpace::new(lat.clone(), cutoff).unwrap();
    let psi = space.state_vector(&state).unwrap();
    let fwd = pts(forward);
    let bwd = pts(backward);
    let oracle = oracle_correlator(&space, &psi, &bwd, &fwd).unwrap();
    let model = FieldModel::Lattice(lat);
    let wick =
        evaluate_correlator(&CorrelatorSpec::new(fwd, bwd, state.clone()), &model).unwrap();
    let scale = oracle.norm().max(1e-10);
    assert!(
        (wick - oracle).norm() <= TOL * scale,
        "state {state:?} fwd {forward:?} bwd {backward:?}: wick {wick} vs oracle {oracle} (rel {:.3e})",
        (wick - oracle).norm() / scale
    );
}

#[test]
fn vacuum_n1_all_branch_splits() {
    let a = (0.4, 0.7);
    let b = (-0.3, -0.2);
    check(lattice(3), 2, FieldState::Vacuum, &[a, b], &[]);
    check(lattice(3), 2, FieldState::Vacuum, &[], &[a, b]);
    check(lattice(3), 2, FieldState::Vacuum, &[a], &[b]);
    check(lattice(3), 2, FieldState::Vacuum, &[b], &[a]);
}

#[test]
fn vacuum_n2_balanced() {
    check(
        lattice(3),
        4,
        FieldState::Vacuum,
        &[(0.9, 0.1), (-0.2, 0.6)],
        &[(0.3, -0.5), (-0.7, 0.4)],
    );
}

#[test]
fn vacuum_n3_balanced() {
    check(
        lattice(2),
        6,
        FieldState::Vacuum,
        &[(0.9, 0.1), (-0.2, 0.6), (0.5, -0.9)],
        &[(0.3, -0.5), (-0.7, 0.4), (-1.1, 1.2)],
    );
}

#[test]
fn vacuum_unbalanced() {
    check(lattice(3), 4, FieldState::Vacuum, &[(0.9, 0.1), (-0.2, 0.6), (0.5, -0.9)], &[(0.3, -0.5)]);
}

#[test]
fn one_particle_n1_and_n2() {
    let packet = WavePacket::new(vec![0.8], 0.5).unwrap();
    let state = FieldState::Particles(vec![packet]);
    check(lattice(3), 3, state.clone(), &[(0.4, 0.7)], &[(-0.3, -0.2)]);
    check(
        lattice(3),
        5,
        state,
        &[(0.9, 0.1), (-0.2, 0.6)],
        &[(0.3, -0.5), (-0.7, 0.4)],
    );
}

#[test]
fn one_particle_moving_packet_off_origin() {
    let packet = WavePacket::new(vec![-1.2], 0.4).unwrap().at_position(vec![1.5]);
    let state = FieldState::Particles(vec![packet]);
    check(
        lattice(3),
        5,
        state,
        &[(0.6, 1.0), (-0.1, 2.0)],
        &[(0.2, 0.5), (-0.8, 1.4)],
    );
}

#[test]
fn two_particle_n1_and_n2() {
    let p1 = WavePacket::new(vec![0.8], 0.5).unwrap();
    let p2 = WavePacket::new(vec![-0.8], 0.5).unwrap().at_position(vec![0.7]);
    let state = FieldState::Particles(vec![p1, p2]);
    check(lattice(2), 4, state.clone(), &[(0.4, 0.7)], &[(-0.3, -0.2)]);
    check(
        lattice(2),
        6,
        state,
        &[(0.9, 0.1), (-0.2, 0.6)],
        &[(0.3, -0.5), (-0.7, 0.4)],
    );
}

#[test]
fn overlapping_two_particle_normalization() {
    // Strongly overlapping packets exercise the Gram-permanent
    // normalization on both sides.
    let p1 = WavePacket::new(vec![0.5], 0.5).unwrap();
    let p2 = WavePacket::new(vec![0.7], 0.5).unwrap();
    let state = FieldState::Particles(vec![p1, p2]);
    check(lattice(2), 4, state, &[(0.4, 0.7)], &[(-0.3, -0.2)]);
}

#[test]
fn coherent_n1_and_n2() {
    let packet = WavePacket::new(vec![0.6], 0.5).unwrap();
    let state = FieldState::Coherent {
        packet: packet.clone(),
        amplitude: Complex64::new(0.6, -0.4),
    };
    check(lattice(2), 12, state.clone(), &[(0.4, 0.7)], &[(-0.3, -0.2)]);
    check(
        lattice(2),
        14,
        state,
        &[(0.9, 0.1), (-0.2, 0.6)],
        &[(0.3, -0.5), (-0.7, 0.4)],
    );
}

#[test]
fn coherent_odd_insertion_count() {
    // Odd correlators are nonzero on coherent states only; the classical
    // singleton expansion must reproduce the literal product.
    let packet = WavePacket::new(vec![0.6], 0.5).unwrap();
    let state = FieldState::Coherent { packet, amplitude: Complex64::new(0.8, 0.0) };
    check(lattice(2), 13, state.clone(), &[(0.4, 0.7)], &[]);
    check(lattice(2), 13, state, &[(0.4, 0.7), (-0.2, 0.1)], &[(0.1, -0.6)]);
}
