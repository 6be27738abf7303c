//! Contour-ordered 2n-point correlators for Gaussian (free-field) states by
//! Wick contraction with branch-dependent propagators.
//!
//! A correlator is <psi| Trev[phi(x'_1)..phi(x'_m)] T[phi(x_n)..phi(x_1)] |psi>
//! with the reverse-time-ordered (backward-branch) block standing to the left
//! of the time-ordered (forward-branch) block. The contraction rules:
//!
//! * Forward-Forward  -> Feynman (time-ordered) propagator
//! * Backward-Backward -> Dyson (anti-time-ordered) = conj(Feynman)
//! * mixed            -> Wightman with the backward point as the left operand
//!
//! Particle-state legs are external slots: each packet in the bra
//! contributes an annihilation leg standing left of all field insertions,
//! each packet in the ket a creation leg standing right of them. Legs
//! contract to mode functions / packet overlaps; same-side leg pairs vanish.
//! Coherent states displace every field insertion by the classical field,
//! handled as an expansion over "classical singleton" slots.

use num_complex::Complex64;

use crate::error::{QtpError, Result};
use crate::field::{permanent, FieldModel, FieldState};
use crate::geometry::FourVector;

/// Default plan cap: (2N-1)!! with N = 5 pairs.
pub const DEFAULT_PLAN_CAP: usize = 945;

/// Contour branch of a field insertion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchLabel {
    /// Time-ordered block (T).
    Forward,
    /// Reverse-time-ordered block (Trev), standing left of the forward block.
    Backward,
}

/// Which side of the expectation value a particle leg comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LegSide {
    /// From the bra: an annihilation operator left of all field insertions.
    AnnihilationLeft,
    /// From the ket: a creation operator right of all field insertions.
    CreationRight,
}

/// One operator in the canonically ordered slot sequence.
#[derive(Clone, Debug)]
pub enum OperatorSlot {
    FieldInsertion { point: FourVector, branch: BranchLabel },
    /// `packet` indexes the packet list of the particle state.
    ParticleLeg { packet: usize, side: LegSide },
}

/// A contour correlator request.
#[derive(Clone, Debug)]
pub struct CorrelatorSpec {
    /// Arguments of the time-ordered block.
    pub forward_points: Vec<FourVector>,
    /// Arguments of the reverse-time-ordered block.
    pub backward_points: Vec<FourVector>,
    pub state: FieldState,
    pub plan_cap: usize,
}

impl CorrelatorSpec {
    pub fn new(
        forward_points: Vec<FourVector>,
        backward_points: Vec<FourVector>,
        state: FieldState,
    ) -> Self {
        CorrelatorSpec { forward_points, backward_points, state, plan_cap: DEFAULT_PLAN_CAP }
    }

    pub fn with_plan_cap(mut self, cap: usize) -> Self {
        self.plan_cap = cap;
        self
    }

    fn validate(&self) -> Result<()> {
        self.state.validate()?;
        let all: Vec<&FourVector> =
            self.forward_points.iter().chain(&self.backward_points).collect();
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                if all[i] == all[j] {
                    return Err(QtpError::CoincidentPoints);
                }
            }
        }
        Ok(())
    }

    /// Canonical slot sequence: annihilation legs, backward fields, forward
    /// fields, creation legs.
    pub fn slots(&self) -> Vec<OperatorSlot> {
        let mut slots = Vec::new();
        if let FieldState::Particles(ps) = &self.state {
            for i in 0..ps.len() {
                slots.push(OperatorSlot::ParticleLeg { packet: i, side: LegSide::AnnihilationLeft });
            }
        }
        for &p in &self.backward_points {
            slots.push(OperatorSlot::FieldInsertion { point: p, branch: BranchLabel::Backward });
        }
        for &p in &self.forward_points {
            slots.push(OperatorSlot::FieldInsertion { point: p, branch: BranchLabel::Forward });
        }
        if let FieldState::Particles(ps) = &self.state {
            for i in 0..ps.len() {
                slots.push(OperatorSlot::ParticleLeg { packet: i, side: LegSide::CreationRight });
            }
        }
        slots
    }
}

/// How a contracted pair is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PropagatorTag {
    /// Forward-Forward: time-ordered.
    Feynman,
    /// Backward-Backward: anti-time-ordered.
    Dyson,
    /// Mixed: G+(backward point, forward point).
    WightmanBackwardForward,
    /// Field insertion with a creation leg: u_packet(x).
    ModeFunction,
    /// Annihilation leg with a field insertion: conj(u_packet(x)).
    ModeFunctionConjugate,
    /// Annihilation leg with a creation leg: packet overlap.
    Overlap,
}

/// A perfect matching of the slot sequence, plus (for coherent states) the
/// slots evaluated as the classical field instead of being paired.
#[derive(Clone, Debug)]
pub struct ContractionPlan {
    /// (left slot index, right slot index, tag), left < right.
    pub pairings: Vec<(usize, usize, PropagatorTag)>,
    pub classical: Vec<usize>,
}

/// Tag for a pair of slots; `None` when the contraction vanishes
/// identically (same-side leg pairs).
fn pair_tag(left: &OperatorSlot, right: &OperatorSlot) -> Option<PropagatorTag> {
    use OperatorSlot::*;
    match (left, right) {
        (FieldInsertion { branch: bl, .. }, FieldInsertion { branch: br, .. }) => {
            Some(match (bl, br) {
                (BranchLabel::Forward, BranchLabel::Forward) => PropagatorTag::Feynman,
                (BranchLabel::Backward, BranchLabel::Backward) => PropagatorTag::Dyson,
                // Canonical ordering puts backward slots first; a mixed pair
                // is always (backward, forward).
                _ => PropagatorTag::WightmanBackwardForward,
            })
        }
        (ParticleLeg { side: LegSide::AnnihilationLeft, .. }, FieldInsertion { .. }) => {
            Some(PropagatorTag::ModeFunctionConjugate)
        }
        (FieldInsertion { .. }, ParticleLeg { side: LegSide::CreationRight, .. }) => {
            Some(PropagatorTag::ModeFunction)
        }
        (
            ParticleLeg { side: LegSide::AnnihilationLeft, .. },
            ParticleLeg { side: LegSide::CreationRight, .. },
        ) => Some(PropagatorTag::Overlap),
        _ => None,
    }
}

fn double_factorial_pairs(n_slots: usize) -> usize {
    // (n_slots - 1)!! pair matchings.
    let mut acc = 1usize;
    let mut k = n_slots.saturating_sub(1);
    while k > 1 {
        acc = acc.saturating_mul(k);
        k -= 2;
    }
    acc
}

/// All contraction plans for a spec. Plans whose every pairing has a valid
/// tag are returned; matchings hitting a vanishing pair are dropped.
/// Coherent-state specs additionally allow classical singletons.
pub fn enumerate_plans(spec: &CorrelatorSpec) -> Result<Vec<ContractionPlan>> {
    spec.validate()?;
    let slots = spec.slots();
    let coherent = matches!(spec.state, FieldState::Coherent { .. });
    if !coherent && slots.len() % 2 != 0 {
        return Err(QtpError::OddSlotCount);
    }
    let bound = double_factorial_pairs(slots.len() + slots.len() % 2);
    if bound > spec.plan_cap {
        return Err(QtpError::PlanCapExceeded { count: bound, cap: spec.plan_cap });
    }
    let mut plans = Vec::new();
    let mut used = vec![false; slots.len()];
    let mut current = ContractionPlan { pairings: Vec::new(), classical: Vec::new() };
    recurse_plans(&slots, coherent, &mut used, &mut current, &mut plans);
    Ok(plans)
}

fn recurse_plans(
    slots: &[OperatorSlot],
    coherent: bool,
    used: &mut Vec<bool>,
    current: &mut ContractionPlan,
    out: &mut Vec<ContractionPlan>,
) {
    let first = match used.iter().position(|u| !u) {
        Some(i) => i,
        None => {
            out.push(current.clone());
            return;
        }
    };
    used[first] = true;
    if coherent {
        current.classical.push(first);
        recurse_plans(slots, coherent, used, current, out);
        current.classical.pop();
    }
    for j in (first + 1)..slots.len() {
        if used[j] {
            continue;
        }
        if let Some(tag) = pair_tag(&slots[first], &slots[j]) {
            used[j] = true;
            current.pairings.push((first, j, tag));
            recurse_plans(slots, coherent, used, current, out);
            current.pairings.pop();
            used[j] = false;
        }
    }
    used[first] = false;
}

/// Branch-dependent two-point contraction of two field insertions.
pub fn branch_propagator(
    model: &FieldModel,
    left: &OperatorSlot,
    right: &OperatorSlot,
) -> Result<Complex64> {
    let (xl, bl) = match left {
        OperatorSlot::FieldInsertion { point, branch } => (point, branch),
        _ => return Err(QtpError::InvalidModel("branch_propagator needs field insertions".into())),
    };
    let (xr, br) = match right {
        OperatorSlot::FieldInsertion { point, branch } => (point, branch),
        _ => return Err(QtpError::InvalidModel("branch_propagator needs field insertions".into())),
    };
    if xl == xr {
        return Err(QtpError::CoincidentPoints);
    }
    match (bl, br) {
        (BranchLabel::Forward, BranchLabel::Forward) => feynman(model, xl, xr),
        (BranchLabel::Backward, BranchLabel::Backward) => Ok(feynman(model, xl, xr)?.conj()),
        (BranchLabel::Backward, BranchLabel::Forward) => model.wightman(xl, xr),
        (BranchLabel::Forward, BranchLabel::Backward) => model.wightman(xr, xl),
    }
}

/// Time-ordered propagator: later operator leftmost. At equal times the two
/// points are spacelike and G+ is symmetric, so the branch choice is moot.
fn feynman(model: &FieldModel, x: &FourVector, y: &FourVector) -> Result<Complex64> {
    if x.t >= y.t {
        model.wightman(x, y)
    } else {
        model.wightman(y, x)
    }
}

/// Evaluate a contour correlator by summing all contraction plans.
/// Normalized by <psi|psi> for particle states; for n = 1 this reduces to
/// the state two-point function with the backward argument leftmost.
pub fn evaluate_correlator(spec: &CorrelatorSpec, model: &FieldModel) -> Result<Complex64> {
    spec.validate()?;
    let slots = spec.slots();
    if !matches!(spec.state, FieldState::Coherent { .. }) && slots.len() % 2 != 0 {
        // Odd operator count on a parity-even state.
        return Ok(Complex64::new(0.0, 0.0));
    }
    let plans = enumerate_plans(spec)?;

    // Pre-compute the contraction primitives.
    let (norms, packets): (Vec<f64>, Vec<_>) = match &spec.state {
        FieldState::Particles(ps) => {
            let ns: Vec<f64> = ps.iter().map(|p| model.packet_norm(p)).collect::<Result<_>>()?;
            (ns, ps.clone())
        }
        _ => (Vec::new(), Vec::new()),
    };
    let mut gram = vec![vec![Complex64::new(0.0, 0.0); packets.len()]; packets.len()];
    for i in 0..packets.len() {
        for j in 0..packets.len() {
            gram[i][j] = model.packet_overlap(&packets[i], norms[i], &packets[j], norms[j])?;
        }
    }
    // Mode functions at every field point for every packet.
    let field_points: Vec<FourVector> = slots
        .iter()
        .filter_map(|s| match s {
            OperatorSlot::FieldInsertion { point, .. } => Some(*point),
            _ => None,
        })
        .collect();
    let mut modes = vec![vec![Complex64::new(0.0, 0.0); field_points.len()]; packets.len()];
    for (pi, p) in packets.iter().enumerate() {
        for (xi, x) in field_points.iter().enumerate() {
            modes[pi][xi] = model.mode_function(p, norms[pi], x)?;
        }
    }
    let point_index = |pt: &FourVector| field_points.iter().position(|q| q == pt).expect("indexed");

    // Classical field of the coherent state at a point.
    let classical_value = |pt: &FourVector| -> Result<Complex64> {
        if let FieldState::Coherent { packet, amplitude } = &spec.state {
            let c = model.packet_norm(packet)?;
            let u = model.mode_function(packet, c, pt)? * amplitude;
            Ok(u + u.conj())
        } else {
            Ok(Complex64::new(0.0, 0.0))
        }
    };

    let mut total = Complex64::new(0.0, 0.0);
    for plan in &plans {
        let mut prod = Complex64::new(1.0, 0.0);
        for &slot_idx in &plan.classical {
            if let OperatorSlot::FieldInsertion { point, .. } = &slots[slot_idx] {
                prod *= classical_value(point)?;
            }
        }
        for &(i, j, tag) in &plan.pairings {
            let v = match tag {
                PropagatorTag::Feynman
                | PropagatorTag::Dyson
                | PropagatorTag::WightmanBackwardForward => {
                    branch_propagator(model, &slots[i], &slots[j])?
                }
                PropagatorTag::ModeFunctionConjugate => {
                    let (pk, pt) = leg_field(&slots[i], &slots[j]);
                    modes[pk][point_index(&pt)].conj()
                }
                PropagatorTag::ModeFunction => {
                    let (pk, pt) = leg_field(&slots[j], &slots[i]);
                    modes[pk][point_index(&pt)]
                }
                PropagatorTag::Overlap => {
                    let (a, b) = match (&slots[i], &slots[j]) {
                        (
                            OperatorSlot::ParticleLeg { packet: a, .. },
                            OperatorSlot::ParticleLeg { packet: b, .. },
                        ) => (*a, *b),
                        _ => unreachable!("overlap tag on non-leg pair"),
                    };
                    gram[a][b]
                }
            };
            prod *= v;
        }
        total += prod;
    }
    if matches!(spec.state, FieldState::Particles(_)) {
        total /= permanent(&gram);
    }
    Ok(total)
}

fn leg_field(leg: &OperatorSlot, field: &OperatorSlot) -> (usize, FourVector) {
    match (leg, field) {
        (OperatorSlot::ParticleLeg { packet, .. }, OperatorSlot::FieldInsertion { point, .. }) => {
            (*packet, *point)
        }
        _ => unreachable!("mismatched leg/field slots"),
    }
}
