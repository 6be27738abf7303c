//! Information-theoretic diagnostics on detection probability hierarchies:
//! Boltzmann entropy of a single-detector distribution, the Kolmogorov
//! additivity defect quantifying irreducibly quantum correlations between
//! two detectors, and the correlation entropy of the joint distribution.

use serde::{Deserialize, Serialize};

use crate::error::{QtpError, Result};
use crate::grid::{Hierarchy, Normalization, ProbabilityGrid};
use crate::probability::conditioned_hierarchy;

/// x ln x with the continuity convention 0 ln 0 = 0.
fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Order-independent sum: sorting the terms first makes every reduction
/// bit-identical under any relabeling of the outcomes that produced them.
fn stable_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Boltzmann entropy of a conditioned single-detector distribution,
///   S_B = - sum_z P(z) ln P(z) * w,
/// the measure-weighted (differential) entropy in nats: stable under grid
/// refinement for smooth densities, and equal to the discrete Shannon
/// entropy when the cell measure is one.
pub fn boltzmann_entropy(grid: &ProbabilityGrid) -> Result<f64> {
    if grid.normalization != Normalization::Conditioned {
        return Err(QtpError::InvalidModel(
            "Boltzmann entropy needs a conditioned (normalized) distribution".into(),
        ));
    }
    let mass = grid.total_mass();
    if (mass - 1.0).abs() > 1e-8 {
        return Err(QtpError::InvalidModel(format!(
            "conditioned distribution has mass {mass}, expected 1"
        )));
    }
    let w = grid.space.measure();
    let mut terms = Vec::with_capacity(grid.values.len());
    for &v in &grid.values {
        if v < 0.0 {
            return Err(QtpError::InvalidModel(format!("negative probability density {v}")));
        }
        terms.push(-xlnx(v) * w);
    }
    Ok(stable_sum(terms))
}

/// Kolmogorov additivity defect of a two-detector hierarchy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KolmogorovReport {
    /// Integrated absolute defect, including the no-detection outcome.
    pub s_q: f64,
    /// |sum_{z1 incl. no-detection} P2(z1, z2) - P1(z2)| per outcome z2 of
    /// the second detector.
    pub defect: Vec<f64>,
    /// Defect on the second detector's no-detection outcome.
    pub empty_defect: f64,
}

/// Additivity of the raw hierarchy: marginalizing the full level-2
/// distribution (detection sectors plus no-detection bookkeeping) over the
/// first detector should reproduce the second detector's level-1
/// distribution. The integrated absolute mismatch S_Q is zero for every
/// classical (consistent stochastic-process) hierarchy and measures the
/// irreducibly quantum back-action of the first detector otherwise.
pub fn kolmogorov_defect(h: &Hierarchy) -> Result<KolmogorovReport> {
    h.validate()?;
    if h.normalization != Normalization::Raw {
        return Err(QtpError::InvalidModel(
            "the additivity defect is defined on the raw hierarchy, whose no-detection \
             bookkeeping completes each level to a normalized distribution"
                .into(),
        ));
    }
    let l2 = h
        .level2
        .as_ref()
        .ok_or_else(|| QtpError::InvalidModel("additivity defect needs level 2".into()))?;
    let (n0, n1) = (h.spaces[0].n_outcomes(), h.spaces[1].n_outcomes());
    let (w0, w1) = (h.spaces[0].measure(), h.spaces[1].measure());
    let mut defect = vec![0.0f64; n1];
    for z1 in 0..n1 {
        let marginal =
            stable_sum((0..n0).map(|z0| l2.joint[z0 * n1 + z1]).collect()) * w0
                + l2.only_second[z1];
        defect[z1] = (marginal - h.level1[1].values[z1]).abs();
    }
    // No-detection outcome of the second detector: P(z0, no-2) summed over
    // z0 plus P(no-1, no-2), against 1 - P(detect-2).
    let m1 = stable_sum(h.level1[1].values.clone()) * w1;
    let empty_marginal = stable_sum(l2.only_first.clone()) * w0 + l2.neither;
    let empty_defect = (empty_marginal - (1.0 - m1)).abs();
    let mut terms: Vec<f64> = defect.iter().map(|d| d * w1).collect();
    terms.push(empty_defect);
    let s_q = stable_sum(terms);
    Ok(KolmogorovReport { s_q, defect, empty_defect })
}

fn conditioned_joint_marginals(h: &Hierarchy) -> Result<(Vec<f64>, Vec<f64>)> {
    let l2 = h
        .level2
        .as_ref()
        .ok_or_else(|| QtpError::InvalidModel("correlation entropy needs level 2".into()))?;
    let (n0, n1) = (h.spaces[0].n_outcomes(), h.spaces[1].n_outcomes());
    let (w0, w1) = (h.spaces[0].measure(), h.spaces[1].measure());
    let m0: Vec<f64> = (0..n0)
        .map(|z0| stable_sum((0..n1).map(|z1| l2.joint[z0 * n1 + z1]).collect()) * w1)
        .collect();
    let m1: Vec<f64> = (0..n1)
        .map(|z1| stable_sum((0..n0).map(|z0| l2.joint[z0 * n1 + z1]).collect()) * w0)
        .collect();
    Ok((m0, m1))
}

/// Correlation entropy of the conditioned joint distribution,
///   S_C = sum P2(z0, z1) ln[ P2(z0, z1) / (m(z0) m(z1)) ] w0 w1,
/// against the joint's own marginals m — the mutual information of the
/// detection-conditioned outcome pair, nonnegative by Gibbs' inequality.
pub fn correlation_entropy(h: &Hierarchy) -> Result<f64> {
    h.validate()?;
    if h.normalization != Normalization::Conditioned {
        return Err(QtpError::InvalidModel(
            "correlation entropy needs the conditioned hierarchy".into(),
        ));
    }
    let l2 = h.level2.as_ref().unwrap_or_else(|| unreachable!());
    let (m0, m1) = conditioned_joint_marginals(h)?;
    let (n0, n1) = (h.spaces[0].n_outcomes(), h.spaces[1].n_outcomes());
    let (w0, w1) = (h.spaces[0].measure(), h.spaces[1].measure());
    let mut terms = Vec::with_capacity(n0 * n1);
    for z0 in 0..n0 {
        for z1 in 0..n1 {
            let p = l2.joint[z0 * n1 + z1];
            if p > 0.0 {
                let denom = m0[z0] * m1[z1];
                if denom <= 0.0 {
                    return Err(QtpError::InvalidModel(format!(
                        "joint support outside the marginal support at ({z0}, {z1})"
                    )));
                }
                terms.push(p * (p / denom).ln() * w0 * w1);
            }
        }
    }
    Ok(stable_sum(terms))
}

/// Correlation entropy computed against the product of the conditioned
/// level-1 distributions instead of the joint's own marginals. The two
/// variants agree when additivity holds; when the defect is nonzero this
/// one can lose nonnegativity, which is why it is reported separately.
pub fn correlation_entropy_vs_level1(h: &Hierarchy) -> Result<f64> {
    h.validate()?;
    if h.normalization != Normalization::Conditioned {
        return Err(QtpError::InvalidModel(
            "correlation entropy needs the conditioned hierarchy".into(),
        ));
    }
    let l2 = h
        .level2
        .as_ref()
        .ok_or_else(|| QtpError::InvalidModel("correlation entropy needs level 2".into()))?;
    let (n0, n1) = (h.spaces[0].n_outcomes(), h.spaces[1].n_outcomes());
    let (w0, w1) = (h.spaces[0].measure(), h.spaces[1].measure());
    let mut terms = Vec::with_capacity(n0 * n1);
    for z0 in 0..n0 {
        for z1 in 0..n1 {
            let p = l2.joint[z0 * n1 + z1];
            if p > 0.0 {
                let denom = h.level1[0].values[z0] * h.level1[1].values[z1];
                if denom <= 0.0 {
                    return Err(QtpError::InvalidModel(format!(
                        "joint support outside the level-1 support at ({z0}, {z1})"
                    )));
                }
                terms.push(p * (p / denom).ln() * w0 * w1);
            }
        }
    }
    Ok(stable_sum(terms))
}

/// Bundle of all diagnostics for one hierarchy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Boltzmann entropy of each detector's conditioned distribution.
    pub boltzmann: Vec<f64>,
    /// Additivity defect; `None` without a level 2.
    pub s_q: Option<f64>,
    /// Per-outcome defect field over the second detector's outcomes.
    pub defect_field: Option<Vec<f64>>,
    /// Correlation entropy against the joint's own marginals.
    pub s_c: Option<f64>,
    /// Level-1-product variant, reported when it differs from `s_c` by
    /// more than 1e-6.
    pub s_c_vs_level1: Option<f64>,
    /// True when S_Q is at or below `threshold`.
    pub kolmogorov_ok: Option<bool>,
    pub threshold: f64,
    /// Conditioning convention inherited from the hierarchy.
    pub convention: String,
}

/// Compute every applicable diagnostic from a raw hierarchy: the additivity
/// defect on the raw distributions, entropies on the conditioned ones.
/// `min_mass` is the conditioning tolerance, `threshold` the classicality
/// bound on S_Q.
pub fn diagnostics_report(h: &Hierarchy, min_mass: f64, threshold: f64) -> Result<DiagnosticsReport> {
    h.validate()?;
    if h.normalization != Normalization::Raw {
        return Err(QtpError::InvalidModel("diagnostics start from the raw hierarchy".into()));
    }
    let cond = conditioned_hierarchy(h, min_mass)?;
    let boltzmann: Vec<f64> =
        cond.level1.iter().map(boltzmann_entropy).collect::<Result<_>>()?;
    let (s_q, defect_field, s_c, s_c_vs_level1, kolmogorov_ok) = if h.level2.is_some() {
        let kd = kolmogorov_defect(h)?;
        let sc = correlation_entropy(&cond)?;
        let sc1 = correlation_entropy_vs_level1(&cond)?;
        let variant = if (sc1 - sc).abs() > 1e-6 { Some(sc1) } else { None };
        (Some(kd.s_q), Some(kd.defect), Some(sc), variant, Some(kd.s_q <= threshold))
    } else {
        (None, None, None, None, None)
    };
    Ok(DiagnosticsReport {
        boltzmann,
        s_q,
        defect_field,
        s_c,
        s_c_vs_level1,
        kolmogorov_ok,
        threshold,
        convention: cond.convention.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fftgrid::GridSpec;
    use crate::grid::{JointDistribution, OutcomeSpace};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn unit_space(n_bins: usize) -> OutcomeSpace {
        // One unit-measure cell per bin outcome keeps measures at 1.
        let grid = GridSpec { origin: vec![0.0, 0.0], step: vec![1.0, 1.0], shape: vec![1, 1] };
        OutcomeSpace::new(grid, n_bins).unwrap()
    }

    fn four_cell_space() -> OutcomeSpace {
        let grid = GridSpec { origin: vec![0.0, 0.0], step: vec![1.0, 1.0], shape: vec![2, 2] };
        OutcomeSpace::new(grid, 1).unwrap()
    }

    fn conditioned_grid(space: OutcomeSpace, values: Vec<f64>) -> ProbabilityGrid {
        let mut g = ProbabilityGrid::zeros(space, 2);
        g.values = values;
        g.normalization = Normalization::Conditioned;
        g
    }

    #[test]
    fn uniform_distribution_reaches_ln_n() {
        let g = conditioned_grid(four_cell_space(), vec![0.25; 4]);
        assert_relative_eq!(boltzmann_entropy(&g).unwrap(), 4.0f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn point_mass_has_zero_entropy() {
        let g = conditioned_grid(four_cell_space(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(boltzmann_entropy(&g).unwrap(), 0.0);
    }

    #[test]
    fn unnormalized_input_rejected() {
        let g = conditioned_grid(four_cell_space(), vec![0.25, 0.25, 0.25, 0.1]);
        assert!(boltzmann_entropy(&g).is_err());
        let mut raw = conditioned_grid(four_cell_space(), vec![0.25; 4]);
        raw.normalization = Normalization::Raw;
        assert!(boltzmann_entropy(&raw).is_err());
    }

    #[test]
    fn differential_entropy_converges_under_refinement() {
        // Standard 2D Gaussian: closed-form differential entropy ln(2 pi e).
        let entropy_at = |n: usize| -> f64 {
            let spec = GridSpec::symmetric(&[6.0, 6.0], &[n, n]).unwrap();
            let space = OutcomeSpace::new(spec.clone(), 1).unwrap();
            let mut vals = Vec::with_capacity(space.n_cells());
            for c in 0..space.n_cells() {
                let p = space.cell_point(c);
                vals.push((-(p[0] * p[0] + p[1] * p[1]) / 2.0).exp());
            }
            let mass: f64 = vals.iter().sum::<f64>() * space.measure();
            for v in &mut vals {
                *v /= mass;
            }
            boltzmann_entropy(&conditioned_grid(space, vals)).unwrap()
        };
        let coarse = entropy_at(40);
        let fine = entropy_at(80);
        let exact = (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((fine - coarse).abs() < 0.02 * fine.abs(), "{coarse} vs {fine}");
        assert!((fine - exact).abs() < 0.02 * exact, "{fine} vs {exact}");
    }

    /// Hierarchy from an explicit full distribution over
    /// (z0 outcomes + none) x (z1 outcomes + none), unit measures.
    fn hierarchy_from_table(q: &[[f64; 3]; 3]) -> Hierarchy {
        let (s0, s1) = (unit_space(2), unit_space(2));
        let mut level1 = Vec::new();
        let p10 = vec![q[0].iter().sum::<f64>(), q[1].iter().sum::<f64>()];
        let p11 =
            vec![q[0][0] + q[1][0] + q[2][0], q[0][1] + q[1][1] + q[2][1]];
        for (s, vals) in [(s0.clone(), p10), (s1.clone(), p11)] {
            let mut g = ProbabilityGrid::zeros(s, 2);
            g.values = vals;
            level1.push(g);
        }
        let joint = vec![q[0][0], q[0][1], q[1][0], q[1][1]];
        let l2 = JointDistribution {
            joint,
            only_first: vec![q[0][2], q[1][2]],
            only_second: vec![q[2][0], q[2][1]],
            neither: q[2][2],
            subtraction_deficit: 0.0,
        };
        Hierarchy {
            spaces: vec![s0, s1],
            level1,
            level2: Some(l2),
            level3: None,
            normalization: Normalization::Raw,
            convention: crate::probability::CONVENTION_RAW.to_string(),
        }
    }

    #[test]
    fn classical_process_has_no_additivity_defect() {
        // Two-step stochastic chain: initial (0.3, 0.5, 0.2 none), explicit
        // transition rows; additivity holds exactly.
        let q = [
            [0.10, 0.15, 0.05],
            [0.20, 0.10, 0.20],
            [0.05, 0.05, 0.10],
        ];
        let h = hierarchy_from_table(&q);
        let kd = kolmogorov_defect(&h).unwrap();
        assert!(kd.s_q <= 1e-12, "classical defect {}", kd.s_q);
        assert!(kd.defect.iter().all(|&d| d.abs() <= 1e-14));
    }

    #[test]
    fn defect_detects_inconsistent_marginals() {
        let q = [
            [0.10, 0.15, 0.05],
            [0.20, 0.10, 0.20],
            [0.05, 0.05, 0.10],
        ];
        let mut h = hierarchy_from_table(&q);
        // Inflate one joint entry beyond what level 1 supports.
        h.level2.as_mut().unwrap().joint[0] += 0.04;
        let kd = kolmogorov_defect(&h).unwrap();
        assert!(kd.s_q > 0.03, "defect {}", kd.s_q);
    }

    #[test]
    fn defect_nonnegative_on_random_hierarchies() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
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
            let kd = kolmogorov_defect(&h).unwrap();
            assert!(kd.s_q >= 0.0);
            let c = conditioned_hierarchy(&h, 1e-12).unwrap();
            assert!(correlation_entropy(&c).unwrap() >= -1e-12);
        }
    }

    fn conditioned_pair(joint: Vec<f64>, p0: Vec<f64>, p1: Vec<f64>) -> Hierarchy {
        let (s0, s1) = (unit_space(2), unit_space(2));
        let mk = |s: OutcomeSpace, vals: Vec<f64>| {
            let mut g = ProbabilityGrid::zeros(s, 2);
            g.values = vals;
            g.normalization = Normalization::Conditioned;
            g
        };
        Hierarchy {
            spaces: vec![s0.clone(), s1.clone()],
            level1: vec![mk(s0, p0), mk(s1, p1)],
            level2: Some(JointDistribution {
                joint,
                only_first: vec![0.0; 2],
                only_second: vec![0.0; 2],
                neither: 0.0,
                subtraction_deficit: 0.0,
            }),
            level3: None,
            normalization: Normalization::Conditioned,
            convention: "test".into(),
        }
    }

    #[test]
    fn product_joint_has_zero_correlation_entropy() {
        let p0 = vec![0.3, 0.7];
        let p1 = vec![0.6, 0.4];
        let joint = vec![0.18, 0.12, 0.42, 0.28];
        let h = conditioned_pair(joint, p0, p1);
        assert!(correlation_entropy(&h).unwrap().abs() <= 1e-12);
        assert!(correlation_entropy_vs_level1(&h).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn correlated_bit_pair_has_ln_two() {
        let h = conditioned_pair(vec![0.5, 0.0, 0.0, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]);
        assert_relative_eq!(correlation_entropy(&h).unwrap(), 2.0f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn diagnostics_invariant_under_bin_relabeling() {
        let q = [
            [0.12, 0.08, 0.05],
            [0.18, 0.22, 0.10],
            [0.07, 0.08, 0.10],
        ];
        let h = hierarchy_from_table(&q);
        // Swap the two bins of both detectors everywhere.
        let perm = [1usize, 0];
        let mut hp = h.clone();
        for g in &mut hp.level1 {
            let old = g.values.clone();
            for z in 0..2 {
                g.values[z] = old[perm[z]];
            }
        }
        {
            let l2 = hp.level2.as_mut().unwrap();
            let l2_old = h.level2.as_ref().unwrap();
            for z0 in 0..2 {
                for z1 in 0..2 {
                    l2.joint[z0 * 2 + z1] = l2_old.joint[perm[z0] * 2 + perm[z1]];
                }
                l2.only_first[z0] = l2_old.only_first[perm[z0]];
                l2.only_second[z0] = l2_old.only_second[perm[z0]];
            }
        }
        let ra = diagnostics_report(&h, 1e-12, 1e-10).unwrap();
        let rb = diagnostics_report(&hp, 1e-12, 1e-10).unwrap();
        assert_eq!(ra.s_q, rb.s_q);
        assert_eq!(ra.s_c, rb.s_c);
        assert_eq!(ra.boltzmann, rb.boltzmann);
    }

    #[test]
    fn report_assembles_all_fields() {
        let q = [
            [0.10, 0.15, 0.05],
            [0.20, 0.10, 0.20],
            [0.05, 0.05, 0.10],
        ];
        let h = hierarchy_from_table(&q);
        let r = diagnostics_report(&h, 1e-12, 1e-10).unwrap();
        assert_eq!(r.boltzmann.len(), 2);
        assert!(r.boltzmann.iter().all(|&s| s >= 0.0));
        assert!(r.s_q.unwrap() <= 1e-12);
        assert!(r.kolmogorov_ok.unwrap());
        assert!(r.s_c.unwrap() >= -1e-12);
        assert!(r.convention.contains("conditioned"));
    }
}
