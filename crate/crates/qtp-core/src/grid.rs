//! Probability data structures: detection-event records, density grids over
//! detector windows with pointer bins, and multi-detector hierarchies with
//! explicit no-detection bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{QtpError, Result};
use crate::fftgrid::GridSpec;
use crate::geometry::FourVector;

/// Whether a density grid is raw (leading perturbative order, integrates to
/// the detection probability) or conditioned on detection (integrates to 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    Raw,
    Conditioned,
}

/// One elementary outcome of a detection experiment: a localized event with
/// a pointer reading, or no detection at all.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum EventRecord {
    Detection { x: FourVector, bin: usize },
    NoDetection,
}

/// Outcome space of one detector: a spacetime window grid times a discrete
/// set of pointer bins. The integration measure of an outcome is the cell
/// volume (bins count discretely).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpace {
    pub grid: GridSpec,
    pub n_bins: usize,
}

impl OutcomeSpace {
    pub fn new(grid: GridSpec, n_bins: usize) -> Result<Self> {
        if n_bins == 0 || n_bins > 8 {
            return Err(QtpError::InvalidModel(format!("pointer bins must be 1..=8, got {n_bins}")));
        }
        Ok(OutcomeSpace { grid, n_bins })
    }

    pub fn n_cells(&self) -> usize {
        self.grid.len()
    }

    pub fn n_outcomes(&self) -> usize {
        self.n_bins * self.n_cells()
    }

    /// Integration measure attached to each outcome.
    pub fn measure(&self) -> f64 {
        self.grid.cell_volume()
    }

    /// Flat outcome index (bin-major).
    pub fn outcome(&self, bin: usize, cell: usize) -> usize {
        bin * self.n_cells() + cell
    }

    /// Spacetime point of a cell center.
    pub fn cell_point(&self, cell: usize) -> Vec<f64> {
        let idx = self.grid.unindex(cell);
        idx.iter()
            .enumerate()
            .map(|(d, &i)| self.grid.coord(d, i) + 0.5 * self.grid.step[d])
            .collect()
    }

    /// True when x lies inside the window.
    pub fn contains(&self, x: &FourVector) -> bool {
        let coords: Vec<f64> = std::iter::once(x.t).chain(x.spatial().iter().copied()).collect();
        if coords.len() != self.grid.ndim() {
            return false;
        }
        coords.iter().enumerate().all(|(d, &c)| {
            let lo = self.grid.origin[d];
            let hi = lo + self.grid.step[d] * self.grid.shape[d] as f64;
            c >= lo && c < hi
        })
    }

    /// Cell index containing x, if inside the window.
    pub fn locate(&self, x: &FourVector) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let coords: Vec<f64> = std::iter::once(x.t).chain(x.spatial().iter().copied()).collect();
        let idx: Vec<usize> = coords
            .iter()
            .enumerate()
            .map(|(d, &c)| {
                (((c - self.grid.origin[d]) / self.grid.step[d]).floor() as usize)
                    .min(self.grid.shape[d] - 1)
            })
            .collect();
        Some(self.grid.index(&idx))
    }
}

/// A detection probability density over one detector's outcome space.
/// Values are densities with respect to d^Dx per pointer bin.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbabilityGrid {
    pub space: OutcomeSpace,
    /// Bin-major values, length = n_outcomes.
    pub values: Vec<f64>,
    /// Leading coupling order of the density (2 for single detections).
    pub order: u32,
    pub normalization: Normalization,
    /// Total probability mass removed by clipping tiny negative values.
    pub clip_mass: f64,
}

impl ProbabilityGrid {
    pub fn zeros(space: OutcomeSpace, order: u32) -> Self {
        let n = space.n_outcomes();
        ProbabilityGrid {
            space,
            values: vec![0.0; n],
            order,
            normalization: Normalization::Raw,
            clip_mass: 0.0,
        }
    }

    pub fn value(&self, bin: usize, cell: usize) -> f64 {
        self.values[self.space.outcome(bin, cell)]
    }

    /// Total probability mass: sum over bins, integral over the window.
    pub fn total_mass(&self) -> f64 {
        // Sorted summation keeps the mass bit-identical under any
        // relabeling of bins or cells.
        let mut terms = self.values.clone();
        terms.sort_by(f64::total_cmp);
        terms.iter().sum::<f64>() * self.space.measure()
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    /// Clip small negative values (quadrature noise) to zero, recording the
    /// removed mass. Negatives beyond `rel_tol` of the peak, or total clipped
    /// mass above 1e-6 of the total, are errors.
    pub fn clip_negatives(&mut self, rel_tol: f64) -> Result<()> {
        let peak = self.peak();
        let mut clipped = 0.0;
        for v in &mut self.values {
            if *v < 0.0 {
                if -*v > rel_tol * peak {
                    return Err(QtpError::Grid(format!(
                        "negative density {v:e} exceeds {rel_tol:e} of peak {peak:e}"
                    )));
                }
                clipped += -*v;
                *v = 0.0;
            }
        }
        let clip_mass = clipped * self.space.measure();
        let total = self.total_mass();
        if total > 0.0 && clip_mass > 1e-6 * total {
            return Err(QtpError::Grid(format!(
                "clipped mass {clip_mass:e} exceeds 1e-6 of total {total:e}"
            )));
        }
        self.clip_mass += clip_mass;
        Ok(())
    }
}

/// Two-detector outcome distribution with explicit no-detection sectors.
/// `joint` is the density over z1 x z2 (z1-major); the partial sectors are
/// derived by the subtraction convention P(z1, no-2) = P1(z1) - integral_z2
/// P2(z1, z2), with any negative remainder clamped and recorded.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointDistribution {
    pub joint: Vec<f64>,
    /// P(z1, no-detection-2), density over z1.
    pub only_first: Vec<f64>,
    /// P(no-detection-1, z2), density over z2.
    pub only_second: Vec<f64>,
    /// P(no-detection-1, no-detection-2).
    pub neither: f64,
    /// Mass clamped away because a subtraction went negative (monitor).
    pub subtraction_deficit: f64,
}

/// Hierarchy of joint detection distributions for up to three detectors
/// sharing one field state. Level n is O(coupling^{2n}).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Hierarchy {
    pub spaces: Vec<OutcomeSpace>,
    /// Single-detector densities, one per detector.
    pub level1: Vec<ProbabilityGrid>,
    /// Joint of detectors 0 and 1 with no-detection bookkeeping.
    pub level2: Option<JointDistribution>,
    /// Joint density of detectors 0, 1, 2 (z0-major, detection sector only).
    pub level3: Option<Vec<f64>>,
    pub normalization: Normalization,
    /// Conditioning / no-detection bookkeeping convention tag.
    pub convention: String,
}

impl Hierarchy {
    /// Windows and detector sets must stay consistent across levels.
    pub fn validate(&self) -> Result<()> {
        if self.spaces.is_empty() || self.spaces.len() > 3 {
            return Err(QtpError::InvalidModel("hierarchy supports 1..=3 detectors".into()));
        }
        if self.level1.len() != self.spaces.len() {
            return Err(QtpError::InvalidModel("one level-1 grid per detector required".into()));
        }
        for (g, s) in self.level1.iter().zip(&self.spaces) {
            if g.space != *s {
                return Err(QtpError::InvalidModel("level-1 window mismatch".into()));
            }
        }
        if let Some(l2) = &self.level2 {
            if self.spaces.len() < 2 {
                return Err(QtpError::InvalidModel("level 2 needs two detectors".into()));
            }
            let (n0, n1) = (self.spaces[0].n_outcomes(), self.spaces[1].n_outcomes());
            if l2.joint.len() != n0 * n1
                || l2.only_first.len() != n0
                || l2.only_second.len() != n1
            {
                return Err(QtpError::InvalidModel("level-2 shape mismatch".into()));
            }
        }
        if let Some(l3) = &self.level3 {
            if self.spaces.len() < 3 {
                return Err(QtpError::InvalidModel("level 3 needs three detectors".into()));
            }
            let n: usize = self.spaces.iter().map(|s| s.n_outcomes()).product();
            if l3.len() != n {
                return Err(QtpError::InvalidModel("level-3 shape mismatch".into()));
            }
        }
        Ok(())
    }

    /// Marginal of the level-2 detection sector over detector `first`'s
    /// outcomes: returns a density over the other detector's outcomes.
    pub fn level2_marginal(&self, over_first: bool) -> Result<Vec<f64>> {
        let l2 = self
            .level2
            .as_ref()
            .ok_or_else(|| QtpError::InvalidModel("hierarchy has no level 2".into()))?;
        let (n0, n1) = (self.spaces[0].n_outcomes(), self.spaces[1].n_outcomes());
        if over_first {
            let w = self.spaces[0].measure();
            let mut out = vec![0.0; n1];
            for z0 in 0..n0 {
                for z1 in 0..n1 {
                    out[z1] += l2.joint[z0 * n1 + z1] * w;
                }
            }
            Ok(out)
        } else {
            let w = self.spaces[1].measure();
            let mut out = vec![0.0; n0];
            for z0 in 0..n0 {
                for z1 in 0..n1 {
                    out[z0] += l2.joint[z0 * n1 + z1] * w;
                }
            }
            Ok(out)
        }
    }
}
