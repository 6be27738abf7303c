//! Adaptive multidimensional quadrature for smooth and oscillatory
//! integrands over finite boxes.
//!
//! The base rule is Gauss-Legendre with nodes computed at startup by Newton
//! iteration. Error control compares the whole-interval rule against the sum
//! over two halves and bisects where the disagreement is largest. Higher
//! dimensions are handled by nesting 1D integrals, with the inner tolerance
//! tightened so the outer error estimate dominates.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{QtpError, Result};

/// Order of the base Gauss-Legendre rule.
const GL_ORDER: usize = 16;

/// Nodes and weights on [-1, 1].
#[derive(Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Compute the n-point Gauss-Legendre rule by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> GaussRule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Initial guess (Abramowitz-Stegun style).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P'_n(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    GaussRule { nodes, weights }
}

fn base_rule() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_ORDER))
}

/// An integration problem over a finite box.
pub struct IntegrationRequest<'a> {
    pub integrand: &'a (dyn Fn(&[f64]) -> Complex64 + Sync),
    /// Per-axis (lo, hi) bounds.
    pub domain: Vec<(f64, f64)>,
    pub rel_tol: f64,
    /// Absolute error floor; needed when cancellation drives the integral
    /// far below the integrand's magnitude (a relative criterion alone is
    /// then unattainable).
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Dominant angular frequency of oscillation, used to pre-split
    /// intervals so each panel covers a bounded number of periods.
    pub oscillation_hint: Option<f64>,
}

impl<'a> IntegrationRequest<'a> {
    pub fn new(
        integrand: &'a (dyn Fn(&[f64]) -> Complex64 + Sync),
        domain: Vec<(f64, f64)>,
    ) -> Self {
        IntegrationRequest {
            integrand,
            domain,
            rel_tol: 1e-10,
            abs_tol: 0.0,
            max_subdivisions: 2000,
            oscillation_hint: None,
        }
    }

    pub fn with_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_abs_tol(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_oscillation(mut self, omega: f64) -> Self {
        self.oscillation_hint = Some(omega);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(QtpError::InvalidModel("tolerance must be positive".into()));
        }
        if self.domain.is_empty() {
            return Err(QtpError::InvalidModel("empty integration domain".into()));
        }
        for &(lo, hi) in &self.domain {
            if !lo.is_finite() || !hi.is_finite() || hi < lo {
                return Err(QtpError::InvalidModel(format!(
                    "bad integration bounds ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadratureResult {
    pub value: Complex64,
    pub error_estimate: f64,
    pub converged: bool,
}

struct Panel {
    lo: f64,
    hi: f64,
    value: Complex64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.partial_cmp(&other.error).unwrap_or(Ordering::Equal)
    }
}

fn rule_on<F: Fn(f64) -> Complex64>(f: &F, lo: f64, hi: f64) -> Complex64 {
    let rule = base_rule();
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let mut acc = Complex64::new(0.0, 0.0);
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        acc += f(c + h * x) * *w;
    }
    acc * h
}

/// Evaluate a panel: value from the two-half refinement, error from the
/// disagreement with the whole-interval rule.
fn eval_panel<F: Fn(f64) -> Complex64>(f: &F, lo: f64, hi: f64) -> Panel {
    let whole = rule_on(f, lo, hi);
    let mid = 0.5 * (lo + hi);
    let halves = rule_on(f, lo, mid) + rule_on(f, mid, hi);
    Panel { lo, hi, value: halves, error: (halves - whole).norm() }
}

/// Globally adaptive 1D integration.
pub fn integrate_1d<F: Fn(f64) -> Complex64>(
    f: &F,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_subdivisions: usize,
    oscillation_hint: Option<f64>,
) -> QuadratureResult {
    if hi == lo {
        return QuadratureResult { value: Complex64::new(0.0, 0.0), error_estimate: 0.0, converged: true };
    }
    // Pre-split so that each initial panel spans at most ~2 periods.
    let mut splits = 1usize;
    if let Some(omega) = oscillation_hint {
        let periods = (hi - lo).abs() * omega.abs() / (2.0 * std::f64::consts::PI);
        splits = splits.max((periods / 2.0).ceil() as usize).min(4096);
    }
    let mut heap = BinaryHeap::new();
    let step = (hi - lo) / splits as f64;
    let mut total = Complex64::new(0.0, 0.0);
    let mut total_err = 0.0;
    for i in 0..splits {
        let p = eval_panel(f, lo + i as f64 * step, lo + (i + 1) as f64 * step);
        total += p.value;
        total_err += p.error;
        heap.push(p);
    }
    let mut n = splits;
    while n < max_subdivisions {
        let scale = total.norm().max(1e-300);
        if total_err <= abs_tol + rel_tol * scale {
            break;
        }
        let worst = heap.pop().expect("heap cannot be empty");
        if worst.error <= 0.0 {
            heap.push(worst);
            break;
        }
        let mid = 0.5 * (worst.lo + worst.hi);
        let left = eval_panel(f, worst.lo, mid);
        let right = eval_panel(f, mid, worst.hi);
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        n += 1;
    }
    let scale = total.norm().max(1e-300);
    QuadratureResult {
        value: total,
        // Safety factor: bisection-difference estimates can be optimistic.
        error_estimate: 2.0 * total_err,
        converged: total_err <= abs_tol + rel_tol * scale,
    }
}

/// Adaptive quadrature over a finite box of any dimension. Axes are nested
/// outermost-first; inner tolerances are tightened by one order so the
/// returned estimate is dominated by the outer rule.
pub fn integrate(req: &IntegrationRequest) -> Result<QuadratureResult> {
    req.validate()?;
    let result = integrate_axes(
        req.integrand,
        &req.domain,
        &mut Vec::with_capacity(req.domain.len()),
        req.rel_tol,
        req.abs_tol,
        req.max_subdivisions,
        req.oscillation_hint,
    );
    if !result.converged {
        return Err(QtpError::QuadratureNonConvergence {
            estimate: result.error_estimate,
            tolerance: req.rel_tol,
        });
    }
    Ok(result)
}

/// Same as [`integrate`], but returns the flagged partial result instead of
/// an error when the budget is exhausted.
pub fn integrate_lenient(req: &IntegrationRequest) -> Result<QuadratureResult> {
    req.validate()?;
    Ok(integrate_axes(
        req.integrand,
        &req.domain,
        &mut Vec::with_capacity(req.domain.len()),
        req.rel_tol,
        req.abs_tol,
        req.max_subdivisions,
        req.oscillation_hint,
    ))
}

fn integrate_axes(
    f: &(dyn Fn(&[f64]) -> Complex64 + Sync),
    domain: &[(f64, f64)],
    prefix: &mut Vec<f64>,
    rel_tol: f64,
    abs_tol: f64,
    max_subdivisions: usize,
    oscillation_hint: Option<f64>,
) -> QuadratureResult {
    let (lo, hi) = domain[0];
    if domain.len() == 1 {
        let g = |x: f64| {
            prefix_eval(f, prefix, x)
        };
        return integrate_1d(&g, lo, hi, rel_tol, abs_tol, max_subdivisions, oscillation_hint);
    }
    let inner_tol = (rel_tol / 10.0).max(1e-14);
    // Spread the absolute budget over the outer width.
    let inner_abs = if hi > lo { abs_tol / (10.0 * (hi - lo)) } else { abs_tol };
    let rest = &domain[1..];
    // The nested closure is re-entered per outer node; convergence of inner
    // integrals is folded into a worst-case flag via a cell.
    let inner_failed = std::sync::atomic::AtomicBool::new(false);
    let inner_err = std::sync::Mutex::new(0.0f64);
    let g = |x: f64| {
        let mut p = prefix.clone();
        p.push(x);
        let r = integrate_axes(f, rest, &mut p, inner_tol, inner_abs, max_subdivisions, oscillation_hint);
        if !r.converged {
            inner_failed.store(true, std::sync::atomic::Ordering::Relaxed);
        }
        let mut e = inner_err.lock().expect("poisoned");
        *e = e.max(r.error_estimate);
        r.value
    };
    let outer = integrate_1d(&g, lo, hi, rel_tol, abs_tol, max_subdivisions, oscillation_hint);
    let inner_e = *inner_err.lock().expect("poisoned");
    QuadratureResult {
        value: outer.value,
        error_estimate: outer.error_estimate + inner_e * (hi - lo).abs(),
        converged: outer.converged && !inner_failed.load(std::sync::atomic::Ordering::Relaxed),
    }
}

fn prefix_eval(
    f: &(dyn Fn(&[f64]) -> Complex64 + Sync),
    prefix: &[f64],
    x: f64,
) -> Complex64 {
    let mut args = Vec::with_capacity(prefix.len() + 1);
    args.extend_from_slice(prefix);
    args.push(x);
    f(&args)
}
