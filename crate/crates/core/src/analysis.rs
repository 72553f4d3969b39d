//! Error measurement and empirical convergence-rate analysis: sup-norm error
//! on evaluation grids, weighted `L^p` errors by quadrature, the operator
//! contraction check, and log-log rate fits.

use crate::error::{Error, Result};
use crate::measure::{integrate, integrate_indexed, MeasureSpec, QuadraturePlan};
use crate::operator::{coefficients, evaluate_on_axes, Field, OperatorConfig};

/// Errors of one operator instance at one n.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub n: usize,
    pub sup_error: f64,
    /// (p, error) pairs in the order requested.
    pub lp_errors: Vec<(f64, f64)>,
    pub runtime_ms: f64,
    pub config_fingerprint: String,
}

impl ErrorReport {
    pub fn lp(&self, p: f64) -> Option<f64> {
        self.lp_errors
            .iter()
            .find(|(q, _)| (q - p).abs() < 1e-12)
            .map(|&(_, e)| e)
    }
}

/// Which error column a rate fit consumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateMetric {
    Sup,
    Lp(f64),
}

/// Least-squares fit of `log(error)` against `log(n)`.
#[derive(Debug, Clone)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_values: Vec<usize>,
}

/// Max over the field's grid nodes of `|f(node) - field(node)|`.
pub fn sup_error<F>(f: F, field: &Field) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let d = field.dim();
    let mut pt = [0.0f64; 3];
    let mut worst = 0.0f64;
    for (flat, &v) in field.values.iter().enumerate() {
        field.node(flat, &mut pt[..d]);
        worst = worst.max((f(&pt[..d]) - v).abs());
    }
    worst
}

/// `(integral of |f - approx|^p d rho)^{1/p}`.
pub fn lp_error<F, G>(
    f: F,
    approx: G,
    p: f64,
    measure: &MeasureSpec,
    plan: &QuadraturePlan,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::Precondition(format!("p = {p} must be >= 1")));
    }
    let raw = integrate(|pt| (f(pt) - approx(pt)).abs().powf(p), measure, plan)?;
    Ok(raw.max(0.0).powf(1.0 / p))
}

/// `L^p(rho)` norm of `g`.
pub fn lp_norm<G>(g: G, p: f64, measure: &MeasureSpec, plan: &QuadraturePlan) -> Result<f64>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::Precondition(format!("p = {p} must be >= 1")));
    }
    let raw = integrate(|pt| g(pt).abs().powf(p), measure, plan)?;
    Ok(raw.max(0.0).powf(1.0 / p))
}

/// Outcome of the operator-norm contraction check
/// `|S f|_{L^p(rho)} <= |f|_{L^p(rho)}`.
#[derive(Debug, Clone, Copy)]
pub struct ContractionCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Evaluate both sides of the contraction inequality. The operator values
/// are computed once on the plan's own tensor nodes and consumed by index,
/// so the check runs at contraction speed even for large n.
pub fn contraction_check<F>(f: F, p: f64, config: &OperatorConfig) -> Result<ContractionCheck>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::Precondition(format!("p = {p} must be >= 1")));
    }
    let table = coefficients(&f, config)?;
    let rule = config.plan.axis_rule();
    let axes = vec![rule.nodes.clone(); config.dim];
    let field = evaluate_on_axes(&table, config, &axes)?;
    let lhs_raw = integrate_indexed(
        |flat, _| field.values[flat].abs().powf(p),
        &config.measure,
        &config.plan,
    )?;
    let lhs = lhs_raw.max(0.0).powf(1.0 / p);
    let rhs = lp_norm(&f, p, &config.measure, &config.plan)?;
    Ok(ContractionCheck {
        lhs,
        rhs,
        pass: lhs <= rhs * (1.0 + 1e-8),
    })
}

/// Fit `log(error)` against `log(n)` over the reports, dropping nonpositive
/// errors. Needs at least three surviving points.
pub fn rate_fit(reports: &[ErrorReport], which: RateMetric) -> Result<RateFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ns = Vec::new();
    for r in reports {
        let err = match which {
            RateMetric::Sup => Some(r.sup_error),
            RateMetric::Lp(p) => r.lp(p),
        };
        let Some(err) = err else { continue };
        if err > 0.0 && err.is_finite() {
            xs.push((r.n as f64).ln());
            ys.push(err.ln());
            ns.push(r.n);
        }
    }
    if xs.len() < 3 {
        return Err(Error::Precondition(format!(
            "rate fit needs at least 3 positive-error points, got {}",
            xs.len()
        )));
    }
    let m = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(&ys) {
        sxy += (x - xbar) * (y - ybar);
        sxx += (x - xbar) * (x - xbar);
        syy += (y - ybar) * (y - ybar);
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    // constant error sequences have zero variance; the flat fit is exact
    let r_squared = if syy > 0.0 {
        ((sxy * sxy) / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        n_values: ns,
    })
}
