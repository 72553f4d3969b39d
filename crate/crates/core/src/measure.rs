//! Density-defined measures on the unit hypercube and deterministic composite
//! Gauss-Legendre tensor quadrature against them.
//!
//! Node ordering convention used everywhere in this crate: tensor nodes are
//! enumerated row-major with axis 0 slowest, and every reduction runs in
//! ascending flat order through compensated accumulators, so integrals are
//! bit-stable across thread counts.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::activation::ScalarFn;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::kernel::KernelHandle;
use crate::sum::CompensatedSum;

/// Hard cap on tensor quadrature nodes per integral.
const NODE_BUDGET: u64 = 1 << 26;

// ---------------------------------------------------------------------------
// Gauss-Legendre rules
// ---------------------------------------------------------------------------

/// Legendre P_n and its derivative at x, by the three-term recurrence.
fn legendre_pd(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1],
/// ascending. Newton iteration from the Chebyshev initial guesses converges
/// to machine precision in a handful of steps.
fn gauss_legendre_reference(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_pd(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_pd(n, z);
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite quadrature layout for one axis of `[0, 1]^d`. Identical on every
/// axis. Panel boundaries always include the registered breakpoints so Gauss
/// nodes never straddle a jump of a piecewise integrand.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraturePlan {
    panels_per_axis: usize,
    nodes_per_panel: usize,
    breakpoints: Vec<f64>,
}

/// Realized 1-D rule: nodes strictly inside (0, 1), ascending.
#[derive(Debug, Clone)]
pub struct AxisRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadraturePlan {
    pub const DEFAULT_PANELS: usize = 64;
    pub const DEFAULT_NODES: usize = 8;

    pub fn new(panels_per_axis: usize, nodes_per_panel: usize) -> Result<Self> {
        if panels_per_axis == 0 {
            return Err(Error::Validation("panels_per_axis must be >= 1".into()));
        }
        if nodes_per_panel == 0 || nodes_per_panel > 64 {
            return Err(Error::Validation(format!(
                "nodes_per_panel must be in 1..=64, got {nodes_per_panel}"
            )));
        }
        Ok(QuadraturePlan {
            panels_per_axis,
            nodes_per_panel,
            breakpoints: Vec::new(),
        })
    }

    /// 64 panels x 8 Gauss nodes per axis.
    pub fn default_plan() -> Self {
        Self::new(Self::DEFAULT_PANELS, Self::DEFAULT_NODES).expect("default plan is valid")
    }

    pub fn with_breakpoints(mut self, breakpoints: &[f64]) -> Result<Self> {
        for &b in breakpoints {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Validation(format!(
                    "breakpoint {b} must lie strictly inside (0, 1)"
                )));
            }
            self.breakpoints.push(b);
        }
        self.breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
        self.breakpoints.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        Ok(self)
    }

    pub fn panels_per_axis(&self) -> usize {
        self.panels_per_axis
    }

    pub fn nodes_per_panel(&self) -> usize {
        self.nodes_per_panel
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Panel boundaries: the uniform grid merged with the breakpoints.
    fn boundaries(&self) -> Vec<f64> {
        let mut b: Vec<f64> = (0..=self.panels_per_axis)
            .map(|i| i as f64 / self.panels_per_axis as f64)
            .collect();
        b.extend_from_slice(&self.breakpoints);
        b.sort_by(|a, c| a.partial_cmp(c).unwrap());
        b.dedup_by(|a, c| (*a - *c).abs() <= 1e-12);
        b
    }

    pub fn axis_rule(&self) -> AxisRule {
        let (xs, ws) = gauss_legendre_reference(self.nodes_per_panel);
        let bounds = self.boundaries();
        let mut nodes = Vec::with_capacity((bounds.len() - 1) * xs.len());
        let mut weights = Vec::with_capacity(nodes.capacity());
        for seg in bounds.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let h = 0.5 * (b - a);
            let c = 0.5 * (a + b);
            for (&x, &w) in xs.iter().zip(&ws) {
                nodes.push(c + h * x);
                weights.push(h * w);
            }
        }
        AxisRule { nodes, weights }
    }
}

// ---------------------------------------------------------------------------
// Measures
// ---------------------------------------------------------------------------

pub type JointDensity = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum DensityKind {
    Lebesgue,
    /// Per-axis weight t^alpha (1-t)^beta.
    Jacobi(Vec<(f64, f64)>),
    /// Custom product density, one factor per axis.
    Product(Vec<ScalarFn>),
    /// General (non-product) density.
    Joint(JointDensity),
}

/// A nonnegative-density Borel measure on `[0, 1]^d`. Atoms and singular
/// parts are out of scope: quadrature cannot represent them faithfully.
#[derive(Clone)]
pub struct MeasureSpec {
    name: String,
    dim: usize,
    kind: DensityKind,
    total_mass: f64,
}

impl fmt::Debug for MeasureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MeasureSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("total_mass", &self.total_mass)
            .field("is_product", &self.is_product())
            .finish()
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if !(1..=3).contains(&dim) {
        return Err(Error::Validation(format!("dimension {dim} is outside 1..=3")));
    }
    Ok(())
}

impl MeasureSpec {
    pub fn lebesgue(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(MeasureSpec {
            name: "lebesgue".into(),
            dim,
            kind: DensityKind::Lebesgue,
            total_mass: 1.0,
        })
    }

    /// Jacobi weight with per-axis exponent pairs (alpha_i, beta_i), each
    /// > -1 for integrability. The mass is measured by per-axis quadrature.
    pub fn jacobi(axes: &[(f64, f64)], plan: &QuadraturePlan) -> Result<Self> {
        check_dim(axes.len())?;
        for &(a, b) in axes {
            if !(a > -1.0 && b > -1.0) {
                return Err(Error::Validation(format!(
                    "jacobi exponents ({a}, {b}) must both exceed -1"
                )));
            }
        }
        let name = format!(
            "jacobi:{}",
            axes.iter()
                .flat_map(|&(a, b)| [a, b])
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let mut m = MeasureSpec {
            name,
            dim: axes.len(),
            kind: DensityKind::Jacobi(axes.to_vec()),
            total_mass: 0.0,
        };
        m.total_mass = m.measure_mass(plan)?;
        Ok(m)
    }

    /// Custom product density from per-axis factors.
    pub fn product(name: impl Into<String>, axes: Vec<ScalarFn>, plan: &QuadraturePlan) -> Result<Self> {
        check_dim(axes.len())?;
        let mut m = MeasureSpec {
            name: name.into(),
            dim: axes.len(),
            kind: DensityKind::Product(axes),
            total_mass: 0.0,
        };
        m.total_mass = m.measure_mass(plan)?;
        Ok(m)
    }

    /// Custom joint density; loses the factorized fast paths.
    pub fn joint(name: impl Into<String>, dim: usize, f: JointDensity, plan: &QuadraturePlan) -> Result<Self> {
        check_dim(dim)?;
        let mut m = MeasureSpec {
            name: name.into(),
            dim,
            kind: DensityKind::Joint(f),
            total_mass: 0.0,
        };
        m.total_mass = m.measure_mass(plan)?;
        Ok(m)
    }

    /// Resolve a CLI tag: `lebesgue`, `jacobi:a,b,...` (2 exponents per
    /// axis), or `density:<expression>` in variables `t1..td`.
    pub fn from_tag(tag: &str, dim: usize, plan: &QuadraturePlan) -> Result<Self> {
        check_dim(dim)?;
        if tag == "lebesgue" {
            return Self::lebesgue(dim);
        }
        if let Some(rest) = tag.strip_prefix("jacobi:") {
            let vals: Vec<f64> = rest
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Validation(format!("bad jacobi exponent {s:?}")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != 2 * dim {
                return Err(Error::Validation(format!(
                    "jacobi tag needs {} exponents for dimension {dim}, got {}",
                    2 * dim,
                    vals.len()
                )));
            }
            let axes: Vec<(f64, f64)> = vals.chunks(2).map(|c| (c[0], c[1])).collect();
            return Self::jacobi(&axes, plan);
        }
        if let Some(src) = tag.strip_prefix("density:") {
            let var_names: Vec<String> = (1..=dim).map(|i| format!("t{i}")).collect();
            let var_refs: Vec<&str> = var_names.iter().map(|s| s.as_str()).collect();
            let expr = Expr::parse(src, &var_refs)?;
            let f: JointDensity = Arc::new(move |pt: &[f64]| expr.eval(pt));
            return Self::joint(format!("density:{src}"), dim, f, plan);
        }
        Err(Error::Validation(format!(
            "unknown measure tag {tag:?} (expected lebesgue, jacobi:..., or density:<expr>)"
        )))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn is_product(&self) -> bool {
        !matches!(self.kind, DensityKind::Joint(_))
    }

    /// Density of one axis factor; `None` for joint densities.
    pub fn axis_density_at(&self, axis: usize, t: f64) -> Option<f64> {
        match &self.kind {
            DensityKind::Lebesgue => Some(1.0),
            DensityKind::Jacobi(axes) => {
                let (a, b) = axes[axis];
                Some(t.powf(a) * (1.0 - t).powf(b))
            }
            DensityKind::Product(axes) => Some(axes[axis](t)),
            DensityKind::Joint(_) => None,
        }
    }

    pub fn density_at(&self, pt: &[f64]) -> f64 {
        match &self.kind {
            DensityKind::Lebesgue => 1.0,
            DensityKind::Jacobi(axes) => pt
                .iter()
                .zip(axes)
                .map(|(&t, &(a, b))| t.powf(a) * (1.0 - t).powf(b))
                .product(),
            DensityKind::Product(axes) => pt.iter().zip(axes).map(|(&t, f)| f(t)).product(),
            DensityKind::Joint(f) => f(pt),
        }
    }

    /// Measure the total mass with the given plan (product kinds factorize).
    fn measure_mass(&self, plan: &QuadraturePlan) -> Result<f64> {
        let mass = if self.is_product() {
            let rule = plan.axis_rule();
            let mut mass = 1.0;
            for axis in 0..self.dim {
                let mut acc = CompensatedSum::new();
                for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
                    let d = self.axis_density_at(axis, t).expect("product measure");
                    if d < 0.0 {
                        return Err(Error::MeasureIntegrity(format!(
                            "density is negative ({d}) on axis {axis} at t = {t}"
                        )));
                    }
                    acc.add(d * w);
                }
                mass *= acc.total();
            }
            mass
        } else {
            integrate(|_| 1.0, self, plan)?
        };
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::MeasureIntegrity(format!(
                "total mass {mass} is not positive and finite"
            )));
        }
        Ok(mass)
    }
}

// ---------------------------------------------------------------------------
// Tensor quadrature
// ---------------------------------------------------------------------------

/// `integral of f d(rho)` over `[0,1]^d` by composite Gauss-Legendre tensor
/// quadrature; the density is part of the integrand. Deterministic: nodes are
/// reduced in ascending flat order with compensated summation regardless of
/// thread count.
pub fn integrate<F>(f: F, measure: &MeasureSpec, plan: &QuadraturePlan) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    integrate_indexed(|_, pt| f(pt), measure, plan)
}

/// Like [`integrate`] but the integrand also receives the flat node index
/// (row-major, axis 0 slowest) so pre-evaluated node data can be consumed
/// without a coordinate lookup.
pub fn integrate_indexed<F>(f: F, measure: &MeasureSpec, plan: &QuadraturePlan) -> Result<f64>
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    let d = measure.dim();
    let rule = plan.axis_rule();
    let q = rule.nodes.len();
    if (q as u64).pow(d as u32) > NODE_BUDGET {
        return Err(Error::NumericGuard(format!(
            "quadrature would need {q}^{d} nodes, over the {NODE_BUDGET} budget"
        )));
    }

    let nodes = &rule.nodes;
    let weights = &rule.weights;

    // One stripe per leading-axis node; each stripe reduces sequentially.
    let stripes: Result<Vec<f64>> = (0..q)
        .into_par_iter()
        .map(|i0| -> Result<f64> {
            let mut acc = CompensatedSum::new();
            let mut pt = [0.0f64; 3];
            pt[0] = nodes[i0];
            let w0 = weights[i0];
            match d {
                1 => {
                    let dens = node_density(measure, &pt[..1])?;
                    acc.add(f(i0, &pt[..1]) * dens * w0);
                }
                2 => {
                    for i1 in 0..q {
                        pt[1] = nodes[i1];
                        let dens = node_density(measure, &pt[..2])?;
                        acc.add(f(i0 * q + i1, &pt[..2]) * dens * w0 * weights[i1]);
                    }
                }
                3 => {
                    for i1 in 0..q {
                        pt[1] = nodes[i1];
                        let w01 = w0 * weights[i1];
                        for i2 in 0..q {
                            pt[2] = nodes[i2];
                            let dens = node_density(measure, &pt[..3])?;
                            acc.add(f((i0 * q + i1) * q + i2, &pt[..3]) * dens * w01 * weights[i2]);
                        }
                    }
                }
                _ => unreachable!("dimension checked at construction"),
            }
            Ok(acc.total())
        })
        .collect();

    let stripes = stripes?;
    let mut total = CompensatedSum::new();
    for s in stripes {
        total.add(s);
    }
    Ok(total.total())
}

fn node_density(measure: &MeasureSpec, pt: &[f64]) -> Result<f64> {
    let dens = measure.density_at(pt);
    if dens < 0.0 || !dens.is_finite() {
        return Err(Error::MeasureIntegrity(format!(
            "density is {dens} at node {pt:?}"
        )));
    }
    Ok(dens)
}

// ---------------------------------------------------------------------------
// Axis kernel matrix
// ---------------------------------------------------------------------------

/// Per-axis assembly block for factorized coefficient computation:
/// `entry(q, k) = phi(n t_q - k) * axis_density(t_q) * axis_weight(q)`.
/// Contracting these against node-sampled data replaces `(n+1)^d` separate
/// d-dimensional integrals with d matrix products.
#[derive(Debug, Clone)]
pub struct AxisKernelMatrix {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    entries: Vec<f64>,
    cols: usize,
}

impl AxisKernelMatrix {
    #[inline]
    pub fn entry(&self, q: usize, k: usize) -> f64 {
        self.entries[q * self.cols + k]
    }

    pub fn row(&self, q: usize) -> &[f64] {
        &self.entries[q * self.cols..(q + 1) * self.cols]
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.nodes.len()
    }

    /// Column sums in ascending node order: the per-axis coefficient
    /// denominators.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut acc = vec![CompensatedSum::new(); self.cols];
        for q in 0..self.rows() {
            let row = self.row(q);
            for (a, &v) in acc.iter_mut().zip(row) {
                a.add(v);
            }
        }
        acc.into_iter().map(|a| a.total()).collect()
    }
}

/// Build the axis matrix for one axis of a product measure.
pub fn axis_kernel_matrix(
    kernel: &KernelHandle,
    n: usize,
    plan: &QuadraturePlan,
    measure: &MeasureSpec,
    axis: usize,
) -> Result<AxisKernelMatrix> {
    if n == 0 {
        return Err(Error::Precondition("n must be >= 1".into()));
    }
    if axis >= measure.dim() {
        return Err(Error::Precondition(format!(
            "axis {axis} out of range for dimension {}",
            measure.dim()
        )));
    }
    if !measure.is_product() {
        return Err(Error::Precondition(
            "axis_kernel_matrix requires a product measure".into(),
        ));
    }
    let rule = plan.axis_rule();
    let cols = n + 1;
    let mut entries = vec![0.0; rule.nodes.len() * cols];
    for (q, (&t, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        let dens = measure.axis_density_at(axis, t).expect("product measure");
        if dens < 0.0 || !dens.is_finite() {
            return Err(Error::MeasureIntegrity(format!(
                "density is {dens} on axis {axis} at t = {t}"
            )));
        }
        let scale = dens * w;
        for k in 0..cols {
            entries[q * cols + k] = kernel.phi(n as f64 * t - k as f64) * scale;
        }
    }
    Ok(AxisKernelMatrix {
        nodes: rule.nodes,
        weights: rule.weights,
        entries,
        cols,
    })
}

// ---------------------------------------------------------------------------
// Positivity probe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxSide {
    /// Open box centered at the point.
    Symmetric,
    /// Open right-sided box with the point at its lower corner.
    RightSided,
}

/// A probe box around a lattice point. Right-sided boxes are anchored inside
/// the domain: the literal box past the right boundary would be empty, while
/// the positivity question is about mass near the lattice point.
#[derive(Debug, Clone)]
pub struct ProbeBox {
    pub center: Vec<f64>,
    pub radius: f64,
    pub sided: BoxSide,
}

impl ProbeBox {
    pub fn new(center: Vec<f64>, radius: f64, sided: BoxSide) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Precondition(format!("box radius {radius} must be positive")));
        }
        let b = ProbeBox { center, radius, sided };
        for axis in 0..b.center.len() {
            let (lo, hi) = b.axis_interval(axis);
            if !(hi > lo) {
                return Err(Error::Precondition(format!(
                    "box does not intersect the unit cube on axis {axis}"
                )));
            }
        }
        Ok(b)
    }

    /// The axis interval clipped (symmetric) or anchored (right-sided) into [0, 1].
    pub fn axis_interval(&self, axis: usize) -> (f64, f64) {
        let c = self.center[axis];
        let r = self.radius.min(1.0);
        match self.sided {
            BoxSide::Symmetric => ((c - self.radius).max(0.0), (c + self.radius).min(1.0)),
            BoxSide::RightSided => {
                let lo = c.min(1.0 - r).max(0.0);
                (lo, lo + r)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    /// Smallest estimated box mass over all lattice indices.
    pub min_mass: f64,
    /// Pass threshold: 1e-12 times the total mass.
    pub threshold: f64,
    pub pass: bool,
    /// Lattice index attaining the minimum.
    pub worst_index: Vec<usize>,
    pub boxes: usize,
}

/// Estimate `rho(B_{delta^2}(beta/n))` for every lattice index `beta/n` and
/// report the minimum. Failure is a reported outcome, not an error.
pub fn positivity_probe(measure: &MeasureSpec, n: usize, delta: f64) -> Result<ProbeReport> {
    if n == 0 {
        return Err(Error::Precondition("n must be >= 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Precondition(format!("delta = {delta} must lie in (0, 1)")));
    }
    let d = measure.dim();
    let radius = delta * delta;

    // Small per-box rule: 4 panels x 6 Gauss nodes per axis.
    let (xs, ws) = gauss_legendre_reference(6);
    let panels = 4usize;
    let nodes_per_axis = panels * xs.len();
    let boxes = (n + 1).pow(d as u32);
    if (boxes as u64) * (nodes_per_axis as u64).pow(d as u32) > NODE_BUDGET {
        return Err(Error::NumericGuard(format!(
            "positivity probe at n = {n}, d = {d} exceeds the node budget"
        )));
    }

    // Per-axis box rules only depend on the axis interval, i.e. on k.
    let axis_rules: Vec<(Vec<f64>, Vec<f64>)> = (0..=n)
        .map(|k| {
            let b = ProbeBox {
                center: vec![k as f64 / n as f64],
                radius,
                sided: BoxSide::RightSided,
            };
            let (lo, hi) = b.axis_interval(0);
            let mut ns = Vec::with_capacity(nodes_per_axis);
            let mut wsv = Vec::with_capacity(nodes_per_axis);
            for p in 0..panels {
                let a = lo + (hi - lo) * p as f64 / panels as f64;
                let b2 = lo + (hi - lo) * (p + 1) as f64 / panels as f64;
                let h = 0.5 * (b2 - a);
                let c = 0.5 * (a + b2);
                for (&x, &w) in xs.iter().zip(&ws) {
                    ns.push(c + h * x);
                    wsv.push(h * w);
                }
            }
            (ns, wsv)
        })
        .collect();

    let mut min_mass = f64::INFINITY;
    let mut worst = vec![0usize; d];
    let mut index = vec![0usize; d];
    for _ in 0..boxes {
        let mass = box_mass(measure, &axis_rules, &index)?;
        if mass < min_mass {
            min_mass = mass;
            worst.copy_from_slice(&index);
        }
        // advance multi-index, last axis fastest
        for axis in (0..d).rev() {
            index[axis] += 1;
            if index[axis] <= n {
                break;
            }
            index[axis] = 0;
        }
    }

    let threshold = 1e-12 * measure.total_mass();
    Ok(ProbeReport {
        min_mass,
        threshold,
        pass: min_mass > threshold,
        worst_index: worst,
        boxes,
    })
}

fn box_mass(
    measure: &MeasureSpec,
    axis_rules: &[(Vec<f64>, Vec<f64>)],
    index: &[usize],
) -> Result<f64> {
    let d = index.len();
    let mut acc = CompensatedSum::new();
    let mut pt = [0.0f64; 3];
    let (n0, w0) = &axis_rules[index[0]];
    match d {
        1 => {
            for (q0, &t0) in n0.iter().enumerate() {
                pt[0] = t0;
                acc.add(node_density(measure, &pt[..1])? * w0[q0]);
            }
        }
        2 => {
            let (n1, w1) = &axis_rules[index[1]];
            for (q0, &t0) in n0.iter().enumerate() {
                pt[0] = t0;
                for (q1, &t1) in n1.iter().enumerate() {
                    pt[1] = t1;
                    acc.add(node_density(measure, &pt[..2])? * w0[q0] * w1[q1]);
                }
            }
        }
        3 => {
            let (n1, w1) = &axis_rules[index[1]];
            let (n2, w2) = &axis_rules[index[2]];
            for (q0, &t0) in n0.iter().enumerate() {
                pt[0] = t0;
                for (q1, &t1) in n1.iter().enumerate() {
                    pt[1] = t1;
                    let w01 = w0[q0] * w1[q1];
                    for (q2, &t2) in n2.iter().enumerate() {
                        pt[2] = t2;
                        acc.add(node_density(measure, &pt[..3])? * w01 * w2[q2]);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(acc.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationSpec;

    const PI_OVER_8: f64 = 0.39269908169872414;
    const JACOBI_HALF_MASS_2D: f64 = 0.15421256876702122; // (pi/8)^2

    #[test]
    fn gauss_rule_is_exact_for_polynomials() {
        let plan = QuadraturePlan::new(1, 8).unwrap();
        let rule = plan.axis_rule();
        // degree 15 = 2*8 - 1 is integrated exactly
        let mut acc = 0.0;
        for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
            acc += w * t.powi(15);
        }
        assert!((acc - 1.0 / 16.0).abs() < 1e-14);
    }

    #[test]
    fn axis_rule_layout() {
        let plan = QuadraturePlan::new(8, 4).unwrap().with_breakpoints(&[0.4, 0.7]).unwrap();
        let rule = plan.axis_rule();
        // 8 uniform panels plus 2 breakpoints not on the uniform grid -> 10 panels
        assert_eq!(rule.nodes.len(), 10 * 4);
        let total: f64 = rule.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-13);
        for w in rule.nodes.windows(2) {
            assert!(w[0] < w[1]);
        }
        for &t in &rule.nodes {
            assert!(t > 0.0 && t < 1.0);
        }
    }

    #[test]
    fn plan_validation() {
        assert!(QuadraturePlan::new(0, 8).is_err());
        assert!(QuadraturePlan::new(8, 0).is_err());
        assert!(QuadraturePlan::new(8, 4).unwrap().with_breakpoints(&[1.5]).is_err());
        assert!(QuadraturePlan::new(8, 4).unwrap().with_breakpoints(&[0.0]).is_err());
    }

    #[test]
    fn unit_mass_lebesgue() {
        let plan = QuadraturePlan::default_plan();
        let m = MeasureSpec::lebesgue(2).unwrap();
        let v = integrate(|_| 1.0, &m, &plan).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(m.total_mass(), 1.0);
    }

    #[test]
    fn separable_monomial() {
        let plan = QuadraturePlan::default_plan();
        let m = MeasureSpec::lebesgue(2).unwrap();
        let v = integrate(|pt| pt[0] * pt[1], &m, &plan).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
    }

    #[test]
    fn jacobi_mass_matches_beta_oracle() {
        let plan = QuadraturePlan::default_plan();
        let m = MeasureSpec::jacobi(&[(0.5, 0.5), (0.5, 0.5)], &plan).unwrap();
        // Beta(3/2, 3/2) = pi/8 per axis; frozen from the closed form
        assert!(
            (m.total_mass() - JACOBI_HALF_MASS_2D).abs() / JACOBI_HALF_MASS_2D < 1e-5,
            "mass = {}",
            m.total_mass()
        );
        let v = integrate(|_| 1.0, &m, &plan).unwrap();
        assert!((v - m.total_mass()).abs() < 1e-9);

        let m1 = MeasureSpec::jacobi(&[(0.5, 0.5)], &plan).unwrap();
        assert!((m1.total_mass() - PI_OVER_8).abs() < 1e-5);
    }

    #[test]
    fn integrate_is_linear() {
        let plan = QuadraturePlan::new(16, 6).unwrap();
        let m = MeasureSpec::lebesgue(2).unwrap();
        let f = |pt: &[f64]| (3.0 * pt[0]).sin() + pt[1] * pt[1];
        let g = |pt: &[f64]| (2.0 * pt[0] * pt[1]).cos();
        let (a, b) = (1.7, -0.4);
        let lhs = integrate(|pt| a * f(pt) + b * g(pt), &m, &plan).unwrap();
        let rhs = a * integrate(f, &m, &plan).unwrap() + b * integrate(g, &m, &plan).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * (a.abs() + b.abs()));
    }

    #[test]
    fn refinement_stability_smooth() {
        let m = MeasureSpec::lebesgue(2).unwrap();
        let f = |pt: &[f64]| {
            (std::f64::consts::PI * pt[0]).sin() * (std::f64::consts::PI * pt[1]).cos()
                + 0.5 * pt[0] * pt[0] * pt[1]
        };
        let v1 = integrate(f, &m, &QuadraturePlan::new(64, 8).unwrap()).unwrap();
        let v2 = integrate(f, &m, &QuadraturePlan::new(128, 8).unwrap()).unwrap();
        assert!((v1 - v2).abs() <= 1e-9);
    }

    #[test]
    fn product_factorization() {
        let plan = QuadraturePlan::default_plan();
        let m2 = MeasureSpec::jacobi(&[(0.5, 0.5), (0.5, 0.5)], &plan).unwrap();
        let m1 = MeasureSpec::jacobi(&[(0.5, 0.5)], &plan).unwrap();
        let g = |t: f64| (1.5 * t).exp();
        let h = |t: f64| 1.0 + t * t;
        let joint = integrate(|pt| g(pt[0]) * h(pt[1]), &m2, &plan).unwrap();
        let gx = integrate(|pt| g(pt[0]), &m1, &plan).unwrap();
        let hx = integrate(|pt| h(pt[0]), &m1, &plan).unwrap();
        assert!((joint - gx * hx).abs() < 1e-11);
    }

    #[test]
    fn breakpoints_remove_jump_straddling() {
        // step integrand: exact value 0.4 * 1 + 0.6 * 2 = 1.6
        let f = |pt: &[f64]| if pt[0] < 0.4 { 1.0 } else { 2.0 };
        let m = MeasureSpec::lebesgue(1).unwrap();
        let aligned = QuadraturePlan::new(16, 6).unwrap().with_breakpoints(&[0.4]).unwrap();
        let v = integrate(f, &m, &aligned).unwrap();
        assert!((v - 1.6).abs() < 1e-13, "aligned panels integrate the step exactly, got {v}");

        // with the jump registered, panel doubling no longer moves the value
        let aligned2 = QuadraturePlan::new(32, 6).unwrap().with_breakpoints(&[0.4]).unwrap();
        let v2 = integrate(f, &m, &aligned2).unwrap();
        assert!((v - v2).abs() < 1e-13);

        // without it the straddling panel leaves a visible first-order error
        let coarse = integrate(f, &m, &QuadraturePlan::new(16, 6).unwrap()).unwrap();
        assert!((coarse - 1.6).abs() > 1e-6);
    }

    #[test]
    fn negative_density_is_rejected() {
        let plan = QuadraturePlan::new(8, 4).unwrap();
        let f: JointDensity = Arc::new(|pt: &[f64]| 0.5 - pt[0]);
        assert!(MeasureSpec::joint("signed", 1, f, &plan).is_err());
    }

    #[test]
    fn measure_tags() {
        let plan = QuadraturePlan::default_plan();
        assert!(MeasureSpec::from_tag("lebesgue", 2, &plan).is_ok());
        assert!(MeasureSpec::from_tag("jacobi:0.5,0.5,0.5,0.5", 2, &plan).is_ok());
        assert!(MeasureSpec::from_tag("jacobi:0.5,0.5", 2, &plan).is_err());
        let m = MeasureSpec::from_tag("density:t1*t2 + 1", 2, &plan).unwrap();
        assert!(!m.is_product());
        assert!((m.total_mass() - 1.25).abs() < 1e-12);
        assert!(MeasureSpec::from_tag("counting", 2, &plan).is_err());
    }

    #[test]
    fn axis_kernel_matrix_small_case() {
        let plan = QuadraturePlan::new(1, 2).unwrap();
        let m = MeasureSpec::lebesgue(1).unwrap();
        let kernel = KernelHandle::new(ActivationSpec::logistic()).unwrap();
        let mat = axis_kernel_matrix(&kernel, 1, &plan, &m, 0).unwrap();
        assert_eq!(mat.rows(), 2);
        assert_eq!(mat.cols(), 2);
        for q in 0..2 {
            for k in 0..2 {
                let expect = kernel.phi(mat.nodes[q] - k as f64) * mat.weights[q];
                assert!((mat.entry(q, k) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn axis_matrix_column_sums_match_integral() {
        // summing columns and integrating the truncated lattice sum are the
        // same double sum in different orders
        let plan = QuadraturePlan::new(16, 6).unwrap();
        let kernel = KernelHandle::new(ActivationSpec::logistic()).unwrap();
        for tag in ["lebesgue", "jacobi:0.5,0.5"] {
            let m = MeasureSpec::from_tag(tag, 1, &plan).unwrap();
            let n = 7;
            let mat = axis_kernel_matrix(&kernel, n, &plan, &m, 0).unwrap();
            let total: f64 = mat.column_sums().iter().sum();
            let oracle = integrate(
                |pt| {
                    (0..=n)
                        .map(|k| kernel.phi(n as f64 * pt[0] - k as f64))
                        .sum::<f64>()
                },
                &m,
                &plan,
            )
            .unwrap();
            assert!((total - oracle).abs() < 1e-12, "{tag}: {total} vs {oracle}");
        }
    }

    #[test]
    fn kernel_matrices_share_node_layout() {
        let plan = QuadraturePlan::new(8, 4).unwrap();
        let m = MeasureSpec::lebesgue(1).unwrap();
        let klog = KernelHandle::new(ActivationSpec::logistic()).unwrap();
        let ktanh = KernelHandle::new(ActivationSpec::tanh()).unwrap();
        let a = axis_kernel_matrix(&klog, 5, &plan, &m, 0).unwrap();
        let b = axis_kernel_matrix(&ktanh, 5, &plan, &m, 0).unwrap();
        assert_eq!(a.nodes, b.nodes);
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn probe_lebesgue_all_boxes_positive() {
        let m = MeasureSpec::lebesgue(2).unwrap();
        let r = positivity_probe(&m, 10, 0.3).unwrap();
        assert!(r.pass, "{r:?}");
        // anchored boxes: every box has per-axis width delta^2 = 0.09
        assert!((r.min_mass - 0.09f64.powi(2)).abs() < 1e-12, "{r:?}");
        assert_eq!(r.boxes, 121);
    }

    #[test]
    fn probe_jacobi_positive() {
        let plan = QuadraturePlan::default_plan();
        let m = MeasureSpec::jacobi(&[(0.5, 0.5), (0.5, 0.5)], &plan).unwrap();
        let r = positivity_probe(&m, 10, 0.3).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn probe_detects_dead_zone() {
        let plan = QuadraturePlan::default_plan();
        let f: JointDensity = Arc::new(|pt: &[f64]| if pt[0] <= 0.5 { 0.0 } else { 1.0 });
        let m = MeasureSpec::joint("deadzone", 2, f, &plan).unwrap();
        let r = positivity_probe(&m, 10, 0.3).unwrap();
        assert!(!r.pass, "{r:?}");
        // the worst box sits inside the dead zone
        assert!(r.worst_index[0] as f64 / 10.0 + 0.09 <= 0.5 + 1e-12);
    }

    #[test]
    fn probe_validates_arguments() {
        let m = MeasureSpec::lebesgue(1).unwrap();
        assert!(positivity_probe(&m, 0, 0.3).is_err());
        assert!(positivity_probe(&m, 10, 0.0).is_err());
        assert!(positivity_probe(&m, 10, 1.0).is_err());
    }

    #[test]
    fn probe_box_geometry() {
        let b = ProbeBox::new(vec![1.0], 0.09, BoxSide::RightSided).unwrap();
        let (lo, hi) = b.axis_interval(0);
        assert!((lo - 0.91).abs() < 1e-15 && (hi - 1.0).abs() < 1e-15);

        let b = ProbeBox::new(vec![0.2], 0.09, BoxSide::RightSided).unwrap();
        let (lo, hi) = b.axis_interval(0);
        assert!((lo - 0.2).abs() < 1e-15 && (hi - 0.29).abs() < 1e-15);

        let b = ProbeBox::new(vec![0.0], 0.5, BoxSide::Symmetric).unwrap();
        assert_eq!(b.axis_interval(0), (0.0, 0.5));

        assert!(ProbeBox::new(vec![5.0], 0.1, BoxSide::Symmetric).is_err());
        assert!(ProbeBox::new(vec![0.5], 0.0, BoxSide::RightSided).is_err());
    }
}
