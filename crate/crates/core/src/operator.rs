//! Coefficients and evaluation of the measure-based sampling operator and of
//! the classical lattice-sample operator, in one to three dimensions.
//!
//! For product measures the coefficient integrals factorize: per-axis kernel
//! matrices are contracted against the node-sampled integrand, replacing
//! `(n+1)^d` separate d-dimensional integrals with d matrix products. A
//! direct per-index quadrature path exists for non-product measures and
//! doubles as the internal cross-check oracle.
//!
//! Grid evaluation likewise contracts per-axis kernel rows against the
//! coefficient tensor; every lattice term enters the sum (no truncation), so
//! constant reproduction holds to machine precision.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::KernelHandle;
use crate::measure::{axis_kernel_matrix, MeasureSpec, QuadraturePlan};
use crate::sum::CompensatedSum;

/// Guard on the coefficient-lattice size.
const MAX_LATTICE: u64 = 100_000_000;
/// Guard on direct-path work: lattice size times quadrature nodes.
const MAX_DIRECT_WORK: u64 = 1 << 33;
/// Guard on evaluation work: grid nodes times lattice size.
const DEFAULT_EVAL_BUDGET: u64 = 1 << 36;
/// Guard on intermediate tensor storage (elements).
const MAX_TENSOR_ELEMS: u64 = 1 << 26;

/// One fully specified operator instance.
#[derive(Debug, Clone)]
pub struct OperatorConfig {
    pub n: usize,
    pub dim: usize,
    pub kernel: KernelHandle,
    pub measure: MeasureSpec,
    pub plan: QuadraturePlan,
    eval_budget: u64,
}

impl OperatorConfig {
    pub fn new(
        n: usize,
        dim: usize,
        kernel: KernelHandle,
        measure: MeasureSpec,
        plan: QuadraturePlan,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("n must be >= 1".into()));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::Validation(format!("dimension {dim} is outside 1..=3")));
        }
        if measure.dim() != dim {
            return Err(Error::Validation(format!(
                "measure dimension {} does not match operator dimension {dim}",
                measure.dim()
            )));
        }
        let lattice = ((n + 1) as u64).pow(dim as u32);
        if lattice > MAX_LATTICE {
            return Err(Error::NumericGuard(format!(
                "coefficient lattice {lattice} exceeds the {MAX_LATTICE} guard"
            )));
        }
        Ok(OperatorConfig {
            n,
            dim,
            kernel,
            measure,
            plan,
            eval_budget: DEFAULT_EVAL_BUDGET,
        })
    }

    pub fn with_eval_budget(mut self, budget: u64) -> Self {
        self.eval_budget = budget;
        self
    }

    fn side(&self) -> usize {
        self.n + 1
    }
}

/// Dense coefficient tensor over the lattice `{0..n}^d`, axis 0 slowest.
/// Numerators and denominators are retained for diagnostics.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    pub n: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    pub numerators: Vec<f64>,
    pub denominators: Vec<f64>,
}

impl CoefficientTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dim);
        let side = self.n + 1;
        index.iter().fold(0usize, |acc, &k| acc * side + k)
    }

    pub fn value(&self, index: &[usize]) -> f64 {
        self.values[self.flat_index(index)]
    }

    pub fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn ratio_with_guard(
    numerators: Vec<f64>,
    denominators: Vec<f64>,
    n: usize,
    dim: usize,
    mass: f64,
) -> Result<CoefficientTable> {
    let floor = 1e-14 * mass;
    let side = n + 1;
    let mut values = vec![0.0; numerators.len()];
    for (flat, (v, (&num, &den))) in values
        .iter_mut()
        .zip(numerators.iter().zip(denominators.iter()))
        .enumerate()
    {
        if !(den > floor) {
            let mut index = vec![0usize; dim];
            let mut rest = flat;
            for axis in (0..dim).rev() {
                index[axis] = rest % side;
                rest /= side;
            }
            return Err(Error::DegenerateMeasure {
                index,
                detail: format!("denominator {den} below {floor}"),
            });
        }
        *v = num / den;
    }
    Ok(CoefficientTable {
        n,
        dim,
        values,
        numerators,
        denominators,
    })
}

/// Sample `f` at the tensor product of the axis quadrature nodes, row-major.
fn sample_on_nodes<F>(f: &F, nodes: &[f64], dim: usize) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let q = nodes.len();
    match dim {
        1 => nodes.par_iter().map(|&t| f(&[t])).collect(),
        2 => (0..q)
            .into_par_iter()
            .flat_map_iter(|i0| {
                let t0 = nodes[i0];
                (0..q).map(move |i1| (t0, nodes[i1]))
            })
            .map(|(t0, t1)| f(&[t0, t1]))
            .collect(),
        3 => (0..q * q)
            .into_par_iter()
            .flat_map_iter(|i01| {
                let t0 = nodes[i01 / q];
                let t1 = nodes[i01 % q];
                (0..q).map(move |i2| (t0, t1, nodes[i2]))
            })
            .map(|(t0, t1, t2)| f(&[t0, t1, t2]))
            .collect(),
        _ => unreachable!(),
    }
}

/// Coefficient table of the operator: ratios of f-weighted to plain kernel
/// integrals against the measure. Product measures take the factorized path;
/// non-product measures fall back to direct per-index quadrature.
pub fn coefficients<F>(f: F, config: &OperatorConfig) -> Result<CoefficientTable>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if config.measure.is_product() {
        coefficients_factorized(&f, config)
    } else {
        coefficients_direct(f, config)
    }
}

fn coefficients_factorized<F>(f: &F, config: &OperatorConfig) -> Result<CoefficientTable>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = config.dim;
    let side = config.side();
    let mats: Vec<_> = (0..d)
        .map(|axis| axis_kernel_matrix(&config.kernel, config.n, &config.plan, &config.measure, axis))
        .collect::<Result<_>>()?;
    let q = mats[0].rows();
    if (q as u64).pow(d as u32) > MAX_TENSOR_ELEMS {
        return Err(Error::NumericGuard(format!(
            "factorized assembly needs {q}^{d} node samples, over the tensor budget"
        )));
    }
    let den_axis: Vec<Vec<f64>> = mats.iter().map(|m| m.column_sums()).collect();
    let samples = sample_on_nodes(f, &mats[0].nodes, d);

    let numerators = match d {
        1 => {
            let m0 = &mats[0];
            (0..side)
                .into_par_iter()
                .map(|k| {
                    let mut acc = CompensatedSum::new();
                    for (qi, &fv) in samples.iter().enumerate() {
                        acc.add(m0.entry(qi, k) * fv);
                    }
                    acc.total()
                })
                .collect::<Vec<f64>>()
        }
        2 => {
            let (m0, m1) = (&mats[0], &mats[1]);
            // stage 1: contract axis 0 -> T[k0][q1]
            let t: Vec<Vec<f64>> = (0..side)
                .into_par_iter()
                .map(|k0| {
                    let mut acc = vec![CompensatedSum::new(); q];
                    for q0 in 0..q {
                        let b = m0.entry(q0, k0);
                        let frow = &samples[q0 * q..(q0 + 1) * q];
                        for (a, &fv) in acc.iter_mut().zip(frow) {
                            a.add(b * fv);
                        }
                    }
                    acc.into_iter().map(|a| a.total()).collect()
                })
                .collect();
            // stage 2: contract axis 1 -> num[k0][k1]
            let mut num = vec![0.0; side * side];
            num.par_chunks_mut(side).enumerate().for_each(|(k0, out)| {
                let trow = &t[k0];
                let mut acc = vec![CompensatedSum::new(); side];
                for q1 in 0..q {
                    let tv = trow[q1];
                    let brow = m1.row(q1);
                    for (a, &b) in acc.iter_mut().zip(brow) {
                        a.add(tv * b);
                    }
                }
                for (o, a) in out.iter_mut().zip(acc) {
                    *o = a.total();
                }
            });
            num
        }
        3 => {
            let (m0, m1, m2) = (&mats[0], &mats[1], &mats[2]);
            if (side as u64) * (q as u64).pow(2) > MAX_TENSOR_ELEMS {
                return Err(Error::NumericGuard(
                    "intermediate tensor exceeds the storage budget; reduce the quadrature plan".into(),
                ));
            }
            // stage 1: T1[k0][q1*q + q2]
            let t1: Vec<Vec<f64>> = (0..side)
                .into_par_iter()
                .map(|k0| {
                    let mut acc = vec![CompensatedSum::new(); q * q];
                    for q0 in 0..q {
                        let b = m0.entry(q0, k0);
                        let frow = &samples[q0 * q * q..(q0 + 1) * q * q];
                        for (a, &fv) in acc.iter_mut().zip(frow) {
                            a.add(b * fv);
                        }
                    }
                    acc.into_iter().map(|a| a.total()).collect()
                })
                .collect();
            // stage 2: T2[k0*side + k1][q2]
            let t2: Vec<Vec<f64>> = (0..side * side)
                .into_par_iter()
                .map(|k01| {
                    let (k0, k1) = (k01 / side, k01 % side);
                    let mut acc = vec![CompensatedSum::new(); q];
                    for q1 in 0..q {
                        let b = m1.entry(q1, k1);
                        let trow = &t1[k0][q1 * q..(q1 + 1) * q];
                        for (a, &tv) in acc.iter_mut().zip(trow) {
                            a.add(b * tv);
                        }
                    }
                    acc.into_iter().map(|a| a.total()).collect()
                })
                .collect();
            // stage 3: num[k0, k1, k2]
            let mut num = vec![0.0; side * side * side];
            num.par_chunks_mut(side).enumerate().for_each(|(k01, out)| {
                let trow = &t2[k01];
                let mut acc = vec![CompensatedSum::new(); side];
                for q2 in 0..q {
                    let tv = trow[q2];
                    let brow = m2.row(q2);
                    for (a, &b) in acc.iter_mut().zip(brow) {
                        a.add(tv * b);
                    }
                }
                for (o, a) in out.iter_mut().zip(acc) {
                    *o = a.total();
                }
            });
            num
        }
        _ => unreachable!(),
    };

    // denominators: outer product of the per-axis column sums
    let lattice = numerators.len();
    let mut denominators = vec![0.0; lattice];
    for (flat, den) in denominators.iter_mut().enumerate() {
        let mut rest = flat;
        let mut prod = 1.0;
        for axis in (0..d).rev() {
            prod *= den_axis[axis][rest % side];
            rest /= side;
        }
        *den = prod;
    }

    ratio_with_guard(numerators, denominators, config.n, d, config.measure.total_mass())
}

/// Direct per-index quadrature assembly; works for any measure and is the
/// cross-check oracle for the factorized path.
pub fn coefficients_direct<F>(f: F, config: &OperatorConfig) -> Result<CoefficientTable>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = config.dim;
    let side = config.side();
    let rule = config.plan.axis_rule();
    let q = rule.nodes.len();
    let lattice = (side as u64).pow(d as u32);
    let nodes_total = (q as u64).pow(d as u32);
    if nodes_total > MAX_TENSOR_ELEMS {
        return Err(Error::NumericGuard("quadrature node tensor exceeds the storage budget".into()));
    }
    if lattice * nodes_total > MAX_DIRECT_WORK {
        return Err(Error::NumericGuard(format!(
            "direct assembly work {} exceeds the {MAX_DIRECT_WORK} guard",
            lattice * nodes_total
        )));
    }

    // phi rows shared by all axes (the plan is identical per axis)
    let nf = config.n as f64;
    let mut phi = vec![0.0; q * side];
    for (qi, &t) in rule.nodes.iter().enumerate() {
        for k in 0..side {
            phi[qi * side + k] = config.kernel.phi(nf * t - k as f64);
        }
    }

    let samples = sample_on_nodes(&f, &rule.nodes, d);

    // density times tensor weight at every node
    let weighted: Result<Vec<f64>> = (0..samples.len())
        .into_par_iter()
        .map(|flat| {
            let mut rest = flat;
            let mut pt = [0.0f64; 3];
            let mut w = 1.0;
            for axis in (0..d).rev() {
                let qi = rest % q;
                rest /= q;
                pt[axis] = rule.nodes[qi];
                w *= rule.weights[qi];
            }
            let dens = config.measure.density_at(&pt[..d]);
            if dens < 0.0 || !dens.is_finite() {
                return Err(Error::MeasureIntegrity(format!(
                    "density is {dens} at node {:?}",
                    &pt[..d]
                )));
            }
            Ok(dens * w)
        })
        .collect();
    let weighted = weighted?;

    let pairs: Vec<(f64, f64)> = (0..lattice as usize)
        .into_par_iter()
        .map(|beta_flat| {
            let mut beta = [0usize; 3];
            let mut rest = beta_flat;
            for axis in (0..d).rev() {
                beta[axis] = rest % side;
                rest /= side;
            }
            let mut num = CompensatedSum::new();
            let mut den = CompensatedSum::new();
            for (flat, (&fv, &wv)) in samples.iter().zip(&weighted).enumerate() {
                let mut rest = flat;
                let mut big_phi = 1.0;
                for axis in (0..d).rev() {
                    let qi = rest % q;
                    rest /= q;
                    big_phi *= phi[qi * side + beta[axis]];
                }
                let w = big_phi * wv;
                num.add(fv * w);
                den.add(w);
            }
            (num.total(), den.total())
        })
        .collect();

    let (numerators, denominators): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    ratio_with_guard(numerators, denominators, config.n, d, config.measure.total_mass())
}

/// Evaluate the operator at one point of the hypercube. The numerator and
/// denominator accumulate over the same lattice walk, so a constant table
/// reproduces its constant to within an ulp.
pub fn apply(table: &CoefficientTable, config: &OperatorConfig, x: &[f64]) -> Result<f64> {
    if x.len() != config.dim {
        return Err(Error::Precondition(format!(
            "point dimension {} does not match operator dimension {}",
            x.len(),
            config.dim
        )));
    }
    for &xi in x {
        if !(0.0..=1.0).contains(&xi) {
            return Err(Error::Precondition(format!("point {x:?} is outside the unit cube")));
        }
    }
    let side = config.side();
    let nf = config.n as f64;
    let rows: Vec<Vec<f64>> = x
        .iter()
        .map(|&xi| (0..side).map(|k| config.kernel.phi(nf * xi - k as f64)).collect())
        .collect();

    let mut num = CompensatedSum::new();
    let mut den = CompensatedSum::new();
    match config.dim {
        1 => {
            for k in 0..side {
                let w = rows[0][k];
                num.add(table.values[k] * w);
                den.add(w);
            }
        }
        2 => {
            for k0 in 0..side {
                let r0 = rows[0][k0];
                let crow = &table.values[k0 * side..(k0 + 1) * side];
                for (k1, &c) in crow.iter().enumerate() {
                    let w = r0 * rows[1][k1];
                    num.add(c * w);
                    den.add(w);
                }
            }
        }
        3 => {
            for k0 in 0..side {
                let r0 = rows[0][k0];
                for k1 in 0..side {
                    let r01 = r0 * rows[1][k1];
                    let base = (k0 * side + k1) * side;
                    for k2 in 0..side {
                        let w = r01 * rows[2][k2];
                        num.add(table.values[base + k2] * w);
                        den.add(w);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    let den = den.total();
    if !(den > 1e-300) {
        return Err(Error::NumericGuard(format!("kernel denominator underflow at {x:?}")));
    }
    Ok(num.total() / den)
}

/// The classical operator: lattice samples `f(beta/n)` in place of integral
/// coefficients.
pub fn apply_classical<F>(f: F, kernel: &KernelHandle, n: usize, x: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let d = x.len();
    if !(1..=3).contains(&d) {
        return Err(Error::Precondition(format!("dimension {d} is outside 1..=3")));
    }
    if n == 0 {
        return Err(Error::Precondition("n must be >= 1".into()));
    }
    for &xi in x {
        if !(0.0..=1.0).contains(&xi) {
            return Err(Error::Precondition(format!("point {x:?} is outside the unit cube")));
        }
    }
    let side = n + 1;
    let nf = n as f64;
    let rows: Vec<Vec<f64>> = x
        .iter()
        .map(|&xi| (0..side).map(|k| kernel.phi(nf * xi - k as f64)).collect())
        .collect();

    let mut num = CompensatedSum::new();
    let mut den = CompensatedSum::new();
    let mut lattice_pt = [0.0f64; 3];
    let lattice = side.pow(d as u32);
    for flat in 0..lattice {
        let mut rest = flat;
        let mut w = 1.0;
        for axis in (0..d).rev() {
            let k = rest % side;
            rest /= side;
            lattice_pt[axis] = k as f64 / nf;
            w *= rows[axis][k];
        }
        num.add(f(&lattice_pt[..d]) * w);
        den.add(w);
    }
    let den = den.total();
    if !(den > 1e-300) {
        return Err(Error::NumericGuard(format!("kernel denominator underflow at {x:?}")));
    }
    Ok(num.total() / den)
}

/// Operator values on a tensor grid plus the grid itself.
#[derive(Debug, Clone)]
pub struct Field {
    pub axes: Vec<Vec<f64>>,
    /// Row-major values, axis 0 slowest.
    pub values: Vec<f64>,
}

impl Field {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Coordinates of the flat node index, axis 0 slowest.
    pub fn node(&self, flat: usize, out: &mut [f64]) {
        let mut rest = flat;
        for axis in (0..self.dim()).rev() {
            let r = self.axes[axis].len();
            out[axis] = self.axes[axis][rest % r];
            rest /= r;
        }
    }
}

/// Evaluate the operator on the tensor product of arbitrary per-axis
/// coordinate lists (all inside `[0,1]`). All `(n+1)^d` lattice terms enter
/// every node's sums via staged per-axis contraction.
pub fn evaluate_on_axes(
    table: &CoefficientTable,
    config: &OperatorConfig,
    axes: &[Vec<f64>],
) -> Result<Field> {
    if axes.len() != config.dim {
        return Err(Error::Precondition(format!(
            "got {} axes for dimension {}",
            axes.len(),
            config.dim
        )));
    }
    let side = config.side();
    let nf = config.n as f64;
    let mut grid_nodes = 1u64;
    for axis in axes {
        if axis.is_empty() {
            return Err(Error::Precondition("empty evaluation axis".into()));
        }
        for &x in axis {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Precondition(format!("grid point {x} is outside [0, 1]")));
            }
        }
        grid_nodes = grid_nodes.saturating_mul(axis.len() as u64);
    }
    let work = grid_nodes.saturating_mul((side as u64).pow(config.dim as u32));
    if work > config.eval_budget {
        return Err(Error::NumericGuard(format!(
            "evaluation work {work} exceeds the {} budget",
            config.eval_budget
        )));
    }
    if grid_nodes > MAX_TENSOR_ELEMS {
        return Err(Error::NumericGuard("evaluation grid exceeds the storage budget".into()));
    }

    // per-axis kernel rows and their sums
    let phi_rows: Vec<Vec<f64>> = axes
        .iter()
        .map(|axis| {
            let mut p = vec![0.0; axis.len() * side];
            for (i, &x) in axis.iter().enumerate() {
                for k in 0..side {
                    p[i * side + k] = config.kernel.phi(nf * x - k as f64);
                }
            }
            p
        })
        .collect();
    let row_sums: Vec<Vec<f64>> = phi_rows
        .iter()
        .zip(axes)
        .map(|(p, axis)| {
            (0..axis.len())
                .map(|i| {
                    let mut acc = CompensatedSum::new();
                    for &v in &p[i * side..(i + 1) * side] {
                        acc.add(v);
                    }
                    acc.total()
                })
                .collect()
        })
        .collect();

    let values = match config.dim {
        1 => {
            let r = axes[0].len();
            (0..r)
                .into_par_iter()
                .map(|i| {
                    let prow = &phi_rows[0][i * side..(i + 1) * side];
                    let mut acc = CompensatedSum::new();
                    for (k, &p) in prow.iter().enumerate() {
                        acc.add(table.values[k] * p);
                    }
                    acc.total() / row_sums[0][i]
                })
                .collect::<Vec<f64>>()
        }
        2 => {
            let (r0, r1) = (axes[0].len(), axes[1].len());
            // G[j][k0] = sum_k1 c[k0, k1] * phi1[j, k1]
            let g: Vec<Vec<f64>> = (0..r1)
                .into_par_iter()
                .map(|j| {
                    let prow = &phi_rows[1][j * side..(j + 1) * side];
                    (0..side)
                        .map(|k0| {
                            let crow = &table.values[k0 * side..(k0 + 1) * side];
                            let mut acc = CompensatedSum::new();
                            for (&c, &p) in crow.iter().zip(prow) {
                                acc.add(c * p);
                            }
                            acc.total()
                        })
                        .collect()
                })
                .collect();
            let mut values = vec![0.0; r0 * r1];
            values.par_chunks_mut(r1).enumerate().for_each(|(i, out)| {
                let prow = &phi_rows[0][i * side..(i + 1) * side];
                let rs0 = row_sums[0][i];
                for (j, o) in out.iter_mut().enumerate() {
                    let grow = &g[j];
                    let mut acc = CompensatedSum::new();
                    for (&p, &gv) in prow.iter().zip(grow) {
                        acc.add(p * gv);
                    }
                    *o = acc.total() / (rs0 * row_sums[1][j]);
                }
            });
            values
        }
        3 => {
            let (r0, r1, r2) = (axes[0].len(), axes[1].len(), axes[2].len());
            if (r2 as u64) * (side as u64).pow(2) > MAX_TENSOR_ELEMS
                || (r1 as u64) * (r2 as u64) * side as u64 > MAX_TENSOR_ELEMS
            {
                return Err(Error::NumericGuard(
                    "intermediate evaluation tensor exceeds the storage budget".into(),
                ));
            }
            // H[l][k0*side + k1] = sum_k2 c[k0,k1,k2] * phi2[l,k2]
            let h: Vec<Vec<f64>> = (0..r2)
                .into_par_iter()
                .map(|l| {
                    let prow = &phi_rows[2][l * side..(l + 1) * side];
                    (0..side * side)
                        .map(|k01| {
                            let crow = &table.values[k01 * side..(k01 + 1) * side];
                            let mut acc = CompensatedSum::new();
                            for (&c, &p) in crow.iter().zip(prow) {
                                acc.add(c * p);
                            }
                            acc.total()
                        })
                        .collect()
                })
                .collect();
            // G[j*r2 + l][k0] = sum_k1 H[l][k0,k1] * phi1[j,k1]
            let g: Vec<Vec<f64>> = (0..r1 * r2)
                .into_par_iter()
                .map(|jl| {
                    let (j, l) = (jl / r2, jl % r2);
                    let prow = &phi_rows[1][j * side..(j + 1) * side];
                    (0..side)
                        .map(|k0| {
                            let hrow = &h[l][k0 * side..(k0 + 1) * side];
                            let mut acc = CompensatedSum::new();
                            for (&hv, &p) in hrow.iter().zip(prow) {
                                acc.add(hv * p);
                            }
                            acc.total()
                        })
                        .collect()
                })
                .collect();
            let mut values = vec![0.0; r0 * r1 * r2];
            values.par_chunks_mut(r1 * r2).enumerate().for_each(|(i, out)| {
                let prow = &phi_rows[0][i * side..(i + 1) * side];
                let rs0 = row_sums[0][i];
                for (jl, o) in out.iter_mut().enumerate() {
                    let (j, l) = (jl / r2, jl % r2);
                    let grow = &g[jl];
                    let mut acc = CompensatedSum::new();
                    for (&p, &gv) in prow.iter().zip(grow) {
                        acc.add(p * gv);
                    }
                    *o = acc.total() / (rs0 * row_sums[1][j] * row_sums[2][l]);
                }
            });
            values
        }
        _ => unreachable!(),
    };

    Ok(Field {
        axes: axes.to_vec(),
        values,
    })
}

/// Evaluate on the uniform grid with `resolution` points per axis including
/// both endpoints.
pub fn evaluate_grid(
    table: &CoefficientTable,
    config: &OperatorConfig,
    resolution: usize,
) -> Result<Field> {
    if resolution < 2 {
        return Err(Error::Precondition(format!("resolution {resolution} must be >= 2")));
    }
    let axis: Vec<f64> = (0..resolution)
        .map(|i| i as f64 / (resolution - 1) as f64)
        .collect();
    let axes = vec![axis; config.dim];
    evaluate_on_axes(table, config, &axes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationSpec;

    fn logistic() -> KernelHandle {
        KernelHandle::new(ActivationSpec::logistic()).unwrap()
    }

    fn tanh_kernel() -> KernelHandle {
        KernelHandle::new(ActivationSpec::tanh()).unwrap()
    }

    fn config(n: usize, dim: usize, kernel: KernelHandle, measure: MeasureSpec) -> OperatorConfig {
        OperatorConfig::new(n, dim, kernel, measure, QuadraturePlan::default_plan()).unwrap()
    }

    fn lebesgue(d: usize) -> MeasureSpec {
        MeasureSpec::lebesgue(d).unwrap()
    }

    fn jacobi2() -> MeasureSpec {
        MeasureSpec::jacobi(&[(0.5, 0.5), (0.5, 0.5)], &QuadraturePlan::default_plan()).unwrap()
    }

    #[test]
    fn constant_coefficients() {
        for measure in [lebesgue(2), jacobi2()] {
            let cfg = config(6, 2, logistic(), measure);
            let table = coefficients(|_| 3.7, &cfg).unwrap();
            for &v in &table.values {
                assert!((v - 3.7).abs() < 1e-12 * 3.7, "coefficient {v}");
            }
        }
    }

    #[test]
    fn coefficients_match_trapezoid_oracle_d1() {
        // independent 1e5-point trapezoid quadrature for n = 1, f(t) = t
        let cfg = OperatorConfig::new(
            1,
            1,
            logistic(),
            lebesgue(1),
            QuadraturePlan::default_plan(),
        )
        .unwrap();
        let table = coefficients(|pt| pt[0], &cfg).unwrap();
        let kernel = logistic();
        for k in 0..=1usize {
            let m = 100_000;
            let (mut num, mut den) = (0.0f64, 0.0f64);
            for i in 0..=m {
                let t = i as f64 / m as f64;
                let w = if i == 0 || i == m { 0.5 } else { 1.0 } / m as f64;
                let p = kernel.phi(t - k as f64);
                num += w * t * p;
                den += w * p;
            }
            let oracle = num / den;
            assert!(
                (table.values[k] - oracle).abs() < 1e-8,
                "k={k}: {} vs {oracle}",
                table.values[k]
            );
        }
    }

    #[test]
    fn coefficients_bounded_by_sup() {
        let f1 = |pt: &[f64]| {
            (std::f64::consts::PI * pt[0]).sin() * (std::f64::consts::PI * pt[1]).cos()
                + 0.5 * pt[0] * pt[0] * pt[1]
        };
        let cfg = config(10, 2, logistic(), lebesgue(2));
        let table = coefficients(f1, &cfg).unwrap();
        assert!(table.max_abs_value() <= 1.5 * (1.0 + 1e-12));
    }

    #[test]
    fn nonnegative_f_gives_nonnegative_coefficients() {
        let cfg = config(8, 2, tanh_kernel(), lebesgue(2));
        let table = coefficients(|pt| (3.0 * pt[0] + pt[1]).sin().abs(), &cfg).unwrap();
        for &v in &table.values {
            assert!(v >= 0.0);
        }
        let mut pt = [0.0f64; 2];
        let field = evaluate_grid(&table, &cfg, 51).unwrap();
        for (flat, &v) in field.values.iter().enumerate() {
            field.node(flat, &mut pt);
            assert!(v >= -1e-15, "negative operator value {v} at {pt:?}");
        }
    }

    #[test]
    fn factorized_agrees_with_direct() {
        let f = |pt: &[f64]| (2.0 * pt[0]).sin() + pt[1] * pt[1] * 0.3;
        for measure in [lebesgue(2), jacobi2()] {
            let cfg = OperatorConfig::new(
                8,
                2,
                logistic(),
                measure,
                QuadraturePlan::new(16, 4).unwrap(),
            )
            .unwrap();
            let fac = coefficients(f, &cfg).unwrap();
            let dir = coefficients_direct(f, &cfg).unwrap();
            for (a, b) in fac.values.iter().zip(&dir.values) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn direct_path_handles_joint_measures() {
        let plan = QuadraturePlan::new(16, 4).unwrap();
        let joint = MeasureSpec::from_tag("density:1 + t1*t2", 2, &plan).unwrap();
        let cfg = OperatorConfig::new(4, 2, logistic(), joint, plan).unwrap();
        let table = coefficients(|pt| pt[0] + pt[1], &cfg).unwrap();
        assert!(table.max_abs_value() <= 2.0 * (1.0 + 1e-12));
        // constant reproduction survives the joint path
        let table1 = coefficients(|_| 1.0, &cfg).unwrap();
        let v = apply(&table1, &cfg, &[0.3, 0.8]).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn apply_reproduces_constant_table() {
        let cfg = config(5, 2, logistic(), lebesgue(2));
        let lattice = 36;
        let table = CoefficientTable {
            n: 5,
            dim: 2,
            values: vec![1.0; lattice],
            numerators: vec![1.0; lattice],
            denominators: vec![1.0; lattice],
        };
        // exact for c = 1: numerator and denominator walks are bit-aligned
        assert_eq!(apply(&table, &cfg, &[0.3, 0.7]).unwrap(), 1.0);

        let table = CoefficientTable {
            n: 5,
            dim: 2,
            values: vec![3.7; lattice],
            numerators: vec![3.7; lattice],
            denominators: vec![1.0; lattice],
        };
        let v = apply(&table, &cfg, &[0.123, 0.456]).unwrap();
        assert!((v - 3.7).abs() < 1e-14);
    }

    #[test]
    fn apply_small_n_matches_hand_ratio() {
        // d = 1, n = 2, f(t) = t at x = 0.5: three-term ratio from the
        // coefficient table itself
        let cfg = OperatorConfig::new(2, 1, logistic(), lebesgue(1), QuadraturePlan::default_plan())
            .unwrap();
        let table = coefficients(|pt| pt[0], &cfg).unwrap();
        let kernel = logistic();
        let x = 0.5;
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..=2usize {
            let w = kernel.phi(2.0 * x - k as f64);
            num += table.values[k] * w;
            den += w;
        }
        let v = apply(&table, &cfg, &[x]).unwrap();
        assert!((v - num / den).abs() < 1e-13);
    }

    #[test]
    fn apply_rejects_outside_points() {
        let cfg = config(4, 2, logistic(), lebesgue(2));
        let table = coefficients(|_| 1.0, &cfg).unwrap();
        assert!(apply(&table, &cfg, &[1.2, 0.5]).is_err());
        assert!(apply(&table, &cfg, &[0.5]).is_err());
    }

    #[test]
    fn reflection_symmetry_of_apply() {
        // symmetric measure + reflection-symmetric f: values at x and 1-x agree
        let f = |pt: &[f64]| ((pt[0] - 0.5) * (pt[0] - 0.5) + (pt[1] - 0.5) * (pt[1] - 0.5)).cos();
        let cfg = config(9, 2, logistic(), lebesgue(2));
        let table = coefficients(f, &cfg).unwrap();
        for (a, b) in [([0.2, 0.7], [0.8, 0.3]), ([0.05, 0.45], [0.95, 0.55])] {
            let va = apply(&table, &cfg, &a).unwrap();
            let vb = apply(&table, &cfg, &b).unwrap();
            assert!((va - vb).abs() < 1e-10, "{va} vs {vb}");
        }
    }

    #[test]
    fn coefficient_reflection_equivariance() {
        let f = |pt: &[f64]| (1.7 * pt[0]).sin() + 0.3 * pt[1];
        let fr = |pt: &[f64]| (1.7 * (1.0 - pt[0])).sin() + 0.3 * (1.0 - pt[1]);
        let n = 7;
        let cfg = config(n, 2, logistic(), lebesgue(2));
        let t1 = coefficients(f, &cfg).unwrap();
        let t2 = coefficients(fr, &cfg).unwrap();
        for k0 in 0..=n {
            for k1 in 0..=n {
                let a = t1.value(&[k0, k1]);
                let b = t2.value(&[n - k0, n - k1]);
                assert!((a - b).abs() < 1e-10, "({k0},{k1}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn classical_operator_basics() {
        let kernel = logistic();
        // constants reproduce
        let v = apply_classical(|_| 1.0, &kernel, 7, &[0.31, 0.62]).unwrap();
        assert_eq!(v, 1.0);

        // d = 1, n = 1, x = 0: [f(0) phi(0) + f(1) phi(-1)] / [phi(0) + phi(-1)]
        let v = apply_classical(|pt| pt[0], &kernel, 1, &[0.0]).unwrap();
        let oracle = (0.0 * kernel.phi(0.0) + 1.0 * kernel.phi(-1.0))
            / (kernel.phi(0.0) + kernel.phi(-1.0));
        assert!((v - oracle).abs() < 1e-15);

        assert!(apply_classical(|_| 0.0, &kernel, 0, &[0.5]).is_err());
        assert!(apply_classical(|_| 0.0, &kernel, 3, &[1.5]).is_err());
    }

    #[test]
    fn classical_error_decreases_with_n() {
        let kernel = logistic();
        let f = |pt: &[f64]| (std::f64::consts::PI * pt[0]).sin();
        let sup_err = |n: usize| {
            let mut worst = 0.0f64;
            for i in 0..=200 {
                let x = i as f64 / 200.0;
                let v = apply_classical(f, &kernel, n, &[x]).unwrap();
                worst = worst.max((v - f(&[x])).abs());
            }
            worst
        };
        assert!(sup_err(20) < sup_err(10));
    }

    #[test]
    fn grid_evaluation_constants_and_bounds() {
        let cfg = config(6, 2, tanh_kernel(), lebesgue(2));
        let table = coefficients(|_| 2.25, &cfg).unwrap();
        let field = evaluate_grid(&table, &cfg, 41).unwrap();
        assert_eq!(field.len(), 41 * 41);
        for &v in &field.values {
            assert!((v - 2.25).abs() < 1e-12);
        }

        let f = |pt: &[f64]| (7.0 * pt[0] * pt[1]).sin();
        let table = coefficients(f, &cfg).unwrap();
        let field = evaluate_grid(&table, &cfg, 41).unwrap();
        let bound = table.max_abs_value() * (1.0 + 1e-12);
        for &v in &field.values {
            assert!(v.abs() <= bound);
        }
    }

    #[test]
    fn grid_matches_pointwise_apply() {
        let cfg = config(5, 2, logistic(), jacobi2());
        let table = coefficients(|pt| pt[0] * pt[0] + pt[1], &cfg).unwrap();
        let field = evaluate_grid(&table, &cfg, 11).unwrap();
        let mut pt = [0.0f64; 2];
        for flat in [0usize, 7, 60, 120] {
            field.node(flat, &mut pt);
            let direct = apply(&table, &cfg, &pt).unwrap();
            assert!(
                (field.values[flat] - direct).abs() < 1e-12,
                "flat={flat}: {} vs {direct}",
                field.values[flat]
            );
        }
    }

    #[test]
    fn d3_smoke() {
        let plan = QuadraturePlan::new(8, 4).unwrap();
        let m = MeasureSpec::lebesgue(3).unwrap();
        let cfg = OperatorConfig::new(3, 3, logistic(), m, plan).unwrap();
        let table = coefficients(|_| 1.0, &cfg).unwrap();
        let v = apply(&table, &cfg, &[0.2, 0.5, 0.9]).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let field = evaluate_grid(&table, &cfg, 9).unwrap();
        for &v in &field.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
        // separable linear function is handled consistently across paths
        let g = |pt: &[f64]| pt[0] + 2.0 * pt[1] + 3.0 * pt[2];
        let tg = coefficients(g, &cfg).unwrap();
        let dg = coefficients_direct(g, &cfg).unwrap();
        for (a, b) in tg.values.iter().zip(&dg.values) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn resource_guards_trip() {
        let cfg = config(40, 2, logistic(), lebesgue(2)).with_eval_budget(1_000);
        let table = coefficients(|_| 1.0, &cfg).unwrap();
        assert!(matches!(
            evaluate_grid(&table, &cfg, 201),
            Err(Error::NumericGuard(_))
        ));
        assert!(evaluate_grid(&table, &cfg, 1).is_err());
    }

    #[test]
    fn degenerate_measure_is_reported() {
        // density supported only on the left half: far-right coefficients
        // lose their denominators
        let plan = QuadraturePlan::new(16, 4).unwrap();
        let dens: crate::measure::JointDensity =
            std::sync::Arc::new(|pt: &[f64]| if pt[0] < 0.25 { 1.0 } else { 0.0 });
        let m = MeasureSpec::joint("leftonly", 1, dens, &plan).unwrap();
        let cfg = OperatorConfig::new(60, 1, logistic(), m, plan).unwrap();
        let err = coefficients(|pt| pt[0], &cfg).unwrap_err();
        match err {
            Error::DegenerateMeasure { index, .. } => {
                assert!(index[0] > 15, "offending index {index:?} should sit in the dead zone");
            }
            other => panic!("expected DegenerateMeasure, got {other:?}"),
        }
    }
}
