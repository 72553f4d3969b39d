//! Config-driven experiment runner: builds the operator for each n in a
//! sweep, measures sup and `L^p(rho)` errors, and emits CSV rows.
//!
//! CSV schema: `n,sup_error,l1_error[,lp_error_p=<p>...],runtime_ms,config_hash`.
//! Everything except `runtime_ms` is deterministic for a given config,
//! regardless of thread count.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::sup_error;
use crate::error::{Error, Result};
use crate::functions::{resolve_function, TestFn};
use crate::kernel::KernelHandle;
use crate::measure::{integrate_indexed, MeasureSpec, QuadraturePlan};
use crate::operator::{coefficients, evaluate_grid, evaluate_on_axes, Field, OperatorConfig};
use crate::ActivationSpec;

fn default_p_list() -> Vec<f64> {
    vec![1.0]
}

fn default_d() -> usize {
    2
}

fn default_panels() -> usize {
    QuadraturePlan::DEFAULT_PANELS
}

fn default_nodes() -> usize {
    QuadraturePlan::DEFAULT_NODES
}

fn default_resolution() -> usize {
    201
}

/// One experiment: an activation, a measure, a test function, and an n sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `logistic`, `tanh`, or `custom:<expr in x>`.
    pub activation: String,
    /// `lebesgue`, `jacobi:a,b,...`, or `density:<expr in t1..td>`.
    pub measure: String,
    /// `f1`, `f2`, or an expression in `x`/`y`/`z`.
    pub function: String,
    pub n_list: Vec<usize>,
    #[serde(default = "default_p_list")]
    pub p_list: Vec<f64>,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_panels")]
    pub quad_panels: usize,
    #[serde(default = "default_nodes")]
    pub quad_nodes: usize,
    /// Extra panel boundaries; the discontinuity lines of `f2` are always
    /// registered automatically when `f2` is selected.
    #[serde(default)]
    pub breakpoints: Vec<f64>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Measure defining the error norm; defaults to `measure`.
    #[serde(default)]
    pub norm_measure: Option<String>,
    /// Optional CSV output path (CLI `--out` overrides).
    #[serde(default)]
    pub output: Option<String>,
}

/// The semantic fields that feed the config hash; the output path is
/// excluded so re-running into a different file keeps the same fingerprint.
#[derive(Serialize)]
struct HashView<'a> {
    activation: &'a str,
    measure: &'a str,
    function: &'a str,
    n_list: &'a [usize],
    p_list: &'a [f64],
    d: usize,
    quad_panels: usize,
    quad_nodes: usize,
    breakpoints: &'a [f64],
    resolution: usize,
    norm_measure: &'a Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(src: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(src)
            .map_err(|e| Error::Validation(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() {
            return Err(Error::Validation("n_list must not be empty".into()));
        }
        for w in self.n_list.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Validation(format!(
                    "n_list must be strictly ascending ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if self.n_list[0] == 0 {
            return Err(Error::Validation("n values must be >= 1".into()));
        }
        if !(1..=3).contains(&self.d) {
            return Err(Error::Validation(format!("d = {} is outside 1..=3", self.d)));
        }
        if self.resolution < 2 {
            return Err(Error::Validation(format!(
                "resolution {} must be >= 2",
                self.resolution
            )));
        }
        if self.p_list.is_empty() {
            return Err(Error::Validation("p_list must not be empty".into()));
        }
        for &p in &self.p_list {
            if !(p.is_finite() && p >= 1.0) {
                return Err(Error::Validation(format!("p = {p} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Hex fingerprint of the semantic config fields.
    pub fn config_hash(&self) -> String {
        let view = HashView {
            activation: &self.activation,
            measure: &self.measure,
            function: &self.function,
            n_list: &self.n_list,
            p_list: &self.p_list,
            d: self.d,
            quad_panels: self.quad_panels,
            quad_nodes: self.quad_nodes,
            breakpoints: &self.breakpoints,
            resolution: self.resolution,
            norm_measure: &self.norm_measure,
        };
        let canonical = serde_json::to_string(&view).expect("hash view serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }

    /// Error norms always include p = 1 (the `l1_error` column).
    pub fn effective_p_list(&self) -> Vec<f64> {
        let mut ps = vec![1.0];
        for &p in &self.p_list {
            if (p - 1.0).abs() > 1e-12 {
                ps.push(p);
            }
        }
        ps
    }

    /// Resolve tags into runnable parts.
    pub fn build(&self) -> Result<Runner> {
        self.validate()?;
        let activation = ActivationSpec::from_tag(&self.activation)?;
        let kernel = KernelHandle::new(activation)?;
        let (f, auto_breaks) = resolve_function(&self.function, self.d)?;
        let mut breaks = self.breakpoints.clone();
        breaks.extend_from_slice(&auto_breaks);
        let plan = QuadraturePlan::new(self.quad_panels, self.quad_nodes)?.with_breakpoints(&breaks)?;
        let measure = MeasureSpec::from_tag(&self.measure, self.d, &plan)?;
        let norm_measure = match &self.norm_measure {
            Some(tag) => MeasureSpec::from_tag(tag, self.d, &plan)?,
            None => measure.clone(),
        };
        Ok(Runner {
            kernel,
            measure,
            norm_measure,
            plan,
            f,
            d: self.d,
            resolution: self.resolution,
            p_list: self.effective_p_list(),
        })
    }
}

/// Resolved experiment parts, reusable across the n sweep.
pub struct Runner {
    pub kernel: KernelHandle,
    pub measure: MeasureSpec,
    pub norm_measure: MeasureSpec,
    pub plan: QuadraturePlan,
    pub f: TestFn,
    pub d: usize,
    pub resolution: usize,
    pub p_list: Vec<f64>,
}

/// Errors of one sweep step, plus optional extras computed on request.
pub struct StepErrors {
    pub sup: f64,
    pub lp: Vec<(f64, f64)>,
    /// L^1 error under the extra norm measure, when one was supplied.
    pub extra_l1: Option<f64>,
}

impl Runner {
    /// Build the operator at one n and measure all requested errors. The
    /// operator values are evaluated once on the sup grid and once on the
    /// quadrature nodes; every norm consumes the latter by index.
    pub fn errors_at(&self, n: usize, extra_norm: Option<&MeasureSpec>) -> Result<StepErrors> {
        let config = OperatorConfig::new(
            n,
            self.d,
            self.kernel.clone(),
            self.measure.clone(),
            self.plan.clone(),
        )?;
        let f = &self.f;
        let table = coefficients(|pt: &[f64]| f(pt), &config)?;

        let field = evaluate_grid(&table, &config, self.resolution)?;
        let sup = sup_error(|pt| f(pt), &field);

        let rule = self.plan.axis_rule();
        let axes = vec![rule.nodes.clone(); self.d];
        let qfield: Field = evaluate_on_axes(&table, &config, &axes)?;

        let mut lp = Vec::with_capacity(self.p_list.len());
        for &p in &self.p_list {
            let raw = integrate_indexed(
                |flat, pt| (f(pt) - qfield.values[flat]).abs().powf(p),
                &self.norm_measure,
                &self.plan,
            )?;
            lp.push((p, raw.max(0.0).powf(1.0 / p)));
        }

        let extra_l1 = match extra_norm {
            Some(m) => {
                let raw = integrate_indexed(
                    |flat, pt| (f(pt) - qfield.values[flat]).abs(),
                    m,
                    &self.plan,
                )?;
                Some(raw.max(0.0))
            }
            None => None,
        };

        Ok(StepErrors { sup, lp, extra_l1 })
    }
}

/// One CSV row of an experiment sweep.
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub n: usize,
    pub sup_error: f64,
    pub lp_errors: Vec<(f64, f64)>,
    pub runtime_ms: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub header: String,
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{}", row.n));
            out.push_str(&format!(",{}", row.sup_error));
            for &(_, e) in &row.lp_errors {
                out.push_str(&format!(",{e}"));
            }
            out.push_str(&format!(",{:.3},{}", row.runtime_ms, row.config_hash));
            out.push('\n');
        }
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

pub fn csv_header(p_list: &[f64]) -> String {
    let mut h = String::from("n,sup_error,l1_error");
    for &p in p_list {
        if (p - 1.0).abs() > 1e-12 {
            h.push_str(&format!(",lp_error_p={p}"));
        }
    }
    h.push_str(",runtime_ms,config_hash");
    h
}

/// Run the sweep: one row per n, errors nonnegative and finite.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let runner = config.build()?;
    let hash = config.config_hash();
    let header = csv_header(&runner.p_list);
    let mut rows = Vec::with_capacity(config.n_list.len());
    for &n in &config.n_list {
        let t0 = Instant::now();
        let step = runner.errors_at(n, None)?;
        let runtime_ms = t0.elapsed().as_secs_f64() * 1e3;
        for &(p, e) in &step.lp {
            if !e.is_finite() || e < 0.0 {
                return Err(Error::NumericGuard(format!(
                    "L^{p} error {e} at n = {n} is not a finite nonnegative number"
                )));
            }
        }
        rows.push(ExperimentRow {
            n,
            sup_error: step.sup,
            lp_errors: step.lp,
            runtime_ms,
            config_hash: hash.clone(),
        });
    }
    Ok(ExperimentResult { header, rows })
}

/// Plain-text grid dump: header `x y f Sf` (d = 2), one row per grid node.
pub fn write_grid_dump<W: Write, F>(w: &mut W, field: &Field, f: F) -> Result<()>
where
    F: Fn(&[f64]) -> f64,
{
    let d = field.dim();
    let header = match d {
        1 => "x f Sf",
        2 => "x y f Sf",
        3 => "x y z f Sf",
        _ => unreachable!(),
    };
    writeln!(w, "{header}")?;
    let mut pt = [0.0f64; 3];
    for (flat, &v) in field.values.iter().enumerate() {
        field.node(flat, &mut pt[..d]);
        for &c in &pt[..d] {
            write!(w, "{c} ")?;
        }
        writeln!(w, "{} {}", f(&pt[..d]), v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            activation: "logistic".into(),
            measure: "lebesgue".into(),
            function: "f1".into(),
            n_list: vec![4, 8],
            p_list: vec![1.0],
            d: 2,
            quad_panels: 8,
            quad_nodes: 4,
            breakpoints: vec![],
            resolution: 21,
            norm_measure: None,
            output: None,
        }
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = tiny_config();
        let json = cfg.to_json();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.config_hash(), back.config_hash());
    }

    #[test]
    fn config_defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(
            r#"{"activation":"tanh","measure":"lebesgue","function":"f1","n_list":[5]}"#,
        )
        .unwrap();
        assert_eq!(cfg.d, 2);
        assert_eq!(cfg.quad_panels, 64);
        assert_eq!(cfg.quad_nodes, 8);
        assert_eq!(cfg.resolution, 201);
        assert_eq!(cfg.p_list, vec![1.0]);
    }

    #[test]
    fn config_validation_errors() {
        let mut cfg = tiny_config();
        cfg.n_list = vec![];
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config();
        cfg.n_list = vec![8, 4];
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config();
        cfg.p_list = vec![0.5];
        assert!(cfg.validate().is_err());

        assert!(ExperimentConfig::from_json("{\"not\": \"a config\"}").is_err());
    }

    #[test]
    fn hash_ignores_output_path() {
        let mut a = tiny_config();
        let mut b = tiny_config();
        a.output = Some("one.csv".into());
        b.output = Some("two.csv".into());
        assert_eq!(a.config_hash(), b.config_hash());
        b.n_list = vec![4, 8, 16];
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn run_tiny_experiment() {
        let result = run_experiment(&tiny_config()).unwrap();
        assert_eq!(result.rows.len(), 2);
        assert!(result.header.starts_with("n,sup_error,l1_error"));
        for row in &result.rows {
            assert!(row.sup_error.is_finite() && row.sup_error >= 0.0);
            for &(_, e) in &row.lp_errors {
                assert!(e.is_finite() && e >= 0.0);
            }
        }
        // errors shrink from n = 4 to n = 8 for the smooth function
        assert!(result.rows[1].sup_error < result.rows[0].sup_error);
        let csv = result.to_csv();
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn csv_is_deterministic_modulo_runtime() {
        let strip = |csv: &str| {
            csv.lines()
                .map(|line| {
                    let cols: Vec<&str> = line.split(',').collect();
                    if cols.len() < 2 {
                        return line.to_string();
                    }
                    let keep = [&cols[..cols.len() - 2], &cols[cols.len() - 1..]].concat();
                    keep.join(",")
                })
                .collect::<Vec<_>>()
                .join("\n")
        };
        let a = run_experiment(&tiny_config()).unwrap().to_csv();
        let b = run_experiment(&tiny_config()).unwrap().to_csv();
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn extra_p_columns() {
        let mut cfg = tiny_config();
        cfg.p_list = vec![1.0, 2.0];
        let result = run_experiment(&cfg).unwrap();
        assert!(result.header.contains("lp_error_p=2"));
        for row in &result.rows {
            assert_eq!(row.lp_errors.len(), 2);
            // L^1(lebesgue) <= L^2(lebesgue) on a probability measure
            assert!(row.lp_errors[0].1 <= row.lp_errors[1].1 + 1e-15);
        }
    }

    #[test]
    fn grid_dump_format() {
        let cfg = tiny_config();
        let runner = cfg.build().unwrap();
        let opcfg = OperatorConfig::new(
            4,
            2,
            runner.kernel.clone(),
            runner.measure.clone(),
            runner.plan.clone(),
        )
        .unwrap();
        let f = &runner.f;
        let table = coefficients(|pt: &[f64]| f(pt), &opcfg).unwrap();
        let field = evaluate_grid(&table, &opcfg, 5).unwrap();
        let mut buf = Vec::new();
        write_grid_dump(&mut buf, &field, |pt| f(pt)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x y f Sf"));
        assert_eq!(text.lines().count(), 1 + 25);
        let first = text.lines().nth(1).unwrap();
        assert_eq!(first.split_whitespace().count(), 4);
    }
}
