//! Preset benchmark tables: the six published error sweeps, their reference
//! values, and a runner that reports computed-vs-reference deviations.
//!
//! Reference table 3 duplicates table 1's L^1 column verbatim for n >= 100,
//! which is inconsistent with the n <= 80 trend for a discontinuous function;
//! those rows are printed with an erratum marker and excluded from scoring.

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::measure::MeasureSpec;

pub const TABLE_N_LIST: [usize; 10] = [10, 20, 40, 60, 80, 100, 120, 140, 160, 180];

/// Static description of one preset table.
#[derive(Debug, Clone)]
pub struct TableSpec {
    pub id: u8,
    pub activation: &'static str,
    pub measure: &'static str,
    pub function: &'static str,
    /// The error norm is weighted by the operator measure (tables 5-6); the
    /// runner then also logs the unweighted alternative.
    pub weighted_norm: bool,
    pub n_list: [usize; 10],
    pub reference_sup: Option<[f64; 10]>,
    pub reference_l1: [f64; 10],
    /// Relative deviation band for scored rows.
    pub tolerance: f64,
    /// n values whose reference entries are suspected errata: flagged in the
    /// report and excluded from the pass summary.
    pub erratum_rows: &'static [usize],
}

pub fn table_spec(id: u8) -> Result<TableSpec> {
    let spec = match id {
        1 => TableSpec {
            id: 1,
            activation: "logistic",
            measure: "lebesgue",
            function: "f1",
            weighted_norm: false,
            n_list: TABLE_N_LIST,
            reference_sup: Some([
                0.6140847, 0.4217103, 0.2318002, 0.1577081, 0.1192026, 0.09571101, 0.07990336,
                0.06854284, 0.05998377, 0.05330224,
            ]),
            reference_l1: [
                0.18006860, 0.07929577, 0.02551001, 0.01215602, 0.00706165, 0.00460772,
                0.00324348, 0.00240865, 0.00186214, 0.00148396,
            ],
            tolerance: 0.10,
            erratum_rows: &[],
        },
        2 => TableSpec {
            id: 2,
            activation: "tanh",
            measure: "lebesgue",
            function: "f1",
            weighted_norm: false,
            n_list: TABLE_N_LIST,
            reference_sup: Some([
                0.4537, 0.2536, 0.1310, 0.0879, 0.0660, 0.05277893, 0.04389374, 0.03751111,
                0.03269716, 0.02893381,
            ]),
            reference_l1: [
                0.0936, 0.0312, 0.0088, 0.0040, 0.0023, 0.00150571, 0.00106091, 0.00078993,
                0.00061305, 0.00049172,
            ],
            tolerance: 0.10,
            erratum_rows: &[],
        },
        3 => TableSpec {
            id: 3,
            activation: "logistic",
            measure: "lebesgue",
            function: "f2",
            weighted_norm: false,
            n_list: TABLE_N_LIST,
            reference_sup: None,
            reference_l1: [
                0.34143, 0.26699, 0.15767, 0.10089, 0.07069, 0.00460772, 0.00324348, 0.00240865,
                0.00186214, 0.00148396,
            ],
            tolerance: 0.15,
            erratum_rows: &[100, 120, 140, 160, 180],
        },
        4 => TableSpec {
            id: 4,
            activation: "tanh",
            measure: "lebesgue",
            function: "f2",
            weighted_norm: false,
            n_list: TABLE_N_LIST,
            reference_sup: None,
            reference_l1: [
                0.28442, 0.17863, 0.08282, 0.04929, 0.03390, 0.02538742, 0.02004754, 0.01640804,
                0.01377641, 0.01179791,
            ],
            tolerance: 0.15,
            erratum_rows: &[],
        },
        5 => TableSpec {
            id: 5,
            activation: "logistic",
            measure: "jacobi:0.5,0.5,0.5,0.5",
            function: "f2",
            weighted_norm: true,
            n_list: TABLE_N_LIST,
            reference_sup: None,
            reference_l1: [
                0.050147, 0.040254, 0.024157, 0.015721, 0.011188, 0.008522, 0.006810, 0.005629,
                0.004773, 0.004126,
            ],
            tolerance: 0.15,
            erratum_rows: &[],
        },
        6 => TableSpec {
            id: 6,
            activation: "tanh",
            measure: "jacobi:0.5,0.5,0.5,0.5",
            function: "f2",
            weighted_norm: true,
            n_list: TABLE_N_LIST,
            reference_sup: None,
            reference_l1: [
                0.042775, 0.027303, 0.013046, 0.007969, 0.005590, 0.004245, 0.003391, 0.002803,
                0.002371, 0.002040,
            ],
            tolerance: 0.15,
            erratum_rows: &[],
        },
        other => {
            return Err(Error::Validation(format!(
                "table id {other} is outside 1..=6"
            )))
        }
    };
    Ok(spec)
}

/// One computed-vs-reference row.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub n: usize,
    pub computed_sup: f64,
    pub computed_l1: f64,
    pub reference_sup: Option<f64>,
    pub reference_l1: f64,
    pub rel_dev_sup: Option<f64>,
    pub rel_dev_l1: f64,
    pub erratum_suspect: bool,
    /// Unweighted (Lebesgue-norm) L^1 error, logged for weighted-norm tables.
    pub unweighted_l1: Option<f64>,
}

impl TableRow {
    pub fn within(&self, tolerance: f64) -> bool {
        let l1_ok = self.rel_dev_l1 <= tolerance;
        let sup_ok = self.rel_dev_sup.map_or(true, |d| d <= tolerance);
        l1_ok && sup_ok
    }
}

#[derive(Debug, Clone)]
pub struct TableReport {
    pub spec: TableSpec,
    pub rows: Vec<TableRow>,
    /// Total mass of the operator measure; for weighted tables the scaling
    /// cross-check is `unweighted_l1 * measure_mass ~ weighted l1`.
    pub measure_mass: f64,
}

impl TableReport {
    /// Rows that count toward the pass summary (erratum-suspect rows do not).
    pub fn scored_rows(&self) -> impl Iterator<Item = &TableRow> {
        self.rows.iter().filter(|r| !r.erratum_suspect)
    }

    pub fn all_scored_within_tolerance(&self) -> bool {
        self.scored_rows().all(|r| r.within(self.spec.tolerance))
    }
}

/// Run one preset table, optionally restricted to a subset of its n values.
pub fn run_table(id: u8, rows: Option<&[usize]>) -> Result<TableReport> {
    let spec = table_spec(id)?;
    let n_list: Vec<usize> = match rows {
        Some(subset) => {
            for n in subset {
                if !spec.n_list.contains(n) {
                    return Err(Error::Validation(format!(
                        "n = {n} is not a row of table {id}"
                    )));
                }
            }
            subset.to_vec()
        }
        None => spec.n_list.to_vec(),
    };

    let config = ExperimentConfig {
        activation: spec.activation.into(),
        measure: spec.measure.into(),
        function: spec.function.into(),
        n_list: n_list.clone(),
        p_list: vec![1.0],
        d: 2,
        quad_panels: 64,
        quad_nodes: 8,
        breakpoints: vec![],
        resolution: 201,
        norm_measure: None,
        output: None,
    };
    let runner = config.build()?;
    let extra_norm = if spec.weighted_norm {
        Some(MeasureSpec::lebesgue(2)?)
    } else {
        None
    };

    let mut out_rows = Vec::with_capacity(n_list.len());
    for &n in &n_list {
        let idx = spec.n_list.iter().position(|&m| m == n).expect("validated above");
        let step = runner.errors_at(n, extra_norm.as_ref())?;
        let computed_l1 = step.lp[0].1;
        let reference_l1 = spec.reference_l1[idx];
        let reference_sup = spec.reference_sup.map(|s| s[idx]);
        let rel_dev_l1 = (computed_l1 - reference_l1).abs() / reference_l1;
        let rel_dev_sup = reference_sup.map(|ps| (step.sup - ps).abs() / ps);
        out_rows.push(TableRow {
            n,
            computed_sup: step.sup,
            computed_l1,
            reference_sup,
            reference_l1,
            rel_dev_sup,
            rel_dev_l1,
            erratum_suspect: spec.erratum_rows.contains(&n),
            unweighted_l1: step.extra_l1,
        });
    }

    Ok(TableReport {
        spec,
        rows: out_rows,
        measure_mass: runner.measure.total_mass(),
    })
}
