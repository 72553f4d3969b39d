//! Sigmoidal activation functions and numerical verification of the standing
//! assumptions: midpoint-odd symmetry, concavity on the right half-line, and
//! polynomial-or-better tail decay.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActivationId {
    Logistic,
    Tanh,
    /// User-supplied activation; the string is a display label (for `custom:`
    /// tags it is the source expression).
    Custom(String),
}

impl fmt::Display for ActivationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationId::Logistic => write!(f, "logistic"),
            ActivationId::Tanh => write!(f, "tanh"),
            ActivationId::Custom(label) => write!(f, "custom:{label}"),
        }
    }
}

/// A sigmoidal activation together with its limits at infinity and the
/// declared tail-decay exponent (`None` means faster than any polynomial,
/// which is the case for both built-ins).
#[derive(Clone)]
pub struct ActivationSpec {
    pub id: ActivationId,
    eval: ScalarFn,
    pub lower_limit: f64,
    pub upper_limit: f64,
    pub decay_exponent: Option<f64>,
}

impl fmt::Debug for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ActivationSpec")
            .field("id", &self.id)
            .field("lower_limit", &self.lower_limit)
            .field("upper_limit", &self.upper_limit)
            .field("decay_exponent", &self.decay_exponent)
            .finish()
    }
}

impl ActivationSpec {
    /// The logistic function `1 / (1 + e^{-x})`.
    pub fn logistic() -> Self {
        ActivationSpec {
            id: ActivationId::Logistic,
            eval: Arc::new(logistic_raw),
            lower_limit: 0.0,
            upper_limit: 1.0,
            decay_exponent: None,
        }
    }

    /// The hyperbolic tangent. Its limits are (-1, 1), so it is admitted with
    /// the non-unit-limits flag; the operator normalizes the doubled kernel
    /// partition constant away.
    pub fn tanh() -> Self {
        ActivationSpec {
            id: ActivationId::Tanh,
            eval: Arc::new(|x: f64| x.tanh()),
            lower_limit: -1.0,
            upper_limit: 1.0,
            decay_exponent: None,
        }
    }

    pub fn custom(
        label: impl Into<String>,
        eval: ScalarFn,
        lower_limit: f64,
        upper_limit: f64,
        decay_exponent: Option<f64>,
    ) -> Self {
        ActivationSpec {
            id: ActivationId::Custom(label.into()),
            eval,
            lower_limit,
            upper_limit,
            decay_exponent,
        }
    }

    /// Resolve a CLI tag: `logistic`, `tanh`, or `custom:<expression>` where
    /// the expression is in the variable `x`. Custom limits are probed at
    /// x = -50 and x = +50.
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "logistic" => Ok(Self::logistic()),
            "tanh" => Ok(Self::tanh()),
            _ => {
                if let Some(expr_src) = tag.strip_prefix("custom:") {
                    let expr = Expr::parse(expr_src, &["x"])?;
                    let lower = expr.eval(&[-50.0]);
                    let upper = expr.eval(&[50.0]);
                    if !lower.is_finite() || !upper.is_finite() {
                        return Err(Error::Validation(format!(
                            "custom activation {:?} is not finite at x = +/-50",
                            expr_src
                        )));
                    }
                    let e = expr.clone();
                    Ok(Self::custom(
                        expr_src,
                        Arc::new(move |x| e.eval(&[x])),
                        lower,
                        upper,
                        None,
                    ))
                } else {
                    Err(Error::Validation(format!(
                        "unknown activation tag {:?} (expected logistic, tanh, or custom:<expr>)",
                        tag
                    )))
                }
            }
        }
    }

    /// Checked evaluation; rejects non-finite input.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Precondition(format!("activation input {x} is not finite")));
        }
        Ok((self.eval)(x))
    }

    /// Unchecked evaluation for internal hot paths; inputs are constructed finite.
    #[inline]
    pub fn eval_raw(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn limit_span(&self) -> f64 {
        self.upper_limit - self.lower_limit
    }
}

#[inline]
fn logistic_raw(x: f64) -> f64 {
    // Stable branch: never exponentiates a large positive argument.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `1 / (1 + e^{-x})`, stable over the full double range.
pub fn eval_logistic(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Precondition(format!("logistic input {x} is not finite")));
    }
    Ok(logistic_raw(x))
}

/// `(e^x - e^{-x}) / (e^x + e^{-x})` via the library tanh, which is stable.
pub fn eval_tanh(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Precondition(format!("tanh input {x} is not finite")));
    }
    Ok(x.tanh())
}

/// Outcome of the assumption checks for one activation.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// Midpoint-odd symmetry: sigma(x) + sigma(-x) = lower + upper on the grid.
    pub a1: bool,
    /// Concavity for x >= 0 (second divided differences <= tol).
    pub a2: bool,
    /// Tail of (upper - sigma) decays at least as fast as the declared exponent.
    pub a3: bool,
    /// Set when the limits differ from (0, 1), i.e. the function is not
    /// sigmoidal in the strict sense (tanh trips this).
    pub non_unit_limits: bool,
    pub a1_defect: f64,
    pub a2_defect: f64,
    /// Fitted log-log slope of the tail gap over x in [10, 40], when enough
    /// of the gap survives in double precision.
    pub tail_slope: Option<f64>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.a1 && self.a2 && self.a3
    }
}

/// Check assumptions A1-A3 on a symmetric sample grid.
///
/// The grid must be ascending, symmetric about 0, and have at least 100
/// points. A2 is checked for x >= 0 only: genuine sigmoids are convex left of
/// the origin, so the all-of-R phrasing is not satisfiable and the right
/// half-line is the operative condition. A3 is fitted on an internal tail
/// sample over [10, 40], restricted to points where the gap to the upper
/// limit is still resolvable in double precision.
pub fn check_assumptions(spec: &ActivationSpec, grid: &[f64], tol: f64) -> Result<AssumptionReport> {
    if grid.len() < 100 {
        return Err(Error::Precondition(format!(
            "assumption grid needs at least 100 points, got {}",
            grid.len()
        )));
    }
    let m = grid.len();
    for i in 0..m {
        if i + 1 < m && grid[i] >= grid[i + 1] {
            return Err(Error::Precondition("assumption grid must be strictly ascending".into()));
        }
        let mirror = -grid[m - 1 - i];
        if (grid[i] - mirror).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "assumption grid is not symmetric about 0: {} vs {}",
                grid[i], mirror
            )));
        }
    }

    let limit_sum = spec.lower_limit + spec.upper_limit;
    let mut a1_defect = 0.0f64;
    for &x in grid {
        let d = (spec.eval_raw(x) + spec.eval_raw(-x) - limit_sum).abs();
        a1_defect = a1_defect.max(d);
    }

    let right: Vec<f64> = grid.iter().copied().filter(|&x| x >= 0.0).collect();
    let mut a2_defect = 0.0f64;
    for w in right.windows(3) {
        let (x0, x1, x2) = (w[0], w[1], w[2]);
        let (f0, f1, f2) = (spec.eval_raw(x0), spec.eval_raw(x1), spec.eval_raw(x2));
        let second = (f2 - f1) / (x2 - x1) - (f1 - f0) / (x1 - x0);
        a2_defect = a2_defect.max(second);
    }

    let (a3, tail_slope) = tail_decay_check(spec);

    let non_unit_limits =
        (spec.lower_limit - 0.0).abs() > 1e-9 || (spec.upper_limit - 1.0).abs() > 1e-9;

    Ok(AssumptionReport {
        a1: a1_defect <= tol,
        a2: a2_defect <= tol,
        a3,
        non_unit_limits,
        a1_defect,
        a2_defect,
        tail_slope,
    })
}

fn tail_decay_check(spec: &ActivationSpec) -> (bool, Option<f64>) {
    if spec.upper_limit - spec.lower_limit <= 1e-12 {
        return (false, None);
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let samples = 121;
    for i in 0..samples {
        let x = 10.0 + 30.0 * (i as f64) / ((samples - 1) as f64);
        let gap = spec.upper_limit - spec.eval_raw(x);
        if gap > 1e-300 && gap.is_finite() {
            xs.push(x.ln());
            ys.push(gap.ln());
        }
    }
    if xs.len() < 10 {
        return (false, None);
    }
    let slope = least_squares_slope(&xs, &ys);
    let required = spec.decay_exponent.unwrap_or(1.0);
    (slope <= -required, Some(slope))
}

pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - xbar) * (y - ybar);
        sxx += (x - xbar) * (x - xbar);
    }
    sxy / sxx
}
