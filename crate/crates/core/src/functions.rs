//! Built-in test functions for the experiment runner, plus resolution of
//! expression-defined functions.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;

pub type TestFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Smooth benchmark surface `sin(pi x) cos(pi y) + x^2 y / 2` on the unit square.
pub fn f1(pt: &[f64]) -> f64 {
    let (x, y) = (pt[0], pt[1]);
    (PI * x).sin() * (PI * y).cos() + 0.5 * x * x * y
}

/// Discontinuity lines of [`f2`]; auto-registered as quadrature breakpoints.
pub const F2_BREAKPOINTS: [f64; 2] = [0.4, 0.7];

/// Piecewise benchmark surface:
///
/// * `1 - 2xy` on `[0, 0.4) x [0, 0.4)`,
/// * `0.3` on `[0.4, 0.7) x [0.4, 0.7)`,
/// * `sin(4 pi x) cos(4 pi y)` where `x >= 0.7` or `y >= 0.7`,
/// * `0` on the two remaining rectangles (the cases above do not cover them).
pub fn f2(pt: &[f64]) -> f64 {
    let (x, y) = (pt[0], pt[1]);
    if x < 0.4 && y < 0.4 {
        1.0 - 2.0 * x * y
    } else if (0.4..0.7).contains(&x) && (0.4..0.7).contains(&y) {
        0.3
    } else if x >= 0.7 || y >= 0.7 {
        (4.0 * PI * x).sin() * (4.0 * PI * y).cos()
    } else {
        0.0
    }
}

/// Resolve a function tag: `f1`, `f2`, or an expression in `x`/`y`/`z`
/// (matching the dimension). Returns the function and any discontinuity
/// breakpoints it wants registered in the quadrature plan.
pub fn resolve_function(tag: &str, dim: usize) -> Result<(TestFn, Vec<f64>)> {
    match tag {
        "f1" => {
            if dim != 2 {
                return Err(Error::Validation(format!(
                    "f1 is a 2-d function, config dimension is {dim}"
                )));
            }
            Ok((Arc::new(f1), Vec::new()))
        }
        "f2" => {
            if dim != 2 {
                return Err(Error::Validation(format!(
                    "f2 is a 2-d function, config dimension is {dim}"
                )));
            }
            Ok((Arc::new(f2), F2_BREAKPOINTS.to_vec()))
        }
        src => {
            let names = ["x", "y", "z"];
            let expr = Expr::parse(src, &names[..dim])?;
            let f: TestFn = Arc::new(move |pt: &[f64]| expr.eval(pt));
            Ok((f, Vec::new()))
        }
    }
}
