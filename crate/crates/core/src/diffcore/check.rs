//! Finite-difference validation of reverse-mode gradients.

use super::{record, Scalar};

/// Default central-difference step, in input units.
pub const DEFAULT_STEP: f64 = 1e-4;
/// Denominator floor for relative errors.
pub const ERROR_FLOOR: f64 = 1e-8;

/// A scalar function that can be evaluated on any [`Scalar`], i.e. both
/// directly and on a tape.
pub trait ScalarFn {
    fn eval<S: Scalar>(&self, x: &[S]) -> S;
}

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst per-coordinate `|a - n| / max(|a|, |n|, floor)` and its index.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(floor);
        let e = (a - n).abs() / denom;
        if e > worst.0 || e.is_nan() {
            worst = (e, i);
        }
    }
    worst
}

/// Compares a supplied analytic gradient against central differences of `f`.
pub fn check_gradient(
    f: impl Fn(&[f64]) -> f64,
    analytic: Vec<f64>,
    x: &[f64],
    h: f64,
) -> GradCheck {
    let numeric = central_differences(f, x, h);
    let (max_rel_error, worst_index) = max_relative_error(&analytic, &numeric, ERROR_FLOOR);
    GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    }
}

/// [`check_gradient`] that forgives the rounding error a difference
/// quotient carries for a function of magnitude `scale`, about
/// `1e-14 * scale / h` per coordinate, before taking relative errors.
pub fn check_gradient_rounded(
    f: impl Fn(&[f64]) -> f64,
    analytic: Vec<f64>,
    x: &[f64],
    h: f64,
    scale: f64,
) -> GradCheck {
    let numeric = central_differences(f, x, h);
    let resolvable = 1e-14 * scale.abs().max(1.0) / h;
    let mut worst = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = ((a - n).abs() - resolvable).max(0.0) / a.abs().max(n.abs()).max(ERROR_FLOOR);
        if e > worst.0 || e.is_nan() {
            worst = (e, i);
        }
    }
    GradCheck {
        max_rel_error: worst.0,
        worst_index: worst.1,
        analytic,
        numeric,
    }
}

/// Tape gradient of `f` at `x` versus central differences with step `h`.
pub fn finite_diff_check<F: ScalarFn>(f: &F, x: &[f64], h: f64) -> GradCheck {
    let rec = record(x, |v| vec![f.eval(v)]);
    let analytic = rec.backward(&[1.0]).expect("single output");
    check_gradient(|p| f.eval::<f64>(p), analytic, x, h)
}
