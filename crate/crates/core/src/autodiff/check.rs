//! Central finite-difference gradient checking.

use super::{AutodiffError, Tape, Tensor, Var};

/// Builds a scalar expression of one input on a fresh tape.
pub trait ScalarExpr: Fn(&mut Tape, Var) -> Result<Var, AutodiffError> {}
impl<F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>> ScalarExpr for F {}

fn evaluate(f: &impl ScalarExpr, point: &Tensor) -> Result<f64, AutodiffError> {
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let out = f(&mut tape, x)?;
    let value = tape
        .value(out)
        .item()
        .ok_or_else(|| AutodiffError::NonScalarRoot {
            shape: tape.value(out).shape().to_vec(),
        })?;
    if !value.is_finite() {
        return Err(AutodiffError::NonFinite { op: "finite_diff_check" });
    }
    Ok(value)
}

/// Analytic gradient of `f` at `point` through the tape.
pub fn gradient(f: &impl ScalarExpr, point: &Tensor) -> Result<Tensor, AutodiffError> {
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let out = f(&mut tape, x)?;
    Ok(tape.backward(out, 1.0)?.wrt(x))
}

/// Central difference `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for one coordinate.
pub fn central_difference(
    f: &impl Fn(&Tensor) -> Result<f64, AutodiffError>,
    point: &Tensor,
    coord: usize,
    eps: f64,
) -> Result<f64, AutodiffError> {
    let mut plus = point.clone();
    plus.data_mut()[coord] += eps;
    let mut minus = point.clone();
    minus.data_mut()[coord] -= eps;
    let (fp, fm) = (f(&plus)?, f(&minus)?);
    if !fp.is_finite() || !fm.is_finite() {
        return Err(AutodiffError::NonFinite { op: "finite_diff_check" });
    }
    Ok((fp - fm) / (2.0 * eps))
}

/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Maximum relative error between the tape gradient of `f` and central
/// differences over every coordinate of `point`.
pub fn finite_diff_check(f: impl ScalarExpr, point: &Tensor, eps: f64) -> Result<f64, AutodiffError> {
    let coords: Vec<usize> = (0..point.len()).collect();
    finite_diff_check_coords(f, point, eps, &coords)
}

/// As [`finite_diff_check`], restricted to the listed coordinates.
pub fn finite_diff_check_coords(
    f: impl ScalarExpr,
    point: &Tensor,
    eps: f64,
    coords: &[usize],
) -> Result<f64, AutodiffError> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(AutodiffError::Domain { op: "finite_diff_check", value: eps });
    }
    let analytic = gradient(&f, point)?;
    let value_at = |p: &Tensor| evaluate(&f, p);
    let mut worst: f64 = 0.0;
    for &c in coords {
        let numeric = central_difference(&value_at, point, c, eps)?;
        worst = worst.max(relative_error(analytic.data()[c], numeric));
    }
    Ok(worst)
}
