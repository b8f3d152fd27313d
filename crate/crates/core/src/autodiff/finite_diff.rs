use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Central-difference gradient `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h` over every
/// coordinate of `point`.
pub fn finite_diff_gradient<F>(f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    finite_diff_partial(f, point, &coords, step)
}

/// Central differences restricted to `coords`; the result is ordered like
/// `coords`.
pub fn finite_diff_partial<F>(mut f: F, point: &[f64], coords: &[usize], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidOp {
            op: "finite_diff_gradient",
            msg: alloc::format!("step must be positive, got {step}"),
        });
    }
    let mut x = point.to_vec();
    let mut grad = vec![0.0; coords.len()];
    for (g, &i) in grad.iter_mut().zip(coords) {
        let orig = x[i];
        x[i] = orig + step;
        let plus = f(&x);
        x[i] = orig - step;
        let minus = f(&x);
        x[i] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFinite { coordinate: i });
        }
        *g = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let g = finite_diff_gradient(|x| x.iter().sum(), &[0.3, -1.2, 7.0], 1e-4).unwrap();
        for v in g {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn square_at_three() {
        let g = finite_diff_gradient(|x| x[0] * x[0], &[3.0], 1e-4).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_step_and_nonfinite_values() {
        assert!(finite_diff_gradient(|x| x[0], &[1.0], 0.0).is_err());
        let err = finite_diff_gradient(|x| if x[1] > 1.0 { f64::NAN } else { 0.0 }, &[0.0, 1.0], 1e-3)
            .unwrap_err();
        assert_eq!(err, Error::NonFinite { coordinate: 1 });
    }
}
