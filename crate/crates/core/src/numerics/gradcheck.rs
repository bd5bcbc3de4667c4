//! Finite-difference validation of tape gradients.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Compares analytic gradients against central finite differences.
///
/// `loss_fn` must be deterministic and scalar-valued: given parameter
/// values it returns the loss and the analytic gradient of each parameter
/// (typically by building a tape and calling `backward`). Returns the
/// maximum over coordinates of
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[Matrix], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[Matrix]) -> Result<(f64, Vec<Matrix>)>,
{
    assert!(
        (1e-7..=1e-4).contains(&epsilon),
        "epsilon {epsilon} outside [1e-7, 1e-4]"
    );

    let (_, analytic) = loss_fn(params)?;
    assert_eq!(analytic.len(), params.len(), "gradient count mismatch");

    let mut work: Vec<Matrix> = params.to_vec();
    let mut max_rel = 0.0f64;

    for (pi, p) in params.iter().enumerate() {
        for coord in 0..p.len() {
            let orig = p.data()[coord];

            work[pi].data_mut()[coord] = orig + epsilon;
            let (loss_plus, _) = loss_fn(&work)?;
            work[pi].data_mut()[coord] = orig - epsilon;
            let (loss_minus, _) = loss_fn(&work)?;
            work[pi].data_mut()[coord] = orig;

            if !loss_plus.is_finite() || !loss_minus.is_finite() {
                return Err(Error::NonFiniteLoss {
                    param_index: pi,
                    coord,
                });
            }

            let numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
            let a = analytic[pi].data()[coord];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tape::GradTape;

    #[test]
    fn quadratic_is_exact_under_central_differences() {
        let params = [Matrix::scalar(3.0)];
        let rel = grad_check(
            |p| {
                let mut tape = GradTape::new();
                let (pid, w) = tape.param(p[0].clone());
                let sq = tape.mul_elem(w, w);
                let loss = tape.mean_all(sq);
                let grads = tape.backward(loss);
                Ok((tape.value(loss).item(), vec![grads.get(pid).clone()]))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(rel <= 1e-8, "relative error {rel}");
    }

    #[test]
    fn independent_parameter_reports_zero_analytic() {
        let params = [Matrix::scalar(2.0), Matrix::scalar(7.0)];
        let rel = grad_check(
            |p| {
                let mut tape = GradTape::new();
                let (used, w) = tape.param(p[0].clone());
                let (unused, _) = tape.param(p[1].clone());
                let sq = tape.mul_elem(w, w);
                let loss = tape.mean_all(sq);
                let grads = tape.backward(loss);
                assert_eq!(grads.get(unused).data(), &[0.0]);
                Ok((
                    tape.value(loss).item(),
                    vec![grads.get(used).clone(), grads.get(unused).clone()],
                ))
            },
            &params,
            1e-5,
        )
        .unwrap();
        // the unused parameter contributes |0 - 0| = 0 relative error
        assert!(rel <= 1e-8, "relative error {rel}");
    }

    #[test]
    fn non_finite_probe_is_diagnosed() {
        // center point is fine; the minus probe crosses zero where ln is NaN
        let params = [Matrix::scalar(0.5e-5)];
        let err = grad_check(
            |p| {
                let v = p[0].data()[0];
                Ok((v.ln(), vec![Matrix::scalar(1.0 / v)]))
            },
            &params,
            1e-5,
        )
        .unwrap_err();
        match err {
            Error::NonFiniteLoss { param_index, coord } => {
                assert_eq!((param_index, coord), (0, 0));
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
