//! Central finite-difference verification of tape gradients.

use super::dense::DenseMatrix;
use super::tape::{NodeId, ParamStore, Tape};
use crate::error::Error;

/// Compares the tape gradient of a scalar function against central finite
/// differences at `point`, one coordinate at a time.
///
/// Returns the maximum over coordinates of
/// `|analytic - central_difference| / max(1, |analytic|)`.
pub fn grad_check<F>(mut f: F, point: &[DenseMatrix], eps: f64) -> Result<f64, Error>
where
    F: FnMut(&mut Tape, &[NodeId]) -> Result<NodeId, Error>,
{
    let eval = |f: &mut F, values: &[DenseMatrix]| -> Result<f64, Error> {
        let mut store = ParamStore::new();
        let ids: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(i, v)| store.register(&format!("p{i}"), 0, v.clone()))
            .collect();
        let mut tape = Tape::new();
        let nodes: Vec<_> = ids.iter().map(|&id| tape.param(&store, id)).collect();
        let loss = f(&mut tape, &nodes)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective".to_string()));
        }
        Ok(v)
    };

    // Analytic pass.
    let mut store = ParamStore::new();
    let ids: Vec<_> = point
        .iter()
        .enumerate()
        .map(|(i, v)| store.register(&format!("p{i}"), 0, v.clone()))
        .collect();
    let mut tape = Tape::new();
    let nodes: Vec<_> = ids.iter().map(|&id| tape.param(&store, id)).collect();
    let loss = f(&mut tape, &nodes)?;
    let grads = tape.backward(loss, &store)?;

    let mut worst = 0.0f64;
    for (t, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id);
        for i in 0..point[t].len() {
            let mut plus = point.to_vec();
            plus[t].values_mut()[i] += eps;
            let mut minus = point.to_vec();
            minus[t].values_mut()[i] -= eps;
            let fd = (eval(&mut f, &plus)? - eval(&mut f, &minus)?) / (2.0 * eps);
            let a = analytic.values()[i];
            let err = (a - fd).abs() / a.abs().max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_to_second_order() {
        let x = DenseMatrix::from_vec(1, 3, vec![0.4, -1.2, 2.0]);
        let err = grad_check(
            |t, p| {
                let sq = t.mul(p[0], p[0])?;
                Ok(t.sum_all(sq))
            },
            &[x],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8, "quadratic error {err}");
    }

    #[test]
    fn linear_is_exact() {
        let x = DenseMatrix::from_vec(1, 3, vec![0.4, -1.2, 2.0]);
        let err = grad_check(
            |t, p| {
                let s = t.scale(p[0], 3.0);
                Ok(t.sum_all(s))
            },
            &[x],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-10, "linear error {err}");
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = DenseMatrix::scalar(1e-7);
        // log(x) explodes near zero once the perturbation crosses it.
        let res = grad_check(
            |t, p| {
                let l = t.log(p[0], 0.0);
                Ok(t.sum_all(l))
            },
            &[x],
            1e-6,
        );
        assert!(res.is_err());
    }
}
