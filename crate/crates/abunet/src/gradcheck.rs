//! Central finite-difference gradient oracle and the comparison harness used
//! by the verification suites. The oracle never touches the tape's backward
//! path; it re-evaluates the closure per perturbed coordinate.

use crate::error::{Error, Result};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// Default tolerances for analytic-vs-numeric comparisons at 64-bit.
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;

/// Central-difference gradient (f(θ+ε) − f(θ−ε)) / 2ε for every coordinate
/// of every tensor in `params`. The closure must be deterministic; dropout
/// masks have to be frozen while the estimate runs.
pub fn finite_diff_grad<F>(
    mut f: F,
    params: &mut [Tensor<f64>],
    eps: f64,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::Config(format!("finite_diff_grad needs ε > 0, got {eps}")));
    }
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let n = params[pi].numel();
        let mut g = vec![0.0; n];
        for i in 0..n {
            let orig = params[pi].data()[i];
            params[pi].data_mut()[i] = orig + eps;
            let plus = f(params)?;
            params[pi].data_mut()[i] = orig - eps;
            let minus = f(params)?;
            params[pi].data_mut()[i] = orig;
            g[i] = (plus - minus) / (2.0 * eps);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Worst relative discrepancy between analytic and numeric gradients.
/// A coordinate passes when |a − n| ≤ max(abs_floor, rel · max(|a|, |n|)).
pub fn worst_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let diff = (a - n).abs();
            if diff <= ABS_FLOOR {
                0.0
            } else {
                diff / a.abs().max(n.abs()).max(ABS_FLOOR)
            }
        })
        .fold(0.0, f64::max)
}

/// Compare one parameter's gradients, failing with the offending coordinate.
pub fn compare_grads(name: &str, analytic: &[f64], numeric: &[f64]) -> Result<f64> {
    if analytic.len() != numeric.len() {
        return Err(Error::GradCheck(format!(
            "{name}: analytic has {} coordinates, numeric {}",
            analytic.len(),
            numeric.len()
        )));
    }
    let mut worst = 0.0f64;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let diff = (a - n).abs();
        let scale = a.abs().max(n.abs());
        if diff > ABS_FLOOR.max(REL_TOL * scale) {
            return Err(Error::GradCheck(format!(
                "{name}[{i}]: analytic {a:.9e} vs numeric {n:.9e} (|Δ| = {diff:.3e})"
            )));
        }
        if diff > ABS_FLOOR {
            worst = worst.max(diff / scale.max(ABS_FLOOR));
        }
    }
    Ok(worst)
}

/// Compare tape backward against the finite-difference oracle for a scalar
/// graph built over `params`. The builder is invoked once per evaluation, so
/// it must be deterministic. Returns the worst relative error seen.
pub fn check_graph<F>(name: &str, params: &mut [Tensor<f64>], eps: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[ValueId]) -> Result<ValueId>,
{
    let mut tape = Tape::new();
    let vids: Vec<ValueId> = params
        .iter()
        .map(|t| tape.leaf_tensor(t))
        .collect::<Result<_>>()?;
    let loss = build(&mut tape, &vids)?;
    if tape.numel(loss) != 1 {
        return Err(Error::GradCheck(format!(
            "{name}: graph must end in a scalar, got shape {:?}",
            tape.shape(loss)
        )));
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vids
        .iter()
        .map(|&v| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tape.numel(v)])
        })
        .collect();

    let numeric = finite_diff_grad(
        |ps| {
            let mut t = Tape::new();
            let vs: Vec<ValueId> = ps
                .iter()
                .map(|p| t.leaf_tensor(p))
                .collect::<Result<_>>()?;
            let l = build(&mut t, &vs)?;
            Ok(t.value(l)[0])
        },
        params,
        eps,
    )?;

    let mut worst = 0.0f64;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        worst = worst.max(compare_grads(&format!("{name}/param{i}"), a, n)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_function_derivative() {
        let mut params = vec![Tensor::<f64>::new(vec![1], vec![3.0]).unwrap()];
        let grads = finite_diff_grad(|p| Ok(p[0].data()[0] * p[0].data()[0]), &mut params, 1e-5)
            .unwrap();
        assert!((grads[0][0] - 6.0).abs() < 1e-8);
        // params restored
        assert_eq!(params[0].data()[0], 3.0);
    }

    #[test]
    fn scaled_tanh_derivative_matches_closed_form() {
        let mut params = vec![Tensor::<f64>::new(vec![1], vec![0.5]).unwrap()];
        let grads =
            finite_diff_grad(|p| Ok(p[0].data()[0] * 1.0f64.tanh()), &mut params, 1e-5).unwrap();
        assert!((grads[0][0] - 1.0f64.tanh()).abs() < 1e-9);
        assert!((grads[0][0] - 0.761594).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let mut params = vec![Tensor::<f64>::new(vec![1], vec![1.0]).unwrap()];
        assert!(finite_diff_grad(|_| Ok(0.0), &mut params, 0.0).is_err());
    }

    #[test]
    fn compare_flags_corrupted_gradient() {
        let numeric = [1.0, 2.0, 3.0];
        let mut corrupted = numeric;
        corrupted[1] += 0.01;
        assert!(compare_grads("neg-control", &corrupted, &numeric).is_err());
        assert!(compare_grads("ok", &numeric, &numeric).is_ok());
    }
}
