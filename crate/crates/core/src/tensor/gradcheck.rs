use super::{Result, Tape, Tensor, TensorError, Var};

/// Largest `|analytic - central difference| / max(1, |analytic|)` over every
/// coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    grad_check_multi(|tape, xs| f(tape, xs[0]), std::slice::from_ref(x), eps)
}

/// [`grad_check`] over several inputs at once; every input is a leaf.
pub fn grad_check_multi<F>(f: F, xs: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(eps > 0.0) {
        return Err(TensorError::Contract {
            op: "grad_check",
            detail: format!("step {eps} must be positive"),
        });
    }
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let root = f(&tape, &leaves)?;
        if !root.value().is_scalar() {
            return Err(TensorError::NonScalarRoot(root.shape()));
        }
        let grads = tape.backward(root)?;
        leaves.iter().map(|&l| grads.wrt(l)).collect()
    };

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let consts: Vec<Var<'_>> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        f(&tape, &consts)?.item()
    };
    let numeric = numeric_gradient(eval, xs, eps)?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Central differences of `eval` with respect to every entry of `xs`.
pub fn numeric_gradient<F>(eval: F, xs: &[Tensor], eps: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut probe: Vec<Tensor> = xs.to_vec();
    let mut out: Vec<Tensor> = xs.iter().map(|x| Tensor::zeros(x.shape())).collect();
    for (i, x) in xs.iter().enumerate() {
        for j in 0..x.len() {
            let base = x.data()[j];
            probe[i].data_mut()[j] = base + eps;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = base - eps;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = base;
            out[i].data_mut()[j] = (plus - minus) / (2.0 * eps);
        }
    }
    Ok(out)
}

/// `max |a - n| / max(1, |a|)` over matching entries.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.2, 4.0]);
        let err = grad_check(|_, v| v.sum(), &x, 1e-6).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let err = grad_check(|_, v| v.exp(), &x, 1e-6).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarRoot(_)));
    }

    #[test]
    fn step_must_be_positive() {
        let x = Tensor::vector(vec![1.0]);
        assert!(grad_check(|_, v| v.sum(), &x, 0.0).is_err());
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // A gradient reversal looks like identity to finite differences.
        let x = Tensor::vector(vec![1.0, 2.0]);
        let err = grad_check(|_, v| v.grl(1.0)?.sum(), &x, 1e-6).unwrap();
        assert!((err - 2.0).abs() < 1e-6, "{err}");
    }
}
