use super::Tensor;
use crate::error::Result;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `params` supplies the evaluation point; their values are copied into
/// fresh trainable leaves, so the caller's tensors are left untouched.
/// Returns the largest relative error over all parameter entries.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let base: Vec<Vec<f64>> = params.iter().map(|p| p.values().to_vec()).collect();
    let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
    let leaves = |vals: &[Vec<f64>]| -> Result<Vec<Tensor>> {
        vals.iter()
            .zip(&shapes)
            .map(|(v, s)| Tensor::param(s, v.clone()))
            .collect()
    };

    let bound = leaves(&base)?;
    f(&bound)?.backward()?;
    let analytic: Vec<Vec<f64>> = bound.iter().map(Tensor::grad).collect();

    let mut worst = 0.0_f64;
    let mut probe = base.clone();
    for (pi, values) in base.iter().enumerate() {
        for (ei, &v) in values.iter().enumerate() {
            probe[pi][ei] = v + step;
            let plus = f(&leaves(&probe)?)?.item()?;
            probe[pi][ei] = v - step;
            let minus = f(&leaves(&probe)?)?.item()?;
            probe[pi][ei] = v;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic[pi][ei], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::new(&[3], vec![0.3, -1.2, 2.5]).unwrap();
        let c = Tensor::new(&[3], vec![1.5, 2.0, -0.75]).unwrap();
        let err = grad_check(|p| Ok(p[0].mul(&c)?.sum().add_scalar(4.0)), &[w], 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn catches_a_wrong_gradient() {
        // relu at exactly zero is not differentiable; the central difference
        // sees slope 1/2 while the analytic gradient is 0.
        let x = Tensor::new(&[1], vec![0.0]).unwrap();
        let err = grad_check(|p| Ok(p[0].relu().sum()), &[x], 1e-5).unwrap();
        assert!(err > 0.4);
    }
}
