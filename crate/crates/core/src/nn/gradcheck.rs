use crate::error::{Error, Result};

/// Compare `analytic` against central finite differences of `f` at `params`.
///
/// Returns the max over coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(mut f: F, analytic: &[f64], params: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!("perturbation must be positive, got {eps}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::InputShape {
            expected: params.len(),
            got: analytic.len(),
        });
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + eps;
        let up = f(&probe);
        probe[i] = params[i] - eps;
        let down = f(&probe);
        probe[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss perturbing coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// As [`grad_check`], but the numeric derivative is the Richardson
/// extrapolation `(4·D(eps/2) − D(eps)) / 3` of two central differences. Its
/// truncation error is `O(eps⁴)`, so a larger `eps` can be used and roundoff no
/// longer swamps small gradient entries.
pub fn grad_check_extrapolated<F>(mut f: F, analytic: &[f64], params: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!("perturbation must be positive, got {eps}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::InputShape {
            expected: params.len(),
            got: analytic.len(),
        });
    }
    let mut probe = params.to_vec();
    let mut central = |probe: &mut Vec<f64>, i: usize, h: f64| -> Result<f64> {
        probe[i] = params[i] + h;
        let up = f(probe);
        probe[i] = params[i] - h;
        let down = f(probe);
        probe[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss perturbing coordinate {i}")));
        }
        Ok((up - down) / (2.0 * h))
    };
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let coarse = central(&mut probe, i, eps)?;
        let fine = central(&mut probe, i, eps / 2.0)?;
        let numeric = (4.0 * fine - coarse) / 3.0;
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let params = [0.5, -1.5, 3.0];
        let f = |p: &[f64]| p.iter().map(|x| 1.5 * x * x).sum::<f64>();
        let grad: Vec<f64> = params.iter().map(|x| 3.0 * x).collect();
        assert!(grad_check(f, &grad, &params, 1e-5).unwrap() < 1e-7);
    }

    #[test]
    fn extrapolation_is_exact_for_quartics() {
        // central differences of x⁴ carry a 4x·eps² term that extrapolation removes
        let params = [1.5, -0.7];
        let f = |p: &[f64]| p.iter().map(|x| x.powi(4)).sum::<f64>();
        let grad: Vec<f64> = params.iter().map(|x| 4.0 * x * x * x).collect();
        assert!(grad_check(f, &grad, &params, 1e-2).unwrap() > 1e-5);
        assert!(grad_check_extrapolated(f, &grad, &params, 1e-2).unwrap() < 1e-10);
        assert!(grad_check_extrapolated(f, &[0.0, 0.0], &params, 1e-2).unwrap() > 0.9);
        assert!(grad_check_extrapolated(f, &grad, &params, -1.0).is_err());
    }

    #[test]
    fn detects_wrong_gradient() {
        let params = [0.5];
        assert!(grad_check(|p: &[f64]| p[0] * p[0], &[2.0], &params, 1e-5).unwrap() > 0.1);
    }

    #[test]
    fn rejects_bad_eps() {
        assert!(grad_check(|p: &[f64]| p[0], &[1.0], &[0.0], 0.0).is_err());
        assert!(grad_check(|p: &[f64]| p[0], &[1.0], &[0.0], -1.0).is_err());
    }

    #[test]
    fn rejects_non_finite_loss() {
        let err = grad_check(|p: &[f64]| (p[0]).ln(), &[1.0], &[0.0], 1e-5).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
