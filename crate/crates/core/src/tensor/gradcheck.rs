use super::{backward, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    /// max over coordinates of |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_error: f64,
    /// Coordinate where the maximum was attained.
    pub worst_index: usize,
}

/// Compares the reverse-mode gradient of scalar `f` at `x` against central
/// differences with step `eps`.
pub fn gradcheck<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<GradcheckReport>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let xp = x.param();
    let y = f(&xp)?;
    if !y.is_scalar() {
        return Err(Error::contract("gradcheck", "function must return a scalar"));
    }
    if !y.item().is_finite() {
        return Err(Error::NonFinite("gradcheck: f(x) is not finite".into()));
    }
    let analytic = backward(&y)?.get(&xp);
    let base = x.to_vec();
    let mut report = GradcheckReport { max_rel_error: 0.0, worst_index: 0 };
    for i in 0..base.len() {
        let eval = |delta: f64| -> Result<f64> {
            let mut v = base.clone();
            v[i] += delta;
            let t = Tensor::from_vec(x.shape(), v)?;
            let out = f(&t)?.item();
            if !out.is_finite() {
                return Err(Error::NonFinite(format!("gradcheck: f not finite at coordinate {i}")));
            }
            Ok(out)
        };
        let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if err > report.max_rel_error {
            report = GradcheckReport { max_rel_error: err, worst_index: i };
        }
    }
    Ok(report)
}
