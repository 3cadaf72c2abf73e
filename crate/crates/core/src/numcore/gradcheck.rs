use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Largest relative disagreement between the tape gradient of `f` at `x`
/// and the fourth-order central difference with step `h`.
///
/// `f` builds a scalar on a fresh graph from the leaf it is handed. The
/// relative error per coordinate uses `max(|analytic|, |numeric|, 1e-8)` as
/// denominator.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if h <= 0.0 || h.is_nan() {
        return Err(Error::NonPositiveStep);
    }
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let y = f(&mut g, xv)?;
    let grads = g.backward(y)?;
    let zeros = vec![0.0; x.len()];
    let analytic = grads.data(xv).unwrap_or(&zeros);

    let eval = |probe: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(probe);
        let y = f(&mut g, v)?;
        Ok(g.value(y).item())
    };
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let at = |offset: f64| {
            let mut probe = x.clone();
            probe.data_mut()[i] += offset;
            eval(probe)
        };
        let numeric = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
