use super::{Graph, Tensor, Var};
use crate::error::{NialError, Result};

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the tape gradient of a scalar function against central
/// differences with step `h` and returns the largest relative error.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), h)
}

/// Multi-input form of [`grad_check`]; every input is perturbed element by
/// element.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out)
            .item()
            .ok_or_else(|| NialError::Contract("grad_check needs a scalar function".into()))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.value(v).numel()])
        })
        .collect();

    let mut work = inputs.to_vec();
    let mut worst = 0.0f64;
    for (ti, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = work[ti].data()[j];
            work[ti].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[ti].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[ti].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}
