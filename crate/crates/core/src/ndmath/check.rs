use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` builds a scalar from the parameter leaves it is handed. Returns the
/// worst relative error over every coordinate of every parameter, using the
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::domain("ndmath", "finite difference step must be positive"));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = ps
            .iter()
            .map(|p| g.constant(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let root = f(&mut g, &vars)?;
        g.value(root).item()
    };

    let mut g = Graph::new();
    let vars = params
        .iter()
        .map(|p| g.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let root = f(&mut g, &vars)?;
    let grads = g.backward(root)?;

    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(&g, *var);
        for k in 0..work[pi].numel() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
