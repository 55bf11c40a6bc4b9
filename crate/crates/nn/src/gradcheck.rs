//! Central finite-difference gradient checks in double precision.

use crate::{Graph, Result, Tensor4, Var};

/// Builds a scalar-valued graph from leaf inputs.
pub type GraphFn<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

fn eval(f: &GraphFn<'_>, inputs: &[Tensor4<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Analytic gradients of `f` at `inputs`, one tensor per input.
pub fn analytic(f: &GraphFn<'_>, inputs: &[Tensor4<f64>]) -> Result<Vec<Tensor4<f64>>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor4::zeros(t.shape())))
        .collect())
}

/// Central differences `(f(x + h) - f(x - h)) / 2h`, perturbing one element at a time.
pub fn numeric(f: &GraphFn<'_>, inputs: &[Tensor4<f64>], step: f64) -> Result<Vec<Tensor4<f64>>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor4::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(f, &work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(f, &work)?;
            work[i].data_mut()[j] = orig;
            grad.data_mut()[j] = (plus - minus) / (2.0 * step);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Largest `max|analytic - numeric| / max(max|numeric|, 1e-8)` across inputs.
pub fn max_relative_error(f: &GraphFn<'_>, inputs: &[Tensor4<f64>], step: f64) -> Result<f64> {
    let a = analytic(f, inputs)?;
    let n = numeric(f, inputs, step)?;
    Ok(a.iter()
        .zip(&n)
        .map(|(a, n)| {
            let scale = n.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
            a.max_abs_diff(n) / scale
        })
        .fold(0.0, f64::max))
}
