//! Finite-difference oracle shared by unit tests.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Central-difference gradient of `f` with respect to every input tensor,
/// evaluated without any tape bookkeeping beyond forward values.
pub fn numeric_grads(
    inputs: &[Tensor<f64>],
    step: f64,
    f: &dyn Fn(&Tape<f64>, &[Var<'_, f64>]) -> f64,
) -> Vec<Tensor<f64>> {
    let eval = |xs: &[Tensor<f64>]| {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        f(&tape, &vars)
    };
    let mut out = Vec::new();
    for (k, x) in inputs.iter().enumerate() {
        let mut g = Tensor::zeros(x.shape());
        for i in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] = x.data()[i] + step;
            let up = eval(&xs);
            xs[k].data_mut()[i] = x.data()[i] - step;
            let down = eval(&xs);
            g.data_mut()[i] = (up - down) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

pub fn analytic_grads(
    inputs: &[Tensor<f64>],
    f: &dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
) -> Vec<Tensor<f64>> {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");
    vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
}

/// `‖a − n‖ / max(‖n‖, 1e-12)` over all tensors jointly.
pub fn relative_error(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> f64 {
    let (mut diff, mut norm) = (0.0, 0.0);
    for (a, n) in analytic.iter().zip(numeric) {
        for (x, y) in a.data().iter().zip(n.data()) {
            diff += (x - y) * (x - y);
            norm += y * y;
        }
    }
    diff.sqrt() / norm.sqrt().max(1e-12)
}

/// Runs both routes and returns the relative error.
pub fn grad_check(
    inputs: &[Tensor<f64>],
    f: &dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
) -> f64 {
    let analytic = analytic_grads(inputs, f);
    let numeric = numeric_grads(inputs, 1e-6, &|t, v| f(t, v).item());
    relative_error(&analytic, &numeric)
}
