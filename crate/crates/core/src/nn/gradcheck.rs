//! Central finite-difference gradient checks.
//!
//! The numeric side only ever evaluates forward passes on an inference tape,
//! so it shares no code with any backward closure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::error::Result;
use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Entries whose analytic and numeric gradients are both below this are
/// compared absolutely rather than relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Location of the worst entry, e.g. `input 0 [12]` or `param attn.q.weight [3]`.
    pub worst: String,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares backprop against central differences of `sum(f(..) ⊙ R)` for a
/// fixed random projection `R`. Every parameter in `store` and every input
/// tensor is checked element by element.
pub fn check_gradients<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    seed: u64,
    h: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
{
    let mut store = store.clone();
    store.set_all_trainable(true);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &store, &vars)?;
    let out_shape = tape.value(out).shape().to_vec();
    let numel = tape.value(out).len().max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, 1.0 / (numel as f64).sqrt()).unwrap();
    let projection = Tensor::from_fn(&out_shape, |_| dist.sample(&mut rng));

    let proj = tape.constant(projection.clone());
    let prod = tape.mul(out, proj)?;
    let loss = tape.sum(prod);
    let grads = tape.backward(loss)?;
    let input_grads: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let param_vars: Vec<(String, Var)> = store
        .iter()
        .map(|(id, p)| (p.name.clone(), tape.param(&store, id)))
        .collect();
    let param_grads: Vec<Tensor<f64>> = param_vars
        .iter()
        .zip(store.iter())
        .map(|((_, v), (_, p))| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();
    drop(grads);

    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::inference();
        let vars: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, store, &vars)?;
        Ok(t.value(out)
            .data()
            .iter()
            .zip(projection.data())
            .map(|(a, b)| a * b)
            .sum())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: String::new(),
    };
    let record = |report: &mut GradCheckReport, err: f64, at: String| {
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst = at;
        }
    };

    let mut perturbed: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let x0 = input.data()[e];
            perturbed[k].data_mut()[e] = x0 + h;
            let plus = eval(&store, &perturbed)?;
            perturbed[k].data_mut()[e] = x0 - h;
            let minus = eval(&store, &perturbed)?;
            perturbed[k].data_mut()[e] = x0;
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_error(input_grads[k].data()[e], numeric);
            record(&mut report, err, format!("input {k} [{e}]"));
        }
    }

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (pi, id) in ids.into_iter().enumerate() {
        let n = store.get(id).value.len();
        for e in 0..n {
            let x0 = store.get(id).value.data()[e];
            store.get_mut(id).value.data_mut()[e] = x0 + h;
            let plus = eval(&store, inputs)?;
            store.get_mut(id).value.data_mut()[e] = x0 - h;
            let minus = eval(&store, inputs)?;
            store.get_mut(id).value.data_mut()[e] = x0;
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_error(param_grads[pi].data()[e], numeric);
            record(&mut report, err, format!("param {} [{e}]", param_vars[pi].0));
        }
    }
    Ok(report)
}
