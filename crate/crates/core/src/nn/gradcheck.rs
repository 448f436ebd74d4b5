use candle_core::{DType, Tensor};
use rand::Rng as _;

use super::{scalar, ParamStore};
use crate::error::Result;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor).
    pub max_rel_err: f64,
    /// (parameter, flat index, analytic, numeric) of the worst probe.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares backprop gradients of `loss` against central differences at a few random
/// entries of every parameter in `store`. Use a `DType::F64` store.
pub fn finite_difference_check(
    store: &ParamStore,
    loss: impl Fn() -> Result<Tensor>,
    probes_per_param: usize,
    step: f64,
    floor: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let grads = loss()?.backward()?;
    let named: Vec<_> = store.lock().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    let mut r = rng::stream(seed, "gradcheck");
    for (name, var) in named {
        let shape = var.shape().clone();
        let original = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?,
            None => vec![0.0; original.len()],
        };
        let probes = probes_per_param.min(original.len());
        for _ in 0..probes {
            let idx = r.gen_range(0..original.len());
            let eval_at = |delta: f64| -> Result<f64> {
                let mut v = original.clone();
                v[idx] += delta;
                var.set(&Tensor::from_vec(v, &shape, store.device())?.to_dtype(store.dtype())?)?;
                scalar(&loss()?)
            };
            let plus = eval_at(step)?;
            let minus = eval_at(-step)?;
            var.set(&Tensor::from_vec(original.clone(), &shape, store.device())?.to_dtype(store.dtype())?)?;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((name.clone(), idx, a, numeric));
            }
        }
    }
    Ok(report)
}
