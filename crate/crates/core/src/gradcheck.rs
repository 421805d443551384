//! Central finite-difference verification of tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::init::Init;
use crate::model::{ForwardHooks, ModelConfig, SkatingMixer};
use crate::mru::ClipFeatures;
use crate::param::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Precision;

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Largest `|a − n|` over the parameter's coordinates.
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() <= tol
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval(store: &ParamStore, loss_fn: &impl Fn(&mut Tape) -> Result<Var>, name: &str) -> Result<f64> {
    let mut tape = Tape::new(store);
    let out = loss_fn(&mut tape).map_err(|e| match e {
        Error::NonFinite { .. } => Error::NonFiniteParam { name: name.into() },
        other => other,
    })?;
    let v = tape.value(out).data()[0];
    if !v.is_finite() {
        return Err(Error::NonFiniteParam { name: name.into() });
    }
    Ok(v)
}

/// Compares tape gradients of `loss_fn` against central differences
/// `(f(θ+eps) − f(θ−eps)) / (2·eps)` for every coordinate of every
/// parameter in `store`. The store must be in 64-bit mode; it is restored
/// to its original values before returning.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    if store.precision() != Precision::F64 {
        return Err(Error::config("grad_check requires 64-bit precision"));
    }
    if store.is_empty() {
        return Ok(GradCheckReport::default());
    }
    let grads = {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        tape.backward(loss)?
    };

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.get(id).name.clone();
        let n = store.value(id).len();
        let analytic = grads.get(id).map(|g| g.data().to_vec());
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            max_abs_error: 0.0,
        };
        for i in 0..n {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(store, &loss_fn, &name);
            store.value_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(store, &loss_fn, &name);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let a = analytic.as_ref().map_or(0.0, |g| g[i]);
            let err = relative_error(a, numeric);
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            if err > check.max_rel_error || i == 0 {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

/// Builds a 64-bit instance of `config` with random clips and targets and
/// checks the gradient of the squared error over all heads.
pub fn check_model(config: &ModelConfig, seed: u64, clips: usize, eps: f64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new(Precision::F64);
    let model = SkatingMixer::build(config, &mut store, seed)?;
    let mut init = Init::new(seed ^ 0x5eed);
    let c = config.channels;
    let inputs: Vec<ClipFeatures> = (0..clips)
        .map(|_| {
            ClipFeatures::new(
                init.normal(&[config.audio_tokens, c], 1.0),
                init.normal(&[config.video_tokens, c], 1.0),
            )
        })
        .collect::<Result<_>>()?;
    let target = init.normal(&[1, config.heads], 1.0);
    grad_check(&mut store, eps, |tape| {
        let out = model.forward(tape, &inputs, ForwardHooks::NONE)?;
        let t = tape.input(target.clone())?;
        let d = tape.sub(out, t)?;
        let sq = tape.mul(d, d)?;
        tape.sum(sq)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::boxed::Box;
    use alloc::vec;

    #[test]
    fn empty_store_gives_empty_report() {
        let mut s = ParamStore::new(Precision::F64);
        let r = grad_check(&mut s, DEFAULT_EPS, |t| t.input(Tensor::scalar(1.0))).unwrap();
        assert!(r.params.is_empty());
        assert_eq!(r.max_rel_error(), 0.0);
    }

    #[test]
    fn rejects_f32_store() {
        let mut s = ParamStore::new(Precision::F32);
        s.register("w", Tensor::zeros(&[1])).unwrap();
        let r = grad_check(&mut s, DEFAULT_EPS, |t| t.input(Tensor::scalar(1.0)));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn corrupted_adjoint_is_flagged() {
        let mut s = ParamStore::new(Precision::F64);
        let w = s
            .register("w", Tensor::new(&[3], vec![0.3, -1.2, 0.8]).unwrap())
            .unwrap();
        // y = x³ elementwise with an adjoint that is off by 10%.
        let r = grad_check(&mut s, DEFAULT_EPS, |t| {
            let x = t.param(w);
            let val = t.value(x).map(|v| v * v * v);
            let y = t.custom(
                &[x],
                val,
                Box::new(|g, ins, _| {
                    vec![Tensor::new(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(ins[0].data())
                            .map(|(g, x)| 1.1 * g * 3.0 * x * x)
                            .collect(),
                    )
                    .unwrap()]
                }),
            )?;
            t.sum(y)
        })
        .unwrap();
        assert!(r.max_rel_error() > 1e-2, "{r:?}");
        // restored
        assert_eq!(s.value(w).data(), &[0.3, -1.2, 0.8]);
    }

    #[test]
    fn non_finite_names_parameter() {
        let mut s = ParamStore::new(Precision::F64);
        s.register("big", Tensor::full(&[1], 1e200)).unwrap();
        let id = s.find("big").unwrap();
        let r = grad_check(&mut s, DEFAULT_EPS, |t| {
            let x = t.param(id);
            let y = t.mul(x, x)?;
            t.sum(y)
        });
        assert_eq!(r.unwrap_err(), Error::NonFinite { op: "mul" });
        // non-finite only under perturbation
        let mut s = ParamStore::new(Precision::F64);
        let id = s.register("edge", Tensor::full(&[1], 1.0)).unwrap();
        let r = grad_check(&mut s, 1e-3, |t| {
            let x = t.param(id);
            let v = t.value(x).data()[0];
            let val = if v > 1.0 { f64::INFINITY } else { v };
            t.custom(&[x], Tensor::scalar(val), Box::new(|g, _, _| vec![g.clone()]))
        });
        assert_eq!(r.unwrap_err(), Error::NonFiniteParam { name: "edge".into() });
    }
}
