use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{LayerParams, WeightStore};
use crate::scalar::Scalar;

/// Learning rate for `iteration` (0-based): a linear ramp over the burn-in,
/// then `lr0` times `scale` once for every milestone already reached. A
/// milestone counts from its own iteration on.
pub fn lr_schedule(iteration: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.steps.iter().filter(|&&s| iteration >= s).count();
    let lr = cfg.lr0 * cfg.scale.powi(passed as i32);
    if iteration < cfg.burn_in {
        lr * (iteration + 1) as f64 / cfg.burn_in as f64
    } else {
        lr
    }
}

/// Momentum buffers, laid out like the weights.
#[derive(Clone, Debug)]
pub struct SgdState<T: Scalar> {
    velocity: WeightStore<T>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(weights: &WeightStore<T>) -> Self {
        SgdState { velocity: weights.zeros_like() }
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub decay: f64,
}

fn update<T: Scalar>(id: &str, param: &mut [T], grad: &[T], vel: &mut [T], p: SgdParams, decay: bool) -> Result<()> {
    if param.len() != grad.len() || param.len() != vel.len() {
        return Err(Error::shape(
            "sgd_step",
            format!("`{id}`: {} params, {} grads, {} buffers", param.len(), grad.len(), vel.len()),
        ));
    }
    let (lr, m) = (T::lit(p.lr), T::lit(p.momentum));
    let d = if decay { T::lit(p.decay) } else { T::zero() };
    for ((w, &g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
        *v = m * *v - lr * (g + d * *w);
        *w += *v;
    }
    Ok(())
}

fn same_layout(id: &str, what: &str, ours: bool, theirs: bool) -> Result<()> {
    if ours != theirs {
        return Err(Error::shape("sgd_step", format!("`{id}`: {what} present on one side only")));
    }
    Ok(())
}

/// One SGD step with momentum: `v = momentum*v - lr*(g + decay*w)`, then
/// `w += v`. Weight decay applies to convolution kernels only; biases and
/// batch-norm affine parameters are exempt. Running statistics are not
/// touched.
pub fn sgd_step<T: Scalar>(
    weights: &mut WeightStore<T>,
    grads: &WeightStore<T>,
    state: &mut SgdState<T>,
    params: SgdParams,
) -> Result<()> {
    if weights.len() != grads.len() || weights.len() != state.velocity.len() {
        return Err(Error::shape(
            "sgd_step",
            format!("{} layers, {} gradients, {} buffers", weights.len(), grads.len(), state.velocity.len()),
        ));
    }
    for (id, w) in weights.iter_mut() {
        let g = grads.get(id).ok_or_else(|| Error::shape("sgd_step", format!("no gradient for `{id}`")))?;
        let v = state
            .velocity
            .get_mut(id)
            .ok_or_else(|| Error::shape("sgd_step", format!("no momentum buffer for `{id}`")))?;
        step_layer(id, w, g, v, params)?;
    }
    Ok(())
}

fn step_layer<T: Scalar>(
    id: &str,
    w: &mut LayerParams<T>,
    g: &LayerParams<T>,
    v: &mut LayerParams<T>,
    p: SgdParams,
) -> Result<()> {
    same_layout(id, "kernel", w.weight.is_some(), g.weight.is_some())?;
    if let (Some(wk), Some(gk), Some(vk)) = (w.weight.as_mut(), g.weight.as_ref(), v.weight.as_mut()) {
        update(id, wk.data_mut(), gk.data(), vk.data_mut(), p, true)?;
    }
    same_layout(id, "bias", w.bias.is_some(), g.bias.is_some())?;
    if let (Some(wb), Some(gb), Some(vb)) = (w.bias.as_mut(), g.bias.as_deref(), v.bias.as_mut()) {
        update(id, wb, gb, vb, p, false)?;
    }
    match (w.bn.as_mut(), g.bn.as_ref(), v.bn.as_mut()) {
        (Some(wn), Some(gn), Some(vn)) => {
            update(id, &mut wn.gamma, &gn.gamma, &mut vn.gamma, p, false)?;
            update(id, &mut wn.beta, &gn.beta, &mut vn.beta, p, false)?;
        }
        (None, None, None) => {}
        _ => return Err(Error::shape("sgd_step", format!("`{id}`: batch norm present on one side only"))),
    }
    Ok(())
}

/// `acc += scale * g` over every trainable tensor.
pub fn accumulate_grads<T: Scalar>(acc: &mut WeightStore<T>, g: &WeightStore<T>, scale: T) -> Result<()> {
    for (id, a) in acc.iter_mut() {
        let Some(b) = g.get(id) else {
            return Err(Error::shape("accumulate_grads", format!("no gradient for `{id}`")));
        };
        let add = |dst: &mut [T], src: &[T]| -> Result<()> {
            if dst.len() != src.len() {
                return Err(Error::shape("accumulate_grads", format!("`{id}`: {} vs {}", dst.len(), src.len())));
            }
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
            Ok(())
        };
        if let (Some(d), Some(s)) = (a.weight.as_mut(), b.weight.as_ref()) {
            add(d.data_mut(), s.data())?;
        }
        if let (Some(d), Some(s)) = (a.bias.as_mut(), b.bias.as_ref()) {
            add(d, s)?;
        }
        if let (Some(d), Some(s)) = (a.bn.as_mut(), b.bn.as_ref()) {
            add(&mut d.gamma, &s.gamma)?;
            add(&mut d.beta, &s.beta)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{BnParams, Shape, Tensor};

    fn single(w: f64, bias: Option<f64>) -> WeightStore<f64> {
        let mut s = WeightStore::default();
        s.insert(
            "l",
            LayerParams {
                weight: Some(Tensor::full(Shape::new(1, 1, 1, 1), w)),
                bias: bias.map(|b| vec![b]),
                bn: None,
            },
        );
        s
    }

    fn kernel(s: &WeightStore<f64>) -> f64 {
        s.get("l").unwrap().weight.as_ref().unwrap().data()[0]
    }

    #[test]
    fn vanilla_step() {
        let mut w = single(1.0, None);
        let mut st = SgdState::new(&w);
        let p = SgdParams { lr: 0.1, momentum: 0.0, decay: 0.0 };
        sgd_step(&mut w, &single(1.0, None), &mut st, p).unwrap();
        assert!((kernel(&w) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence() {
        let mut w = single(1.0, None);
        let mut st = SgdState::new(&w);
        let p = SgdParams { lr: 0.1, momentum: 0.9, decay: 0.0 };
        let g = single(1.0, None);
        sgd_step(&mut w, &g, &mut st, p).unwrap();
        assert!((kernel(&w) - 0.9).abs() < 1e-15);
        sgd_step(&mut w, &g, &mut st, p).unwrap();
        assert!((kernel(&w) - 0.71).abs() < 1e-12);
    }

    #[test]
    fn decay_hits_kernels_only() {
        let mut w = single(2.0, Some(3.0));
        w.insert("bn", LayerParams { weight: None, bias: None, bn: Some(BnParams::identity(1)) });
        let mut st = SgdState::new(&w);
        let p = SgdParams { lr: 0.1, momentum: 0.0, decay: 0.5 };
        let zero = w.zeros_like();
        sgd_step(&mut w, &zero, &mut st, p).unwrap();
        // shrinks by lr * decay * w
        assert!((kernel(&w) - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
        assert_eq!(w.get("l").unwrap().bias.as_ref().unwrap()[0], 3.0);
        assert_eq!(w.get("bn").unwrap().bn.as_ref().unwrap().gamma[0], 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut w = single(1.0, None);
        let mut st = SgdState::new(&w);
        let p = SgdParams { lr: 0.1, momentum: 0.0, decay: 0.0 };
        assert!(sgd_step(&mut w, &single(1.0, Some(1.0)), &mut st, p).is_err());
        assert!(sgd_step(&mut w, &WeightStore::default(), &mut st, p).is_err());
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig { burn_in: 0, ..Default::default() };
        assert_eq!(lr_schedule(0, &cfg), 0.0013);
        assert_eq!(lr_schedule(1199, &cfg), 0.0013);
        assert!((lr_schedule(1200, &cfg) - 0.00013).abs() < 1e-18);
        assert!((lr_schedule(1801, &cfg) - 0.000013).abs() < 1e-18);
        let ramp = TrainConfig::default();
        assert!((lr_schedule(0, &ramp) - 0.0013 / 200.0).abs() < 1e-18);
        assert!((lr_schedule(99, &ramp) - 0.0013 / 2.0).abs() < 1e-18);
        assert_eq!(lr_schedule(200, &ramp), 0.0013);
    }
}
