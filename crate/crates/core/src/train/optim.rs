use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::HimosaWeights;
use crate::real::Real;
use crate::tensor::Tensor;

use super::config::OptimizerKind;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MOMENTUM: f64 = 0.9;

/// Rescales every gradient so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(weights: &mut HimosaWeights<T>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for (_, t) in weights.iter() {
        if let Some(g) = t.grad() {
            sq += g.iter().map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::from_f64c(max_norm / norm);
        for (_, t) in weights.iter_mut() {
            t.scale_grad(s);
        }
    }
    norm
}

/// Per-parameter optimiser state. `m` holds momentum (or the first moment)
/// and `v` the second moment; SGD leaves `v` empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
    /// Updates applied so far.
    pub steps: u64,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, weights: &HimosaWeights<T>) -> Self {
        let zeros = || weights.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect();
        let v = if kind == OptimizerKind::AdamLike { zeros() } else { BTreeMap::new() };
        Optimizer { kind, m: zeros(), v, steps: 0 }
    }

    /// Applies one update from the gradients stored on `weights`.
    pub fn step(&mut self, weights: &mut HimosaWeights<T>, lr: f64) -> Result<()> {
        self.steps += 1;
        let lr_t = T::from_f64c(lr);
        let (b1, b2) = (T::from_f64c(BETA1), T::from_f64c(BETA2));
        let one = T::one();
        let bc1 = T::from_f64c(1.0 - BETA1.powf(self.steps as f64));
        let bc2 = T::from_f64c(1.0 - BETA2.powf(self.steps as f64));
        let eps = T::from_f64c(ADAM_EPS);
        let mu = T::from_f64c(MOMENTUM);
        for (name, w) in weights.iter_mut() {
            let Some(grad) = w.grad().map(<[T]>::to_vec) else { continue };
            let m = self
                .m
                .get_mut(name)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state missing `{}`", name)))?;
            match self.kind {
                OptimizerKind::SgdMomentum => {
                    for ((p, mv), &g) in w.data_mut().iter_mut().zip(m.data_mut()).zip(&grad) {
                        *mv = mu * *mv + g;
                        *p -= lr_t * *mv;
                    }
                }
                OptimizerKind::AdamLike => {
                    let v = self
                        .v
                        .get_mut(name)
                        .ok_or_else(|| Error::Checkpoint(format!("optimizer state missing `{}`", name)))?;
                    for (((p, mv), vv), &g) in w.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(&grad) {
                        *mv = b1 * *mv + (one - b1) * g;
                        *vv = b2 * *vv + (one - b2) * g * g;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *p -= lr_t * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn weights_with_grad(g: f64) -> HimosaWeights<f64> {
        let mut w = HimosaWeights::<f64>::init(&ModelConfig::tiny(), 4).unwrap();
        for (_, t) in w.iter_mut() {
            let n = t.numel();
            t.accumulate_grad(&vec![g; n]).unwrap();
        }
        w
    }

    #[test]
    fn zero_lr_changes_nothing() {
        for kind in [OptimizerKind::AdamLike, OptimizerKind::SgdMomentum] {
            let mut w = weights_with_grad(0.3);
            let before: Vec<Vec<f64>> = w.iter().map(|(_, t)| t.data().to_vec()).collect();
            let mut opt = Optimizer::new(kind, &w);
            opt.step(&mut w, 0.0).unwrap();
            let after: Vec<Vec<f64>> = w.iter().map(|(_, t)| t.data().to_vec()).collect();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut w = weights_with_grad(0.3);
        let before = w.get("head.b").unwrap().data()[0];
        let mut opt = Optimizer::new(OptimizerKind::AdamLike, &w);
        opt.step(&mut w, 1e-3).unwrap();
        let after = w.get("head.b").unwrap().data()[0];
        assert!((before - after - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut w = weights_with_grad(1.0);
        let n = w.num_scalars() as f64;
        let norm = clip_global_norm(&mut w, 1.0);
        assert!((norm - n.sqrt()).abs() < 1e-9);
        assert!((clip_global_norm(&mut w, 0.0) - 1.0).abs() < 1e-9);
    }
}
