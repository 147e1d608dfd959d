use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Function, Graph, Tensor, Var};

struct L1 {
    n: usize,
}

impl<T: Real> Function<T> for L1 {
    fn name(&self) -> &'static str {
        "l1_loss"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let scale = g[0] / T::from_f64c(self.n as f64);
        let (p, t) = (inputs[0].data(), inputs[1].data());
        let dp: Vec<T> = p
            .iter()
            .zip(t)
            .map(|(&a, &b)| {
                let diff = a - b;
                if diff > T::zero() {
                    scale
                } else if diff < T::zero() {
                    -scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let dt = dp.iter().map(|&v| -v).collect();
        vec![Some(dp), Some(dt)]
    }
}

impl<T: Real> Graph<T> {
    /// Mean absolute error; the subgradient at exact ties is 0.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::contract(
                "l1_loss",
                format!("shapes differ: {:?} vs {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let n = p.len();
        let total: T = p.iter().zip(t).map(|(&a, &b)| (a - b).abs()).sum();
        let out = Tensor::scalar(total / T::from_f64c(n.max(1) as f64));
        Ok(self.record(Box::new(L1 { n: n.max(1) }), &[pred, target], out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_is_zero_with_zero_grad() {
        let mut g = Graph::<f64>::new();
        let p = g.param(&Tensor::from_fn(&[2, 3], |i| i as f64));
        let t = g.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
        let l = g.l1_loss(p, t).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        g.backward(l).unwrap();
        assert!(g.grad(p).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_offset() {
        let mut g = Graph::<f64>::new();
        let p = g.param(&Tensor::from_fn(&[4], |i| i as f64 - 0.75));
        let t = g.constant(Tensor::from_fn(&[4], |i| i as f64));
        let l = g.l1_loss(p, t).unwrap();
        assert_eq!(g.value(l).item(), 0.75);
        g.backward(l).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[-0.25; 4]);
    }

    #[test]
    fn shape_mismatch() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::zeros(&[2]));
        let t = g.constant(Tensor::zeros(&[3]));
        assert!(g.l1_loss(p, t).is_err());
    }
}
