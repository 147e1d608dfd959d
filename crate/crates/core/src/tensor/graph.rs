use crate::error::{Error, Result};
use crate::real::Real;

use super::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
///
/// Returns one entry per input, `None` where the input receives no gradient.
pub trait Function<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &[T]) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Real> {
    value: Option<Tensor<T>>,
    inputs: Vec<Var>,
    func: Option<Box<dyn Function<T>>>,
    requires_grad: bool,
    leaf: bool,
}

/// Ordered tape of operations. Inputs of a node always precede it, so a
/// reverse sweep is a valid topological order.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
    tracking: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), leaf_grads: Vec::new(), tracking: true }
    }

    /// A graph that records no backward information. Intermediate values
    /// can be released with [`Graph::release_except`].
    pub fn inference() -> Self {
        Graph { nodes: Vec::new(), leaf_grads: Vec::new(), tracking: false }
    }

    pub fn is_tracking(&self) -> bool {
        self.tracking
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradient tracking follows `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let requires_grad = self.tracking && t.requires_grad();
        self.push(Node { value: Some(t.detached()), inputs: vec![], func: None, requires_grad, leaf: true })
    }

    /// Records a leaf that receives gradients.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        let requires_grad = self.tracking;
        self.push(Node { value: Some(t.detached()), inputs: vec![], func: None, requires_grad, leaf: true })
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Node { value: Some(t.detached()), inputs: vec![], func: None, requires_grad: false, leaf: true })
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Appends the result of an operation and its backward rule.
    pub fn record(&mut self, func: Box<dyn Function<T>>, inputs: &[Var], output: Tensor<T>) -> Var {
        debug_assert!(
            output.is_finite() || inputs.iter().any(|v| !self.value(*v).is_finite()),
            "{} produced a non-finite value from finite inputs",
            func.name()
        );
        let requires_grad = self.tracking && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let func = if requires_grad { Some(func) } else { None };
        let inputs = if requires_grad { inputs.to_vec() } else { vec![] };
        self.push(Node { value: Some(output), inputs, func, requires_grad, leaf: false })
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0]
            .value
            .as_ref()
            .expect("value was released from an inference graph")
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Drops stored values of every node not listed in `keep`. No-op on a
    /// tracking graph, whose values are needed by backward.
    pub fn release_except(&mut self, keep: &[Var]) {
        if self.tracking {
            return;
        }
        let mut kept = vec![false; self.nodes.len()];
        keep.iter().for_each(|v| kept[v.0] = true);
        for (node, k) in self.nodes.iter_mut().zip(kept) {
            if !k {
                node.value = None;
            }
        }
    }

    /// Reverse sweep from a scalar `loss`, adding d(loss)/d(leaf) into the
    /// leaf gradient slots. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.leaf {
                if node.requires_grad {
                    match self.leaf_grads[idx].as_mut() {
                        Some(acc) => super::linalg::add_into(acc, &g),
                        None => self.leaf_grads[idx] = Some(g),
                    }
                }
                continue;
            }
            let Some(func) = node.func.as_ref() else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| self.value(*v)).collect();
            let output = self.value(Var(idx));
            let input_grads = func.backward(&inputs, output, &g);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", func.name());
            for (v, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match grads[v.0].as_mut() {
                    Some(acc) => super::linalg::add_into(acc, &ig),
                    None => grads[v.0] = Some(ig),
                }
            }
        }
        Ok(())
    }
}
