//! Reverse-mode differentiation over tensor primitives.
//!
//! A [`Tape`] records every primitive application in execution order. The
//! forward value is computed eagerly; [`Tape::gradient`] walks the record
//! backwards seeding from a scalar output.

use std::fmt::Debug;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a value recorded on a tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable tensor function with a hand-written vector-Jacobian product.
pub trait Primitive<T: Scalar>: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    /// Gradient contributions for every input given the output cotangent.
    /// `None` means the input receives no gradient from this node.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Option<(Arc<dyn Primitive<T>>, Vec<Var>)>,
}

#[derive(Debug)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input (parameter, data or constant).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: None });
        Var(self.nodes.len() - 1)
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        self.nodes[v.0].op.is_none()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn apply<P: Primitive<T> + 'static>(&mut self, prim: P, inputs: &[Var]) -> Result<Var> {
        self.apply_arc(Arc::new(prim), inputs)
    }

    pub fn apply_arc(&mut self, prim: Arc<dyn Primitive<T>>, inputs: &[Var]) -> Result<Var> {
        let value = {
            let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            prim.forward(&vals)?
        };
        self.nodes.push(Node {
            value,
            op: Some((prim, inputs.to_vec())),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Recomputes every non-leaf value in recording order from the leaves.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                None => node.value.clone(),
                Some((prim, inputs)) => {
                    let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| &values[v.0]).collect();
                    prim.forward(&ins)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse-mode gradients of a scalar `output` with respect to every node.
    pub fn gradient(&self, output: Var) -> Result<Gradients<T>> {
        let out = &self.nodes[output.0].value;
        if !out.is_scalar() {
            return Err(Error::Contract(format!(
                "gradient seed must be a scalar, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(out.shape().to_vec(), T::one()));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some((prim, inputs)) = &node.op {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let contribs = prim.backward(&ins, &node.value, &g);
                debug_assert_eq!(contribs.len(), inputs.len(), "{}", prim.name());
                for (var, c) in inputs.iter().zip(contribs) {
                    let Some(c) = c else { continue };
                    debug_assert_eq!(
                        c.shape(),
                        self.nodes[var.0].value.shape(),
                        "{}",
                        prim.name()
                    );
                    match &mut grads[var.0] {
                        Some(acc) => {
                            for (a, b) in acc.data_mut().iter_mut().zip(c.data()) {
                                *a += *b;
                            }
                        }
                        slot @ None => *slot = Some(c),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradients produced by [`Tape::gradient`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; exactly zero if the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
