//! Vector-Jacobian products for every operator, and a small tape that
//! chains them through a recorded forward pass.
//!
//! This is deliberately not a general autograd: the node set is exactly the
//! operators in [`crate::ops`] plus the training losses.

use crate::error::{Error, Result};
use crate::loss;
use crate::ops::{
    batchnorm_infer_backward, batchnorm_train_backward, bilinear_upsample_x2_backward,
    concat_backward, conv2d_backward, sigmoid_backward, Activation, BatchNormParams, BnSaved,
    ConvWeights,
};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpId {
    Conv2d,
    BatchNorm,
    Activation,
    Sigmoid,
    Upsample,
    Concat,
    AddResidual,
    Bce,
    SoftJaccard,
    Jbce,
}

/// Context captured during the forward pass.
#[derive(Clone, Debug)]
pub enum Saved<T> {
    None,
    Conv2d {
        input: Tensor<T>,
        weights: ConvWeights<T>,
    },
    BatchNormTrain {
        saved: BnSaved<T>,
        gamma: Vec<T>,
    },
    BatchNormInfer {
        input: Tensor<T>,
        params: BatchNormParams<T>,
    },
    Activation {
        kind: Activation,
        input: Tensor<T>,
    },
    Sigmoid {
        output: Tensor<T>,
    },
    Upsample {
        in_shape: Shape,
    },
    Concat {
        a_channels: usize,
    },
    AddResidual,
    Loss {
        pred: Vec<T>,
        gt: Vec<T>,
    },
    Jbce {
        pred: Vec<T>,
        gt: Vec<T>,
        weight: T,
    },
}

/// Gradients of one operator. `inputs` follows the operator's input order;
/// `params` is `[kernel]` for convolutions and `[gamma, beta]` for batch norm.
#[derive(Clone, Debug)]
pub struct OpGrads<T> {
    pub inputs: Vec<Tensor<T>>,
    pub params: Vec<Vec<T>>,
}

impl<T> OpGrads<T> {
    fn inputs(inputs: Vec<Tensor<T>>) -> Self {
        Self {
            inputs,
            params: Vec::new(),
        }
    }
}

fn missing(op: OpId) -> Error {
    Error::usage(format!("missing saved context for {op:?}"))
}

fn scalar_grad<T: Scalar>(op: OpId, grad_out: &Tensor<T>) -> Result<T> {
    match grad_out.data() {
        [g] => Ok(*g),
        _ => Err(Error::invalid(format!(
            "{op:?} produces a scalar; upstream gradient has {} values",
            grad_out.len()
        ))),
    }
}

fn loss_grad<T: Scalar>(pred: &[T], scale: T, grad: Vec<T>) -> Result<Vec<Tensor<T>>> {
    let g = grad.into_iter().map(|v| v * scale).collect::<Vec<_>>();
    debug_assert_eq!(g.len(), pred.len());
    Ok(vec![Tensor::from_vec(g)])
}

/// Exact vector-Jacobian product of `op` given its saved forward context.
///
/// Loss gradients come back as a flat `(1, 1, 1, n)` tensor; the caller
/// reshapes it to the prediction's shape.
pub fn vjp<T: Scalar>(op: OpId, saved: &Saved<T>, grad_out: &Tensor<T>) -> Result<OpGrads<T>> {
    match (op, saved) {
        (OpId::Conv2d, Saved::Conv2d { input, weights }) => {
            let (dx, dk) = conv2d_backward(input, weights, grad_out)?;
            Ok(OpGrads {
                inputs: vec![dx],
                params: vec![dk.into_data()],
            })
        }
        (OpId::BatchNorm, Saved::BatchNormTrain { saved, gamma }) => {
            let (dx, dg, db) = batchnorm_train_backward(saved, gamma, grad_out)?;
            Ok(OpGrads {
                inputs: vec![dx],
                params: vec![dg, db],
            })
        }
        (OpId::BatchNorm, Saved::BatchNormInfer { input, params }) => {
            let (dx, dg, db) = batchnorm_infer_backward(input, params, grad_out)?;
            Ok(OpGrads {
                inputs: vec![dx],
                params: vec![dg, db],
            })
        }
        (OpId::Activation, Saved::Activation { kind, input }) => {
            Ok(OpGrads::inputs(vec![kind.backward(input, grad_out)]))
        }
        (OpId::Sigmoid, Saved::Sigmoid { output }) => {
            Ok(OpGrads::inputs(vec![sigmoid_backward(output, grad_out)]))
        }
        (OpId::Upsample, Saved::Upsample { in_shape }) => {
            Ok(OpGrads::inputs(vec![bilinear_upsample_x2_backward(
                *in_shape, grad_out,
            )?]))
        }
        (OpId::Concat, Saved::Concat { a_channels }) => {
            let (ga, gb) = concat_backward(grad_out, *a_channels)?;
            Ok(OpGrads::inputs(vec![ga, gb]))
        }
        (OpId::AddResidual, Saved::AddResidual) => {
            Ok(OpGrads::inputs(vec![grad_out.clone(), grad_out.clone()]))
        }
        (OpId::Bce, Saved::Loss { pred, gt }) => {
            let s = scalar_grad(op, grad_out)?;
            Ok(OpGrads::inputs(loss_grad(
                pred,
                s,
                loss::bce_grad(pred, gt)?,
            )?))
        }
        (OpId::SoftJaccard, Saved::Loss { pred, gt }) => {
            let s = scalar_grad(op, grad_out)?;
            Ok(OpGrads::inputs(loss_grad(
                pred,
                s,
                loss::soft_jaccard_grad(pred, gt)?,
            )?))
        }
        (OpId::Jbce, Saved::Jbce { pred, gt, weight }) => {
            let s = scalar_grad(op, grad_out)?;
            Ok(OpGrads::inputs(loss_grad(
                pred,
                s,
                loss::jbce_grad(pred, gt, *weight)?,
            )?))
        }
        (op, _) => Err(missing(op)),
    }
}

pub type ValueId = usize;

#[derive(Clone, Debug)]
pub struct Node<T> {
    pub op: OpId,
    pub saved: Saved<T>,
    pub inputs: Vec<ValueId>,
    pub output: ValueId,
    /// Slot in the caller's parameter-gradient table, for parametrised ops.
    pub param_slot: Option<usize>,
}

/// Records operator applications so their gradients can be chained in
/// reverse.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    n_values: usize,
}

/// Result of [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct TapeGrads<T> {
    pub values: Vec<Option<Tensor<T>>>,
    pub params: Vec<Option<Vec<Vec<T>>>>,
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            if acc.shape() != g.shape() {
                return Err(Error::invalid(format!(
                    "gradient shapes {:?} and {:?} cannot be accumulated",
                    acc.shape(),
                    g.shape()
                )));
            }
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            n_values: 0,
        }
    }

    /// Registers a leaf value (e.g. the network input).
    pub fn leaf(&mut self) -> ValueId {
        self.n_values += 1;
        self.n_values - 1
    }

    pub fn record(
        &mut self,
        op: OpId,
        saved: Saved<T>,
        inputs: &[ValueId],
        param_slot: Option<usize>,
    ) -> ValueId {
        let output = self.leaf();
        self.nodes.push(Node {
            op,
            saved,
            inputs: inputs.to_vec(),
            output,
            param_slot,
        });
        output
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Propagates `grad` from `output` back through every recorded node.
    pub fn backward(
        &self,
        output: ValueId,
        grad: Tensor<T>,
        param_slots: usize,
    ) -> Result<TapeGrads<T>> {
        let mut values: Vec<Option<Tensor<T>>> = vec![None; self.n_values];
        let mut params: Vec<Option<Vec<Vec<T>>>> = vec![None; param_slots];
        values[output] = Some(grad);
        for node in self.nodes.iter().rev() {
            let Some(g) = values[node.output].take() else {
                continue;
            };
            let grads = vjp(node.op, &node.saved, &g)?;
            values[node.output] = Some(g);
            if grads.inputs.len() != node.inputs.len() {
                return Err(Error::usage(format!(
                    "{:?} node wired to {} inputs, produced {} gradients",
                    node.op,
                    node.inputs.len(),
                    grads.inputs.len()
                )));
            }
            for (&vid, gi) in node.inputs.iter().zip(grads.inputs) {
                accumulate(&mut values[vid], gi)?;
            }
            if let Some(slot) = node.param_slot {
                let dst = params
                    .get_mut(slot)
                    .ok_or_else(|| Error::usage(format!("parameter slot {slot} out of range")))?;
                match dst {
                    None => *dst = Some(grads.params),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(grads.params) {
                            for (x, y) in a.iter_mut().zip(b) {
                                *x += y;
                            }
                        }
                    }
                }
            }
        }
        Ok(TapeGrads { values, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{add_residual, relu6};

    #[test]
    fn mismatched_context_is_a_usage_error() {
        let g = Tensor::<f64>::zeros([1, 1, 1, 1]);
        let err = vjp(OpId::Conv2d, &Saved::None, &g).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        let err = vjp(OpId::BatchNorm, &Saved::AddResidual, &g).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn relu6_vjp() {
        let x = Tensor::from_vec(vec![3.0f64, 8.0]);
        let saved = Saved::Activation {
            kind: Activation::Relu6,
            input: x,
        };
        let g = vjp(OpId::Activation, &saved, &Tensor::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(g.inputs[0].data(), &[1.0, 0.0]);
    }

    #[test]
    fn tape_accumulates_fan_out() {
        // y = relu6(x) + x  =>  dy/dx = 2 on (0, 6)
        let x = Tensor::from_vec(vec![1.0f64, 7.0]);
        let mut tape = Tape::new();
        let xi = tape.leaf();
        let r = relu6(&x);
        let ri = tape.record(
            OpId::Activation,
            Saved::Activation {
                kind: Activation::Relu6,
                input: x.clone(),
            },
            &[xi],
            None,
        );
        let _ = add_residual(&r, &x).unwrap();
        let yi = tape.record(OpId::AddResidual, Saved::AddResidual, &[ri, xi], None);
        let grads = tape
            .backward(yi, Tensor::from_vec(vec![1.0, 1.0]), 0)
            .unwrap();
        assert_eq!(grads.values[xi].as_ref().unwrap().data(), &[2.0, 1.0]);
    }
}
