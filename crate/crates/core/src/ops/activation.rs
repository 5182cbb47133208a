use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

/// Pointwise nonlinearity used inside the convolutional blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu6,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu6 => relu6(x),
            Activation::Relu => x.map(|v| v.max(T::zero())),
        }
    }

    /// Backward pass given the activation's *input*. The derivative at a
    /// kink is 0.
    pub fn backward<T: Scalar>(self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu6 => relu6_backward(x, grad_out),
            Activation::Relu => {
                let mut g = grad_out.clone();
                for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
                    if xv <= T::zero() {
                        *gv = T::zero();
                    }
                }
                g
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu6 => "relu6",
            Activation::Relu => "relu",
        }
    }
}

pub fn relu6<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let six = T::of(6.0);
    x.map(|v| v.max(T::zero()).min(six))
}

/// Gradient is passed only where `0 < x < 6`.
pub fn relu6_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let six = T::of(6.0);
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= T::zero() || xv >= six {
            *gv = T::zero();
        }
    }
    g
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Backward pass given the sigmoid's *output* `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
        *gv *= yv * (T::one() - yv);
    }
    g
}
