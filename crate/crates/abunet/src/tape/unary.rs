//! Scalar closed forms for the elementwise primitives and their derivatives.

use crate::scalar::Scalar;

/// ELU negative-branch scale; fixed, not trainable.
pub const ELU_ALPHA: f64 = 1.0;
/// SELU whole-function scale, from the unit mean/variance fixed-point construction.
pub const SELU_LAMBDA: f64 = 1.0507009873554805;
/// SELU negative-branch scale, from the same construction.
pub const SELU_ALPHA: f64 = 1.6732632423543772;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Tanh,
    Relu,
    Elu,
    Selu,
    Sigmoid,
    Abs,
    Exp,
}

impl UnaryFn {
    pub fn name(self) -> &'static str {
        match self {
            UnaryFn::Tanh => "tanh",
            UnaryFn::Relu => "relu",
            UnaryFn::Elu => "elu",
            UnaryFn::Selu => "selu",
            UnaryFn::Sigmoid => "sigmoid",
            UnaryFn::Abs => "abs",
            UnaryFn::Exp => "exp",
        }
    }

    pub fn eval<S: Scalar>(self, x: S) -> S {
        match self {
            UnaryFn::Tanh => x.tanh(),
            UnaryFn::Relu => {
                if x > S::zero() {
                    x
                } else {
                    S::zero()
                }
            }
            UnaryFn::Elu => {
                if x >= S::zero() {
                    x
                } else {
                    S::from_f64(ELU_ALPHA) * x.exp_m1()
                }
            }
            UnaryFn::Selu => {
                let lambda = S::from_f64(SELU_LAMBDA);
                if x >= S::zero() {
                    lambda * x
                } else {
                    lambda * S::from_f64(SELU_ALPHA) * x.exp_m1()
                }
            }
            UnaryFn::Sigmoid => x.sigmoid(),
            UnaryFn::Abs => x.abs(),
            UnaryFn::Exp => x.exp(),
        }
    }

    /// df/dx. Subgradient 0 at the ReLU and |x| kinks.
    pub fn grad<S: Scalar>(self, x: S) -> S {
        match self {
            UnaryFn::Tanh => {
                let t = x.tanh();
                S::one() - t * t
            }
            UnaryFn::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            UnaryFn::Elu => {
                if x >= S::zero() {
                    S::one()
                } else {
                    S::from_f64(ELU_ALPHA) * x.exp()
                }
            }
            UnaryFn::Selu => {
                let lambda = S::from_f64(SELU_LAMBDA);
                if x >= S::zero() {
                    lambda
                } else {
                    lambda * S::from_f64(SELU_ALPHA) * x.exp()
                }
            }
            UnaryFn::Sigmoid => {
                let s = x.sigmoid();
                s * (S::one() - s)
            }
            UnaryFn::Abs => {
                if x > S::zero() {
                    S::one()
                } else if x < S::zero() {
                    -S::one()
                } else {
                    S::zero()
                }
            }
            UnaryFn::Exp => x.exp(),
        }
    }
}

/// Swish value x·sigmoid(βx).
pub fn swish<S: Scalar>(x: S, beta: S) -> S {
    x * (beta * x).sigmoid()
}

/// (∂swish/∂x, ∂swish/∂β).
pub fn swish_grad<S: Scalar>(x: S, beta: S) -> (S, S) {
    let s = (beta * x).sigmoid();
    let sp = s * (S::one() - s);
    (s + x * beta * sp, x * x * sp)
}
