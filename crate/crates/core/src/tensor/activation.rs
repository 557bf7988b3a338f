use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

/// Darknet's leaky slope.
pub const LEAKY_SLOPE: f64 = 0.1;
pub const ELU_ALPHA: f64 = 1.0;

/// Past this, tanh(softplus(x)) is 1 to working precision.
const MISH_CUTOFF: f64 = 20.0;

/// tanh(softplus(x)) from a single exp: with n = e^x it equals
/// (n^2 + 2n) / (n^2 + 2n + 2).
#[inline]
fn mish_tanh<T: Scalar>(x: T) -> T {
    if x > T::lit(MISH_CUTOFF) {
        return T::one();
    }
    let n = x.exp();
    let q = n * (n + T::lit(2.0));
    q / (q + T::lit(2.0))
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Activation {
    Linear,
    Relu,
    Leaky { slope: f64 },
    Elu { alpha: f64 },
    Swish,
    Mish,
}

impl Activation {
    pub const LEAKY: Activation = Activation::Leaky { slope: LEAKY_SLOPE };
    pub const ELU: Activation = Activation::Elu { alpha: ELU_ALPHA };

    pub fn is_linear(self) -> bool {
        matches!(self, Activation::Linear)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Leaky { .. } => "leaky",
            Activation::Elu { .. } => "elu",
            Activation::Swish => "swish",
            Activation::Mish => "mish",
        }
    }

    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        let zero = T::zero();
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(zero),
            Activation::Leaky { slope } => {
                if x > zero {
                    x
                } else {
                    x * T::lit(slope)
                }
            }
            Activation::Elu { alpha } => {
                if x >= zero {
                    x
                } else {
                    T::lit(alpha) * x.exp_m1()
                }
            }
            Activation::Swish => x * sigmoid(x),
            Activation::Mish => x * mish_tanh(x),
        }
    }

    /// d/dx of `apply` at `x` (the pre-activation value).
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        let zero = T::zero();
        let one = T::one();
        match self {
            Activation::Linear => one,
            Activation::Relu => {
                if x > zero {
                    one
                } else {
                    zero
                }
            }
            Activation::Leaky { slope } => {
                if x > zero {
                    one
                } else {
                    T::lit(slope)
                }
            }
            Activation::Elu { alpha } => {
                if x >= zero {
                    one
                } else {
                    T::lit(alpha) * x.exp()
                }
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (one - s)
            }
            Activation::Mish => {
                if x > T::lit(MISH_CUTOFF) {
                    return one;
                }
                let n = x.exp();
                let t = mish_tanh(x);
                t + x * (one - t * t) * (n / (one + n))
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "linear" => Activation::Linear,
            "relu" => Activation::Relu,
            "leaky" | "leaky-relu" => Activation::LEAKY,
            "elu" => Activation::ELU,
            "swish" => Activation::Swish,
            "mish" => Activation::Mish,
            other => return Err(Error::Invalid(format!("unknown activation `{other}`"))),
        })
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.name().to_string()
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

pub fn activate<T: Scalar>(input: &Tensor<T>, f: Activation) -> Tensor<T> {
    if f.is_linear() {
        return input.clone();
    }
    input.map(|x| f.apply(x))
}

/// Gradient with respect to the pre-activation `input`.
pub fn activate_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>, f: Activation) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("activate_backward", format!("input {} vs grad {}", input.shape(), grad_out.shape())));
    }
    if f.is_linear() {
        return Ok(grad_out.clone());
    }
    let data = input.data().iter().zip(grad_out.data()).map(|(&x, &g)| g * f.derivative(x)).collect();
    Tensor::from_vec(input.shape(), data)
}
