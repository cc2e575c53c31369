use serde::{Deserialize, Serialize};

use super::Tensor;

/// Negative-side slope used by every LeakyReLU in the model.
pub const LEAKY_SLOPE: f64 = 0.2;

#[inline]
pub fn leaky_relu_scalar(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Derivative of LeakyReLU; the kink at 0 takes the negative-side slope.
#[inline]
pub fn leaky_relu_grad_scalar(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| leaky_relu_scalar(v, slope))
}

/// Given the forward input `x` and upstream gradient, returns the gradient w.r.t. `x`.
pub fn leaky_relu_backward(x: &Tensor, d_out: &Tensor, slope: f64) -> Tensor {
    assert_eq!(x.shape(), d_out.shape());
    let data = x
        .data()
        .iter()
        .zip(d_out.data())
        .map(|(&xi, &gi)| gi * leaky_relu_grad_scalar(xi, slope))
        .collect();
    Tensor::from_vec(x.rows(), x.cols(), data).expect("shape preserved")
}

/// Logistic function, evaluated so that neither branch can overflow.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Backward of sigmoid expressed through its output `s`: ds/dx = s(1-s).
pub fn sigmoid_backward(s: &Tensor, d_out: &Tensor) -> Tensor {
    assert_eq!(s.shape(), d_out.shape());
    let data = s
        .data()
        .iter()
        .zip(d_out.data())
        .map(|(&si, &gi)| gi * si * (1.0 - si))
        .collect();
    Tensor::from_vec(s.rows(), s.cols(), data).expect("shape preserved")
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Layer nonlinearity, selectable per layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu => leaky_relu_scalar(x, LEAKY_SLOPE),
        }
    }

    #[inline]
    pub fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu => leaky_relu_grad_scalar(x, LEAKY_SLOPE),
        }
    }
}
