//! Dense and 1-D convolutional layers with exact reverse-mode gradients.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;

use super::Scalar;

/// Elementwise non-linearity between layers.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    /// Negative inputs scaled by the slope (slope in (0,1)).
    LeakyRelu(f64),
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::LeakyRelu(slope) => {
                if x < F::zero() {
                    x * F::from(slope).unwrap()
                } else {
                    x
                }
            }
            Activation::Relu => {
                if x < F::zero() {
                    F::zero()
                } else {
                    x
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative as a function of the pre-activation input.
    #[inline]
    pub fn grad<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::LeakyRelu(slope) => {
                if x < F::zero() {
                    F::from(slope).unwrap()
                } else {
                    F::one()
                }
            }
            Activation::Relu => {
                if x < F::zero() {
                    F::zero()
                } else {
                    F::one()
                }
            }
            Activation::Identity => F::one(),
        }
    }
}

/// Uniform He-style fan-in initialization.
fn init_uniform<F: Scalar>(rng: &mut impl Rng, fan_in: usize) -> F {
    let limit = (6.0 / fan_in as f64).sqrt();
    F::from(rng.random_range(-limit..limit)).unwrap()
}

/// Fully-connected layer storing weights as (out, in).
#[derive(Debug, Clone)]
pub struct Dense<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
    pub activation: Activation,
}

impl<F: Scalar> Dense<F> {
    pub fn new(in_width: usize, out_width: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let weights = Array2::from_shape_fn((out_width, in_width), |_| init_uniform(rng, in_width));
        let bias = Array1::zeros(out_width);
        Dense {
            weights,
            bias,
            activation,
        }
    }

    pub fn in_width(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_width(&self) -> usize {
        self.weights.nrows()
    }

    /// Forward for a batch (B, in) -> pre-activation and activation (B, out).
    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, Array2<F>) {
        let mut z = x.dot(&self.weights.t());
        for mut row in z.rows_mut() {
            row += &self.bias;
        }
        let a = z.mapv(|v| self.activation.apply(v));
        (z, a)
    }

    /// Backward pass. `grad_out` is dL/d(activation output).
    ///
    /// Returns (dL/dx, dW, db).
    pub fn backward(
        &self,
        x: &Array2<F>,
        pre: &Array2<F>,
        grad_out: &Array2<F>,
    ) -> (Array2<F>, Array2<F>, Array1<F>) {
        let mut gz = grad_out.clone();
        gz.zip_mut_with(pre, |g, &z| *g = *g * self.activation.grad(z));
        let grad_w = gz.t().dot(x);
        let grad_b = gz.sum_axis(Axis(0));
        let grad_x = gz.dot(&self.weights);
        (grad_x, grad_w, grad_b)
    }
}

/// 1-D convolution, kernel 3, stride 1, zero same-padding.
///
/// Data layout is (batch, channels, time); kernels are (out_ch, in_ch, k).
#[derive(Debug, Clone)]
pub struct Conv1d<F> {
    pub kernels: Array3<F>,
    pub bias: Array1<F>,
    pub activation: Activation,
}

impl<F: Scalar> Conv1d<F> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_len: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel_len;
        let kernels = Array3::from_shape_fn((out_channels, in_channels, kernel_len), |_| {
            init_uniform(rng, fan_in)
        });
        let bias = Array1::zeros(out_channels);
        Conv1d {
            kernels,
            bias,
            activation,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn kernel_len(&self) -> usize {
        self.kernels.shape()[2]
    }

    /// Forward (B, C_in, T) -> pre-activation and activation (B, C_out, T).
    pub fn forward(&self, x: &Array3<F>) -> (Array3<F>, Array3<F>) {
        let (b, c_in, t) = x.dim();
        let c_out = self.out_channels();
        let k = self.kernel_len();
        let pad = k / 2;
        let mut z = Array3::zeros((b, c_out, t));
        for bi in 0..b {
            for oc in 0..c_out {
                let bias = self.bias[oc];
                for ic in 0..c_in {
                    let xin = x.index_axis(Axis(0), bi);
                    let xin = xin.index_axis(Axis(0), ic);
                    let kern = self.kernels.index_axis(Axis(0), oc);
                    let kern = kern.index_axis(Axis(0), ic);
                    let mut zrow = z.index_axis_mut(Axis(0), bi);
                    let mut zrow = zrow.index_axis_mut(Axis(0), oc);
                    for ti in 0..t {
                        let mut acc = F::zero();
                        for j in 0..k {
                            let src = ti + j;
                            if src >= pad && src - pad < t {
                                acc = acc + kern[j] * xin[src - pad];
                            }
                        }
                        zrow[ti] = zrow[ti] + acc;
                    }
                }
                let mut zrow = z.index_axis_mut(Axis(0), bi);
                let mut zrow = zrow.index_axis_mut(Axis(0), oc);
                zrow.mapv_inplace(|v| v + bias);
            }
        }
        let a = z.mapv(|v| self.activation.apply(v));
        (z, a)
    }

    /// Backward pass; returns (dL/dx, dK, db).
    pub fn backward(
        &self,
        x: &Array3<F>,
        pre: &Array3<F>,
        grad_out: &Array3<F>,
    ) -> (Array3<F>, Array3<F>, Array1<F>) {
        let (b, c_in, t) = x.dim();
        let c_out = self.out_channels();
        let k = self.kernel_len();
        let pad = k / 2;
        let mut gz = grad_out.clone();
        gz.zip_mut_with(pre, |g, &z| *g = *g * self.activation.grad(z));

        let mut grad_x = Array3::zeros((b, c_in, t));
        let mut grad_k = Array3::zeros((c_out, c_in, k));
        let mut grad_b = Array1::zeros(c_out);
        for bi in 0..b {
            for oc in 0..c_out {
                let grow = gz.index_axis(Axis(0), bi);
                let grow = grow.index_axis(Axis(0), oc);
                grad_b[oc] = grad_b[oc] + grow.sum();
                for ic in 0..c_in {
                    let xin = x.index_axis(Axis(0), bi);
                    let xin = xin.index_axis(Axis(0), ic);
                    let kern = self.kernels.index_axis(Axis(0), oc);
                    let kern = kern.index_axis(Axis(0), ic);
                    let mut gx = grad_x.index_axis_mut(Axis(0), bi);
                    let mut gx = gx.index_axis_mut(Axis(0), ic);
                    for ti in 0..t {
                        let g = grow[ti];
                        if g == F::zero() {
                            continue;
                        }
                        for j in 0..k {
                            let src = ti + j;
                            if src >= pad && src - pad < t {
                                gx[src - pad] = gx[src - pad] + kern[j] * g;
                                grad_k[(oc, ic, j)] = grad_k[(oc, ic, j)] + xin[src - pad] * g;
                            }
                        }
                    }
                }
            }
        }
        (grad_x, grad_k, grad_b)
    }
}

/// Max pooling, kernel 2 stride 2; remembers argmax for the backward pass.
pub struct PoolTrace {
    /// 0 or 1 per output element: which of the two inputs won.
    pub argmax: Array3<u8>,
}

pub fn maxpool2_forward<F: Scalar>(x: &Array3<F>) -> (Array3<F>, PoolTrace) {
    let (b, c, t) = x.dim();
    debug_assert!(t % 2 == 0, "pooling expects even temporal length");
    let t_out = t / 2;
    let mut y = Array3::zeros((b, c, t_out));
    let mut argmax = Array3::zeros((b, c, t_out));
    for bi in 0..b {
        for ci in 0..c {
            for to in 0..t_out {
                let a = x[(bi, ci, 2 * to)];
                let bv = x[(bi, ci, 2 * to + 1)];
                if bv > a {
                    y[(bi, ci, to)] = bv;
                    argmax[(bi, ci, to)] = 1;
                } else {
                    y[(bi, ci, to)] = a;
                }
            }
        }
    }
    (y, PoolTrace { argmax })
}

pub fn maxpool2_backward<F: Scalar>(grad_out: &Array3<F>, trace: &PoolTrace, t_in: usize) -> Array3<F> {
    let (b, c, t_out) = grad_out.dim();
    let mut gx = Array3::zeros((b, c, t_in));
    for bi in 0..b {
        for ci in 0..c {
            for to in 0..t_out {
                let off = trace.argmax[(bi, ci, to)] as usize;
                gx[(bi, ci, 2 * to + off)] = grad_out[(bi, ci, to)];
            }
        }
    }
    gx
}

/// Nearest-neighbor temporal upsampling by 2.
pub fn upsample2_forward<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    let (b, c, t) = x.dim();
    let mut y = Array3::zeros((b, c, 2 * t));
    for bi in 0..b {
        for ci in 0..c {
            for ti in 0..t {
                let v = x[(bi, ci, ti)];
                y[(bi, ci, 2 * ti)] = v;
                y[(bi, ci, 2 * ti + 1)] = v;
            }
        }
    }
    y
}

pub fn upsample2_backward<F: Scalar>(grad_out: &Array3<F>) -> Array3<F> {
    let (b, c, t2) = grad_out.dim();
    let t = t2 / 2;
    let mut gx = Array3::zeros((b, c, t));
    for bi in 0..b {
        for ci in 0..c {
            for ti in 0..t {
                gx[(bi, ci, ti)] =
                    grad_out[(bi, ci, 2 * ti)] + grad_out[(bi, ci, 2 * ti + 1)];
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn leaky_relu_scales_negatives() {
        let a = Activation::LeakyRelu(0.01);
        assert_eq!(a.apply(-2.0f64), -0.02);
        assert_eq!(a.apply(3.0f64), 3.0);
        assert_eq!(a.grad(-1.0f64), 0.01);
        assert_eq!(a.grad(1.0f64), 1.0);
    }

    #[test]
    fn dense_forward_matches_matmul_oracle() {
        let mut rng = crate::seeding::stream_rng(1, "layers-test", &[]);
        let l1: Dense<f64> = Dense::new(6, 4, Activation::LeakyRelu(0.01), &mut rng);
        let l2: Dense<f64> = Dense::new(4, 3, Activation::Identity, &mut rng);
        let x = Array2::from_shape_fn((5, 6), |_| rng.random_range(-1.0..1.0));
        let (_, a1) = l1.forward(&x);
        let (_, a2) = l2.forward(&a1);

        // straight-line loop oracle
        for bi in 0..5 {
            let mut h = vec![0.0f64; 4];
            for o in 0..4 {
                let mut acc = l1.bias[o];
                for i in 0..6 {
                    acc += l1.weights[(o, i)] * x[(bi, i)];
                }
                h[o] = if acc < 0.0 { acc * 0.01 } else { acc };
            }
            for o in 0..3 {
                let mut acc = l2.bias[o];
                for i in 0..4 {
                    acc += l2.weights[(o, i)] * h[i];
                }
                assert!((a2[(bi, o)] - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identity_weight_layer_applies_slope_to_negatives() {
        let mut w = Array2::zeros((3, 3));
        for i in 0..3 {
            w[(i, i)] = 1.0f64;
        }
        let layer = Dense {
            weights: w,
            bias: Array1::zeros(3),
            activation: Activation::LeakyRelu(0.1),
        };
        let x = array![[1.0, -2.0, 0.5]];
        let (_, a) = layer.forward(&x);
        assert_eq!(a, array![[1.0, -0.2, 0.5]]);
    }

    #[test]
    fn pool_and_upsample_shapes_and_routing() {
        let x = array![[[1.0f64, 3.0, 2.0, 2.0], [5.0, 4.0, 0.0, -1.0]]];
        let (y, trace) = maxpool2_forward(&x);
        assert_eq!(y, array![[[3.0, 2.0], [5.0, 0.0]]]);
        let g = array![[[1.0f64, 10.0], [2.0, 20.0]]];
        let gx = maxpool2_backward(&g, &trace, 4);
        assert_eq!(gx, array![[[0.0, 1.0, 10.0, 0.0], [2.0, 0.0, 20.0, 0.0]]]);

        let up = upsample2_forward(&y);
        assert_eq!(up, array![[[3.0, 3.0, 2.0, 2.0], [5.0, 5.0, 0.0, 0.0]]]);
        let gup = upsample2_backward(&up);
        assert_eq!(gup, array![[[6.0, 4.0], [10.0, 0.0]]]);
    }

    #[test]
    fn conv_same_padding_identity_kernel() {
        let mut rng = crate::seeding::stream_rng(2, "layers-test", &[]);
        let mut conv: Conv1d<f64> = Conv1d::new(1, 1, 3, Activation::Identity, &mut rng);
        conv.kernels.fill(0.0);
        conv.kernels[(0, 0, 1)] = 1.0; // center tap only
        conv.bias.fill(0.0);
        let x = Array3::from_shape_fn((1, 1, 8), |(_, _, t)| t as f64);
        let (_, y) = conv.forward(&x);
        assert_eq!(y, x);
    }
}
