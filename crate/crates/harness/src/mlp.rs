//! Fully connected layers with ReLU, forward and analytic backward.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use ttrec_core::gemm::{gemm_nn, gemm_nt, gemm_tn_acc};
use ttrec_core::{Element, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Element> Linear<T> {
    /// Gaussian weights with variance `2 / (in + out)`, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let std = (2.0 / (in_dim + out_dim) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim)
                .map(|_| T::from_f64(normal.sample(rng)))
                .collect(),
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        let b = x.rows();
        let mut y = Matrix::zeros(b, self.out_dim);
        gemm_nt(
            b,
            self.out_dim,
            self.in_dim,
            x.as_slice(),
            self.in_dim,
            &self.weight,
            self.in_dim,
            y.as_mut_slice(),
            self.out_dim,
        );
        for row in 0..b {
            for (v, &bias) in y.row_mut(row).iter_mut().zip(&self.bias) {
                *v += bias;
            }
        }
        y
    }

    /// Accumulates into `grads` and returns the input gradient.
    pub fn backward(
        &self,
        x: &Matrix<T>,
        grad_y: &Matrix<T>,
        grads: &mut LinearGrads<T>,
    ) -> Matrix<T> {
        let b = x.rows();
        gemm_tn_acc(
            self.out_dim,
            self.in_dim,
            b,
            grad_y.as_slice(),
            self.out_dim,
            x.as_slice(),
            self.in_dim,
            &mut grads.weight,
            self.in_dim,
        );
        for row in grad_y.rows_iter() {
            for (gb, &g) in grads.bias.iter_mut().zip(row) {
                *gb += g;
            }
        }
        let mut grad_x = Matrix::zeros(b, self.in_dim);
        gemm_nn(
            b,
            self.in_dim,
            self.out_dim,
            grad_y.as_slice(),
            self.out_dim,
            &self.weight,
            self.in_dim,
            grad_x.as_mut_slice(),
            self.in_dim,
            false,
        );
        grad_x
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Element> LinearGrads<T> {
    pub fn zeros(layer: &Linear<T>) -> Self {
        Self {
            weight: vec![T::zero(); layer.weight.len()],
            bias: vec![T::zero(); layer.bias.len()],
        }
    }
}

/// Stack of linear layers with ReLU after each hidden layer, and after the
/// last one too when `relu_last` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    pub relu_last: bool,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace<T> {
    /// Input of each layer; `inputs[0]` is the MLP input.
    inputs: Vec<Matrix<T>>,
    /// Pre-activation output of each layer.
    pre: Vec<Matrix<T>>,
}

fn relu<T: Element>(m: &Matrix<T>) -> Matrix<T> {
    let data = m
        .as_slice()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    Matrix::from_vec(m.rows(), m.cols(), data)
}

impl<T: Element> Mlp<T> {
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        widths: &[usize],
        relu_last: bool,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input;
        for &w in widths {
            layers.push(Linear::init(prev, w, rng));
            prev = w;
        }
        Self { layers, relu_last }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    fn has_relu(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.relu_last
    }

    pub fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, MlpTrace<T>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            let next = if self.has_relu(i) {
                relu(&z)
            } else {
                z.clone()
            };
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        (h, MlpTrace { inputs, pre })
    }

    pub fn backward(
        &self,
        trace: &MlpTrace<T>,
        grad_out: &Matrix<T>,
        grads: &mut MlpGrads<T>,
    ) -> Matrix<T> {
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if self.has_relu(i) {
                for (gv, &z) in g.as_mut_slice().iter_mut().zip(trace.pre[i].as_slice()) {
                    if z <= T::zero() {
                        *gv = T::zero();
                    }
                }
            }
            g = self.layers[i].backward(&trace.inputs[i], &g, &mut grads.layers[i]);
        }
        g
    }

    pub fn sgd_step(&mut self, grads: &MlpGrads<T>, lr: T) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, &gw) in layer.weight.iter_mut().zip(&g.weight) {
                *w -= lr * gw;
            }
            for (b, &gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Linear::parameter_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub layers: Vec<LinearGrads<T>>,
}

impl<T: Element> MlpGrads<T> {
    pub fn zeros(mlp: &Mlp<T>) -> Self {
        Self {
            layers: mlp.layers.iter().map(LinearGrads::zeros).collect(),
        }
    }
}
