//! Small differentiable classifiers over flat parameter vectors.
//!
//! Parameters are stored as one `DVector` so that client models can be
//! stacked column-wise into a `d x N` matrix for the consensus step. Matrix
//! blocks inside the vector are column-major.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Multinomial logistic regression (convex).
    SoftmaxRegression,
    /// One tanh hidden layer of the given width (non-convex).
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classifier {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
}

/// Row-wise softmax in place, shifted by the row max for stability.
fn softmax_rows(z: &mut DMatrix<f64>) {
    for mut row in z.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let s = row.sum();
        row /= s;
    }
}

fn add_bias(z: &mut DMatrix<f64>, bias: &[f64]) {
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col.add_scalar_mut(bias[j]);
    }
}

/// Mean cross-entropy of row-softmax probabilities; turns `probs` into
/// `(P - Y) / n` for the backward pass.
fn cross_entropy_backward(probs: &mut DMatrix<f64>, labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        loss -= probs[(i, y)].max(f64::MIN_POSITIVE).ln();
        probs[(i, y)] -= 1.0;
    }
    *probs /= n;
    loss / n
}

impl Classifier {
    pub fn new(kind: ModelKind, input_dim: usize, num_classes: usize) -> Self {
        Classifier {
            kind,
            input_dim,
            num_classes,
        }
    }

    pub fn num_params(&self) -> usize {
        let (d, k) = (self.input_dim, self.num_classes);
        match self.kind {
            ModelKind::SoftmaxRegression => d * k + k,
            ModelKind::Mlp { hidden: h } => d * h + h + h * k + k,
        }
    }

    /// Shared initial point: zeros for softmax regression, a seeded
    /// Glorot-uniform draw for the MLP weights (biases zero).
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut theta = DVector::zeros(self.num_params());
        if let ModelKind::Mlp { hidden: h } = self.kind {
            let (d, k) = (self.input_dim, self.num_classes);
            let a1 = (6.0 / (d + h) as f64).sqrt();
            let a2 = (6.0 / (h + k) as f64).sqrt();
            for v in theta.as_mut_slice()[..d * h].iter_mut() {
                *v = rng.random_range(-a1..a1);
            }
            let off = d * h + h;
            for v in theta.as_mut_slice()[off..off + h * k].iter_mut() {
                *v = rng.random_range(-a2..a2);
            }
        }
        theta
    }

    fn check(&self, theta: &DVector<f64>, x: &DMatrix<f64>) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "parameter vector has length {}, model expects {}",
                theta.len(),
                self.num_params()
            )));
        }
        if x.ncols() != self.input_dim {
            return Err(Error::invalid(format!(
                "features have dimension {}, model expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Class scores, one row per sample.
    pub fn logits(&self, theta: &DVector<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(theta, x)?;
        Ok(self.forward(theta.as_slice(), x).0)
    }

    fn forward(&self, t: &[f64], x: &DMatrix<f64>) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
        let (d, k) = (self.input_dim, self.num_classes);
        match self.kind {
            ModelKind::SoftmaxRegression => {
                let w = DMatrixView::from_slice(&t[..d * k], d, k);
                let mut z = x * w;
                add_bias(&mut z, &t[d * k..]);
                (z, None)
            }
            ModelKind::Mlp { hidden: h } => {
                let w1 = DMatrixView::from_slice(&t[..d * h], d, h);
                let b1 = &t[d * h..d * h + h];
                let off = d * h + h;
                let w2 = DMatrixView::from_slice(&t[off..off + h * k], h, k);
                let b2 = &t[off + h * k..];
                let mut a = x * w1;
                add_bias(&mut a, b1);
                a.apply(|v| *v = v.tanh());
                let mut z = &a * w2;
                add_bias(&mut z, b2);
                (z, Some(a))
            }
        }
    }

    /// Mean cross-entropy over the samples.
    pub fn loss(&self, theta: &DVector<f64>, batch: &Dataset) -> Result<f64> {
        Ok(self.loss_and_gradient(theta, batch)?.0)
    }

    /// Mean cross-entropy and its gradient with respect to `theta`.
    pub fn loss_and_gradient(&self, theta: &DVector<f64>, batch: &Dataset) -> Result<(f64, DVector<f64>)> {
        if batch.is_empty() {
            return Err(Error::invalid("gradient of an empty batch"));
        }
        let x = &batch.features;
        self.check(theta, x)?;
        let t = theta.as_slice();
        let (d, k) = (self.input_dim, self.num_classes);
        let (mut z, hidden) = self.forward(t, x);
        softmax_rows(&mut z);
        let loss = cross_entropy_backward(&mut z, &batch.labels);
        let dz = z;
        let mut grad = DVector::zeros(self.num_params());
        let g = grad.as_mut_slice();
        match self.kind {
            ModelKind::SoftmaxRegression => {
                let gw = x.tr_mul(&dz);
                g[..d * k].copy_from_slice(gw.as_slice());
                for (j, col) in dz.column_iter().enumerate() {
                    g[d * k + j] = col.sum();
                }
            }
            ModelKind::Mlp { hidden: h } => {
                let a = hidden.expect("mlp forward keeps activations");
                let off = d * h + h;
                let w2 = DMatrixView::from_slice(&t[off..off + h * k], h, k);
                let gw2 = a.tr_mul(&dz);
                g[off..off + h * k].copy_from_slice(gw2.as_slice());
                for (j, col) in dz.column_iter().enumerate() {
                    g[off + h * k + j] = col.sum();
                }
                let mut da = &dz * w2.transpose();
                da.zip_apply(&a, |g, act| *g *= 1.0 - act * act);
                let gw1 = x.tr_mul(&da);
                g[..d * h].copy_from_slice(gw1.as_slice());
                for (j, col) in da.column_iter().enumerate() {
                    g[d * h + j] = col.sum();
                }
            }
        }
        Ok((loss, grad))
    }

    /// Predicted class per sample (first index among ties).
    pub fn predict(&self, theta: &DVector<f64>, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let z = self.logits(theta, x)?;
        Ok(z.row_iter().map(|r| r.transpose().argmax().0).collect())
    }

    pub fn accuracy(&self, theta: &DVector<f64>, ds: &Dataset) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::invalid("accuracy on an empty dataset"));
        }
        let pred = self.predict(theta, &ds.features)?;
        let hits = pred.iter().zip(&ds.labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / ds.len() as f64)
    }

    /// Upper bound on the gradient Lipschitz constant of softmax regression:
    /// the softmax Jacobian has spectral norm at most 1/2, so the per-sample
    /// Hessian is bounded by `(||x||^2 + 1) / 2` (the `+1` is the bias input).
    pub fn softmax_smoothness_bound(ds: &Dataset) -> f64 {
        ds.features
            .row_iter()
            .map(|r| r.norm_squared())
            .fold(0.0, f64::max)
            .mul_add(0.5, 0.5)
    }
}
