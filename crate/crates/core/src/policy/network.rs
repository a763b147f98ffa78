//! Multilayer perceptron with a shared tanh trunk, an actor head and a
//! critic head. Forward and backward passes are written out by hand over
//! row-major batches.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Two raw outputs per action dimension mapped to α, β > 1.
    Beta,
    /// One mean per action dimension plus a state-independent ln σ.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub actions: usize,
    pub head: HeadKind,
}

impl NetworkShape {
    /// Width of the actor head output.
    pub fn head_width(&self) -> usize {
        match self.head {
            HeadKind::Beta => 2 * self.actions,
            HeadKind::Gaussian => self.actions,
        }
    }

    /// Shapes of all parameter tensors in storage order:
    /// `[W₁, b₁, …, W_L, b_L, W_actor, b_actor, W_critic, b_critic, (ln σ)]`.
    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut fan_in = self.input;
        for &h in &self.hidden {
            out.push((fan_in, h));
            out.push((1, h));
            fan_in = h;
        }
        out.push((fan_in, self.head_width()));
        out.push((1, self.head_width()));
        out.push((fan_in, 1));
        out.push((1, 1));
        if self.head == HeadKind::Gaussian {
            out.push((1, self.actions));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.actions == 0 || self.hidden.contains(&0) {
            return Err(Error::config("train.hidden", "layer widths must be positive"));
        }
        Ok(())
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Post-activation outputs of each trunk layer.
    pub hidden: Vec<Array2<f64>>,
    /// Raw actor-head outputs, one row per sample.
    pub head: Array2<f64>,
    pub value: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorCritic {
    pub shape: NetworkShape,
    pub params: Vec<Array2<f64>>,
}

impl ActorCritic {
    /// Scaled-normal initialization. The actor head starts near zero so the
    /// initial policy is close to uniform (Beta) or centered (Gaussian).
    pub fn new<R: Rng + ?Sized>(shape: NetworkShape, initial_log_std: f64, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let shapes = shape.tensor_shapes();
        let n_layers = shape.hidden.len();
        let mut params = Vec::with_capacity(shapes.len());
        for (i, &(r, c)) in shapes.iter().enumerate() {
            let is_bias = i % 2 == 1 && i <= 2 * n_layers + 3;
            let tensor = if i == 2 * n_layers + 4 {
                Array2::from_elem((r, c), initial_log_std)
            } else if is_bias {
                Array2::zeros((r, c))
            } else {
                let gain = if i == 2 * n_layers {
                    0.01
                } else {
                    1.0
                };
                let normal = Normal::new(0.0, gain / (r as f64).sqrt())
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Array2::from_shape_simple_fn((r, c), || normal.sample(rng))
            };
            params.push(tensor);
        }
        Ok(Self { shape, params })
    }

    pub fn n_layers(&self) -> usize {
        self.shape.hidden.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// ln σ per action dimension (Gaussian head only).
    pub fn log_std(&self) -> Option<&Array2<f64>> {
        match self.shape.head {
            HeadKind::Gaussian => self.params.last(),
            HeadKind::Beta => None,
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.shape.input {
            return Err(Error::InvalidArgument(format!(
                "network expects {} inputs, got {}",
                self.shape.input,
                x.ncols()
            )));
        }
        let l = self.n_layers();
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(l);
        for k in 0..l {
            let mut z = {
                let below = if k == 0 { x } else { hidden[k - 1].view() };
                below.dot(&self.params[2 * k])
            };
            z += &self.params[2 * k + 1];
            z.mapv_inplace(f64::tanh);
            hidden.push(z);
        }
        let top = hidden.last().map(|a| a.view()).unwrap_or(x);
        let mut head = top.dot(&self.params[2 * l]);
        head += &self.params[2 * l + 1];
        let mut value = top.dot(&self.params[2 * l + 2]);
        value += &self.params[2 * l + 3];
        let value = value.column(0).to_owned();
        if head.iter().chain(value.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite network output".into()));
        }
        Ok(ForwardCache { hidden, head, value })
    }

    /// Parameter gradients given the loss gradients with respect to the raw
    /// head outputs, the values and (Gaussian) ln σ.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        cache: &ForwardCache,
        d_head: &Array2<f64>,
        d_value: &Array1<f64>,
        d_log_std: Option<&Array1<f64>>,
    ) -> Vec<Array2<f64>> {
        let l = self.n_layers();
        let mut grads: Vec<Array2<f64>> = self.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        let top = cache.hidden.last().map(|a| a.view()).unwrap_or(x);
        let dv = d_value.view().insert_axis(Axis(1));

        grads[2 * l] = top.t().dot(d_head);
        grads[2 * l + 1] = d_head.sum_axis(Axis(0)).insert_axis(Axis(0));
        grads[2 * l + 2] = top.t().dot(&dv);
        grads[2 * l + 3] = dv.sum_axis(Axis(0)).insert_axis(Axis(0));
        if let (Some(g), HeadKind::Gaussian) = (d_log_std, self.shape.head) {
            grads[2 * l + 4] = g.view().insert_axis(Axis(0)).to_owned();
        }

        let mut dh = d_head.dot(&self.params[2 * l].t());
        dh += &dv.dot(&self.params[2 * l + 2].t());
        for k in (0..l).rev() {
            let h = &cache.hidden[k];
            let mut dz = dh;
            ndarray::Zip::from(&mut dz).and(h).for_each(|d, &a| *d *= 1.0 - a * a);
            let below = if k == 0 { x } else { cache.hidden[k - 1].view() };
            grads[2 * k] = below.t().dot(&dz);
            grads[2 * k + 1] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            dh = if k > 0 {
                dz.dot(&self.params[2 * k].t())
            } else {
                Array2::zeros((0, 0))
            };
        }
        grads
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Splits a Beta head row into `(α, β)` with `1 + softplus`.
pub fn beta_params(head_row: &[f64], actions: usize) -> (Vec<f64>, Vec<f64>) {
    let alpha = head_row[..actions].iter().map(|&r| 1.0 + softplus(r)).collect();
    let beta = head_row[actions..2 * actions].iter().map(|&r| 1.0 + softplus(r)).collect();
    (alpha, beta)
}

/// Row `i` of a 2-D array as a contiguous vector.
pub(crate) fn row_vec(a: &Array2<f64>, i: usize) -> Vec<f64> {
    a.slice(s![i, ..]).to_vec()
}
