use ndarray::{Array1, Array2};

use super::HeadConfig;
use crate::error::{AenError, Result};
use crate::rng::SplitMix64;

pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch statistic in the running averages.
pub const BN_MOMENTUM: f64 = 0.1;

/// `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.weight.nrows()
    }

    /// Fixed summation order so every caller gets bit-identical results.
    fn apply(&self, x: &[f64]) -> Array1<f64> {
        Array1::from_iter(self.weight.rows().into_iter().zip(self.bias.iter()).map(|(row, &b)| {
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            acc + b
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    pub fn identity(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }

    fn zeros(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::zeros(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::zeros(width),
        }
    }

    fn apply_running(&self, z: &Array1<f64>) -> Array1<f64> {
        Array1::from_iter((0..z.len()).map(|k| {
            let inv = 1.0 / (self.running_var[k] + BN_EPS).sqrt();
            self.gamma[k] * ((z[k] - self.running_mean[k]) * inv) + self.beta[k]
        }))
    }
}

/// Parameters of the classification head. Also used, with the same shapes,
/// to hold their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub hidden: Vec<(Dense, BatchNorm)>,
    pub output: Dense,
}

/// Intermediate values of a batch forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct HeadCache {
    training: bool,
    /// Input to each dense layer, hidden layers first then the output layer.
    inputs: Vec<Array2<f64>>,
    /// Per hidden layer: normalized pre-activations, inverse std, post-BN values.
    xhat: Vec<Array2<f64>>,
    inv_std: Vec<Array1<f64>>,
    post_bn: Vec<Array2<f64>>,
    batch_mean: Vec<Array1<f64>>,
    batch_var: Vec<Array1<f64>>,
}

impl HeadParams {
    /// Hidden dense layers get He-normal weights; the output layer starts at
    /// zero so an untrained head predicts `(0.5, 0.5)`.
    pub fn init(config: &HeadConfig, seed: u64) -> Self {
        let widths = config.widths();
        let mut rng = SplitMix64::new(seed);
        let mut hidden = Vec::new();
        for w in widths.windows(2).take(widths.len() - 2) {
            let std = (2.0 / w[0] as f64).sqrt();
            let dense = Dense {
                weight: Array2::from_shape_simple_fn((w[1], w[0]), || std * rng.next_normal()),
                bias: Array1::zeros(w[1]),
            };
            hidden.push((dense, BatchNorm::identity(w[1])));
        }
        let n = widths.len();
        HeadParams {
            hidden,
            output: Dense::zeros(widths[n - 2], 2),
        }
    }

    /// All-zero parameters with the shapes of `config`.
    pub fn zeros(config: &HeadConfig) -> Self {
        let widths = config.widths();
        let hidden = widths
            .windows(2)
            .take(widths.len() - 2)
            .map(|w| (Dense::zeros(w[0], w[1]), BatchNorm::zeros(w[1])))
            .collect();
        let n = widths.len();
        HeadParams {
            hidden,
            output: Dense::zeros(widths[n - 2], 2),
        }
    }

    pub fn zeros_like(&self) -> Self {
        HeadParams {
            hidden: self
                .hidden
                .iter()
                .map(|(d, _)| (Dense::zeros(d.input_width(), d.output_width()), BatchNorm::zeros(d.output_width())))
                .collect(),
            output: Dense::zeros(self.output.input_width(), 2),
        }
    }

    pub fn input_width(&self) -> usize {
        self.hidden
            .first()
            .map(|(d, _)| d.input_width())
            .unwrap_or_else(|| self.output.input_width())
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.input_width() {
            return Err(AenError::DimensionMismatch {
                expected: self.input_width(),
                found: width,
            });
        }
        Ok(())
    }

    /// Eval-mode logits for one feature vector.
    pub fn forward_row(&self, x: &[f64]) -> Result<[f64; 2]> {
        self.check_width(x.len())?;
        let mut a = Array1::from(x.to_vec());
        for (dense, bn) in &self.hidden {
            let z = dense.apply(a.as_slice().unwrap());
            a = bn.apply_running(&z).mapv(|v| v.max(0.0));
        }
        let out = self.output.apply(a.as_slice().unwrap());
        Ok([out[0], out[1]])
    }

    /// Logits for a `B × in` batch. Training mode normalizes with batch
    /// statistics; eval mode uses the running statistics, row by row.
    pub fn forward_batch(&self, x: &Array2<f64>, training: bool) -> Result<(Array2<f64>, HeadCache)> {
        self.check_width(x.ncols())?;
        let b = x.nrows();
        if b == 0 {
            return Err(AenError::domain("empty batch"));
        }
        let mut cache = HeadCache {
            training,
            inputs: Vec::new(),
            xhat: Vec::new(),
            inv_std: Vec::new(),
            post_bn: Vec::new(),
            batch_mean: Vec::new(),
            batch_var: Vec::new(),
        };
        let mut a = x.clone();
        for (dense, bn) in &self.hidden {
            let width = dense.output_width();
            let mut z = Array2::zeros((b, width));
            for (r, row) in a.rows().into_iter().enumerate() {
                z.row_mut(r).assign(&dense.apply(row.as_slice().unwrap_or(&row.to_vec())));
            }
            let (mean, var) = if training {
                let mean = Array1::from_iter((0..width).map(|k| z.column(k).sum() / b as f64));
                let var = Array1::from_iter(
                    (0..width).map(|k| z.column(k).iter().map(|v| (v - mean[k]).powi(2)).sum::<f64>() / b as f64),
                );
                (mean, var)
            } else {
                (bn.running_mean.clone(), bn.running_var.clone())
            };
            let inv = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let mut xhat = Array2::zeros((b, width));
            let mut y = Array2::zeros((b, width));
            for r in 0..b {
                for k in 0..width {
                    let h = (z[[r, k]] - mean[k]) * inv[k];
                    xhat[[r, k]] = h;
                    y[[r, k]] = bn.gamma[k] * h + bn.beta[k];
                }
            }
            cache.inputs.push(a);
            a = y.mapv(|v| v.max(0.0));
            cache.xhat.push(xhat);
            cache.inv_std.push(inv);
            cache.post_bn.push(y);
            cache.batch_mean.push(mean);
            cache.batch_var.push(var);
        }
        let mut logits = Array2::zeros((b, 2));
        for (r, row) in a.rows().into_iter().enumerate() {
            logits.row_mut(r).assign(&self.output.apply(&row.to_vec()));
        }
        cache.inputs.push(a);
        Ok((logits, cache))
    }

    /// Parameter gradients and the gradient with respect to the head input.
    pub fn backward(&self, cache: &HeadCache, d_logits: &Array2<f64>) -> (HeadParams, Array2<f64>) {
        let mut grads = self.zeros_like();
        let b = d_logits.nrows();
        let last_in = cache.inputs.last().expect("output layer input");
        grads.output.weight = d_logits.t().dot(last_in);
        grads.output.bias = d_logits.sum_axis(ndarray::Axis(0));
        let mut da = d_logits.dot(&self.output.weight);

        for l in (0..self.hidden.len()).rev() {
            let (dense, bn) = &self.hidden[l];
            let y = &cache.post_bn[l];
            let xhat = &cache.xhat[l];
            let inv = &cache.inv_std[l];
            let dy = &da * &y.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let (g_dense, g_bn) = &mut grads.hidden[l];
            g_bn.gamma = (&dy * xhat).sum_axis(ndarray::Axis(0));
            g_bn.beta = dy.sum_axis(ndarray::Axis(0));
            let dxhat = &dy * &bn.gamma;
            let dz = if cache.training {
                let sum_dxhat = dxhat.sum_axis(ndarray::Axis(0));
                let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(ndarray::Axis(0));
                let mut dz = Array2::zeros(dxhat.raw_dim());
                for r in 0..b {
                    for k in 0..dz.ncols() {
                        dz[[r, k]] = inv[k] / b as f64
                            * (b as f64 * dxhat[[r, k]] - sum_dxhat[k] - xhat[[r, k]] * sum_dxhat_xhat[k]);
                    }
                }
                dz
            } else {
                &dxhat * inv
            };
            g_dense.weight = dz.t().dot(&cache.inputs[l]);
            g_dense.bias = dz.sum_axis(ndarray::Axis(0));
            da = dz.dot(&dense.weight);
        }
        (grads, da)
    }

    /// Folds the batch statistics of a training pass into the running
    /// averages. Batches of one carry no variance information and are skipped.
    pub fn update_running_stats(&mut self, cache: &HeadCache) {
        if !cache.training {
            return;
        }
        let b = cache.inputs[0].nrows();
        if b < 2 {
            return;
        }
        let unbias = b as f64 / (b - 1) as f64;
        for (l, (_, bn)) in self.hidden.iter_mut().enumerate() {
            bn.running_mean = &bn.running_mean * (1.0 - BN_MOMENTUM) + &cache.batch_mean[l] * BN_MOMENTUM;
            bn.running_var = &bn.running_var * (1.0 - BN_MOMENTUM) + &cache.batch_var[l] * (BN_MOMENTUM * unbias);
        }
    }

    /// Smallest |post-BN value| across hidden units, i.e. distance to a ReLU kink.
    pub fn relu_margin(cache: &HeadCache) -> f64 {
        cache
            .post_bn
            .iter()
            .flat_map(|y| y.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Trainable tensors in declaration order: per hidden layer weight, bias,
    /// gamma, beta; then output weight and bias.
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (d, bn) in &self.hidden {
            out.push(d.weight.as_slice().unwrap());
            out.push(d.bias.as_slice().unwrap());
            out.push(bn.gamma.as_slice().unwrap());
            out.push(bn.beta.as_slice().unwrap());
        }
        out.push(self.output.weight.as_slice().unwrap());
        out.push(self.output.bias.as_slice().unwrap());
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (d, bn) in &mut self.hidden {
            out.push(d.weight.as_slice_mut().unwrap());
            out.push(d.bias.as_slice_mut().unwrap());
            out.push(bn.gamma.as_slice_mut().unwrap());
            out.push(bn.beta.as_slice_mut().unwrap());
        }
        out.push(self.output.weight.as_slice_mut().unwrap());
        out.push(self.output.bias.as_slice_mut().unwrap());
        out
    }

    pub fn trainable_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in 0..self.hidden.len() {
            for part in ["weight", "bias", "gamma", "beta"] {
                out.push(format!("head.hidden{l}.{part}"));
            }
        }
        out.push("head.output.weight".into());
        out.push("head.output.bias".into());
        out
    }
}

/// Logits for a batch of feature rows.
pub fn mlp_forward(head: &HeadParams, features: &Array2<f64>, training_mode: bool) -> Result<Array2<f64>> {
    Ok(head.forward_batch(features, training_mode)?.0)
}
