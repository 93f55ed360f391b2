use rand::Rng;

use super::{matmul, uniform_init, Param};

/// 1-D convolution without padding or bias (a batch norm follows it).
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out_channels, in_channels * kernel]`
    pub weight: Param,
}

impl Conv1d {
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel;
        let bound = 1.0 / (fan_in as f32).sqrt();
        let weight = Param::new(
            format!("{name}.weight"),
            vec![out_channels, in_channels, kernel],
            uniform_init(rng, out_channels * fan_in, bound),
        );
        Conv1d {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight,
        }
    }

    pub fn out_len(&self, in_len: usize) -> usize {
        if in_len < self.kernel {
            0
        } else {
            (in_len - self.kernel) / self.stride + 1
        }
    }

    /// Unfolds `x` (`[C_in, B*L_in]`) into `[C_in*K, B*L_out]`.
    fn im2col(&self, x: &[f32], batch: usize, in_len: usize) -> Vec<f32> {
        let out_len = self.out_len(in_len);
        let width = batch * out_len;
        let mut cols = vec![0.0; self.in_channels * self.kernel * width];
        for c in 0..self.in_channels {
            for j in 0..self.kernel {
                let row = &mut cols[(c * self.kernel + j) * width..][..width];
                for b in 0..batch {
                    let src = &x[c * batch * in_len + b * in_len + j..];
                    let dst = &mut row[b * out_len..(b + 1) * out_len];
                    for (t, d) in dst.iter_mut().enumerate() {
                        *d = src[t * self.stride];
                    }
                }
            }
        }
        cols
    }

    /// Returns the output `[C_out, B*L_out]` and the unfolded input for backward.
    pub fn forward(&self, x: &[f32], batch: usize, in_len: usize) -> (Vec<f32>, Vec<f32>) {
        let cols = self.im2col(x, batch, in_len);
        let width = batch * self.out_len(in_len);
        let mut out = vec![0.0; self.out_channels * width];
        matmul(
            self.out_channels,
            self.in_channels * self.kernel,
            width,
            &self.weight.value,
            false,
            &cols,
            false,
            &mut out,
            false,
        );
        (out, cols)
    }

    /// Accumulates the weight gradient; returns the input gradient when asked.
    pub fn backward(
        &mut self,
        grad_out: &[f32],
        cols: &[f32],
        batch: usize,
        in_len: usize,
        need_input_grad: bool,
    ) -> Option<Vec<f32>> {
        let out_len = self.out_len(in_len);
        let width = batch * out_len;
        let rows = self.in_channels * self.kernel;
        matmul(
            self.out_channels,
            width,
            rows,
            grad_out,
            false,
            cols,
            true,
            &mut self.weight.grad,
            true,
        );
        if !need_input_grad {
            return None;
        }
        let mut grad_cols = vec![0.0; rows * width];
        matmul(
            rows,
            self.out_channels,
            width,
            &self.weight.value,
            true,
            grad_out,
            false,
            &mut grad_cols,
            false,
        );
        let mut grad_x = vec![0.0; self.in_channels * batch * in_len];
        for c in 0..self.in_channels {
            for j in 0..self.kernel {
                let row = &grad_cols[(c * self.kernel + j) * width..][..width];
                for b in 0..batch {
                    let dst = &mut grad_x[c * batch * in_len + b * in_len + j..];
                    for (t, g) in row[b * out_len..(b + 1) * out_len].iter().enumerate() {
                        dst[t * self.stride] += g;
                    }
                }
            }
        }
        Some(grad_x)
    }
}

/// Per-channel batch normalization over the folded `B*L` axis.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub channels: usize,
    pub eps: f32,
    /// Weight of the newest batch in the running averages.
    pub momentum: f32,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
}

/// Saved state from a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
}

impl BatchNorm1d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm1d {
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma: Param::new(format!("{name}.gamma"), vec![channels], vec![1.0; channels]),
            beta: Param::new(format!("{name}.beta"), vec![channels], vec![0.0; channels]),
            running_mean: Param::buffer(format!("{name}.running_mean"), vec![channels], vec![0.0; channels]),
            running_var: Param::buffer(format!("{name}.running_var"), vec![channels], vec![1.0; channels]),
        }
    }

    /// Normalizes `x` in place with batch statistics and updates the running
    /// estimates (unbiased variance, as is conventional).
    pub fn forward_train(&mut self, x: &mut [f32]) -> BnCache {
        let m = x.len() / self.channels;
        let mut inv_std = vec![0.0; self.channels];
        for c in 0..self.channels {
            let row = &mut x[c * m..(c + 1) * m];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / m as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / m as f64;
            let istd = 1.0 / (var + self.eps as f64).sqrt();
            inv_std[c] = istd as f32;
            for v in row.iter_mut() {
                *v = ((*v as f64 - mean) * istd) as f32;
            }
            let mom = self.momentum;
            let unbiased = if m > 1 { var * m as f64 / (m - 1) as f64 } else { var };
            self.running_mean.value[c] = (1.0 - mom) * self.running_mean.value[c] + mom * mean as f32;
            self.running_var.value[c] = (1.0 - mom) * self.running_var.value[c] + mom * unbiased as f32;
        }
        let xhat = x.to_vec();
        for c in 0..self.channels {
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for v in &mut x[c * m..(c + 1) * m] {
                *v = g * *v + b;
            }
        }
        BnCache { xhat, inv_std }
    }

    pub fn forward_eval(&self, x: &mut [f32]) {
        let m = x.len() / self.channels;
        for c in 0..self.channels {
            let istd = 1.0 / (self.running_var.value[c] + self.eps).sqrt();
            let scale = self.gamma.value[c] * istd;
            let shift = self.beta.value[c] - self.running_mean.value[c] * scale;
            for v in &mut x[c * m..(c + 1) * m] {
                *v = *v * scale + shift;
            }
        }
    }

    /// Turns `grad` (w.r.t. the output) into the gradient w.r.t. the input, in place.
    pub fn backward(&mut self, grad: &mut [f32], cache: &BnCache) {
        let m = grad.len() / self.channels;
        for c in 0..self.channels {
            let dy = &mut grad[c * m..(c + 1) * m];
            let xhat = &cache.xhat[c * m..(c + 1) * m];
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for (d, x) in dy.iter().zip(xhat) {
                sum_dy += *d as f64;
                sum_dy_xhat += (*d * *x) as f64;
            }
            self.gamma.grad[c] += sum_dy_xhat as f32;
            self.beta.grad[c] += sum_dy as f32;
            let mean_dy = (sum_dy / m as f64) as f32;
            let mean_dy_xhat = (sum_dy_xhat / m as f64) as f32;
            let k = self.gamma.value[c] * cache.inv_std[c];
            for (d, x) in dy.iter_mut().zip(xhat) {
                *d = k * (*d - mean_dy - x * mean_dy_xhat);
            }
        }
    }
}

/// Dense layer on row-major `[B, in]` inputs.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng>(name: &str, in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f32).sqrt();
        Linear {
            in_features,
            out_features,
            weight: Param::new(
                format!("{name}.weight"),
                vec![out_features, in_features],
                uniform_init(rng, in_features * out_features, bound),
            ),
            bias: Param::new(
                format!("{name}.bias"),
                vec![out_features],
                uniform_init(rng, out_features, bound),
            ),
        }
    }

    pub fn forward(&self, x: &[f32], batch: usize) -> Vec<f32> {
        let mut out = vec![0.0; batch * self.out_features];
        matmul(
            batch,
            self.in_features,
            self.out_features,
            x,
            false,
            &self.weight.value,
            true,
            &mut out,
            false,
        );
        for row in out.chunks_exact_mut(self.out_features) {
            for (o, b) in row.iter_mut().zip(&self.bias.value) {
                *o += b;
            }
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &[f32], x: &[f32], batch: usize) -> Vec<f32> {
        matmul(
            self.out_features,
            batch,
            self.in_features,
            grad_out,
            true,
            x,
            false,
            &mut self.weight.grad,
            true,
        );
        for row in grad_out.chunks_exact(self.out_features) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut grad_x = vec![0.0; batch * self.in_features];
        matmul(
            batch,
            self.out_features,
            self.in_features,
            grad_out,
            false,
            &self.weight.value,
            false,
            &mut grad_x,
            false,
        );
        grad_x
    }
}
