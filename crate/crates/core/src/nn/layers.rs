use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::gemm::{gemm, MatRef};
use super::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: &'static str,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: &'static str, value: Tensor) -> Self {
        let grad = Tensor::zeros_like(&value);
        Self { name, value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Contract every layer implements.
///
/// `infer` is the eval-mode pass and takes `&self`, so it cannot touch
/// running statistics or caches. `forward` is the train-mode pass; it caches
/// what `backward` needs. `backward` writes parameter gradients (overwriting,
/// not accumulating) and returns the gradient with respect to the input.
pub trait Layer: Send + Sync {
    fn kind(&self) -> &'static str;

    fn infer(&self, input: &Tensor) -> Result<Tensor>;

    fn forward(&mut self, input: &Tensor) -> Result<Tensor>;

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor>;

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    /// Non-trainable state saved with the weights (running statistics).
    fn buffers(&self) -> Vec<&Tensor> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        Vec::new()
    }
}

fn no_cache(kind: &str) -> Error {
    Error::State(format!("{kind}: backward called before a train-mode forward"))
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`: Kaiming-uniform with the
/// negative-slope parameter sqrt(5) used by common framework defaults.
fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

/// 1D convolution without padding: `out[b,o,j] = bias[o] + sum_{i,k}
/// weight[o,i,k] * input[b,i,stride*j+k]`.
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Option<ConvCache>,
}

struct ConvCache {
    cols: Vec<f64>,
    input_shape: [usize; 3],
}

impl Conv1d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_channels * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: Param::new("weight", kaiming_uniform(&[out_channels, in_channels, kernel], fan_in, rng)),
            bias: Param::new("bias", kaiming_uniform(&[out_channels], fan_in, rng)),
            cache: None,
        }
    }

    fn dims(&self, shape: &[usize]) -> Result<[usize; 4]> {
        let &[n, c, len] = shape else {
            return Err(Error::Shape(format!("conv1d expects n x C x L, got {shape:?}")));
        };
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv1d expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        if len < self.kernel || (len - self.kernel) % self.stride != 0 {
            return Err(Error::Shape(format!(
                "conv1d: length {len} is not covered by kernel {} at stride {}",
                self.kernel, self.stride
            )));
        }
        Ok([n, c, len, (len - self.kernel) / self.stride + 1])
    }

    /// Patch matrix `[(b, j), (i, k)]`.
    fn im2col(&self, x: &[f64], [n, cin, len, lout]: [usize; 4]) -> Vec<f64> {
        let width = cin * self.kernel;
        let mut cols = vec![0.0; n * lout * width];
        for b in 0..n {
            for j in 0..lout {
                let row = &mut cols[(b * lout + j) * width..][..width];
                for i in 0..cin {
                    let src = &x[(b * cin + i) * len + j * self.stride..][..self.kernel];
                    row[i * self.kernel..][..self.kernel].copy_from_slice(src);
                }
            }
        }
        cols
    }

    fn project(&self, cols: &[f64], [n, _, _, lout]: [usize; 4]) -> Tensor {
        let width = self.in_channels * self.kernel;
        let cout = self.out_channels;
        let mut mat = vec![0.0; n * lout * cout];
        gemm(
            1.0,
            MatRef::row_major(cols, n * lout, width),
            MatRef::transposed(self.weight.value.data(), cout, width),
            0.0,
            &mut mat,
        );
        let bias = self.bias.value.data();
        let mut out = vec![0.0; n * cout * lout];
        for b in 0..n {
            for j in 0..lout {
                let src = &mat[(b * lout + j) * cout..][..cout];
                for (o, v) in src.iter().enumerate() {
                    out[(b * cout + o) * lout + j] = v + bias[o];
                }
            }
        }
        Tensor::new(vec![n, cout, lout], out).expect("conv output")
    }
}

impl Layer for Conv1d {
    fn kind(&self) -> &'static str {
        "conv1d"
    }

    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let d = self.dims(input.shape())?;
        let cols = self.im2col(input.data(), d);
        Ok(self.project(&cols, d))
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let d = self.dims(input.shape())?;
        let cols = self.im2col(input.data(), d);
        let out = self.project(&cols, d);
        self.cache = Some(ConvCache {
            cols,
            input_shape: [d[0], d[1], d[2]],
        });
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| no_cache("conv1d"))?;
        let [n, cin, len] = cache.input_shape;
        let lout = (len - self.kernel) / self.stride + 1;
        let cout = self.out_channels;
        grad_out.expect_shape(&[n, cout, lout], "conv1d backward")?;
        let width = cin * self.kernel;

        let g = grad_out.data();
        let mut gmat = vec![0.0; n * lout * cout];
        let bias_grad = self.bias.grad.data_mut();
        bias_grad.fill(0.0);
        for b in 0..n {
            for o in 0..cout {
                let src = &g[(b * cout + o) * lout..][..lout];
                for (j, v) in src.iter().enumerate() {
                    gmat[(b * lout + j) * cout + o] = *v;
                    bias_grad[o] += v;
                }
            }
        }
        gemm(
            1.0,
            MatRef::transposed(&gmat, n * lout, cout),
            MatRef::row_major(&cache.cols, n * lout, width),
            0.0,
            self.weight.grad.data_mut(),
        );
        let mut dcols = vec![0.0; n * lout * width];
        gemm(
            1.0,
            MatRef::row_major(&gmat, n * lout, cout),
            MatRef::row_major(self.weight.value.data(), cout, width),
            0.0,
            &mut dcols,
        );
        let mut dx = vec![0.0; n * cin * len];
        for b in 0..n {
            for j in 0..lout {
                let row = &dcols[(b * lout + j) * width..][..width];
                for i in 0..cin {
                    let dst = &mut dx[(b * cin + i) * len + j * self.stride..][..self.kernel];
                    for (d, v) in dst.iter_mut().zip(&row[i * self.kernel..][..self.kernel]) {
                        *d += v;
                    }
                }
            }
        }
        Tensor::new(vec![n, cin, len], dx)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [n, _, _, lout] = self.dims(input)?;
        Ok(vec![n, self.out_channels, lout])
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Per-channel batch normalisation over batch and length, with affine
/// scale/shift and exponential running statistics.
pub struct BatchNorm1d {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    cache: Option<BnCache>,
}

struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: [usize; 3],
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma: Param::new("gamma", Tensor::filled(&[channels], 1.0)),
            beta: Param::new("beta", Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            cache: None,
        }
    }

    fn dims(&self, shape: &[usize]) -> Result<[usize; 3]> {
        let &[n, c, len] = shape else {
            return Err(Error::Shape(format!("batchnorm1d expects n x C x L, got {shape:?}")));
        };
        if c != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm1d expects {} channels, got {c}",
                self.channels
            )));
        }
        Ok([n, c, len])
    }

    fn apply(&self, x: &[f64], [n, c, len]: [usize; 3], mean: &[f64], inv_std: &[f64], xhat_out: Option<&mut Vec<f64>>) -> Vec<f64> {
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut out = vec![0.0; x.len()];
        let mut xhat = xhat_out;
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * len;
                for t in off..off + len {
                    let h = (x[t] - mean[ch]) * inv_std[ch];
                    if let Some(buf) = xhat.as_deref_mut() {
                        buf[t] = h;
                    }
                    out[t] = gamma[ch] * h + beta[ch];
                }
            }
        }
        out
    }
}

impl Layer for BatchNorm1d {
    fn kind(&self) -> &'static str {
        "batchnorm1d"
    }

    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let d = self.dims(input.shape())?;
        let inv_std: Vec<f64> = self
            .running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let out = self.apply(input.data(), d, self.running_mean.data(), &inv_std, None);
        Tensor::new(input.shape().to_vec(), out)
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let d @ [n, c, len] = self.dims(input.shape())?;
        let m = n * len;
        if m < 2 {
            return Err(Error::DegenerateBatch { count: m });
        }
        let x = input.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for b in 0..n {
                s += x[(b * c + ch) * len..][..len].iter().sum::<f64>();
            }
            mean[ch] = s / m as f64;
            let mut sq = 0.0;
            for b in 0..n {
                sq += x[(b * c + ch) * len..][..len]
                    .iter()
                    .map(|v| (v - mean[ch]) * (v - mean[ch]))
                    .sum::<f64>();
            }
            var[ch] = sq / m as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let out = self.apply(x, d, &mean, &inv_std, Some(&mut xhat));

        // Running variance tracks the unbiased estimate.
        let unbias = m as f64 / (m - 1) as f64;
        let mo = self.momentum;
        for ch in 0..c {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (1.0 - mo) * *rm + mo * mean[ch];
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (1.0 - mo) * *rv + mo * var[ch] * unbias;
        }
        self.cache = Some(BnCache { xhat, inv_std, shape: d });
        Tensor::new(input.shape().to_vec(), out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| no_cache("batchnorm1d"))?;
        let [n, c, len] = cache.shape;
        grad_out.expect_shape(&cache.shape, "batchnorm1d backward")?;
        let g = grad_out.data();
        let m = (n * len) as f64;
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * len;
                for t in off..off + len {
                    sum_g[ch] += g[t];
                    sum_gx[ch] += g[t] * cache.xhat[t];
                }
            }
        }
        self.gamma.grad.data_mut().copy_from_slice(&sum_gx);
        self.beta.grad.data_mut().copy_from_slice(&sum_g);
        let gamma = self.gamma.value.data();
        let mut dx = vec![0.0; g.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * len;
                let k = gamma[ch] * cache.inv_std[ch] / m;
                for t in off..off + len {
                    dx[t] = k * (m * g[t] - sum_g[ch] - cache.xhat[t] * sum_gx[ch]);
                }
            }
        }
        Tensor::new(cache.shape.to_vec(), dx)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.dims(input).map(|d| d.to_vec())
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<&Tensor> {
        vec![&self.running_mean, &self.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}

#[derive(Default)]
pub struct Relu {
    mask: Option<(Vec<bool>, Vec<usize>)>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        // `f64::max` would turn NaN into 0 and hide divergence.
        let out = input.data().iter().map(|&v| if v <= 0.0 { 0.0 } else { v }).collect();
        Tensor::new(input.shape().to_vec(), out)
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.mask = Some((
            input.data().iter().map(|v| *v > 0.0).collect(),
            input.shape().to_vec(),
        ));
        self.infer(input)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (mask, shape) = self.mask.as_ref().ok_or_else(|| no_cache("relu"))?;
        grad_out.expect_shape(shape, "relu backward")?;
        let dx = grad_out
            .data()
            .iter()
            .zip(mask)
            .map(|(g, &on)| if on { *g } else { 0.0 })
            .collect();
        Tensor::new(shape.clone(), dx)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }
}

/// Fully connected layer: `out = input * W^T + b` with `W` of shape
/// `out_features x in_features`.
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::new("weight", kaiming_uniform(&[out_features, in_features], in_features, rng)),
            bias: Param::new("bias", kaiming_uniform(&[out_features], in_features, rng)),
            input: None,
        }
    }

    fn rows(&self, shape: &[usize]) -> Result<usize> {
        match *shape {
            [n, f] if f == self.in_features => Ok(n),
            _ => Err(Error::Shape(format!(
                "linear expects n x {}, got {shape:?}",
                self.in_features
            ))),
        }
    }
}

impl Layer for Linear {
    fn kind(&self) -> &'static str {
        "linear"
    }

    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let n = self.rows(input.shape())?;
        let (fi, fo) = (self.in_features, self.out_features);
        let mut out = Vec::with_capacity(n * fo);
        for _ in 0..n {
            out.extend_from_slice(self.bias.value.data());
        }
        gemm(
            1.0,
            MatRef::row_major(input.data(), n, fi),
            MatRef::transposed(self.weight.value.data(), fo, fi),
            1.0,
            &mut out,
        );
        Tensor::new(vec![n, fo], out)
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.infer(input)?;
        self.input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("linear"))?;
        let n = x.shape()[0];
        let (fi, fo) = (self.in_features, self.out_features);
        grad_out.expect_shape(&[n, fo], "linear backward")?;
        let g = grad_out.data();
        gemm(
            1.0,
            MatRef::transposed(g, n, fo),
            MatRef::row_major(x.data(), n, fi),
            0.0,
            self.weight.grad.data_mut(),
        );
        let db = self.bias.grad.data_mut();
        db.fill(0.0);
        for row in g.chunks_exact(fo) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        let mut dx = vec![0.0; n * fi];
        gemm(
            1.0,
            MatRef::row_major(g, n, fo),
            MatRef::row_major(self.weight.value.data(), fo, fi),
            0.0,
            &mut dx,
        );
        Tensor::new(vec![n, fi], dx)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(vec![self.rows(input)?, self.out_features])
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Reshapes every sample to `per_sample`, keeping the batch axis.
pub struct Reshape {
    pub per_sample: Vec<usize>,
    input_shape: Option<Vec<usize>>,
}

impl Reshape {
    pub fn new(per_sample: &[usize]) -> Self {
        Self {
            per_sample: per_sample.to_vec(),
            input_shape: None,
        }
    }
}

impl Layer for Reshape {
    fn kind(&self) -> &'static str {
        "reshape"
    }

    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let shape = self.output_shape(input.shape())?;
        input.clone().reshape(&shape)
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.input_shape = Some(input.shape().to_vec());
        self.infer(input)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let shape = self.input_shape.as_ref().ok_or_else(|| no_cache("reshape"))?;
        grad_out.clone().reshape(shape)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (&n, rest) = input
            .split_first()
            .ok_or_else(|| Error::Shape("reshape needs a batch axis".into()))?;
        if rest.iter().product::<usize>() != self.per_sample.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "cannot reshape samples of {rest:?} into {:?}",
                self.per_sample
            )));
        }
        let mut out = vec![n];
        out.extend_from_slice(&self.per_sample);
        Ok(out)
    }
}
