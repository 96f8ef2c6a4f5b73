use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub channels: usize,
    /// Max-pool width (and stride); 1 disables pooling.
    pub pool: usize,
}

/// Layer layout. Convolutions run over time with features as input channels,
/// valid padding, stride 1, each followed by ReLU and optional pooling. The
/// flattened output feeds ReLU hidden layers and a linear output layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArch {
    pub input_frames: usize,
    pub feature_dim: usize,
    pub convs: Vec<ConvSpec>,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl NetArch {
    pub fn standard(input_frames: usize, feature_dim: usize) -> Self {
        NetArch {
            input_frames,
            feature_dim,
            convs: vec![
                ConvSpec { kernel: 5, channels: 32, pool: 2 },
                ConvSpec { kernel: 5, channels: 64, pool: 2 },
                ConvSpec { kernel: 3, channels: 64, pool: 1 },
            ],
            hidden: vec![256, 128],
            output_dim: 40,
        }
    }

    /// `(frames, channels)` after each conv block, input first.
    pub fn conv_shapes(&self) -> Result<Vec<(usize, usize)>> {
        let mut shapes = vec![(self.input_frames, self.feature_dim)];
        let mut t = self.input_frames;
        for (i, conv) in self.convs.iter().enumerate() {
            if conv.kernel == 0 || conv.channels == 0 || conv.pool == 0 {
                return Err(Error::Shape(format!("conv layer {i} has a zero dimension")));
            }
            if t < conv.kernel {
                return Err(Error::Shape(format!(
                    "conv layer {i}: {t} frames left, kernel {} (input_frames {} too small)",
                    conv.kernel, self.input_frames
                )));
            }
            t = (t - conv.kernel + 1) / conv.pool;
            if t == 0 {
                return Err(Error::Shape(format!(
                    "conv layer {i} pools to zero frames (input_frames {} too small)",
                    self.input_frames
                )));
            }
            shapes.push((t, conv.channels));
        }
        Ok(shapes)
    }

    pub fn flat_dim(&self) -> Result<usize> {
        let &(t, c) = self.conv_shapes()?.last().unwrap();
        Ok(t * c)
    }

    /// `(fan_in, fan_out)` of every weight tensor in parameter order.
    fn layer_dims(&self) -> Result<Vec<(usize, usize)>> {
        let shapes = self.conv_shapes()?;
        let mut dims = Vec::new();
        for (conv, &(_, c_in)) in self.convs.iter().zip(&shapes) {
            dims.push((conv.kernel * c_in, conv.channels));
        }
        let mut width = self.flat_dim()?;
        for &h in self.hidden.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((width, h));
            width = h;
        }
        Ok(dims)
    }

    pub fn layout(&self) -> Result<Layout> {
        if self.feature_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Shape("zero-sized layer".into()));
        }
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in self.layer_dims()? {
            let w = offset;
            let b = w + fan_in * fan_out;
            offset = b + fan_out;
            layers.push(LayerSlot { w, b, fan_in, fan_out });
        }
        Ok(Layout {
            layers,
            len: offset,
            shapes: self.conv_shapes()?,
        })
    }
}

/// Offsets of one layer's weight matrix (`fan_in x fan_out`, row-major) and bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub layers: Vec<LayerSlot>,
    pub len: usize,
    pub shapes: Vec<(usize, usize)>,
}

/// One parameter vector shared by every branch of a loss term.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: NetArch,
    pub init_seed: u64,
    pub data: Vec<f64>,
    layout: Layout,
}

impl NetworkParams {
    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn init(arch: NetArch, seed: u64) -> Result<Self> {
        let layout = arch.layout()?;
        let mut data = vec![0.0; layout.len];
        let mut rng = crate::rng::stream(seed, 0);
        for l in &layout.layers {
            let bound = (6.0 / l.fan_in as f64).sqrt();
            for v in &mut data[l.w..l.b] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(NetworkParams {
            arch,
            init_seed: seed,
            data,
            layout,
        })
    }

    pub fn from_data(arch: NetArch, init_seed: u64, data: Vec<f64>) -> Result<Self> {
        let layout = arch.layout()?;
        if data.len() != layout.len {
            return Err(Error::Shape(format!(
                "{} parameters given, architecture needs {}",
                data.len(),
                layout.len
            )));
        }
        Ok(NetworkParams {
            arch,
            init_seed,
            data,
            layout,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.arch.input_frames * self.arch.feature_dim
    }

    pub fn random_like(&self, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
        (0..self.len()).map(|_| rng.random_range(-scale..scale)).collect()
    }
}

/// `c = a * b + c` for row-major `a (m x k)` with row stride `rsa`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, c: &mut [f64], rsc: usize, beta: f64) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices covering every strided element addressed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input of each layer (conv blocks then dense layers), flattened.
    inputs: Vec<Vec<f64>>,
    /// Post-ReLU conv outputs before pooling.
    conv_out: Vec<Vec<f64>>,
    /// For each pooled cell, the index of the selected conv output.
    pool_idx: Vec<Vec<usize>>,
    /// Post-activation dense outputs; the last is the embedding.
    dense_out: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.dense_out.last().unwrap()
    }

    /// ReLU on/off flags and pool selections. Passes with equal patterns lie
    /// in the same linear piece of the network.
    pub fn activation_pattern(&self) -> (Vec<bool>, Vec<usize>) {
        let hidden = &self.dense_out[..self.dense_out.len() - 1];
        let on = self.conv_out.iter().chain(hidden).flatten().map(|v| *v > 0.0).collect();
        (on, self.pool_idx.concat())
    }
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn check_input(params: &NetworkParams, x: &[f64]) -> Result<()> {
    if x.len() != params.input_len() {
        return Err(Error::Shape(format!(
            "input has {} values, network expects {} x {}",
            x.len(),
            params.arch.input_frames,
            params.arch.feature_dim
        )));
    }
    Ok(())
}

/// Forward pass keeping the trace.
pub fn forward_trace(params: &NetworkParams, x: &[f64]) -> Result<Trace> {
    check_input(params, x)?;
    let p = &params.data;
    let layout = &params.layout;
    let n_conv = params.arch.convs.len();
    let mut trace = Trace {
        inputs: Vec::with_capacity(layout.layers.len()),
        conv_out: Vec::with_capacity(n_conv),
        pool_idx: Vec::with_capacity(n_conv),
        dense_out: Vec::new(),
    };
    let mut cur = x.to_vec();
    for (i, conv) in params.arch.convs.iter().enumerate() {
        let l = layout.layers[i];
        let (t_in, c_in) = layout.shapes[i];
        let t_out = t_in - conv.kernel + 1;
        let c_out = conv.channels;
        let mut y = vec![0.0; t_out * c_out];
        for row in y.chunks_exact_mut(c_out) {
            row.copy_from_slice(&p[l.b..l.b + c_out]);
        }
        // windows overlap: row t of the unfolded input starts at t * c_in
        gemm(t_out, l.fan_in, c_out, &cur, c_in, 1, &p[l.w..l.b], c_out, 1, &mut y, c_out, 1.0);
        relu(&mut y);
        let (pooled, idx) = max_pool(&y, t_out, c_out, conv.pool);
        trace.inputs.push(std::mem::replace(&mut cur, pooled));
        trace.conv_out.push(y);
        trace.pool_idx.push(idx);
    }
    let n_dense = layout.layers.len() - n_conv;
    for j in 0..n_dense {
        let l = layout.layers[n_conv + j];
        let mut y = p[l.b..l.b + l.fan_out].to_vec();
        gemm(1, l.fan_in, l.fan_out, &cur, l.fan_in, 1, &p[l.w..l.b], l.fan_out, 1, &mut y, l.fan_out, 1.0);
        if j + 1 < n_dense {
            relu(&mut y);
        }
        trace.inputs.push(std::mem::replace(&mut cur, y.clone()));
        trace.dense_out.push(y);
    }
    Ok(trace)
}

/// Embedding of one padded input.
pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_trace(params, x)?.dense_out.pop().unwrap())
}

/// Max-pool over time; ties pick the earliest frame.
fn max_pool(y: &[f64], t: usize, c: usize, width: usize) -> (Vec<f64>, Vec<usize>) {
    if width == 1 {
        return (y.to_vec(), Vec::new());
    }
    let t_out = t / width;
    let mut out = vec![0.0; t_out * c];
    let mut idx = vec![0; t_out * c];
    for o in 0..t_out {
        for ch in 0..c {
            let mut best = (o * width) * c + ch;
            for w in 1..width {
                let k = (o * width + w) * c + ch;
                if y[k] > y[best] {
                    best = k;
                }
            }
            out[o * c + ch] = y[best];
            idx[o * c + ch] = best;
        }
    }
    (out, idx)
}

/// Accumulates `d(out . d_out)/d params` into `grad`.
pub fn backward(params: &NetworkParams, trace: &Trace, d_out: &[f64], grad: &mut [f64]) {
    let p = &params.data;
    let layout = &params.layout;
    let n_conv = params.arch.convs.len();
    let n_dense = layout.layers.len() - n_conv;
    let mut delta = d_out.to_vec();
    for j in (0..n_dense).rev() {
        let l = layout.layers[n_conv + j];
        if j + 1 < n_dense {
            // ReLU: subgradient 0 at the kink
            for (d, &y) in delta.iter_mut().zip(&trace.dense_out[j]) {
                if y <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let x = &trace.inputs[n_conv + j];
        for (g, d) in grad[l.b..l.b + l.fan_out].iter_mut().zip(&delta) {
            *g += d;
        }
        // dW += x^T d (outer product)
        gemm(l.fan_in, 1, l.fan_out, x, 1, 1, &delta, l.fan_out, 1, &mut grad[l.w..l.b], l.fan_out, 1.0);
        if n_conv + j == 0 {
            return;
        }
        let mut dx = vec![0.0; l.fan_in];
        // dx = W d
        gemm(l.fan_in, l.fan_out, 1, &p[l.w..l.b], l.fan_out, 1, &delta, 1, 1, &mut dx, 1, 0.0);
        delta = dx;
    }
    for i in (0..n_conv).rev() {
        let conv = params.arch.convs[i];
        let l = layout.layers[i];
        let (t_in, c_in) = layout.shapes[i];
        let t_out = t_in - conv.kernel + 1;
        let c_out = conv.channels;
        let y = &trace.conv_out[i];
        let mut dy = if conv.pool == 1 {
            delta
        } else {
            let mut dy = vec![0.0; t_out * c_out];
            for (&k, &d) in trace.pool_idx[i].iter().zip(&delta) {
                dy[k] += d;
            }
            dy
        };
        for (d, &v) in dy.iter_mut().zip(y) {
            if v <= 0.0 {
                *d = 0.0;
            }
        }
        let x = &trace.inputs[i];
        for row in dy.chunks_exact(c_out) {
            for (g, d) in grad[l.b..l.b + c_out].iter_mut().zip(row) {
                *g += d;
            }
        }
        // dW += U^T dy, with U the overlapping unfolded input (t_out x fan_in)
        gemm(l.fan_in, t_out, c_out, x, 1, c_in, &dy, c_out, 1, &mut grad[l.w..l.b], c_out, 1.0);
        if i == 0 {
            return;
        }
        // dU = dy W^T, folded back by scatter-add over the overlapping windows
        let mut du = vec![0.0; t_out * l.fan_in];
        gemm(t_out, c_out, l.fan_in, &dy, c_out, 1, &p[l.w..l.b], 1, c_out, &mut du, l.fan_in, 0.0);
        let mut dx = vec![0.0; t_in * c_in];
        for (t, row) in du.chunks_exact(l.fan_in).enumerate() {
            for (a, b) in dx[t * c_in..t * c_in + l.fan_in].iter_mut().zip(row) {
                *a += b;
            }
        }
        delta = dx;
    }
}
