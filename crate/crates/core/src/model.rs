//! Multilayer perceptron with explicit forward and backward passes.
//!
//! Parameters are stored flat: for each layer, the `[out × in]` weight matrix
//! in row-major order followed by the `[out]` bias. Gradients use the same
//! layout, so an optimizer can treat both as plain slices.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}×{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl LayerShape {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }
}

/// ReLU hidden layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    sizes: Vec<usize>,
    pub theta: Vec<f64>,
}

impl MlpParams {
    /// He-normal weights (`std = √(2/in)`), zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut params = Self::zeros(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for shape in params.shapes() {
            let normal = Normal::new(0.0, (2.0 / shape.inputs as f64).sqrt())
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            for w in &mut params.theta[shape.weights()] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(params)
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        let count = layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(MlpParams {
            sizes: layer_sizes.to_vec(),
            theta: vec![0.0; count],
        })
    }

    pub fn from_flat(layer_sizes: &[usize], theta: Vec<f64>) -> Result<Self> {
        let mut params = Self::zeros(layer_sizes)?;
        if theta.len() != params.theta.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for sizes {layer_sizes:?}, expected {}",
                theta.len(),
                params.theta.len()
            )));
        }
        params.theta = theta;
        Ok(params)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    fn shapes(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let s = LayerShape {
                    inputs: w[0],
                    outputs: w[1],
                    offset,
                };
                offset += w[0] * w[1] + w[1];
                s
            })
            .collect()
    }

    /// `(weights [out×in], bias [out])` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let s = self.shapes()[l];
        (&self.theta[s.weights()], &self.theta[s.bias()])
    }

    /// Writes the checkpoint: `u32` layer count, `u32` sizes, then `f64`
    /// parameters, all little-endian.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.sizes.len() + 8 * self.theta.len());
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for &s in &self.sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for v in &self.theta {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let read_u32 = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| Error::Format {
                    offset: at,
                    message: "truncated checkpoint header".into(),
                })
        };
        let count = read_u32(0)? as usize;
        let sizes = (0..count)
            .map(|i| read_u32(4 + 4 * i).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut params = Self::zeros(&sizes).map_err(|e| Error::Format {
            offset: 0,
            message: e.to_string(),
        })?;
        let start = 4 + 4 * count;
        let body = &bytes[start.min(bytes.len())..];
        if body.len() != 8 * params.theta.len() {
            return Err(Error::Format {
                offset: start,
                message: format!(
                    "expected {} parameter bytes, found {}",
                    8 * params.theta.len(),
                    body.len()
                ),
            });
        }
        for (v, chunk) in params.theta.iter_mut().zip(body.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(params)
    }
}

/// Per-layer inputs and hidden pre-activations for one minibatch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the `[B × in_l]` input of layer `l`.
    inputs: Vec<Matrix>,
    /// Pre-activations of the hidden layers (all but the last).
    pre: Vec<Matrix>,
    sizes: Vec<usize>,
}

impl ForwardCache {
    /// `[B × hidden]` pre-activations, one matrix per hidden layer.
    pub fn hidden_preactivations(&self) -> &[Matrix] {
        &self.pre
    }

    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows
    }
}

fn affine(x: &Matrix, w: &[f64], b: &[f64], outputs: usize) -> Matrix {
    let mut out = Matrix::zeros(x.rows, outputs);
    for r in 0..x.rows {
        let xr = x.row(r);
        let or = out.row_mut(r);
        for (o, (wrow, bo)) in or.iter_mut().zip(w.chunks_exact(x.cols).zip(b)) {
            *o = bo + wrow.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    out
}

/// Logits `[B × c]` for a `[B × d]` batch.
pub fn forward(params: &MlpParams, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if batch.cols != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} features, network expects {}",
            batch.cols,
            params.input_dim()
        )));
    }
    let shapes = params.shapes();
    let mut inputs = Vec::with_capacity(shapes.len());
    let mut pre = Vec::with_capacity(shapes.len() - 1);
    let mut x = batch.clone();
    for (l, s) in shapes.iter().enumerate() {
        let z = affine(&x, &params.theta[s.weights()], &params.theta[s.bias()], s.outputs);
        inputs.push(x);
        if l + 1 == shapes.len() {
            x = z;
        } else {
            let act = Matrix {
                rows: z.rows,
                cols: z.cols,
                data: z.data.iter().map(|v| v.max(0.0)).collect(),
            };
            pre.push(z);
            x = act;
        }
    }
    Ok((
        x,
        ForwardCache {
            inputs,
            pre,
            sizes: params.sizes.clone(),
        },
    ))
}

/// Parameter gradients (flat layout) of the scalar loss whose logit gradient is
/// `dlogits`. Any batch averaging must already be folded into `dlogits`.
pub fn backward(params: &MlpParams, cache: &ForwardCache, dlogits: &Matrix) -> Result<Vec<f64>> {
    if cache.sizes != params.sizes {
        return Err(Error::InvalidArgument(
            "forward cache was produced by a different network".into(),
        ));
    }
    if dlogits.rows != cache.batch_size() || dlogits.cols != params.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "dlogits is {}×{}, expected {}×{}",
            dlogits.rows,
            dlogits.cols,
            cache.batch_size(),
            params.output_dim()
        )));
    }
    let shapes = params.shapes();
    let mut grads = vec![0.0; params.theta.len()];
    let mut delta = dlogits.clone();
    for l in (0..shapes.len()).rev() {
        let s = shapes[l];
        let x = &cache.inputs[l];
        {
            let (gw, gb) = grads[s.offset..s.bias().end].split_at_mut(s.inputs * s.outputs);
            for r in 0..delta.rows {
                let dr = delta.row(r);
                let xr = x.row(r);
                for (o, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, xi) in gw[o * s.inputs..(o + 1) * s.inputs].iter_mut().zip(xr) {
                        *g += d * xi;
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        let w = &params.theta[s.weights()];
        let pre = &cache.pre[l - 1];
        let mut next = Matrix::zeros(delta.rows, s.inputs);
        for r in 0..delta.rows {
            let dr = delta.row(r);
            let nr = next.row_mut(r);
            for (o, &d) in dr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (n, wi) in nr.iter_mut().zip(&w[o * s.inputs..(o + 1) * s.inputs]) {
                    *n += d * wi;
                }
            }
            for (n, z) in nr.iter_mut().zip(pre.row(r)) {
                if *z <= 0.0 {
                    *n = 0.0;
                }
            }
        }
        delta = next;
    }
    Ok(grads)
}
