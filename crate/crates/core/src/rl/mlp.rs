//! Fully connected network with tanh hidden layers and a linear output,
//! batched forward and reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RlError;

/// `c = a·b + beta·c` on strided row/column views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: every index touched by the kernel is bounds-checked above and
    // `c` does not alias `a` or `b` (distinct borrows).
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
            csc as isize,
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRepr", into = "MlpRepr")]
pub struct Mlp {
    sizes: Vec<usize>,
    /// Per layer: weights (out × in, row-major) then biases.
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpRepr {
    sizes: Vec<usize>,
    layers: Vec<LayerRepr>,
}

impl From<Mlp> for MlpRepr {
    fn from(net: Mlp) -> Self {
        let layers = (0..net.num_layers())
            .map(|l| {
                let (w, b) = net.layer(l);
                let n_in = net.sizes[l];
                LayerRepr {
                    weights: w.chunks(n_in).map(<[f64]>::to_vec).collect(),
                    biases: b.to_vec(),
                }
            })
            .collect();
        MlpRepr { sizes: net.sizes, layers }
    }
}

impl TryFrom<MlpRepr> for Mlp {
    type Error = String;

    fn try_from(r: MlpRepr) -> Result<Self, String> {
        if r.sizes.len() < 2 || r.sizes.contains(&0) {
            return Err(format!("invalid layer sizes {:?}", r.sizes));
        }
        if r.layers.len() != r.sizes.len() - 1 {
            return Err("layer count does not match sizes".into());
        }
        let mut params: Vec<f64> = Vec::new();
        for (l, layer) in r.layers.iter().enumerate() {
            let (n_in, n_out) = (r.sizes[l], r.sizes[l + 1]);
            if layer.weights.len() != n_out
                || layer.weights.iter().any(|row| row.len() != n_in)
                || layer.biases.len() != n_out
            {
                return Err(format!("layer {l} has the wrong shape"));
            }
            params.extend(layer.weights.iter().flatten());
            params.extend(&layer.biases);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err("non-finite network parameter".into());
        }
        Ok(Mlp { sizes: r.sizes, params })
    }
}

/// Activations recorded by a batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape has at least the input")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && !sizes.contains(&0), "invalid layer sizes {sizes:?}");
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self { sizes: sizes.to_vec(), params: vec![0.0; n] }
    }

    /// Glorot-uniform weights and zero biases; the output layer's weights
    /// are scaled by `out_gain`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], out_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let last = net.num_layers() - 1;
        for l in 0..net.num_layers() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let gain = if l == last { out_gain } else { 1.0 };
            let off = net.layer_offset(l);
            for w in &mut net.params[off..off + n_in * n_out] {
                *w = gain * rng.random_range(-limit..limit);
            }
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.sizes.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Weights and biases of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let off = self.layer_offset(l);
        let nw = self.sizes[l] * self.sizes[l + 1];
        let (w, rest) = self.params[off..].split_at(nw);
        (w, &rest[..self.sizes[l + 1]])
    }

    /// Forward pass over `batch` row-major inputs, keeping activations.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Tape, RlError> {
        let n_in = self.input_dim();
        if inputs.len() != batch * n_in {
            return Err(RlError::DimensionMismatch { expected: batch * n_in, found: inputs.len() });
        }
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(inputs.to_vec());
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer(l);
            let mut z = Vec::with_capacity(batch * n_out);
            for _ in 0..batch {
                z.extend_from_slice(b);
            }
            gemm(batch, n_in, n_out, &acts[l], (n_in, 1), w, (1, n_in), 1.0, &mut z, (n_out, 1));
            if l < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        Ok(Tape { batch, acts })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, RlError> {
        Ok(self.forward_batch(input, 1)?.acts.pop().expect("output layer"))
    }

    /// Reverse pass: accumulates parameter gradients of `Σ d_out · output`
    /// into `grad` and returns the input gradient.
    pub fn backward(&self, tape: &Tape, d_out: &[f64], grad: &mut [f64]) -> Result<Vec<f64>, RlError> {
        let batch = tape.batch;
        if d_out.len() != batch * self.output_dim() {
            return Err(RlError::DimensionMismatch {
                expected: batch * self.output_dim(),
                found: d_out.len(),
            });
        }
        if grad.len() != self.num_params() {
            return Err(RlError::DimensionMismatch { expected: self.num_params(), found: grad.len() });
        }
        let last = self.num_layers() - 1;
        let mut delta = d_out.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l < last {
                for (d, a) in delta.iter_mut().zip(&tape.acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let off = self.layer_offset(l);
            let (gw, rest) = grad[off..].split_at_mut(n_in * n_out);
            gemm(n_out, batch, n_in, &delta, (1, n_out), &tape.acts[l], (n_in, 1), 1.0, gw, (n_in, 1));
            for row in delta.chunks(n_out) {
                for (g, d) in rest[..n_out].iter_mut().zip(row) {
                    *g += d;
                }
            }
            let (w, _) = self.layer(l);
            let mut d_in = vec![0.0; batch * n_in];
            gemm(batch, n_out, n_in, &delta, (n_out, 1), w, (n_in, 1), 0.0, &mut d_in, (n_in, 1));
            delta = d_in;
        }
        Ok(delta)
    }

    /// Polyak update `self ← τ·live + (1 − τ)·self`.
    pub fn soft_update(&mut self, live: &Mlp, tau: f64) {
        assert_eq!(self.sizes, live.sizes, "architectures differ");
        if tau == 1.0 {
            self.params.copy_from_slice(&live.params);
            return;
        }
        for (t, l) in self.params.iter_mut().zip(&live.params) {
            *t = tau * l + (1.0 - tau) * *t;
        }
    }
}

/// Parameter and input gradients of `upstream · net(input)` for one sample.
pub fn mlp_gradients(net: &Mlp, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    let tape = net.forward_batch(input, 1)?;
    let mut grad = vec![0.0; net.num_params()];
    let d_in = net.backward(&tape, upstream, &mut grad)?;
    Ok((grad, d_in))
}
