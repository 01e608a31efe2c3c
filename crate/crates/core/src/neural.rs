//! Minimal feed-forward network with manual backpropagation.
//!
//! The agents only need a shallow MLP: rectifier hidden layers, identity
//! output, plain SGD, 64-bit floats throughout. Parameters can be saved to
//! and loaded from a text record that round-trips bit-exactly.

use std::fs;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed parameter record: {0}")]
    Parse(String),
}

fn shape_err(expected: impl Into<String>, got: impl Into<String>) -> NeuralError {
    NeuralError::ShapeMismatch { expected: expected.into(), got: got.into() }
}

/// Fully connected network. `dims = [in, h1, ..., out]`; every layer but the
/// last applies a rectifier, the last is linear. Weight matrices are stored
/// row-major with shape `dims[l+1] x dims[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Cached per-layer values from one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// activations[0] is the input batch; activations[l+1] the output of
    /// layer l after its activation function.
    activations: Vec<Vec<Vec<f64>>>,
    /// Pre-activation values per layer, needed for the rectifier derivative.
    pres: Vec<Vec<Vec<f64>>>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.activations[0].len()
    }
}

/// Parameter gradients, shape-congruent with an [`Mlp`]. `backward` sums
/// over the batch; scale the output gradient beforehand for means.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &Mlp) -> Self {
        GradientSet {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add(&mut self, other: &GradientSet) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl Mlp {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero
    /// biases. Deterministic for a given RNG state.
    pub fn init<R: Rng>(rng: &mut R, dims: &[usize]) -> Mlp {
        assert!(dims.len() >= 2, "need at least input and output dims");
        assert!(dims.iter().all(|&d| d >= 1), "all dims must be >= 1");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Mlp { dims: dims.to_vec(), weights, biases }
    }

    pub fn zeros(dims: &[usize]) -> Mlp {
        assert!(dims.len() >= 2);
        let weights = (0..dims.len() - 1).map(|l| vec![0.0; dims[l] * dims[l + 1]]).collect();
        let biases = (0..dims.len() - 1).map(|l| vec![0.0; dims[l + 1]]).collect();
        Mlp { dims: dims.to_vec(), weights, biases }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Batched forward pass; returns one output row per input row plus the
    /// trace needed for `backward`.
    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, ForwardTrace), NeuralError> {
        for row in inputs {
            if row.len() != self.dims[0] {
                return Err(shape_err(format!("input dim {}", self.dims[0]), format!("{}", row.len())));
            }
        }
        let layers = self.dims.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(inputs.to_vec());
        let mut pres = Vec::with_capacity(layers);
        for l in 0..layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.weights[l];
            let b = &self.biases[l];
            let mut pre_batch = Vec::with_capacity(inputs.len());
            let mut act_batch = Vec::with_capacity(inputs.len());
            for x in &activations[l] {
                let mut z = vec![0.0; n_out];
                for j in 0..n_out {
                    let row = &w[j * n_in..(j + 1) * n_in];
                    let mut acc = b[j];
                    for (wi, xi) in row.iter().zip(x) {
                        acc += wi * xi;
                    }
                    z[j] = acc;
                }
                let a = if l + 1 == layers {
                    z.clone()
                } else {
                    z.iter().map(|&v| relu(v)).collect()
                };
                pre_batch.push(z);
                act_batch.push(a);
            }
            pres.push(pre_batch);
            activations.push(act_batch);
        }
        let outputs = activations.last().unwrap().clone();
        Ok((outputs, ForwardTrace { activations, pres }))
    }

    /// Convenience single-row forward without keeping the trace.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        let (mut out, _) = self.forward(std::slice::from_ref(&input.to_vec()))?;
        Ok(out.pop().unwrap())
    }

    /// Reverse-mode gradients of a scalar loss given `dLoss/dOutput` per
    /// batch row. Gradients are summed across the batch.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        out_grad: &[Vec<f64>],
    ) -> Result<GradientSet, NeuralError> {
        let layers = self.dims.len() - 1;
        let batch = trace.batch_size();
        if out_grad.len() != batch {
            return Err(shape_err(format!("batch {batch}"), format!("{}", out_grad.len())));
        }
        let out_dim = *self.dims.last().unwrap();
        for row in out_grad {
            if row.len() != out_dim {
                return Err(shape_err(format!("output dim {out_dim}"), format!("{}", row.len())));
            }
        }

        let mut grads = GradientSet::zeros_like(self);
        let mut delta: Vec<Vec<f64>> = out_grad.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for b in 0..batch {
                let x = &trace.activations[l][b];
                let d = &delta[b];
                for j in 0..n_out {
                    let dj = d[j];
                    if dj == 0.0 {
                        continue;
                    }
                    let row = &mut gw[j * n_in..(j + 1) * n_in];
                    for (gi, xi) in row.iter_mut().zip(x) {
                        *gi += dj * xi;
                    }
                    gb[j] += dj;
                }
            }
            if l > 0 {
                let w = &self.weights[l];
                let mut next = vec![vec![0.0; n_in]; batch];
                for b in 0..batch {
                    let d = &delta[b];
                    let pre = &trace.pres[l - 1][b];
                    let nd = &mut next[b];
                    for j in 0..n_out {
                        let dj = d[j];
                        if dj == 0.0 {
                            continue;
                        }
                        let row = &w[j * n_in..(j + 1) * n_in];
                        for i in 0..n_in {
                            nd[i] += row[i] * dj;
                        }
                    }
                    for i in 0..n_in {
                        if pre[i] <= 0.0 {
                            nd[i] = 0.0;
                        }
                    }
                }
                delta = next;
            }
        }
        Ok(grads)
    }

    /// Plain gradient descent: every parameter decremented by `lr * grad`.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64) -> Result<(), NeuralError> {
        if grads.weights.len() != self.weights.len() {
            return Err(shape_err(
                format!("{} layers", self.weights.len()),
                format!("{}", grads.weights.len()),
            ));
        }
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            if w.len() != g.len() {
                return Err(shape_err(format!("{} weights", w.len()), format!("{}", g.len())));
            }
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= lr * gi;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            if b.len() != g.len() {
                return Err(shape_err(format!("{} biases", b.len()), format!("{}", g.len())));
            }
            for (bi, gi) in b.iter_mut().zip(g) {
                *bi -= lr * gi;
            }
        }
        Ok(())
    }

    /// All parameters in save order: per layer, weights row-major then
    /// biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<(), NeuralError> {
        if flat.len() != self.param_count() {
            return Err(shape_err(
                format!("{} params", self.param_count()),
                format!("{}", flat.len()),
            ));
        }
        let mut it = flat.iter();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Text record: `mlp v1`, a `dims` line, then all parameters in
    /// [`params_flat`] order as 16-digit hex IEEE-754 bit patterns, eight
    /// per line. Hex bits make the round trip exact.
    pub fn to_record(&self) -> String {
        let mut s = String::from("mlp v1\n");
        s.push_str("dims");
        for d in &self.dims {
            s.push_str(&format!(" {d}"));
        }
        s.push('\n');
        for (i, p) in self.params_flat().iter().enumerate() {
            s.push_str(&format!("{:016x}", p.to_bits()));
            s.push(if (i + 1) % 8 == 0 { '\n' } else { ' ' });
        }
        if !s.ends_with('\n') {
            s.push('\n');
        }
        s
    }

    pub fn from_record(text: &str) -> Result<Mlp, NeuralError> {
        let mut lines = text.lines();
        match lines.next() {
            Some("mlp v1") => {}
            other => return Err(NeuralError::Parse(format!("bad header {other:?}"))),
        }
        let dims_line = lines.next().ok_or_else(|| NeuralError::Parse("missing dims".into()))?;
        let mut parts = dims_line.split_whitespace();
        if parts.next() != Some("dims") {
            return Err(NeuralError::Parse("missing dims line".into()));
        }
        let dims: Vec<usize> = parts
            .map(|t| t.parse().map_err(|_| NeuralError::Parse(format!("bad dim {t:?}"))))
            .collect::<Result<_, _>>()?;
        if dims.len() < 2 {
            return Err(NeuralError::Parse("need at least 2 dims".into()));
        }
        let mut net = Mlp::zeros(&dims);
        let mut params = Vec::with_capacity(net.param_count());
        for line in lines {
            for tok in line.split_whitespace() {
                let bits = u64::from_str_radix(tok, 16)
                    .map_err(|_| NeuralError::Parse(format!("bad param {tok:?}")))?;
                params.push(f64::from_bits(bits));
            }
        }
        if params.len() != net.param_count() {
            return Err(NeuralError::Parse(format!(
                "expected {} params, found {}",
                net.param_count(),
                params.len()
            )));
        }
        net.set_params_flat(&params)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        fs::write(path, self.to_record())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Mlp, NeuralError> {
        Mlp::from_record(&fs::read_to_string(path)?)
    }
}
