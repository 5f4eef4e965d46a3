//! Dense multi-layer perceptrons with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>` in a frozen canonical order:
//! layer by layer, first the weight matrix `W[out][in]` row-major, then the
//! bias vector. Hidden layers apply the configured activation, the output
//! layer is linear.
//!
//! All reductions run in a fixed order (see [`dot`]) so results are bitwise
//! reproducible for a given input order.

mod adam;
mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_difference_check, gradient_check, GradCheckReport};

/// Version tag carried by every [`ParameterSet`] and checkpoint file.
pub const PARAMETER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("training diverged: {0}")]
    Divergence(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub n_in: usize,
    pub n_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self, NnError> {
        let spec = Self {
            layer_sizes,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `input -> hidden... -> output`.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
    ) -> Result<Self, NnError> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes, activation)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.layer_sizes.len() < 2 {
            return Err(NnError::InvalidSpec(format!(
                "need at least 2 layer sizes, got {}",
                self.layer_sizes.len()
            )));
        }
        if let Some(pos) = self.layer_sizes.iter().position(|&n| n == 0) {
            return Err(NnError::InvalidSpec(format!("layer {pos} has size 0")));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn layer_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn layouts(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let layout = LayerLayout {
                    n_in,
                    n_out,
                    weight_offset: offset,
                    bias_offset: offset + n_in * n_out,
                };
                offset += n_in * n_out + n_out;
                layout
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Flat parameter vector in canonical order plus its format version.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub version: u32,
    pub values: Vec<f64>,
}

impl ParameterSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self::from_values(vec![0.0; spec.parameter_count()])
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self {
            version: PARAMETER_FORMAT_VERSION,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn bitwise_eq(&self, other: &ParameterSet) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn check_len(&self, spec: &NetworkSpec) -> Result<(), NnError> {
        if self.values.len() != spec.parameter_count() {
            return Err(NnError::Dimension {
                what: "parameter count",
                expected: spec.parameter_count(),
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init(spec: &NetworkSpec, seed: u64) -> Result<ParameterSet, NnError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::zeros(spec);
    for layout in spec.layouts() {
        let limit = glorot_limit(layout.n_in, layout.n_out);
        let weights =
            &mut params.values[layout.weight_offset..layout.weight_offset + layout.n_in * layout.n_out];
        for w in weights {
            *w = rng.gen_range(-limit..=limit);
        }
    }
    Ok(params)
}

pub fn glorot_limit(n_in: usize, n_out: usize) -> f64 {
    (6.0 / (n_in + n_out) as f64).sqrt()
}

/// Dot product with four interleaved accumulators, summed in a fixed order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Layer activations for a batch, kept for the backward pass.
///
/// `layers[0]` is the input batch; `layers[k]` is the post-activation output
/// of layer `k` (linear for the last layer). Each entry is `batch x width`
/// row-major.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub batch: usize,
    pub layers: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("trace has layers")
    }

    pub fn output_row(&self, b: usize, width: usize) -> &[f64] {
        &self.output()[b * width..(b + 1) * width]
    }
}

/// A network spec with precomputed parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: NetworkSpec,
    layouts: Vec<LayerLayout>,
}

impl Mlp {
    pub fn new(spec: NetworkSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let layouts = spec.layouts();
        Ok(Self { spec, layouts })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.spec.parameter_count()
    }

    fn check_params(&self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.parameter_count() {
            return Err(NnError::Dimension {
                what: "parameter count",
                expected: self.parameter_count(),
                got: params.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>, NnError> {
        let trace = self.forward_batch(params, input, 1)?;
        Ok(trace.layers.into_iter().next_back().expect("trace has layers"))
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward_batch(
        &self,
        params: &[f64],
        inputs: &[f64],
        batch: usize,
    ) -> Result<ForwardTrace, NnError> {
        self.check_params(params)?;
        if inputs.len() != batch * self.input_dim() {
            return Err(NnError::Dimension {
                what: "input length",
                expected: batch * self.input_dim(),
                got: inputs.len(),
            });
        }
        let last = self.layouts.len() - 1;
        let mut layers = Vec::with_capacity(self.layouts.len() + 1);
        layers.push(inputs.to_vec());
        for (k, layout) in self.layouts.iter().enumerate() {
            let weights = &params[layout.weight_offset..layout.bias_offset];
            let bias = &params[layout.bias_offset..layout.bias_offset + layout.n_out];
            let input = &layers[k];
            let mut out = vec![0.0; batch * layout.n_out];
            for b in 0..batch {
                let x = &input[b * layout.n_in..(b + 1) * layout.n_in];
                let row_out = &mut out[b * layout.n_out..(b + 1) * layout.n_out];
                for (o, z) in row_out.iter_mut().enumerate() {
                    let w = &weights[o * layout.n_in..(o + 1) * layout.n_in];
                    let pre = bias[o] + dot(w, x);
                    *z = if k == last {
                        pre
                    } else {
                        self.spec.activation.apply(pre)
                    };
                }
            }
            layers.push(out);
        }
        Ok(ForwardTrace { batch, layers })
    }

    /// Accumulate `d(output_grad . output) / d(params)` into `grad`.
    ///
    /// `output_grad` is `batch x output_dim` row-major. Gradients are added,
    /// not assigned, so callers can sum over minibatches.
    pub fn backward_batch(
        &self,
        params: &[f64],
        trace: &ForwardTrace,
        output_grad: &[f64],
        grad: &mut [f64],
    ) -> Result<(), NnError> {
        self.check_params(params)?;
        if grad.len() != params.len() {
            return Err(NnError::Dimension {
                what: "gradient length",
                expected: params.len(),
                got: grad.len(),
            });
        }
        let batch = trace.batch;
        if output_grad.len() != batch * self.output_dim() {
            return Err(NnError::Dimension {
                what: "output gradient length",
                expected: batch * self.output_dim(),
                got: output_grad.len(),
            });
        }

        // delta = d loss / d pre-activation of the current layer
        let mut delta = output_grad.to_vec();
        for k in (0..self.layouts.len()).rev() {
            let layout = self.layouts[k];
            let input = &trace.layers[k];
            let weights = &params[layout.weight_offset..layout.bias_offset];
            let (grad_w, grad_rest) = grad[layout.weight_offset..].split_at_mut(layout.n_in * layout.n_out);
            let grad_b = &mut grad_rest[..layout.n_out];

            for b in 0..batch {
                let x = &input[b * layout.n_in..(b + 1) * layout.n_in];
                let d = &delta[b * layout.n_out..(b + 1) * layout.n_out];
                for (o, &d_o) in d.iter().enumerate() {
                    if d_o != 0.0 {
                        axpy(d_o, x, &mut grad_w[o * layout.n_in..(o + 1) * layout.n_in]);
                    }
                    grad_b[o] += d_o;
                }
            }

            if k == 0 {
                break;
            }
            let mut prev = vec![0.0; batch * layout.n_in];
            for b in 0..batch {
                let d = &delta[b * layout.n_out..(b + 1) * layout.n_out];
                let p = &mut prev[b * layout.n_in..(b + 1) * layout.n_in];
                for (o, &d_o) in d.iter().enumerate() {
                    if d_o != 0.0 {
                        axpy(d_o, &weights[o * layout.n_in..(o + 1) * layout.n_in], p);
                    }
                }
                let a = &input[b * layout.n_in..(b + 1) * layout.n_in];
                for (pi, &ai) in p.iter_mut().zip(a) {
                    *pi *= self.spec.activation.derivative_from_output(ai);
                }
            }
            delta = prev;
        }
        Ok(())
    }

    /// Gradient of `output_grad . f(input)` for a single input.
    pub fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        output_grad: &[f64],
    ) -> Result<Vec<f64>, NnError> {
        let trace = self.forward_batch(params, input, 1)?;
        let mut grad = vec![0.0; params.len()];
        self.backward_batch(params, &trace, output_grad, &mut grad)?;
        Ok(grad)
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Softmax probabilities, floored at the smallest positive double so every
/// action keeps nonzero probability.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits)
        .into_iter()
        .map(|lp| lp.exp().max(f64::MIN_POSITIVE))
        .collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Straightforward scalar re-implementation used as an oracle.
    fn scalar_forward(spec: &NetworkSpec, params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut offset = 0;
        let n_layers = spec.layer_sizes.len() - 1;
        for k in 0..n_layers {
            let (n_in, n_out) = (spec.layer_sizes[k], spec.layer_sizes[k + 1]);
            let mut y = vec![0.0; n_out];
            for o in 0..n_out {
                let mut s = params[offset + n_in * n_out + o];
                for i in 0..n_in {
                    s += params[offset + o * n_in + i] * x[i];
                }
                y[o] = if k + 1 == n_layers {
                    s
                } else {
                    match spec.activation {
                        Activation::Relu => s.max(0.0),
                        Activation::Tanh => s.tanh(),
                    }
                };
            }
            offset += n_in * n_out + n_out;
            x = y;
        }
        x
    }

    #[test]
    fn init_biases_zero_and_weights_bounded() {
        let spec = NetworkSpec::mlp(25, &[128, 128], 5, Activation::Relu).unwrap();
        let p = init(&spec, 3).unwrap();
        assert_eq!(p.len(), 25 * 128 + 128 + 128 * 128 + 128 + 128 * 5 + 5);
        for layout in spec.layouts() {
            let limit = (6.0 / (layout.n_in + layout.n_out) as f64).sqrt();
            let w = &p.values[layout.weight_offset..layout.bias_offset];
            assert!(w.iter().all(|v| v.abs() <= limit));
            // not degenerate
            assert!(w.iter().any(|v| v.abs() > 0.5 * limit));
            let b = &p.values[layout.bias_offset..layout.bias_offset + layout.n_out];
            assert!(b.iter().all(|&v| v == 0.0));
        }
        assert!(p.bitwise_eq(&init(&spec, 3).unwrap()));
        assert!(!p.bitwise_eq(&init(&spec, 4).unwrap()));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(NetworkSpec::new(vec![3], Activation::Relu).is_err());
        assert!(NetworkSpec::new(vec![3, 0, 2], Activation::Relu).is_err());
        assert!(init(
            &NetworkSpec {
                layer_sizes: vec![],
                activation: Activation::Tanh
            },
            0
        )
        .is_err());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = NetworkSpec::mlp(4, &[8], 3, Activation::Tanh).unwrap();
        let mlp = Mlp::new(spec.clone()).unwrap();
        let out = mlp.forward(&ParameterSet::zeros(&spec).values, &[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = NetworkSpec::new(vec![3, 3], Activation::Relu).unwrap();
        let mut params = ParameterSet::zeros(&spec);
        for i in 0..3 {
            params.values[i * 3 + i] = 1.0;
        }
        let mlp = Mlp::new(spec).unwrap();
        assert_eq!(mlp.forward(&params.values, &[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let spec = NetworkSpec::mlp(4, &[8], 3, Activation::Tanh).unwrap();
        let mlp = Mlp::new(spec.clone()).unwrap();
        let p = init(&spec, 0).unwrap();
        assert!(matches!(mlp.forward(&p.values, &[1.0]), Err(NnError::Dimension { .. })));
        assert!(matches!(mlp.forward(&p.values[1..], &[0.0; 4]), Err(NnError::Dimension { .. })));
        assert!(matches!(mlp.backward(&p.values, &[0.0; 4], &[1.0]), Err(NnError::Dimension { .. })));
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for activation in [Activation::Relu, Activation::Tanh] {
            let spec = NetworkSpec::mlp(7, &[9, 6], 4, activation).unwrap();
            let mlp = Mlp::new(spec.clone()).unwrap();
            let mut params = init(&spec, 9).unwrap();
            for v in params.values.iter_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
            for _ in 0..20 {
                let x: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let got = mlp.forward(&params.values, &x).unwrap();
                let want = scalar_forward(&spec, &params.values, &x);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-12, "{g} vs {w}");
                }
            }
        }
    }

    #[test]
    fn batch_forward_equals_per_sample() {
        let spec = NetworkSpec::mlp(5, &[6], 2, Activation::Relu).unwrap();
        let mlp = Mlp::new(spec.clone()).unwrap();
        let p = init(&spec, 1).unwrap();
        let inputs: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let trace = mlp.forward_batch(&p.values, &inputs, 3).unwrap();
        for b in 0..3 {
            let single = mlp.forward(&p.values, &inputs[b * 5..(b + 1) * 5]).unwrap();
            assert_eq!(trace.output_row(b, 2), single.as_slice());
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradient() {
        let spec = NetworkSpec::mlp(5, &[6], 2, Activation::Tanh).unwrap();
        let mlp = Mlp::new(spec.clone()).unwrap();
        let p = init(&spec, 1).unwrap();
        let g = mlp.backward(&p.values, &[0.1, 0.2, 0.3, 0.4, 0.5], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_chain_rule() {
        let spec = NetworkSpec::new(vec![3, 1], Activation::Relu).unwrap();
        let mlp = Mlp::new(spec.clone()).unwrap();
        let p = init(&spec, 2).unwrap();
        let x = [0.5, -1.0, 2.0];
        let g = mlp.backward(&p.values, &x, &[1.5]).unwrap();
        assert_eq!(g, vec![0.75, -1.5, 3.0, 1.5]);
    }

    #[test]
    fn softmax_properties() {
        let p = softmax(&[1000.0, -1000.0, 0.0, 3.0, 3.0]);
        assert!(p.iter().all(|&v| v > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 1.0, 0.0, 0.0, 0.0]), 1);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in proptest::collection::vec(-50.0f64..50.0, 1..8)) {
            let p = softmax(&logits);
            prop_assert!(p.iter().all(|&v| v > 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn forward_is_pure(seed in 0u64..1000, x in proptest::collection::vec(-1.0f64..1.0, 4)) {
            let spec = NetworkSpec::mlp(4, &[5], 3, Activation::Relu).unwrap();
            let mlp = Mlp::new(spec.clone()).unwrap();
            let p = init(&spec, seed).unwrap();
            let a = mlp.forward(&p.values, &x).unwrap();
            let b = mlp.forward(&p.values, &x).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
