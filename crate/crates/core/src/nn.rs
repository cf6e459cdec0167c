//! Small fully-connected networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat [`ParamVector`] so the conjugate-gradient and
//! line-search machinery can treat the whole network as a point in `R^n`.
//! Layer `l` occupies `fan_out * fan_in` weights (row-major, one row per
//! output unit) followed by `fan_out` biases. Hidden layers use `tanh`, the
//! output layer is affine.

use std::io::{BufRead, Write};
use std::ops::{Deref, DerefMut};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::cartpole::EnvState;
use crate::error::NnError;

pub type Result<T> = std::result::Result<T, NnError>;

/// Flat vector of network parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self + scale * other`
    pub fn add_scaled(&self, scale: f64, other: &ParamVector) -> ParamVector {
        ParamVector(
            self.iter()
                .zip(other.iter())
                .map(|(a, b)| a + scale * b)
                .collect(),
        )
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) {
        for (a, b) in self.0.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> ParamVector {
        ParamVector(self.iter().map(|a| a * scale).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// One dense layer unpacked from a [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_out x fan_in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Layer widths of a `tanh` MLP with an affine output layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    sizes: Vec<usize>,
}

/// Activations recorded by a forward pass, kept for backward/JVP passes.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `activations[0]` is the input batch, `activations[l + 1]` the output
    /// of layer `l` (post-`tanh` for hidden layers).
    activations: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.activations.last().expect("tape is never empty").view()
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

impl MlpArchitecture {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnError::BadArchitecture(sizes));
        }
        Ok(Self { sizes })
    }

    /// 4 -> 64 -> 64 -> 2 policy network.
    pub fn policy() -> Self {
        Self {
            sizes: vec![4, 64, 64, 2],
        }
    }

    /// 4 -> 128 -> 64 -> 32 -> 1 state-value network.
    pub fn value() -> Self {
        Self {
            sizes: vec![4, 128, 64, 32, 1],
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Offset of each layer's weight block in the flat vector.
    fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_layers());
        let mut off = 0;
        for w in self.sizes.windows(2) {
            out.push(off);
            off += (w[0] + 1) * w[1];
        }
        out
    }

    fn layer_views<'a>(
        &self,
        params: &'a [f64],
        layer: usize,
        offset: usize,
    ) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let nw = fan_in * fan_out;
        let w = ArrayView2::from_shape((fan_out, fan_in), &params[offset..offset + nw])
            .expect("layer block shape");
        let b = ArrayView1::from(&params[offset + nw..offset + nw + fan_out]);
        (w, b)
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(NnError::ParamLength {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        Ok(())
    }

    pub fn zero_params(&self) -> ParamVector {
        ParamVector::zeros(self.num_params())
    }

    /// Weights uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = Vec::with_capacity(self.num_params());
        for w in self.sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            values.extend((0..w[0] * w[1]).map(|_| rng.random_range(-bound..=bound)));
            values.extend(std::iter::repeat_n(0.0, w[1]));
        }
        ParamVector(values)
    }

    pub fn unflatten(&self, params: &[f64]) -> Result<Vec<Layer>> {
        self.check_params(params)?;
        Ok(self
            .offsets()
            .into_iter()
            .enumerate()
            .map(|(l, off)| {
                let (w, b) = self.layer_views(params, l, off);
                Layer {
                    weights: w.to_owned(),
                    bias: b.to_owned(),
                }
            })
            .collect())
    }

    pub fn flatten(&self, layers: &[Layer]) -> Result<ParamVector> {
        let mut values = Vec::with_capacity(self.num_params());
        if layers.len() != self.num_layers() {
            return Err(NnError::ParamLength {
                expected: self.num_layers(),
                got: layers.len(),
            });
        }
        for (l, layer) in layers.iter().enumerate() {
            let shape = (self.sizes[l + 1], self.sizes[l]);
            if layer.weights.dim() != shape || layer.bias.len() != shape.0 {
                return Err(NnError::ParamLength {
                    expected: (shape.1 + 1) * shape.0,
                    got: layer.weights.len() + layer.bias.len(),
                });
            }
            values.extend(layer.weights.iter().copied());
            values.extend(layer.bias.iter().copied());
        }
        Ok(ParamVector(values))
    }

    /// Output for a single input vector.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(params, x)?.into_raw_vec_and_offset().0)
    }

    /// Outputs for a batch of inputs laid out one per row.
    pub fn forward_batch(&self, params: &[f64], inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut tape = self.forward_tape(params, inputs)?;
        Ok(tape.activations.pop().unwrap())
    }

    pub fn forward_tape(&self, params: &[f64], inputs: ArrayView2<'_, f64>) -> Result<Tape> {
        self.check_params(params)?;
        if inputs.ncols() != self.input_width() {
            return Err(NnError::InputWidth {
                expected: self.input_width(),
                got: inputs.ncols(),
            });
        }
        let last = self.num_layers() - 1;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(inputs.to_owned());
        for (l, off) in self.offsets().into_iter().enumerate() {
            let (w, b) = self.layer_views(params, l, off);
            let mut z = activations[l].dot(&w.t());
            z += &b;
            if l != last {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(z);
        }
        Ok(Tape { activations })
    }

    /// Pulls `grad_out` (d loss / d outputs, one row per sample) back to a
    /// gradient with respect to every parameter.
    pub fn backward(&self, params: &[f64], tape: &Tape, grad_out: ArrayView2<'_, f64>) -> ParamVector {
        let mut grad = vec![0.0; self.num_params()];
        let offsets = self.offsets();
        let mut delta = grad_out.to_owned();
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &tape.activations[l];
            let gw = delta.t().dot(input);
            let gb = delta.sum_axis(Axis(0));
            let nw = fan_in * fan_out;
            grad[off..off + nw].copy_from_slice(gw.as_standard_layout().as_slice().unwrap());
            grad[off + nw..off + nw + fan_out].copy_from_slice(gb.as_slice().unwrap());
            if l > 0 {
                let (w, _) = self.layer_views(params, l, off);
                let mut next = delta.dot(&w);
                next.zip_mut_with(input, |d, &h| *d *= 1.0 - h * h);
                delta = next;
            }
        }
        ParamVector(grad)
    }

    /// Forward-mode directional derivative of the outputs along `direction`
    /// in parameter space.
    pub fn jvp(&self, params: &[f64], tape: &Tape, direction: &[f64]) -> Array2<f64> {
        let last = self.num_layers() - 1;
        let mut d_act: Option<Array2<f64>> = None;
        for (l, off) in self.offsets().into_iter().enumerate() {
            let (w, _) = self.layer_views(params, l, off);
            let (dw, db) = self.layer_views(direction, l, off);
            let mut dz = tape.activations[l].dot(&dw.t());
            dz += &db;
            if let Some(da) = &d_act {
                dz += &da.dot(&w.t());
            }
            if l != last {
                dz.zip_mut_with(&tape.activations[l + 1], |d, &h| *d *= 1.0 - h * h);
            }
            d_act = Some(dz);
        }
        d_act.unwrap()
    }

    /// Value and exact gradient of a scalar loss of the batch outputs.
    ///
    /// `loss` receives the outputs and returns the loss together with its
    /// derivative with respect to each output entry.
    pub fn gradient<F>(&self, params: &[f64], inputs: ArrayView2<'_, f64>, loss: F) -> Result<(f64, ParamVector)>
    where
        F: FnOnce(ArrayView2<'_, f64>) -> (f64, Array2<f64>),
    {
        let tape = self.forward_tape(params, inputs)?;
        let (value, grad_out) = loss(tape.output());
        if !value.is_finite() {
            return Err(NnError::NonFiniteLoss(value));
        }
        Ok((value, self.backward(params, &tape, grad_out.view())))
    }
}

/// Action distribution of the two-action policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyDistribution {
    pub probs: [f64; 2],
    pub log_probs: [f64; 2],
}

impl PolicyDistribution {
    /// Softmax over two logits via log-sum-exp.
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let m = logits[0].max(logits[1]);
        let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
        let sum = e[0] + e[1];
        let lse = m + sum.ln();
        Self {
            probs: [e[0] / sum, e[1] / sum],
            log_probs: [logits[0] - lse, logits[1] - lse],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if rng.random::<f64>() < self.probs[0] {
            0
        } else {
            1
        }
    }
}

/// Packs states one per row.
pub fn state_matrix(states: &[EnvState]) -> Array2<f64> {
    let mut m = Array2::zeros((states.len(), 4));
    for (mut row, s) in m.outer_iter_mut().zip(states) {
        row.assign(&ArrayView1::from(&s.to_array()));
    }
    m
}

/// Per-row policy distributions from a `B x 2` logit matrix.
pub fn distributions_from_logits(logits: ArrayView2<'_, f64>) -> Vec<PolicyDistribution> {
    logits
        .outer_iter()
        .map(|r| PolicyDistribution::from_logits([r[0], r[1]]))
        .collect()
}

pub fn policy_distribution(params: &[f64], state: &EnvState) -> Result<PolicyDistribution> {
    let logits = MlpArchitecture::policy().forward(params, &state.to_array())?;
    Ok(PolicyDistribution::from_logits([logits[0], logits[1]]))
}

pub fn value(params: &[f64], state: &EnvState) -> Result<f64> {
    Ok(MlpArchitecture::value().forward(params, &state.to_array())?[0])
}

/// Batched state values.
pub fn values(params: &[f64], states: &[EnvState]) -> Result<Vec<f64>> {
    let out = MlpArchitecture::value().forward_batch(params, state_matrix(states).view())?;
    Ok(out.column(0).to_vec())
}

const CHECKPOINT_MAGIC: &str = "mlp-checkpoint v1";

/// Writes a text checkpoint:
///
/// ```text
/// mlp-checkpoint v1
/// sizes 4 64 64 2
/// <one parameter per line, shortest round-trip form>
/// ```
pub fn write_checkpoint<W: Write>(mut out: W, arch: &MlpArchitecture, params: &[f64]) -> std::io::Result<()> {
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    let sizes: Vec<String> = arch.sizes.iter().map(|s| s.to_string()).collect();
    writeln!(out, "sizes {}", sizes.join(" "))?;
    for v in params {
        writeln!(out, "{v:e}")?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<(MlpArchitecture, ParamVector)> {
    let bad = |m: &str| NnError::Checkpoint(m.to_string());
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| bad("unexpected end of file"))?
            .map_err(|e| NnError::Checkpoint(e.to_string()))
    };
    if next()?.trim() != CHECKPOINT_MAGIC {
        return Err(bad("missing header"));
    }
    let sizes_line = next()?;
    let sizes = sizes_line
        .strip_prefix("sizes ")
        .ok_or_else(|| bad("missing sizes line"))?
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| bad("bad layer size")))
        .collect::<Result<Vec<_>>>()?;
    let arch = MlpArchitecture::new(sizes)?;
    let mut values = Vec::with_capacity(arch.num_params());
    for _ in 0..arch.num_params() {
        let line = next()?;
        values.push(line.trim().parse::<f64>().map_err(|_| bad("bad parameter"))?);
    }
    let params = ParamVector(values);
    if !params.is_finite() {
        return Err(bad("non-finite parameter"));
    }
    Ok((arch, params))
}

/// Slices row `i` of a batch into a fixed-size state.
pub fn row_state(m: ArrayView2<'_, f64>, i: usize) -> EnvState {
    let r = m.slice(s![i, ..]);
    EnvState::new(r[0], r[1], r[2], r[3])
}
