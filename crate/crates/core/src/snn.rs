//! Discrete-time spiking forward engine.
//!
//! Feature maps are `f64` tensors laid out `(sample, channel, height, width)`.
//! Every LIF stage of the flattened network contributes one layer of binary
//! firing codes per sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchError, CellBlock, ConvSpec, Layer, NetworkArch, Operation, Shape, EDGES};
use crate::mix_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SnnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("missing weights for {0}")]
    MissingWeights(String),
    #[error("unexpected weights for parameter-free {0}")]
    UnexpectedWeights(String),
    #[error("invalid LIF parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub tau_leak: f64,
    pub v_threshold: f64,
    pub v_reset: f64,
    pub timesteps: usize,
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            tau_leak: 2.0,
            v_threshold: 1.0,
            v_reset: 0.0,
            timesteps: 5,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<(), SnnError> {
        if self.tau_leak.is_nan() || self.tau_leak < 1.0 || !self.tau_leak.is_finite() {
            return Err(SnnError::InvalidParams(format!(
                "tau_leak must be finite and >= 1, got {}",
                self.tau_leak
            )));
        }
        if self.v_threshold.is_nan()
            || self.v_threshold <= self.v_reset
            || !self.v_reset.is_finite()
        {
            return Err(SnnError::InvalidParams(format!(
                "need v_threshold > v_reset, got {} <= {}",
                self.v_threshold, self.v_reset
            )));
        }
        if self.timesteps == 0 {
            return Err(SnnError::InvalidParams("timesteps must be positive".into()));
        }
        Ok(())
    }
}

/// One forward-Euler LIF update over a whole array, returning the new
/// potentials and the 0/1 spike array.
pub fn lif_step(v_prev: &[f64], x: &[f64], p: &LifParams) -> Result<(Vec<f64>, Vec<u8>), SnnError> {
    if v_prev.len() != x.len() {
        return Err(SnnError::ShapeMismatch {
            context: "lif_step".into(),
            expected: vec![v_prev.len()],
            got: vec![x.len()],
        });
    }
    let mut v = v_prev.to_vec();
    let mut spikes = vec![0.0; x.len()];
    lif_update(&mut v, x, p, &mut spikes);
    Ok((v, spikes.iter().map(|&s| s as u8).collect()))
}

fn lif_update(v: &mut [f64], x: &[f64], p: &LifParams, spikes: &mut [f64]) {
    let inv_tau = 1.0 / p.tau_leak;
    for ((v, &x), s) in v.iter_mut().zip(x).zip(spikes.iter_mut()) {
        let candidate = *v + inv_tau * (-(*v - p.v_reset) + x);
        if candidate >= p.v_threshold {
            *s = 1.0;
            *v = p.v_reset;
        } else {
            *s = 0.0;
            *v = candidate;
        }
    }
}

/// Dense `(sample, channel, height, width)` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTensor {
    shape: [usize; 4],
    data: Vec<f64>,
    binary: bool,
}

impl SpikeTensor {
    pub fn zeros(samples: usize, shape: Shape) -> SpikeTensor {
        SpikeTensor {
            shape: [samples, shape.channels, shape.height, shape.width],
            data: vec![0.0; samples * shape.numel()],
            binary: true,
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<SpikeTensor, SnnError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(SnnError::ShapeMismatch {
                context: "SpikeTensor::from_vec".into(),
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        let binary = data.iter().all(|&v| v == 0.0 || v == 1.0);
        Ok(SpikeTensor {
            shape,
            data,
            binary,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn samples(&self) -> usize {
        self.shape[0]
    }

    pub fn sample_shape(&self) -> Shape {
        Shape::new(self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// True when every element is 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.binary
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_shape().numel();
        &self.data[i * n..(i + 1) * n]
    }

    fn with_data(samples: usize, shape: Shape, data: Vec<f64>, binary: bool) -> SpikeTensor {
        debug_assert_eq!(data.len(), samples * shape.numel());
        SpikeTensor {
            shape: [samples, shape.channels, shape.height, shape.width],
            data,
            binary,
        }
    }
}

/// Convolution kernel `(out, in, k, k)` and optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub spec: ConvSpec,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvWeights {
    pub fn zeros(spec: ConvSpec) -> ConvWeights {
        ConvWeights {
            spec,
            weight: vec![0.0; spec.weight_len()],
            bias: if spec.bias {
                vec![0.0; spec.out_channels]
            } else {
                Vec::new()
            },
        }
    }
}

/// Row-major `(out, in)` matrix plus optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearWeights {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    None,
    Conv(ConvWeights),
    Cell(Box<[Option<ConvWeights>; 6]>),
    Linear(LinearWeights),
}

impl LayerWeights {
    /// All tensors owned by this layer, weights first then bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        match self {
            LayerWeights::None => Vec::new(),
            LayerWeights::Conv(c) => vec![&c.weight, &c.bias],
            LayerWeights::Cell(edges) => edges
                .iter()
                .flatten()
                .flat_map(|c| [c.weight.as_slice(), c.bias.as_slice()])
                .collect(),
            LayerWeights::Linear(l) => vec![&l.weight, &l.bias],
        }
    }
}

/// Weights for every layer of a network, aligned with `NetworkArch::layers()`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub layers: Vec<LayerWeights>,
}

impl WeightSet {
    pub fn num_elements(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.tensors())
            .map(|t| t.len())
            .sum()
    }
}

fn normal_tensor(len: usize, fan_in: usize, seed: u64) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| dist.sample(&mut rng)).collect()
}

fn init_conv(spec: &ConvSpec, seed: u64) -> ConvWeights {
    ConvWeights {
        spec: *spec,
        weight: normal_tensor(spec.weight_len(), spec.fan_in(), seed),
        bias: if spec.bias {
            vec![0.0; spec.out_channels]
        } else {
            Vec::new()
        },
    }
}

/// Zero-mean normal weights with std `sqrt(2 / fan_in)` and zero biases.
/// Each tensor draws from its own stream keyed by `(seed, layer, edge)`.
pub fn init_weights(net: &NetworkArch, seed: u64) -> WeightSet {
    let layers = net
        .layers()
        .iter()
        .enumerate()
        .map(|(li, layer)| {
            let layer_seed = mix_seed(seed, li as u64);
            match layer {
                Layer::Conv { spec, .. } => LayerWeights::Conv(init_conv(spec, layer_seed)),
                Layer::Cell(block) => {
                    let convs = block.edge_convs();
                    let mut edges: [Option<ConvWeights>; 6] = Default::default();
                    for (e, spec) in convs.iter().enumerate() {
                        edges[e] = spec
                            .as_ref()
                            .map(|s| init_conv(s, mix_seed(layer_seed, e as u64 + 1)));
                    }
                    LayerWeights::Cell(Box::new(edges))
                }
                Layer::FullyConnected {
                    in_features,
                    out_features,
                    bias,
                    ..
                } => LayerWeights::Linear(LinearWeights {
                    in_features: *in_features,
                    out_features: *out_features,
                    weight: normal_tensor(in_features * out_features, *in_features, layer_seed),
                    bias: if *bias {
                        vec![0.0; *out_features]
                    } else {
                        Vec::new()
                    },
                }),
                _ => LayerWeights::None,
            }
        })
        .collect();
    WeightSet { layers }
}

/// Same-size stride-1 convolution of one sample, accumulated into `out`.
fn conv2d_acc(input: &[f64], shape: Shape, w: &ConvWeights, out: &mut [f64]) {
    let k = w.spec.kernel;
    let pad = w.spec.padding as isize;
    let (h, wd) = (shape.height, shape.width);
    let plane = h * wd;
    let cin = w.spec.in_channels;
    for oc in 0..w.spec.out_channels {
        let out_plane = &mut out[oc * plane..(oc + 1) * plane];
        if let Some(&b) = w.bias.get(oc) {
            if b != 0.0 {
                out_plane.iter_mut().for_each(|o| *o += b);
            }
        }
        for ic in 0..cin {
            let in_plane = &input[ic * plane..(ic + 1) * plane];
            let kbase = (oc * cin + ic) * k * k;
            for ky in 0..k {
                let dy = ky as isize - pad;
                let y0 = (-dy).max(0) as usize;
                let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
                for kx in 0..k {
                    let wv = w.weight[kbase + ky * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let dx = kx as isize - pad;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (wd as isize - dx).min(wd as isize).max(0) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src = &in_plane[sy * wd + (x0 as isize + dx) as usize..];
                        let dst = &mut out_plane[y * wd + x0..y * wd + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 mean over the in-bounds window (padding 1, stride 1), accumulated.
fn avgpool3_acc(input: &[f64], shape: Shape, out: &mut [f64]) {
    let (h, w) = (shape.height, shape.width);
    let plane = h * w;
    for c in 0..shape.channels {
        let src = &input[c * plane..(c + 1) * plane];
        let dst = &mut out[c * plane..(c + 1) * plane];
        for y in 0..h {
            let ys = y.saturating_sub(1)..(y + 2).min(h);
            for x in 0..w {
                let xs = x.saturating_sub(1)..(x + 2).min(w);
                let mut sum = 0.0;
                for yy in ys.clone() {
                    for xx in xs.clone() {
                        sum += src[yy * w + xx];
                    }
                }
                dst[y * w + x] += sum / (ys.len() * xs.len()) as f64;
            }
        }
    }
}

fn check_sample_shape(input: &SpikeTensor, expected: Shape, context: &str) -> Result<(), SnnError> {
    if input.sample_shape() != expected {
        return Err(SnnError::ShapeMismatch {
            context: context.to_string(),
            expected: vec![expected.channels, expected.height, expected.width],
            got: input.shape()[1..].to_vec(),
        });
    }
    Ok(())
}

fn check_edge_weights(
    op: Operation,
    weights: Option<&ConvWeights>,
    shape: Shape,
) -> Result<(), SnnError> {
    match (op.conv_kernel(), weights) {
        (Some(_), None) => Err(SnnError::MissingWeights(op.to_string())),
        (None, Some(_)) => Err(SnnError::UnexpectedWeights(op.to_string())),
        (Some(k), Some(w)) => {
            let s = w.spec;
            if s.kernel != k
                || s.in_channels != shape.channels
                || s.out_channels != shape.channels
                || w.weight.len() != s.weight_len()
            {
                return Err(SnnError::ShapeMismatch {
                    context: format!("{op} weights"),
                    expected: vec![shape.channels, shape.channels, k, k],
                    got: vec![s.out_channels, s.in_channels, s.kernel, s.kernel],
                });
            }
            Ok(())
        }
        (None, None) => Ok(()),
    }
}

fn edge_op_acc(
    op: Operation,
    input: &[f64],
    shape: Shape,
    weights: Option<&ConvWeights>,
    out: &mut [f64],
) {
    match op {
        Operation::Zeroize => {}
        Operation::SkipCon => out.iter_mut().zip(input).for_each(|(o, i)| *o += i),
        Operation::Conv1x1 | Operation::Conv3x3 => {
            conv2d_acc(input, shape, weights.expect("checked"), out)
        }
        Operation::AvgPool3x3 => avgpool3_acc(input, shape, out),
    }
}

/// Applies one cell-edge operation to every sample; spatial shape and
/// channel count are preserved.
pub fn apply_edge_op(
    op: Operation,
    input: &SpikeTensor,
    weights: Option<&ConvWeights>,
) -> Result<SpikeTensor, SnnError> {
    let shape = input.sample_shape();
    check_edge_weights(op, weights, shape)?;
    let n = shape.numel();
    let mut out = vec![0.0; input.data.len()];
    for s in 0..input.samples() {
        edge_op_acc(
            op,
            input.sample(s),
            shape,
            weights,
            &mut out[s * n..(s + 1) * n],
        );
    }
    let binary = match op {
        Operation::Zeroize => true,
        Operation::SkipCon => input.binary,
        _ => out.iter().all(|&v| v == 0.0 || v == 1.0),
    };
    Ok(SpikeTensor::with_data(input.samples(), shape, out, binary))
}

fn cell_forward(
    block: &CellBlock,
    weights: &[Option<ConvWeights>; 6],
    input: &SpikeTensor,
) -> SpikeTensor {
    let shape = block.shape;
    let n = shape.numel();
    let samples = input.samples();
    let mut out = vec![0.0; samples * n];
    let mut nodes = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for s in 0..samples {
        nodes[0].copy_from_slice(input.sample(s));
        for node in nodes.iter_mut().skip(1) {
            node.iter_mut().for_each(|v| *v = 0.0);
        }
        for (e, &(from, to)) in EDGES.iter().enumerate() {
            let op = block.cell.edges()[e];
            let (src, dst) = split_nodes(&mut nodes, from, to);
            edge_op_acc(op, src, shape, weights[e].as_ref(), dst);
        }
        out[s * n..(s + 1) * n].copy_from_slice(&nodes[3]);
    }
    SpikeTensor::with_data(samples, shape, out, false)
}

fn split_nodes(nodes: &mut [Vec<f64>; 4], from: usize, to: usize) -> (&[f64], &mut [f64]) {
    debug_assert!(from < to);
    let (lo, hi) = nodes.split_at_mut(to);
    (&lo[from], &mut hi[0])
}

fn conv_forward(w: &ConvWeights, input: &SpikeTensor, output: Shape) -> SpikeTensor {
    let shape = input.sample_shape();
    let (n_in, n_out) = (shape.numel(), output.numel());
    let mut out = vec![0.0; input.samples() * n_out];
    for s in 0..input.samples() {
        conv2d_acc(
            &input.data[s * n_in..(s + 1) * n_in],
            shape,
            w,
            &mut out[s * n_out..(s + 1) * n_out],
        );
    }
    SpikeTensor::with_data(input.samples(), output, out, false)
}

fn avgpool_window(input: &SpikeTensor, window: usize, output: Shape) -> SpikeTensor {
    let shape = input.sample_shape();
    let area = (window * window) as f64;
    let mut out = Vec::with_capacity(input.samples() * output.numel());
    for s in 0..input.samples() {
        let src = input.sample(s);
        for c in 0..output.channels {
            let plane = &src[c * shape.plane()..(c + 1) * shape.plane()];
            for y in 0..output.height {
                for x in 0..output.width {
                    let mut sum = 0.0;
                    for dy in 0..window {
                        let row = (y * window + dy) * shape.width;
                        for dx in 0..window {
                            sum += plane[row + x * window + dx];
                        }
                    }
                    out.push(sum / area);
                }
            }
        }
    }
    SpikeTensor::with_data(input.samples(), output, out, false)
}

fn global_avgpool(input: &SpikeTensor) -> SpikeTensor {
    let shape = input.sample_shape();
    let plane = shape.plane() as f64;
    let mut out = Vec::with_capacity(input.samples() * shape.channels);
    for s in 0..input.samples() {
        for c in input.sample(s).chunks(shape.plane()) {
            out.push(c.iter().sum::<f64>() / plane);
        }
    }
    SpikeTensor::with_data(
        input.samples(),
        Shape::new(shape.channels, 1, 1),
        out,
        false,
    )
}

fn linear_forward(w: &LinearWeights, input: &SpikeTensor) -> SpikeTensor {
    let mut out = Vec::with_capacity(input.samples() * w.out_features);
    for s in 0..input.samples() {
        let x = input.sample(s);
        for o in 0..w.out_features {
            let row = &w.weight[o * w.in_features..(o + 1) * w.in_features];
            let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            out.push(dot + w.bias.get(o).copied().unwrap_or(0.0));
        }
    }
    SpikeTensor::with_data(
        input.samples(),
        Shape::new(w.out_features, 1, 1),
        out,
        false,
    )
}

/// Row-major bit matrix, one row per sample, packed into `u64` words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn new(rows: usize, cols: usize) -> BitMatrix {
        let words_per_row = cols.div_ceil(64);
        BitMatrix {
            rows,
            cols,
            words_per_row,
            data: vec![0; rows * words_per_row],
        }
    }

    pub fn from_rows<R: AsRef<[bool]>>(rows: &[R]) -> BitMatrix {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = BitMatrix::new(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.as_ref().len(), cols, "ragged bit rows");
            for (j, &b) in row.as_ref().iter().enumerate() {
                if b {
                    m.set(i, j);
                }
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        assert!(row < self.rows && col < self.cols);
        self.data[row * self.words_per_row + col / 64] >> (col % 64) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize) {
        assert!(row < self.rows && col < self.cols);
        self.data[row * self.words_per_row + col / 64] |= 1 << (col % 64);
    }

    pub fn row_words(&self, row: usize) -> &[u64] {
        &self.data[row * self.words_per_row..(row + 1) * self.words_per_row]
    }

    pub fn count_ones(&self) -> u64 {
        self.data.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// The same matrix with rows reordered so that new row `i` is old row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> BitMatrix {
        assert_eq!(perm.len(), self.rows);
        let mut out = BitMatrix::new(self.rows, self.cols);
        for (i, &p) in perm.iter().enumerate() {
            let src = self.row_words(p).to_vec();
            out.data[i * self.words_per_row..(i + 1) * self.words_per_row].copy_from_slice(&src);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCodes {
    pub name: String,
    pub bits: BitMatrix,
}

/// Per-LIF-stage firing codes, all with the same sample count.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BinaryCodes {
    pub layers: Vec<LayerCodes>,
}

impl BinaryCodes {
    pub fn samples(&self) -> usize {
        self.layers.first().map_or(0, |l| l.bits.rows())
    }

    pub fn is_consistent(&self) -> bool {
        let s = self.samples();
        self.layers.iter().all(|l| l.bits.rows() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodeMode {
    /// Bit j is set iff neuron j fired at least once during the T steps.
    #[default]
    AnyFire,
    /// One bit per neuron per timestep, concatenated in time order.
    PerTimestep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InputCoding {
    /// Analog pixels presented as input current at every step.
    #[default]
    Direct,
    /// Bernoulli spikes with probability equal to the pixel value.
    Rate { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub coding: InputCoding,
    pub code_mode: CodeMode,
}

struct LifState {
    potentials: Vec<f64>,
    codes: BitMatrix,
    neurons: usize,
}

/// Runs `T` timesteps over the batch and records every LIF stage's firing.
/// Each sample starts from `v_reset` and evolves independently.
pub fn forward_collect_codes(
    net: &NetworkArch,
    weights: &WeightSet,
    batch: &SpikeTensor,
    p: &LifParams,
    opts: &ForwardOptions,
) -> Result<BinaryCodes, SnnError> {
    p.validate()?;
    let layers = net.layers();
    check_sample_shape(batch, net.config().input_shape, "network input")?;
    if weights.layers.len() != layers.len() {
        return Err(SnnError::MissingWeights(format!(
            "{} layer weight slots for {} layers",
            weights.layers.len(),
            layers.len()
        )));
    }
    validate_weights(&layers, weights)?;

    let samples = batch.samples();
    let t_steps = p.timesteps;
    let mut states: Vec<Option<LifState>> = layers
        .iter()
        .map(|l| match l {
            Layer::Lif { shape, .. } => {
                let f = shape.numel();
                let cols = match opts.code_mode {
                    CodeMode::AnyFire => f,
                    CodeMode::PerTimestep => f * t_steps,
                };
                Some(LifState {
                    potentials: vec![p.v_reset; samples * f],
                    codes: BitMatrix::new(samples, cols),
                    neurons: f,
                })
            }
            _ => None,
        })
        .collect();

    let mut rate_rng = match opts.coding {
        InputCoding::Rate { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        InputCoding::Direct => None,
    };
    // Direct coding feeds the same input every step, so the stem response is constant.
    let mut stem_cache: Option<SpikeTensor> = None;

    for t in 0..t_steps {
        let mut cur = match rate_rng.as_mut() {
            Some(rng) => {
                let data = batch
                    .data()
                    .iter()
                    .map(|&px| if rng.random::<f64>() < px { 1.0 } else { 0.0 })
                    .collect();
                SpikeTensor::with_data(samples, batch.sample_shape(), data, true)
            }
            None => batch.clone(),
        };
        for (li, layer) in layers.iter().enumerate() {
            cur = match (layer, &weights.layers[li]) {
                (Layer::Conv { output, .. }, LayerWeights::Conv(w)) => {
                    if li == 0 && rate_rng.is_none() {
                        stem_cache
                            .get_or_insert_with(|| conv_forward(w, &cur, *output))
                            .clone()
                    } else {
                        conv_forward(w, &cur, *output)
                    }
                }
                (Layer::AvgPool { window, output, .. }, _) => {
                    avgpool_window(&cur, *window, *output)
                }
                (Layer::Cell(block), LayerWeights::Cell(w)) => cell_forward(block, w, &cur),
                (Layer::GlobalAvgPool { .. }, _) => global_avgpool(&cur),
                (Layer::FullyConnected { .. }, LayerWeights::Linear(w)) => linear_forward(w, &cur),
                (Layer::Lif { shape, .. }, _) => {
                    let state = states[li].as_mut().expect("lif state");
                    let mut spikes = vec![0.0; cur.data.len()];
                    lif_update(&mut state.potentials, &cur.data, p, &mut spikes);
                    let f = state.neurons;
                    let offset = match opts.code_mode {
                        CodeMode::AnyFire => 0,
                        CodeMode::PerTimestep => t * f,
                    };
                    for (idx, _) in spikes.iter().enumerate().filter(|(_, &s)| s == 1.0) {
                        state.codes.set(idx / f, offset + idx % f);
                    }
                    SpikeTensor::with_data(samples, *shape, spikes, true)
                }
                _ => unreachable!("weights validated against layers"),
            };
        }
    }

    let codes = layers
        .iter()
        .zip(states)
        .filter_map(|(layer, state)| {
            state.map(|s| LayerCodes {
                name: layer.name(),
                bits: s.codes,
            })
        })
        .collect();
    Ok(BinaryCodes { layers: codes })
}

fn validate_weights(layers: &[Layer], weights: &WeightSet) -> Result<(), SnnError> {
    for (layer, w) in layers.iter().zip(&weights.layers) {
        let name = layer.name();
        match (layer, w) {
            (Layer::Conv { spec, .. }, LayerWeights::Conv(c)) => {
                if c.spec != *spec || c.weight.len() != spec.weight_len() {
                    return Err(SnnError::ShapeMismatch {
                        context: name,
                        expected: vec![spec.out_channels, spec.in_channels, spec.kernel],
                        got: vec![c.spec.out_channels, c.spec.in_channels, c.spec.kernel],
                    });
                }
            }
            (Layer::Cell(block), LayerWeights::Cell(edges)) => {
                for (op, ew) in block.cell.edges().iter().zip(edges.iter()) {
                    check_edge_weights(*op, ew.as_ref(), block.shape)?;
                }
            }
            (
                Layer::FullyConnected {
                    in_features,
                    out_features,
                    ..
                },
                LayerWeights::Linear(l),
            ) => {
                if l.in_features != *in_features
                    || l.out_features != *out_features
                    || l.weight.len() != in_features * out_features
                {
                    return Err(SnnError::ShapeMismatch {
                        context: name,
                        expected: vec![*out_features, *in_features],
                        got: vec![l.out_features, l.in_features],
                    });
                }
            }
            (Layer::Conv { .. } | Layer::Cell(_) | Layer::FullyConnected { .. }, _) => {
                return Err(SnnError::MissingWeights(name));
            }
            _ => {}
        }
    }
    Ok(())
}
