//! LSTM stacks with inter-layer frame-rate reduction and a softmax head.
//!
//! A [`Network`] is a list of [`LstmLayer`]s, a count of halvings applied to
//! the sequence *before* each layer, and an output projection. CTC models
//! emit `V + 1` classes (blank last); frame classifiers emit `V + 1` classes
//! with silence last and look one frame ahead.

mod lstm;
mod serialize;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use lstm::{LstmGrads, LstmLayer, LstmTape};
pub use serialize::{MODEL_FORMAT_VERSION, MODEL_MAGIC};

use crate::ctc::{LogProbLattice, Vocabulary, BLANK_SYMBOL};
use crate::error::{Error, Result};
use crate::numerics::{log_softmax_in_place, matmul_into, Mat};

pub const SILENCE_SYMBOL: &str = "<sil>";

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    WordCtc,
    PhonemeCtc,
    FrameClassifier,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::WordCtc => 0,
            ModelKind::PhonemeCtc => 1,
            ModelKind::FrameClassifier => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::WordCtc),
            1 => Some(ModelKind::PhonemeCtc),
            2 => Some(ModelKind::FrameClassifier),
            _ => None,
        }
    }

    pub fn is_ctc(self) -> bool {
        !matches!(self, ModelKind::FrameClassifier)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::WordCtc => "word-ctc",
            ModelKind::PhonemeCtc => "phoneme-ctc",
            ModelKind::FrameClassifier => "frame-classifier",
        }
    }

    /// Frames of lookahead the model is built with.
    pub fn lookahead(self) -> usize {
        match self {
            ModelKind::FrameClassifier => 1,
            _ => 0,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word-ctc" => Ok(ModelKind::WordCtc),
            "phoneme-ctc" => Ok(ModelKind::PhonemeCtc),
            "frame-classifier" => Ok(ModelKind::FrameClassifier),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Places `log2(factor)` halvings: one after each LSTM layer from the bottom
/// up, any excess stacked in front of the first layer.
pub fn downsample_schedule(layers: usize, factor: usize) -> Result<Vec<u32>> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "down-sampling factor {factor} is not a power of two"
        )));
    }
    if layers == 0 {
        return Err(Error::InvalidArgument("network needs at least one layer".into()));
    }
    let mut halvings = factor.trailing_zeros();
    let mut schedule = vec![0u32; layers];
    for slot in schedule.iter_mut().skip(1) {
        if halvings == 0 {
            break;
        }
        *slot = 1;
        halvings -= 1;
    }
    schedule[0] += halvings;
    Ok(schedule)
}

/// Shape description used to build a fresh network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// halvings before each layer; same length as `hidden_dims`
    pub downsample: Vec<u32>,
    /// output labels, excluding the trailing blank / silence class
    pub labels: Vec<String>,
}

impl NetworkSpec {
    pub fn new(
        kind: ModelKind,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        factor: usize,
        labels: Vec<String>,
    ) -> Result<Self> {
        Ok(Self {
            kind,
            input_dim,
            hidden_dims: vec![hidden; layers],
            downsample: downsample_schedule(layers, factor)?,
            labels,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        if self.downsample.len() != self.hidden_dims.len() {
            return Err(Error::DimensionMismatch {
                what: "down-sampling schedule",
                expected: self.hidden_dims.len(),
                actual: self.downsample.len(),
            });
        }
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument("layer dimensions must be positive".into()));
        }
        if self.kind == ModelKind::FrameClassifier && self.downsample.iter().any(|&d| d > 0) {
            return Err(Error::InvalidArgument(
                "frame classifiers predict every frame and cannot down-sample".into(),
            ));
        }
        Vocabulary::new(self.labels.iter().cloned())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    kind: ModelKind,
    layers: Vec<LstmLayer>,
    downsample: Vec<u32>,
    output_weight: Mat,
    output_bias: Vec<f64>,
    labels: Vec<String>,
    generation: u64,
}

impl PartialEq for Network {
    /// Structural and parameter equality; ignores the tape generation stamp.
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.layers == other.layers
            && self.downsample == other.downsample
            && self.output_weight == other.output_weight
            && self.output_bias == other.output_bias
            && self.labels == other.labels
    }
}

/// Parameter gradients of a [`Network`], in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads {
    pub layers: Vec<LstmGrads>,
    pub output_weight: Mat,
    pub output_bias: Vec<f64>,
}

impl NetworkGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        out.push(self.output_weight.as_slice());
        out.push(&self.output_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self
            .layers
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .collect();
        out.push(self.output_weight.as_mut_slice());
        out.push(&mut self.output_bias);
        out
    }

    pub fn norm(&self) -> f64 {
        crate::numerics::global_norm(&self.tensors())
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    generation: u64,
    input_frames: usize,
    /// sequence lengths entering each layer before its halvings
    pre_lengths: Vec<usize>,
    layers: Vec<LstmTape>,
    lookahead: usize,
}

impl ForwardTape {
    pub fn layer(&self, i: usize) -> &LstmTape {
        &self.layers[i]
    }

    pub fn top_hidden(&self) -> &Mat {
        self.layers.last().expect("at least one layer").hidden()
    }

    /// Row count of the hidden sequence produced by each layer.
    pub fn layer_lengths(&self) -> Vec<usize> {
        self.layers.iter().map(LstmTape::len).collect()
    }
}

/// Indices (0-based) kept by one halving: 0, 2, …, 2⌊T/2⌋ − 2.
pub fn downsample_indices(len: usize) -> Result<Vec<usize>> {
    if len < 2 {
        return Err(Error::TooShort(len));
    }
    Ok((0..len / 2).map(|i| 2 * i).collect())
}

/// Keeps the odd-numbered frames (1-based) of `seq`, halving its rate.
pub fn downsample(seq: &Mat) -> Result<Mat> {
    let idx = downsample_indices(seq.rows())?;
    Ok(seq.select_rows(&idx))
}

fn upsample_grad(grad: &Mat, len: usize) -> Mat {
    let mut out = Mat::zeros(len, grad.cols());
    for r in 0..grad.rows() {
        out.row_mut(2 * r).copy_from_slice(grad.row(r));
    }
    out
}

/// Frame count after `halvings` successive halvings, or `None` when some
/// halving would see fewer than two frames.
pub fn reduced_length(mut len: usize, halvings: u32) -> Option<usize> {
    for _ in 0..halvings {
        if len < 2 {
            return None;
        }
        len /= 2;
    }
    Some(len)
}

impl Network {
    /// Randomly initialized network; see [`LstmLayer::random`]. The output
    /// weights are drawn after all LSTM layers, output bias is 0.
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.hidden_dims.len());
        let mut input = spec.input_dim;
        for &h in &spec.hidden_dims {
            layers.push(LstmLayer::random(input, h, &mut rng));
            input = h;
        }
        let out_dim = spec.labels.len() + 1;
        let mut output_weight = Mat::zeros(out_dim, input);
        for v in output_weight.as_mut_slice() {
            *v = rng.random_range(-lstm::INIT_SCALE..=lstm::INIT_SCALE);
        }
        Ok(Self {
            kind: spec.kind,
            layers,
            downsample: spec.downsample.clone(),
            output_weight,
            output_bias: vec![0.0; out_dim],
            labels: spec.labels.clone(),
            generation: next_generation(),
        })
    }

    pub(crate) fn from_parts(
        kind: ModelKind,
        layers: Vec<LstmLayer>,
        downsample: Vec<u32>,
        output_weight: Mat,
        output_bias: Vec<f64>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            kind,
            input_dim: layers.first().map_or(0, LstmLayer::input_dim),
            hidden_dims: layers.iter().map(LstmLayer::hidden_dim).collect(),
            downsample: downsample.clone(),
            labels: labels.clone(),
        };
        spec.validate()?;
        for pair in layers.windows(2) {
            if pair[1].input_dim() != pair[0].hidden_dim() {
                return Err(Error::DimensionMismatch {
                    what: "stacked layer input",
                    expected: pair[0].hidden_dim(),
                    actual: pair[1].input_dim(),
                });
            }
        }
        let top = layers.last().map_or(0, LstmLayer::hidden_dim);
        if output_weight.shape() != (labels.len() + 1, top) || output_bias.len() != labels.len() + 1 {
            return Err(Error::DimensionMismatch {
                what: "output layer",
                expected: labels.len() + 1,
                actual: output_weight.rows(),
            });
        }
        Ok(Self {
            kind,
            layers,
            downsample,
            output_weight,
            output_bias,
            labels,
            generation: next_generation(),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output_bias.len()
    }

    pub fn layers(&self) -> &[LstmLayer] {
        &self.layers
    }

    pub fn downsampling(&self) -> &[u32] {
        &self.downsample
    }

    /// Overall frame-rate reduction, `2^m`.
    pub fn reduction_factor(&self) -> usize {
        1usize << self.downsample.iter().sum::<u32>()
    }

    pub fn lookahead(&self) -> usize {
        self.kind.lookahead()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::new(self.labels.iter().cloned()).expect("validated at construction")
    }

    /// Name of the trailing output class.
    pub fn extra_symbol(&self) -> &'static str {
        if self.kind.is_ctc() {
            BLANK_SYMBOL
        } else {
            SILENCE_SYMBOL
        }
    }

    pub fn output_weight(&self) -> &Mat {
        &self.output_weight
    }

    pub fn output_bias(&self) -> &[f64] {
        &self.output_bias
    }

    /// Output length for an input of `frames` frames.
    pub fn output_frames(&self, frames: usize) -> Option<usize> {
        let mut len = frames;
        for &d in &self.downsample {
            len = reduced_length(len, d)?;
        }
        (len >= 1).then_some(len)
    }

    pub fn zero_grads(&self) -> NetworkGrads {
        NetworkGrads {
            layers: self.layers.iter().map(LstmLayer::zero_grads).collect(),
            output_weight: Mat::zeros(self.output_weight.rows(), self.output_weight.cols()),
            output_bias: vec![0.0; self.output_bias.len()],
        }
    }

    /// Parameter tensors in declaration order (per layer: input weights,
    /// recurrent weights, bias; then output weights and bias).
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        out.push(self.output_weight.as_slice());
        out.push(&self.output_bias);
        out
    }

    /// Mutable parameter access; invalidates outstanding tapes.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation = next_generation();
        let mut out: Vec<&mut [f64]> = self
            .layers
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .collect();
        out.push(self.output_weight.as_mut_slice());
        out.push(&mut self.output_bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// `θ ← θ − lr · g`
    pub fn sgd_step(&mut self, grads: &NetworkGrads, lr: f64) {
        let g = grads.tensors();
        for (p, g) in self.parameters_mut().into_iter().zip(g) {
            for (pv, gv) in p.iter_mut().zip(g) {
                *pv -= lr * gv;
            }
        }
    }

    /// Unnormalized output scores plus the tape. Rows are `T′` for CTC
    /// models and `T` for frame classifiers.
    pub fn forward_logits(&self, features: &Mat) -> Result<(Mat, ForwardTape)> {
        if features.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: self.input_dim(),
                actual: features.cols(),
            });
        }
        let frames = features.rows();
        if self.output_frames(frames).is_none() {
            return Err(Error::TooShort(frames));
        }
        let lookahead = self.lookahead();
        let mut seq = if lookahead > 0 {
            let mut padded = Mat::zeros(frames + lookahead, features.cols());
            padded.as_mut_slice()[..features.as_slice().len()].copy_from_slice(features.as_slice());
            padded
        } else {
            features.clone()
        };

        let mut pre_lengths = Vec::with_capacity(self.layers.len());
        let mut tapes = Vec::with_capacity(self.layers.len());
        for (layer, &halvings) in self.layers.iter().zip(&self.downsample) {
            pre_lengths.push(seq.rows());
            for _ in 0..halvings {
                seq = downsample(&seq)?;
            }
            let (hidden, tape) = layer.forward(&seq)?;
            tapes.push(tape);
            seq = hidden;
        }

        let top = if lookahead > 0 {
            seq.select_rows(&(lookahead..seq.rows()).collect::<Vec<_>>())
        } else {
            seq
        };
        let mut logits = Mat::zeros(top.rows(), self.output_dim());
        for r in 0..logits.rows() {
            logits.row_mut(r).copy_from_slice(&self.output_bias);
        }
        matmul_into(&top, false, &self.output_weight, true, 1.0, &mut logits);
        Ok((
            logits,
            ForwardTape {
                generation: self.generation,
                input_frames: frames,
                pre_lengths,
                layers: tapes,
                lookahead,
            },
        ))
    }

    /// Per-frame log-probabilities (row-wise log-softmax of the logits).
    pub fn forward(&self, features: &Mat) -> Result<(LogProbLattice, ForwardTape)> {
        let (mut logits, tape) = self.forward_logits(features)?;
        for r in 0..logits.rows() {
            log_softmax_in_place(logits.row_mut(r));
        }
        Ok((LogProbLattice::from_log_probs_unchecked(logits), tape))
    }

    /// Backpropagates `output_grads` (loss gradient w.r.t. the logits) to
    /// every parameter and to the input features. Frames dropped by
    /// down-sampling receive zero gradient.
    pub fn backward(&self, tape: &ForwardTape, output_grads: &Mat) -> Result<(NetworkGrads, Mat)> {
        if tape.generation != self.generation {
            return Err(Error::StaleTape {
                tape: tape.generation,
                network: self.generation,
            });
        }
        let top = tape.top_hidden();
        let emitted = top.rows() - tape.lookahead;
        if output_grads.shape() != (emitted, self.output_dim()) {
            return Err(Error::DimensionMismatch {
                what: "output gradient rows",
                expected: emitted,
                actual: output_grads.rows(),
            });
        }
        let mut grads = self.zero_grads();
        let top_used = if tape.lookahead > 0 {
            top.select_rows(&(tape.lookahead..top.rows()).collect::<Vec<_>>())
        } else {
            top.clone()
        };
        matmul_into(output_grads, true, &top_used, false, 0.0, &mut grads.output_weight);
        for row in output_grads.iter_rows() {
            for (b, g) in grads.output_bias.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut d_used = Mat::zeros(emitted, top.cols());
        matmul_into(output_grads, false, &self.output_weight, false, 0.0, &mut d_used);
        let mut d_seq = if tape.lookahead > 0 {
            let mut full = Mat::zeros(top.rows(), top.cols());
            full.as_mut_slice()[tape.lookahead * top.cols()..].copy_from_slice(d_used.as_slice());
            full
        } else {
            d_used
        };

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (layer_grads, d_input) = layer.backward(&tape.layers[i], &d_seq)?;
            grads.layers[i] = layer_grads;
            // undo this position's halvings, innermost first
            let mut lengths = Vec::with_capacity(self.downsample[i] as usize);
            let mut len = tape.pre_lengths[i];
            for _ in 0..self.downsample[i] {
                lengths.push(len);
                len /= 2;
            }
            d_seq = d_input;
            for &len in lengths.iter().rev() {
                d_seq = upsample_grad(&d_seq, len);
            }
        }
        if tape.lookahead > 0 {
            d_seq = d_seq.select_rows(&(0..tape.input_frames).collect::<Vec<_>>());
        }
        Ok((grads, d_seq))
    }

    /// Copies LSTM layers `0..k` of `src` over the same layers of `self`.
    /// Everything else in `self` is left as initialized.
    pub fn transfer_bottom_layers(&mut self, src: &Network, k: usize) -> Result<()> {
        if k == 0 {
            return Ok(());
        }
        if k >= self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot transfer {k} layers into a {}-layer network; the top layer stays fresh",
                self.layers.len()
            )));
        }
        if k > src.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "source network has only {} layers, asked for {k}",
                src.layers.len()
            )));
        }
        for i in 0..k {
            let (s, d) = (&src.layers[i], &self.layers[i]);
            if s.input_dim() != d.input_dim() || s.hidden_dim() != d.hidden_dim() {
                return Err(Error::DimensionMismatch {
                    what: "transferred layer shape",
                    expected: d.hidden_dim(),
                    actual: s.hidden_dim(),
                });
            }
        }
        self.layers[..k].clone_from_slice(&src.layers[..k]);
        self.generation = next_generation();
        Ok(())
    }
}
