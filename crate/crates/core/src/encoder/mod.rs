//! Feature-sequence encoders: a stacked LSTM (natively streamable) and a
//! toy-scale conformer-lite that streams over a sliding frame window.

mod conformer;
mod lstm;
mod params;

use std::collections::{BTreeMap, VecDeque};

pub use lstm::LstmState;
pub use params::{ArchConfig, ConformerConfig, LstmConfig, ParamStore};

pub(crate) use params::layout;

use crate::error::{Error, Result};
use crate::frontend::{FeatureSequence, NUM_MEL_BINS};
use crate::ndmath::{Graph, Tensor, Var};

pub type Embedding = Vec<f64>;

/// Architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: ArchConfig,
    params: ParamStore,
}

/// Uniform(±1/sqrt(fan_in)) weights, zero biases, LSTM forget bias 1.
pub fn init_params(arch: &ArchConfig, seed: u64) -> Result<Model> {
    Ok(Model {
        arch: *arch,
        params: params::init_store(arch, seed)?,
    })
}

impl Model {
    pub fn from_params(arch: ArchConfig, params: ParamStore) -> Result<Self> {
        arch.validate()?;
        params.check_layout(&arch)?;
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch.embedding_dim()
    }

    /// Places every parameter on `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Vec<Var>> {
        self.params
            .tensors()
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    /// Differentiable forward over a batch; returns a B×D node.
    pub fn forward_graph(&self, g: &mut Graph, vars: &[Var], batch: &[&FeatureSequence]) -> Result<Var> {
        if vars.len() != self.params.len() {
            return Err(Error::usage(
                "encoder",
                format!("{} bound vars for {} parameters", vars.len(), self.params.len()),
            ));
        }
        for seq in batch {
            if seq.num_frames() == 0 {
                return Err(Error::dim("encoder", "empty feature sequence"));
            }
        }
        match &self.arch {
            ArchConfig::Lstm(c) => lstm::forward_graph(g, c, vars, batch),
            ArchConfig::Conformer(c) => conformer::forward_graph(g, c, vars, batch),
        }
    }

    /// Embedding of one utterance.
    pub fn forward(&self, features: &FeatureSequence) -> Result<Embedding> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let out = self.forward_graph(&mut g, &vars, &[features])?;
        Ok(g.value(out).data().to_vec())
    }

    /// Embeddings for many utterances; LSTM inputs are batched by length.
    pub fn embed_many(&self, feats: &[&FeatureSequence]) -> Result<Vec<Embedding>> {
        let d = self.embedding_dim();
        let mut out = vec![Vec::new(); feats.len()];
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, f) in feats.iter().enumerate() {
            let key = match self.arch {
                ArchConfig::Lstm(_) => f.num_frames(),
                ArchConfig::Conformer(_) => i,
            };
            groups.entry(key).or_default().push(i);
        }
        const CHUNK: usize = 128;
        for idx in groups.values() {
            for chunk in idx.chunks(CHUNK) {
                let mut g = Graph::new();
                let vars = self.bind(&mut g, false)?;
                let batch: Vec<&FeatureSequence> = chunk.iter().map(|&i| feats[i]).collect();
                let y = self.forward_graph(&mut g, &vars, &batch)?;
                for (row, &i) in g.value(y).data().chunks(d).zip(chunk) {
                    out[i] = row.to_vec();
                }
            }
        }
        Ok(out)
    }

    pub fn initial_state(&self, window: usize, hop: usize) -> Result<EncoderState> {
        match &self.arch {
            ArchConfig::Lstm(c) => Ok(EncoderState::Lstm(LstmState::zeros(c))),
            ArchConfig::Conformer(_) => {
                if window == 0 || hop == 0 {
                    return Err(Error::config("encoder", "window and hop must be positive"));
                }
                Ok(EncoderState::Window(WindowState {
                    buffer: VecDeque::with_capacity(window),
                    window,
                    hop,
                    seen: 0,
                }))
            }
        }
    }

    /// Consumes one frame. The LSTM emits its projected state after every
    /// frame; the windowed conformer emits once per completed hop.
    pub fn stream_step(&self, state: &mut EncoderState, frame: &[f64]) -> Result<Option<Embedding>> {
        if frame.len() != NUM_MEL_BINS || frame.len() != self.arch.input_dim() {
            return Err(Error::dim(
                "encoder",
                format!("stream frame has {} values, expected {}", frame.len(), self.arch.input_dim()),
            ));
        }
        match (&self.arch, state) {
            (ArchConfig::Lstm(c), EncoderState::Lstm(s)) => {
                if s.h.len() != c.layers || s.h.iter().any(|h| h.len() != c.hidden_dim) {
                    return Err(Error::dim("encoder", "LSTM state does not match the model"));
                }
                lstm::step(c, self.params.tensors(), s, frame);
                Ok(Some(lstm::emit(c, self.params.tensors(), s)))
            }
            (ArchConfig::Conformer(_), EncoderState::Window(w)) => {
                if w.buffer.len() == w.window {
                    w.buffer.pop_front();
                }
                w.buffer.push_back(frame.to_vec());
                w.seen += 1;
                if w.seen >= w.window && (w.seen - w.window) % w.hop == 0 {
                    let data: Vec<f64> = w.buffer.iter().flatten().copied().collect();
                    let seq = FeatureSequence::new(data, crate::frontend::DEFAULT_HOP_MS)?;
                    Ok(Some(self.forward(&seq)?))
                } else {
                    Ok(None)
                }
            }
            _ => Err(Error::usage("encoder", "stream state belongs to a different architecture")),
        }
    }

    /// Current LSTM embedding without consuming a frame.
    pub fn emit(&self, state: &EncoderState) -> Result<Embedding> {
        match (&self.arch, state) {
            (ArchConfig::Lstm(c), EncoderState::Lstm(s)) => Ok(lstm::emit(c, self.params.tensors(), s)),
            _ => Err(Error::usage("encoder", "emit is only defined for LSTM state")),
        }
    }

    /// Replaces every parameter through `f`, keeping names and shapes.
    pub fn map_params(&self, mut f: impl FnMut(&str, &Tensor) -> Result<Tensor>) -> Result<Self> {
        let entries = self
            .params
            .iter()
            .map(|(n, t)| Ok((n.to_string(), f(n, t)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(self.arch, ParamStore::new(entries))
    }
}

/// Sliding window of frames for the conformer's streaming path.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowState {
    buffer: VecDeque<Vec<f64>>,
    window: usize,
    hop: usize,
    seen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderState {
    Lstm(LstmState),
    Window(WindowState),
}

impl EncoderState {
    pub fn reset(&mut self) {
        match self {
            EncoderState::Lstm(s) => s.reset(),
            EncoderState::Window(w) => {
                w.buffer.clear();
                w.seen = 0;
            }
        }
    }

    pub fn frames_seen(&self) -> usize {
        match self {
            EncoderState::Lstm(s) => s.frames,
            EncoderState::Window(w) => w.seen,
        }
    }
}
